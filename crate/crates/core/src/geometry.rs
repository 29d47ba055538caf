//! Rigid motions of 3-space and the Fibonacci sphere grid used to seed
//! virtual-node coordinates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

const ORTHO_TOL: f64 = 1e-10;

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0; 3], |acc, &p| add(acc, p));
    scale(s, 1.0 / n)
}

/// `x ↦ R·x + t` with `R` orthogonal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    rotation: [[f64; 3]; 3],
    translation: Vec3,
    improper: bool,
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            improper: false,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Checked constructor: `R` must be orthogonal to within 1e-10.
    pub fn new(rotation: [[f64; 3]; 3], translation: Vec3) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (rtr - expected).abs() > ORTHO_TOL {
                    return Err(Error::Argument(format!(
                        "matrix is not orthogonal: (RᵀR)[{i}][{j}] = {rtr}"
                    )));
                }
            }
        }
        let det = det3(&rotation);
        Ok(Self {
            rotation,
            translation,
            improper: det < 0.0,
        })
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    pub fn translation_vector(&self) -> Vec3 {
        self.translation
    }

    pub fn is_improper(&self) -> bool {
        self.improper
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.rotation)
    }

    /// Same linear part, new translation.
    pub fn with_translation(mut self, t: Vec3) -> Self {
        self.translation = t;
        self
    }

    /// Compose with the reflection `x ↦ diag(-1, 1, 1)·x` applied first.
    pub fn with_reflection(mut self) -> Self {
        for row in &mut self.rotation {
            row[0] = -row[0];
        }
        self.improper = !self.improper;
        self
    }

    /// Apply only the linear part.
    pub fn rotate(&self, p: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], p), dot(r[1], p), dot(r[2], p)]
    }

    pub fn apply_point(&self, p: Vec3) -> Vec3 {
        add(self.rotate(p), self.translation)
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.iter().map(|&p| self.apply_point(p)).collect()
    }

    /// The rotation part acting about `center` instead of the origin.
    pub fn about(&self, center: Vec3) -> Self {
        let t = sub(center, self.rotate(center));
        Self {
            translation: t,
            ..*self
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        Self {
            rotation,
            translation: self.apply_point(other.translation),
            improper: self.improper != other.improper,
        }
    }

    pub fn inverse(&self) -> Self {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.rotation[j][i];
            }
        }
        let inv = Self {
            rotation,
            translation: [0.0; 3],
            improper: self.improper,
        };
        let t = inv.rotate(self.translation);
        inv.with_translation(scale(t, -1.0))
    }
}

pub fn apply_transform(t: &RigidTransform, points: &[Vec3]) -> Vec<Vec3> {
    t.apply(points)
}

/// Haar-uniform proper rotation from a normalised Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RigidTransform {
    let (w, x, y, z) = loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    let rotation = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    RigidTransform {
        rotation,
        translation: [0.0; 3],
        improper: false,
    }
}

/// Random element of E(3): Haar rotation, optional reflection, and a
/// translation with components uniform in ±`translation_scale`.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R, translation_scale: f64, reflect: bool) -> RigidTransform {
    let mut t = random_rotation(rng);
    if reflect {
        t = t.with_reflection();
    }
    let s = translation_scale;
    let offset = if s > 0.0 {
        [rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s)]
    } else {
        [0.0; 3]
    };
    t.with_translation(offset)
}

/// Points on a sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub center: Vec3,
    pub radius: f64,
    pub points: Vec<Vec3>,
}

impl SphereGrid {
    /// Rotate the grid about its own center.
    pub fn rotated(&self, rotation: &RigidTransform) -> Self {
        let about = rotation.about(self.center);
        Self {
            center: self.center,
            radius: self.radius,
            points: about.apply(&self.points),
        }
    }
}

/// Golden-angle spiral: `z_i = 1 − (2i+1)/k`, azimuth `i·π(3−√5)`.
pub fn fibonacci_grid(k: usize, center: Vec3, radius: f64) -> Result<SphereGrid> {
    if k == 0 {
        return Err(Error::Argument("a Fibonacci grid needs at least one point".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Argument(format!("sphere radius must be positive, got {radius}")));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let points = (0..k)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / k as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * golden;
            let unit = [r * phi.cos(), r * phi.sin(), z];
            add(center, scale(unit, radius))
        })
        .collect();
    Ok(SphereGrid {
        center,
        radius,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_orthonormal(t: &RigidTransform) {
        let r = t.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_point_grid_on_unit_sphere() {
        let g = fibonacci_grid(1, [0.0; 3], 1.0).unwrap();
        assert_eq!(g.points.len(), 1);
        assert!((norm(g.points[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(fibonacci_grid(0, [0.0; 3], 1.0).is_err());
        assert!(fibonacci_grid(3, [0.0; 3], 0.0).is_err());
    }

    #[test]
    fn eight_point_grid_minimum_chord() {
        // Independent enumeration of the spiral formula over all 28 pairs.
        let k = 8;
        let oracle: Vec<Vec3> = (0..k)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / k as f64;
                let phi = i as f64 * std::f64::consts::PI * (3.0 - 5f64.sqrt());
                let rho = (1.0 - z * z).sqrt();
                [rho * phi.cos(), rho * phi.sin(), z]
            })
            .collect();
        let g = fibonacci_grid(k, [0.0; 3], 1.0).unwrap();
        let mut min = f64::INFINITY;
        let mut pairs = 0;
        for i in 0..k {
            assert!(distance(g.points[i], oracle[i]) < 1e-12);
            for j in i + 1..k {
                min = min.min(distance(oracle[i], oracle[j]));
                pairs += 1;
            }
        }
        assert_eq!(pairs, 28);
        assert!(min >= 0.85, "min chord {min}");
    }

    proptest! {
        #[test]
        fn grid_points_lie_on_sphere(k in 1usize..64, cx in -20.0f64..20.0, radius in 0.1f64..30.0) {
            let center = [cx, -cx * 0.5, 3.0];
            let g = fibonacci_grid(k, center, radius).unwrap();
            prop_assert_eq!(g.points.len(), k);
            for p in &g.points {
                prop_assert!((distance(*p, center) - radius).abs() < 1e-9);
            }
            if k > 1 {
                let mut total = 0.0;
                for i in 0..k { for j in i+1..k { total += distance(g.points[i], g.points[j]); } }
                prop_assert!(total > 0.0);
            }
            prop_assert_eq!(g, fibonacci_grid(k, center, radius).unwrap());
        }

        #[test]
        fn transforms_preserve_pairwise_distances(seed in any::<u64>(), reflect in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_rigid(&mut rng, 10.0, reflect);
            let pts: Vec<Vec3> = (0..6).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let moved = apply_transform(&t, &pts);
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    prop_assert!((distance(pts[i], pts[j]) - distance(moved[i], moved[j])).abs() < 1e-10);
                }
            }
            prop_assert_eq!(t.is_improper(), reflect);
            prop_assert_eq!(t.is_improper(), t.determinant() < 0.0);
        }
    }

    #[test]
    fn identity_and_translation() {
        let p = [1.5, -2.0, 0.25];
        assert_eq!(RigidTransform::identity().apply_point(p), p);
        assert_eq!(RigidTransform::translation([1.0, 0.0, 0.0]).apply_point([0.0; 3]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn random_rotation_is_proper_and_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = random_rotation(&mut rng);
            assert_orthonormal(&t);
            assert!((t.determinant() - 1.0).abs() < 1e-10);
            assert!(!t.is_improper());
            assert_eq!(t.translation_vector(), [0.0; 3]);
        }
    }

    #[test]
    fn random_rotation_is_uniform_in_mean() {
        // Monte-Carlo: a Haar rotation of a fixed unit vector has mean zero.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let v = random_rotation(&mut rng).apply_point([0.0, 0.0, 1.0]);
            mean = add(mean, scale(v, 1.0 / n as f64));
        }
        for m in mean {
            assert!(m.abs() < 0.05, "{mean:?}");
        }
    }

    #[test]
    fn inverse_and_compose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_rigid(&mut rng, 3.0, true);
        let b = random_rigid(&mut rng, 3.0, false);
        let p = [0.3, -1.2, 2.2];
        let q = a.inverse().apply_point(a.apply_point(p));
        assert!(distance(p, q) < 1e-12);
        let ab = a.compose(&b).apply_point(p);
        assert!(distance(ab, a.apply_point(b.apply_point(p))) < 1e-12);
        assert!(RigidTransform::new([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3]).is_err());
        let checked = RigidTransform::new(*a.rotation(), [0.0; 3]).unwrap();
        assert!(checked.is_improper());
    }

    #[test]
    fn grid_rotation_about_center_keeps_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = fibonacci_grid(8, [4.0, 5.0, -1.0], 7.5).unwrap();
        let r = g.rotated(&random_rotation(&mut rng));
        for p in &r.points {
            assert!((distance(*p, g.center) - 7.5).abs() < 1e-9);
        }
    }
}
