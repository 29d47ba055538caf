//! Pairs of n-chain geometric graphs that differ only in the orientation of
//! one end point.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};

/// Lateral and axial offsets of an end point from its interior neighbor.
/// Both end-point bonds have unit length.
const END_LATERAL: f64 = 0.8;
const END_AXIAL: f64 = 0.6;

/// Nodes `0..n` are the interior line, `n` and `n + 1` the two end points
/// attached to interior nodes `0` and `n - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KChainInstance {
    pub coords: Vec<Vec3>,
    /// Undirected edges, each listed once.
    pub edges: Vec<[usize; 2]>,
    /// 1 when both end points sit on the same side of the line.
    pub label: u8,
    pub virtual_seed: Option<Vec3>,
}

impl KChainInstance {
    pub fn interior_len(&self) -> usize {
        self.coords.len() - 2
    }

    /// Incoming neighbors per node (edges are symmetric).
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.coords.len()];
        for &[a, b] in &self.edges {
            nb[a].push(b);
            nb[b].push(a);
        }
        for l in &mut nb {
            l.sort_unstable();
        }
        nb
    }

    /// Midpoint of the interior line.
    pub fn midpoint(&self) -> Vec3 {
        geometry::centroid(&self.coords[..self.interior_len()])
    }
}

fn chain(n: usize, first_side: f64) -> KChainInstance {
    let mut coords: Vec<Vec3> = (0..n).map(|i| [0.0, i as f64, 0.0]).collect();
    coords.push([first_side * END_LATERAL, -END_AXIAL, 0.0]);
    coords.push([END_LATERAL, (n - 1) as f64 + END_AXIAL, 0.0]);
    let mut edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
    edges.push([n, 0]);
    edges.push([n + 1, n - 1]);
    KChainInstance {
        coords,
        edges,
        label: u8::from(first_side > 0.0),
        virtual_seed: None,
    }
}

/// The two members of an n-chain pair, label 0 first. Both share one
/// virtual-node seed on a sphere around the interior midpoint whose radius
/// exceeds the farthest node's distance by one unit.
pub fn make_kchain_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(KChainInstance, KChainInstance)> {
    if n < 2 {
        return Err(Error::Argument(format!("chain needs at least 2 interior nodes, got {n}")));
    }
    let mut opposite = chain(n, -1.0);
    let mut same = chain(n, 1.0);
    let mid = opposite.midpoint();
    let reach = opposite
        .coords
        .iter()
        .chain(&same.coords)
        .map(|&x| geometry::distance(x, mid))
        .fold(0.0, f64::max);
    let dir = loop {
        let v: Vec3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let len = geometry::norm(v);
        if len > 1e-6 {
            break geometry::scale(v, 1.0 / len);
        }
    };
    let seed = geometry::add(mid, geometry::scale(dir, reach + 1.0));
    opposite.virtual_seed = Some(seed);
    same.virtual_seed = Some(seed);
    Ok((opposite, same))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn four_chain_layout() {
        let (a, b) = make_kchain_pair(4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a.coords.len(), 6);
        assert_eq!(b.coords.len(), 6);
        assert_eq!(a.coords[..4], b.coords[..4]);
        assert_eq!(a.coords[5], b.coords[5]);
        assert_ne!(a.coords[4], b.coords[4]);
        assert_eq!((a.label, b.label), (0, 1));
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.virtual_seed, b.virtual_seed);
        for &[i, j] in &a.edges {
            assert!((geometry::distance(a.coords[i], a.coords[j]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_lies_outside_the_chain() {
        let (a, _) = make_kchain_pair(6, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mid = a.midpoint();
        let seed = a.virtual_seed.unwrap();
        let far = a.coords.iter().map(|&x| geometry::distance(x, mid)).fold(0.0, f64::max);
        assert!(geometry::distance(seed, mid) > far);
    }

    #[test]
    fn short_chain_rejected() {
        assert!(make_kchain_pair(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
