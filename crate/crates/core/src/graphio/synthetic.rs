//! Synthetic proteins with planted ring-shaped pockets.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::RESIDUES;
use super::graph::{BindingSite, ProteinGraph, DEFAULT_LABEL_RADIUS};
use super::pdb::format_atom_line;
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};

pub const RING_SIZE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_nodes: usize,
    pub n_pockets: usize,
    /// Distance of ring residues from their pocket center (Å).
    pub ring_radius: f64,
    /// No other residue comes closer than this to a pocket center (Å).
    pub cavity_radius: f64,
    /// Minimum spacing between residues (Å), relaxed if the blob is crowded.
    pub min_spacing: f64,
    /// Volume per residue used to size the blob (Å³).
    pub volume_per_residue: f64,
    pub label_radius: f64,
    pub ring_residue: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_nodes: 48,
            n_pockets: 2,
            ring_radius: 3.0,
            cavity_radius: 6.0,
            min_spacing: 3.0,
            volume_per_residue: 130.0,
            label_radius: DEFAULT_LABEL_RADIUS,
            ring_residue: "TRP".into(),
        }
    }
}

impl SyntheticSpec {
    pub fn new(n_nodes: usize, n_pockets: usize) -> Self {
        SyntheticSpec {
            n_nodes,
            n_pockets,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 20 {
            return Err(Error::Argument(format!("need at least 20 nodes, got {}", self.n_nodes)));
        }
        if !(1..=4).contains(&self.n_pockets) {
            return Err(Error::Argument(format!("pocket count must be 1..=4, got {}", self.n_pockets)));
        }
        if self.n_nodes < RING_SIZE * self.n_pockets + 4 {
            return Err(Error::Argument(format!(
                "{} nodes cannot hold {} rings of {RING_SIZE}",
                self.n_nodes, self.n_pockets
            )));
        }
        if !(self.ring_radius > 0.0 && self.ring_radius < self.label_radius && self.label_radius < self.cavity_radius) {
            return Err(Error::Argument(
                "radii must satisfy 0 < ring radius < label radius < cavity radius".into(),
            ));
        }
        if !RESIDUES.contains(&self.ring_residue.as_str()) {
            return Err(Error::Argument(format!("`{}` is not a canonical residue", self.ring_residue)));
        }
        Ok(())
    }

    pub fn blob_radius(&self) -> f64 {
        (self.n_nodes as f64 * self.volume_per_residue * 3.0 / (4.0 * PI)).cbrt()
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = geometry::norm(v);
        if n > 1e-6 {
            return geometry::scale(v, 1.0 / n);
        }
    }
}

/// Two unit vectors completing `n` to an orthonormal frame.
fn plane_basis(n: Vec3) -> (Vec3, Vec3) {
    let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = geometry::cross(n, helper);
    let u = geometry::scale(u, 1.0 / geometry::norm(u));
    (u, geometry::cross(n, u))
}

/// A compact blob of residues with `n_pockets` rings of the ring residue,
/// each around a planted center near the surface.
pub fn make_synthetic<R: Rng + ?Sized>(rng: &mut R, n_nodes: usize, n_pockets: usize) -> Result<ProteinGraph> {
    make_synthetic_with(rng, &SyntheticSpec::new(n_nodes, n_pockets))
}

pub fn make_synthetic_with<R: Rng + ?Sized>(rng: &mut R, spec: &SyntheticSpec) -> Result<ProteinGraph> {
    spec.validate()?;
    let radius = spec.blob_radius();
    let center_depth = (0.75 * radius).max(spec.cavity_radius * 1.5);
    let min_center_gap = 2.0 * spec.cavity_radius;

    let mut centers: Vec<Vec3> = Vec::new();
    let mut attempts = 0usize;
    while centers.len() < spec.n_pockets {
        let c = geometry::scale(unit_vector(rng), center_depth);
        if centers.iter().all(|&o| geometry::distance(o, c) >= min_center_gap) {
            centers.push(c);
        }
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Argument("could not place pockets far enough apart".into()));
        }
    }

    let mut coords: Vec<Vec3> = Vec::with_capacity(spec.n_nodes);
    let mut names: Vec<String> = Vec::with_capacity(spec.n_nodes);
    let mut sites = Vec::with_capacity(spec.n_pockets);
    for &c in &centers {
        let (u, v) = plane_basis(geometry::scale(c, 1.0 / geometry::norm(c)));
        let phase = rng.random_range(0.0..2.0 * PI);
        let ring: Vec<Vec3> = (0..RING_SIZE)
            .map(|j| {
                let a = phase + 2.0 * PI * j as f64 / RING_SIZE as f64;
                let offset = geometry::add(geometry::scale(u, a.cos()), geometry::scale(v, a.sin()));
                geometry::add(c, geometry::scale(offset, spec.ring_radius))
            })
            .collect();
        coords.extend_from_slice(&ring);
        names.extend(std::iter::repeat_n(spec.ring_residue.clone(), RING_SIZE));
        sites.push(BindingSite { center: c, atoms: ring });
    }

    let fillers: Vec<&str> = RESIDUES.iter().copied().filter(|r| *r != spec.ring_residue).collect();
    let mut spacing = spec.min_spacing;
    let mut misses = 0usize;
    while coords.len() < spec.n_nodes {
        let p = loop {
            let p: Vec3 = [0; 3].map(|_| rng.random_range(-radius..radius));
            if geometry::norm(p) <= radius {
                break p;
            }
        };
        let clear_of_pockets = centers.iter().all(|&c| geometry::distance(c, p) >= spec.cavity_radius);
        if clear_of_pockets && coords.iter().all(|&q| geometry::distance(p, q) >= spacing) {
            coords.push(p);
            names.push((*fillers.choose(rng).expect("non-empty")).to_string());
            misses = 0;
        } else {
            misses += 1;
            if misses > 2_000 {
                spacing *= 0.9;
                misses = 0;
            }
        }
    }

    let labels = coords
        .iter()
        .map(|&x| u8::from(centers.iter().any(|&c| geometry::distance(x, c) <= spec.label_radius)))
        .collect();
    ProteinGraph::assemble("synthetic", coords, names, labels, sites)
}

/// `count` graphs with ids `synthetic-{seed}-{i}`; graph `i` depends only
/// on `(seed, i)`.
pub fn synthetic_dataset(seed: u64, count: usize, spec: &SyntheticSpec) -> Result<Vec<ProteinGraph>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut g = make_synthetic_with(&mut rng, spec)?;
            g.id = format!("synthetic-{seed}-{i:04}");
            Ok(g)
        })
        .collect()
}

/// Half-width of the octahedral pseudo-ligand written for each site.
pub const PSEUDO_LIGAND_RADIUS: f64 = 1.2;

/// Render a graph as α-carbon ATOM records on chain A plus one six-atom
/// HETATM group per site, centered on the site center.
pub fn graph_to_pdb(graph: &ProteinGraph) -> String {
    let mut out = String::new();
    let mut serial = 1;
    for (i, (x, name)) in graph.coords.iter().zip(&graph.residue_names).enumerate() {
        out.push_str(&format_atom_line(false, serial, "CA", name, 'A', i as i32 + 1, *x, "C"));
        out.push('\n');
        serial += 1;
    }
    for (m, site) in graph.sites.iter().enumerate() {
        for axis in 0..3 {
            for sign in [1.0, -1.0] {
                let mut p = site.center;
                p[axis] += sign * PSEUDO_LIGAND_RADIUS;
                let atom = format!("C{}", serial % 1000);
                out.push_str(&format_atom_line(true, serial, &atom, "LIG", 'A', 900 + m as i32, p, "C"));
                out.push('\n');
                serial += 1;
            }
        }
    }
    out.push_str("END\n");
    out
}
