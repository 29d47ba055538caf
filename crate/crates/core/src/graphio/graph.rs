//! α-carbon neighborhood graphs with labels and binding sites.

use serde::{Deserialize, Serialize};

use super::features::encode_features;
use super::pdb::{significant_ligands, LigandRecord, ParsedStructure};
use crate::diffengine::Matrix;
use crate::error::{Error, Result};
use crate::geometry::{self, RigidTransform, Vec3};

pub const MAX_NEIGHBORS: usize = 10;
/// Edges only join nodes strictly closer than this (Å).
pub const EDGE_CUTOFF: f64 = 10.0;
pub const DEFAULT_LABEL_RADIUS: f64 = 4.0;
pub const DEFAULT_MIN_LIGAND_ATOMS: usize = 6;

/// A ground-truth site: its center and the atoms used for DCA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BindingSite {
    pub center: Vec3,
    pub atoms: Vec<Vec3>,
}

impl BindingSite {
    pub fn from_ligand(ligand: &LigandRecord) -> Self {
        BindingSite {
            center: ligand.center(),
            atoms: ligand.atoms.clone(),
        }
    }

    fn transformed(&self, t: &RigidTransform) -> Self {
        BindingSite {
            center: t.apply_point(self.center),
            atoms: t.apply(&self.atoms),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProteinGraph {
    pub id: String,
    pub coords: Vec<Vec3>,
    pub residue_names: Vec<String>,
    pub features: Matrix,
    /// Incoming neighbors of each node, nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub labels: Vec<u8>,
    pub sites: Vec<BindingSite>,
}

/// Incoming neighbors per node: up to `k` nearest others strictly within
/// `cutoff`, ties broken by lower index.
pub fn knn_neighbors(coords: &[Vec3], k: usize, cutoff: f64) -> Vec<Vec<usize>> {
    let cutoff2 = cutoff * cutoff;
    coords
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let mut cand: Vec<(f64, usize)> = coords
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &xj)| {
                    let d = geometry::sub(xi, xj);
                    (geometry::dot(d, d), j)
                })
                .filter(|&(d2, _)| d2 < cutoff2)
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// 1 for every node within `radius` of any of `atoms`.
pub fn proximity_labels(coords: &[Vec3], atoms: &[Vec3], radius: f64) -> Vec<u8> {
    coords
        .iter()
        .map(|&x| u8::from(atoms.iter().any(|&a| geometry::distance(x, a) <= radius)))
        .collect()
}

impl ProteinGraph {
    /// Assemble a graph from positions, residue names, labels and sites,
    /// computing features and adjacency.
    pub fn assemble(
        id: impl Into<String>,
        coords: Vec<Vec3>,
        residue_names: Vec<String>,
        labels: Vec<u8>,
        sites: Vec<BindingSite>,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyStructure("graph has no nodes".into()));
        }
        if residue_names.len() != coords.len() || labels.len() != coords.len() {
            return Err(Error::Argument(format!(
                "{} coordinates, {} residue names, {} labels",
                coords.len(),
                residue_names.len(),
                labels.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite coordinate".into()));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Argument("labels must be 0 or 1".into()));
        }
        let neighbors = knn_neighbors(&coords, MAX_NEIGHBORS, EDGE_CUTOFF);
        let features = encode_features(&residue_names);
        Ok(ProteinGraph {
            id: id.into(),
            coords,
            residue_names,
            features,
            neighbors,
            labels,
            sites,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    /// Directed edges as parallel (receiver, sender) index lists.
    pub fn edge_lists(&self) -> (Vec<usize>, Vec<usize>) {
        let mut dst = Vec::with_capacity(self.num_edges());
        let mut src = Vec::with_capacity(self.num_edges());
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                dst.push(i);
                src.push(j);
            }
        }
        (dst, src)
    }

    pub fn site_centers(&self) -> Vec<Vec3> {
        self.sites.iter().map(|s| s.center).collect()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// The same graph moved rigidly; adjacency and labels are kept as is.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        ProteinGraph {
            coords: t.apply(&self.coords),
            sites: self.sites.iter().map(|s| s.transformed(t)).collect(),
            ..self.clone()
        }
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Argument("not a permutation of the node indices".into()));
        }
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let mut features = Matrix::zeros(n, self.features.cols());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(i).copy_from_slice(self.features.row(p));
        }
        Ok(ProteinGraph {
            id: self.id.clone(),
            coords: perm.iter().map(|&p| self.coords[p]).collect(),
            residue_names: perm.iter().map(|&p| self.residue_names[p].clone()).collect(),
            features,
            neighbors: perm
                .iter()
                .map(|&p| self.neighbors[p].iter().map(|&j| inverse[j]).collect())
                .collect(),
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            sites: self.sites.clone(),
        })
    }
}

/// Build a graph from an α-carbon trace and the ligands that label it.
/// Every ligand becomes a site, whether or not it lies near the trace.
pub fn build_graph<S: AsRef<str>>(
    ca: &[Vec3],
    residue_names: &[S],
    ligands: &[LigandRecord],
    label_radius: f64,
) -> Result<ProteinGraph> {
    if ca.is_empty() {
        return Err(Error::EmptyStructure("no α-carbon positions".into()));
    }
    if !(label_radius > 0.0) {
        return Err(Error::Argument(format!("label radius must be positive, got {label_radius}")));
    }
    let mut labels = vec![0u8; ca.len()];
    for lig in ligands {
        for (l, new) in labels.iter_mut().zip(proximity_labels(ca, &lig.atoms, label_radius)) {
            *l |= new;
        }
    }
    ProteinGraph::assemble(
        "",
        ca.to_vec(),
        residue_names.iter().map(|s| s.as_ref().to_string()).collect(),
        labels,
        ligands.iter().map(BindingSite::from_ligand).collect(),
    )
}

/// A structure split into per-chain graphs plus its full site list.
#[derive(Clone, Debug)]
pub struct Structure {
    pub id: String,
    pub chains: Vec<ProteinGraph>,
    pub sites: Vec<BindingSite>,
}

impl Structure {
    /// A single-chain structure whose sites are the graph's own.
    pub fn from_graph(graph: ProteinGraph) -> Self {
        Structure {
            id: graph.id.clone(),
            sites: graph.sites.clone(),
            chains: vec![graph],
        }
    }
}

/// One graph per chain. A chain carries the ligands that label at least one
/// of its residues; the structure keeps all ligands with at least
/// `min_ligand_atoms` heavy atoms.
pub fn structure_graphs(
    parsed: &ParsedStructure,
    id: &str,
    label_radius: f64,
    min_ligand_atoms: usize,
) -> Result<Structure> {
    let ligands = significant_ligands(&parsed.ligands, min_ligand_atoms);
    let traces = parsed.chains();
    if traces.is_empty() {
        return Err(Error::EmptyStructure(format!("{id}: no α-carbon atoms")));
    }
    let mut chains = Vec::with_capacity(traces.len());
    for t in traces {
        let near: Vec<LigandRecord> = ligands
            .iter()
            .filter(|l| proximity_labels(&t.positions, &l.atoms, label_radius).contains(&1))
            .cloned()
            .collect();
        let mut g = build_graph(&t.positions, &t.residue_names, &near, label_radius)?;
        g.id = format!("{id}_{}", t.chain);
        chains.push(g);
    }
    Ok(Structure {
        id: id.to_string(),
        chains,
        sites: ligands.iter().map(BindingSite::from_ligand).collect(),
    })
}

/// Debug dump of a graph. `edges` holds `[sender, receiver]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDump {
    pub id: String,
    pub nodes: Vec<NodeDump>,
    pub edges: Vec<[usize; 2]>,
    pub sites: Vec<BindingSite>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDump {
    pub residue: String,
    pub position: Vec3,
    pub label: u8,
}

impl From<&ProteinGraph> for GraphDump {
    fn from(g: &ProteinGraph) -> Self {
        let (dst, src) = g.edge_lists();
        GraphDump {
            id: g.id.clone(),
            nodes: (0..g.len())
                .map(|i| NodeDump {
                    residue: g.residue_names[i].clone(),
                    position: g.coords[i],
                    label: g.labels[i],
                })
                .collect(),
            edges: src.into_iter().zip(dst).map(|(s, d)| [s, d]).collect(),
            sites: g.sites.clone(),
        }
    }
}

impl GraphDump {
    /// Rebuild the graph; adjacency is recomputed and must match the dump.
    pub fn into_graph(self) -> Result<ProteinGraph> {
        let g = ProteinGraph::assemble(
            self.id,
            self.nodes.iter().map(|n| n.position).collect(),
            self.nodes.iter().map(|n| n.residue.clone()).collect(),
            self.nodes.iter().map(|n| n.label).collect(),
            self.sites,
        )?;
        let (dst, src) = g.edge_lists();
        let edges: Vec<[usize; 2]> = src.into_iter().zip(dst).map(|(s, d)| [s, d]).collect();
        if edges != self.edges {
            return Err(Error::Parse(format!("{}: edge list does not match node positions", g.id)));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rigid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        vec!["ALA".to_string(); n]
    }

    #[test]
    fn two_nodes_within_and_beyond_cutoff() {
        let g = build_graph(&[[0.0; 3], [5.0, 0.0, 0.0]], &names(2), &[], 4.0).unwrap();
        assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
        let g = build_graph(&[[0.0; 3], [12.0, 0.0, 0.0]], &names(2), &[], 4.0).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn collinear_middle_node_has_ten_neighbors() {
        let ca: Vec<Vec3> = (0..12).map(|i| [i as f64, 0.0, 0.0]).collect();
        let g = build_graph(&ca, &names(12), &[], 4.0).unwrap();
        let mut nb = g.neighbors[5].clone();
        nb.sort();
        // Node 11 is the only one farther than 5 Å from node 5.
        assert_eq!(nb, vec![0, 1, 2, 3, 4, 6, 7, 8, 9, 10]);
        // Node 10 sits exactly at the cutoff from node 0.
        assert_eq!(g.neighbors[0].len(), 9);
    }

    #[test]
    fn empty_and_bad_radius() {
        let none: [Vec3; 0] = [];
        assert!(matches!(build_graph(&none, &names(0), &[], 4.0), Err(Error::EmptyStructure(_))));
        assert!(build_graph(&[[0.0; 3]], &names(1), &[], 0.0).is_err());
    }

    #[test]
    fn labels_and_centers_from_ligands() {
        let lig = LigandRecord {
            id: "L".into(),
            residue_name: "LIG".into(),
            chain: 'A',
            residue_index: 1,
            atoms: vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
        };
        let ca = [[6.0, 0.0, 0.0], [-4.0, 0.0, 0.0], [-4.1, 0.0, 0.0]];
        let g = build_graph(&ca, &names(3), &[lig], 4.0).unwrap();
        assert_eq!(g.labels, vec![1, 1, 0]);
        assert_eq!(g.site_centers(), vec![[1.0, 0.0, 0.0]]);
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| [rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)])
            .collect()
    }

    #[test]
    fn adjacency_is_rigid_invariant_and_labels_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let ca = random_points(&mut rng, 30);
            let lig = LigandRecord {
                id: "L".into(),
                residue_name: "LIG".into(),
                chain: 'A',
                residue_index: 1,
                atoms: random_points(&mut rng, 6),
            };
            let g = build_graph(&ca, &names(30), std::slice::from_ref(&lig), 4.0).unwrap();
            let t = random_rigid(&mut rng, 20.0, true);
            let moved = LigandRecord { atoms: t.apply(&lig.atoms), ..lig.clone() };
            let h = build_graph(&t.apply(&ca), &names(30), &[moved], 4.0).unwrap();
            assert_eq!(g.neighbors, h.neighbors);
            assert_eq!(g.labels, h.labels);
            let wider = build_graph(&ca, &names(30), &[lig], 6.0).unwrap();
            assert!(g.labels.iter().zip(&wider.labels).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn permutation_relabels_consistently() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ca = random_points(&mut rng, 15);
        let g = build_graph(&ca, &names(15), &[], 4.0).unwrap();
        let perm: Vec<usize> = (0..15).rev().collect();
        let p = g.permuted(&perm).unwrap();
        let rebuilt = build_graph(&p.coords, &names(15), &[], 4.0).unwrap();
        assert_eq!(p.neighbors, rebuilt.neighbors);
        assert!(g.permuted(&[0, 0]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ca = random_points(&mut rng, 12);
        let g = build_graph(&ca, &names(12), &[], 4.0).unwrap();
        let text = serde_json::to_string(&GraphDump::from(&g)).unwrap();
        let back: GraphDump = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_graph().unwrap(), g);
    }
}
