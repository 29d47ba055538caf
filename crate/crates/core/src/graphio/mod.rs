//! Structure ingestion and graph construction.

mod features;
mod graph;
mod kchain;
mod pdb;
mod synthetic;

pub use features::{canonical_residue, encode_features, residue_index, FEATURE_DIM, RESIDUES, UNK_INDEX, VIRTUAL_INDEX};
pub use graph::{
    build_graph, knn_neighbors, proximity_labels, structure_graphs, BindingSite, GraphDump, NodeDump, ProteinGraph,
    Structure, DEFAULT_LABEL_RADIUS, DEFAULT_MIN_LIGAND_ATOMS, EDGE_CUTOFF, MAX_NEIGHBORS,
};
pub use kchain::{make_kchain_pair, KChainInstance};
pub use pdb::{
    format_atom_line, parse_pdb_lite, significant_ligands, ChainTrace, LigandRecord, ParsedStructure, ResidueAtom,
};
pub use synthetic::{
    graph_to_pdb, make_synthetic, make_synthetic_with, synthetic_dataset, SyntheticSpec, PSEUDO_LIGAND_RADIUS, RING_SIZE,
};
