//! One-hot residue encoding.

use crate::diffengine::Matrix;

/// The twenty canonical residues in alphabetical order of their codes.
pub const RESIDUES: [&str; 20] = [
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE", "LEU", "LYS", "MET", "PHE",
    "PRO", "SER", "THR", "TRP", "TYR", "VAL",
];

pub const UNK_INDEX: usize = 20;
/// Reserved column; always zero for residues.
pub const VIRTUAL_INDEX: usize = 21;
pub const FEATURE_DIM: usize = 22;

/// Column of a residue code, `UNK_INDEX` for anything non-canonical.
pub fn residue_index(name: &str) -> usize {
    let upper = name.trim().to_ascii_uppercase();
    RESIDUES.iter().position(|r| *r == upper).unwrap_or(UNK_INDEX)
}

/// The canonical spelling of a code, or `"UNK"`.
pub fn canonical_residue(name: &str) -> &'static str {
    RESIDUES.get(residue_index(name)).copied().unwrap_or("UNK")
}

pub fn encode_features<S: AsRef<str>>(names: &[S]) -> Matrix {
    let mut m = Matrix::zeros(names.len(), FEATURE_DIM);
    for (i, n) in names.iter().enumerate() {
        m.set(i, residue_index(n.as_ref()), 1.0);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphabetical_and_unknown() {
        let h = encode_features(&["ALA", "XYZ", "val", "TRP"]);
        assert_eq!(h.shape(), (4, FEATURE_DIM));
        assert_eq!(h.get(0, 0), 1.0);
        assert_eq!(h.get(1, UNK_INDEX), 1.0);
        assert_eq!(h.get(2, 19), 1.0);
        assert_eq!(h.get(3, 17), 1.0);
        for i in 0..4 {
            assert_eq!(h.row(i).iter().sum::<f64>(), 1.0);
            assert_eq!(h.get(i, VIRTUAL_INDEX), 0.0);
        }
        let mut sorted = RESIDUES;
        sorted.sort();
        assert_eq!(sorted, RESIDUES);
    }

    #[test]
    fn canonical_names() {
        assert_eq!(canonical_residue("gly"), "GLY");
        assert_eq!(canonical_residue("MSE"), "UNK");
    }
}
