//! Fixed-column PDB reader covering ATOM/HETATM records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::canonical_residue;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// One heavy atom of a protein residue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidueAtom {
    pub chain: char,
    pub residue_index: i32,
    pub insertion: char,
    /// Canonical three-letter code, or `UNK`.
    pub residue_name: String,
    pub atom_name: String,
    pub element: String,
    pub position: Vec3,
    pub is_alpha_carbon: bool,
}

/// A non-water HETATM group with its heavy atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LigandRecord {
    pub id: String,
    pub residue_name: String,
    pub chain: char,
    pub residue_index: i32,
    pub atoms: Vec<Vec3>,
}

impl LigandRecord {
    pub fn center(&self) -> Vec3 {
        crate::geometry::centroid(&self.atoms)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedStructure {
    pub atoms: Vec<ResidueAtom>,
    pub ligands: Vec<LigandRecord>,
    /// ATOM/HETATM lines that could not be read.
    pub skipped_lines: usize,
}

/// α-carbon trace of one chain, ordered by residue number.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub chain: char,
    pub residue_names: Vec<String>,
    pub positions: Vec<Vec3>,
}

impl ParsedStructure {
    pub fn alpha_carbons(&self) -> impl Iterator<Item = &ResidueAtom> {
        self.atoms.iter().filter(|a| a.is_alpha_carbon)
    }

    /// One trace per chain in order of first appearance. Within a chain,
    /// residues are sorted by (number, insertion code); duplicates keep the
    /// first record.
    pub fn chains(&self) -> Vec<ChainTrace> {
        let mut order: Vec<char> = Vec::new();
        let mut per_chain: BTreeMap<char, BTreeMap<(i32, char), &ResidueAtom>> = BTreeMap::new();
        for a in self.alpha_carbons() {
            if !order.contains(&a.chain) {
                order.push(a.chain);
            }
            per_chain
                .entry(a.chain)
                .or_default()
                .entry((a.residue_index, a.insertion))
                .or_insert(a);
        }
        order
            .into_iter()
            .map(|c| {
                let residues = &per_chain[&c];
                ChainTrace {
                    chain: c,
                    residue_names: residues.values().map(|a| a.residue_name.clone()).collect(),
                    positions: residues.values().map(|a| a.position).collect(),
                }
            })
            .collect()
    }
}

/// Ligands with at least `min_heavy_atoms` heavy atoms.
pub fn significant_ligands(ligands: &[LigandRecord], min_heavy_atoms: usize) -> Vec<LigandRecord> {
    ligands
        .iter()
        .filter(|l| l.atoms.len() >= min_heavy_atoms)
        .cloned()
        .collect()
}

const WATER: [&str; 3] = ["HOH", "WAT", "DOD"];

/// 1-based inclusive column range, tolerant of short lines.
fn columns(line: &str, from: usize, to: usize) -> &str {
    let start = (from - 1).min(line.len());
    let end = to.min(line.len());
    line.get(start..end).unwrap_or("")
}

fn column_char(line: &str, col: usize) -> char {
    line.get(col - 1..col).and_then(|s| s.chars().next()).unwrap_or(' ')
}

fn element_of(line: &str, atom_name: &str) -> String {
    let e = columns(line, 77, 78).trim();
    if !e.is_empty() {
        return e.to_ascii_uppercase();
    }
    atom_name
        .chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

struct Record {
    hetero: bool,
    atom_name: String,
    alt_loc: char,
    residue_name: String,
    chain: char,
    residue_index: i32,
    insertion: char,
    position: Vec3,
    element: String,
}

fn parse_record(line: &str) -> Option<Record> {
    let hetero = line.starts_with("HETATM");
    if line.len() < 54 {
        return None;
    }
    let coord = |a, b| columns(line, a, b).trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let position = [coord(31, 38)?, coord(39, 46)?, coord(47, 54)?];
    let atom_name = columns(line, 13, 16).trim().to_string();
    if atom_name.is_empty() {
        return None;
    }
    let residue_index = columns(line, 23, 26).trim().parse::<i32>().ok()?;
    let element = element_of(line, &atom_name);
    Some(Record {
        hetero,
        alt_loc: column_char(line, 17),
        residue_name: columns(line, 18, 20).trim().to_ascii_uppercase(),
        chain: column_char(line, 22),
        residue_index,
        insertion: column_char(line, 27),
        atom_name,
        position,
        element,
    })
}

/// Parse ATOM/HETATM records of the first model. Hydrogens and alternate
/// locations other than the first are dropped; water is never a ligand.
pub fn parse_pdb_lite(text: &str) -> Result<ParsedStructure> {
    let mut out = ParsedStructure::default();
    let mut groups: Vec<((char, i32, char, String), Vec<Vec3>)> = Vec::new();
    for line in text.lines() {
        if line.starts_with("ENDMDL") {
            break;
        }
        if !(line.starts_with("ATOM") || line.starts_with("HETATM")) {
            continue;
        }
        let Some(rec) = parse_record(line) else {
            out.skipped_lines += 1;
            continue;
        };
        if !matches!(rec.alt_loc, ' ' | 'A' | '1') {
            continue;
        }
        if rec.element == "H" || rec.element == "D" {
            continue;
        }
        if rec.hetero {
            if WATER.contains(&rec.residue_name.as_str()) {
                continue;
            }
            let key = (rec.chain, rec.residue_index, rec.insertion, rec.residue_name.clone());
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, atoms)) => atoms.push(rec.position),
                None => groups.push((key, vec![rec.position])),
            }
        } else {
            out.atoms.push(ResidueAtom {
                chain: rec.chain,
                residue_index: rec.residue_index,
                insertion: rec.insertion,
                residue_name: canonical_residue(&rec.residue_name).to_string(),
                is_alpha_carbon: rec.atom_name == "CA",
                atom_name: rec.atom_name,
                element: rec.element,
                position: rec.position,
            });
        }
    }
    if out.skipped_lines > 0 {
        log::warn!("skipped {} malformed coordinate records", out.skipped_lines);
    }
    if out.atoms.is_empty() {
        return Err(Error::EmptyStructure("no parsable ATOM record".into()));
    }
    out.ligands = groups
        .into_iter()
        .map(|((chain, residue_index, _, residue_name), atoms)| LigandRecord {
            id: format!("{residue_name}_{chain}_{residue_index}"),
            residue_name,
            chain,
            residue_index,
            atoms,
        })
        .collect();
    Ok(out)
}

/// Format one fixed-column coordinate record.
#[allow(clippy::too_many_arguments)]
pub fn format_atom_line(
    hetero: bool,
    serial: usize,
    atom_name: &str,
    residue_name: &str,
    chain: char,
    residue_index: i32,
    position: Vec3,
    element: &str,
) -> String {
    let record = if hetero { "HETATM" } else { "ATOM" };
    // Atom names shorter than four characters start in column 14.
    let name = if atom_name.len() < 4 {
        format!(" {atom_name:<3}")
    } else {
        atom_name.to_string()
    };
    format!(
        "{record:<6}{serial:>5} {name:<4} {residue_name:>3} {chain}{residue_index:>4}    {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}{:10}{element:>2}",
        position[0], position[1], position[2], 1.0, 0.0, ""
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
HEADER    TEST FIXTURE
ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  CA  GLY A   2      13.250   7.500  -3.100  1.00  0.00           C
ATOM      4  H   GLY A   2      13.900   7.900  -3.500  1.00  0.00           H
ATOM      5  CA  TRP A   3      15.000   9.250  -1.000  1.00  0.00           C
HETATM    6  C1  LIG A 101      14.000   8.000   0.500  1.00  0.00           C
HETATM    7  C2  LIG A 101      14.500   8.500   1.000  1.00  0.00           C
HETATM    8  O1  LIG A 101      15.000   9.000   1.500  1.00  0.00           O
HETATM    9  N1  LIG A 101      15.500   9.500   2.000  1.00  0.00           N
HETATM   10  H1  LIG A 101      15.900   9.900   2.400  1.00  0.00           H
HETATM   11  O   HOH A 201       1.000   1.000   1.000  1.00  0.00           O
END
";

    #[test]
    fn single_ca_line_copies_fields() {
        let line = "ATOM      2  CA  ALA B  17      11.639   6.071  -5.147  1.00  0.00           C";
        let s = parse_pdb_lite(line).unwrap();
        assert_eq!(s.atoms.len(), 1);
        let a = &s.atoms[0];
        assert!(a.is_alpha_carbon);
        assert_eq!(a.position, [11.639, 6.071, -5.147]);
        assert_eq!((a.chain, a.residue_index, a.residue_name.as_str()), ('B', 17, "ALA"));
        assert_eq!(a.element, "C");
    }

    #[test]
    fn fixture_counts() {
        let s = parse_pdb_lite(FIXTURE).unwrap();
        assert_eq!(s.alpha_carbons().count(), 3);
        assert_eq!(s.ligands.len(), 1);
        assert_eq!(s.ligands[0].atoms.len(), 4);
        assert_eq!(s.ligands[0].id, "LIG_A_101");
        assert_eq!(s.skipped_lines, 0);
    }

    #[test]
    fn water_only_hetatms_give_no_ligands() {
        let text = "\
ATOM      1  CA  ALA A   1       0.000   0.000   0.000  1.00  0.00           C
HETATM    2  O   HOH A 201       1.000   1.000   1.000  1.00  0.00           O
HETATM    3  O   HOH A 202       2.000   1.000   1.000  1.00  0.00           O
";
        assert!(parse_pdb_lite(text).unwrap().ligands.is_empty());
    }

    #[test]
    fn no_atoms_is_empty_structure_error() {
        let text = "HETATM    2  C1  LIG A 201       1.000   1.000   1.000  1.00  0.00           C\n";
        assert!(matches!(parse_pdb_lite(text), Err(Error::EmptyStructure(_))));
        assert!(matches!(parse_pdb_lite(""), Err(Error::EmptyStructure(_))));
    }

    #[test]
    fn malformed_lines_are_counted() {
        let text = "\
ATOM      1  CA  ALA A   1       0.000   0.000   0.000  1.00  0.00           C
ATOM      2  CA  ALA A   2       abc     0.000   0.000  1.00  0.00           C
ATOM      3  CA  ALA A
";
        let s = parse_pdb_lite(text).unwrap();
        assert_eq!(s.atoms.len(), 1);
        assert_eq!(s.skipped_lines, 2);
    }

    #[test]
    fn chain_order_is_independent_of_interleaving() {
        let a = "ATOM      1  CA  ALA A   1       0.000   0.000   0.000  1.00  0.00           C";
        let b = "ATOM      2  CA  GLY A   2       3.800   0.000   0.000  1.00  0.00           C";
        let c = "ATOM      3  CA  SER B   1       0.000   5.000   0.000  1.00  0.00           C";
        let one = parse_pdb_lite(&[a, b, c].join("\n")).unwrap().chains();
        let two = parse_pdb_lite(&[b, c, a].join("\n")).unwrap().chains();
        let sorted = |mut v: Vec<ChainTrace>| {
            v.sort_by_key(|t| t.chain);
            v
        };
        assert_eq!(sorted(one.clone()), sorted(two));
        assert_eq!(one[0].residue_names, vec!["ALA", "GLY"]);
    }

    #[test]
    fn formatted_lines_parse_back() {
        let line = format_atom_line(false, 12, "CA", "TRP", 'C', 42, [-12.345, 6.5, 100.0], "C");
        assert_eq!(line.len(), 78);
        let s = parse_pdb_lite(&line).unwrap();
        assert_eq!(s.atoms[0].position, [-12.345, 6.5, 100.0]);
        assert_eq!(s.atoms[0].residue_index, 42);
        assert!(s.atoms[0].is_alpha_carbon);
    }

    #[test]
    fn ligand_size_filter() {
        let s = parse_pdb_lite(FIXTURE).unwrap();
        assert!(significant_ligands(&s.ligands, 6).is_empty());
        assert_eq!(significant_ligands(&s.ligands, 4).len(), 1);
    }
}
