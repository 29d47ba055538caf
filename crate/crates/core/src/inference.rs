//! From converged virtual nodes to ranked site predictions and DCC/DCA
//! success rates.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::graphio::BindingSite;
use crate::model::SitePrediction;

pub const DEFAULT_BANDWIDTH: f64 = 5.0;
pub const DEFAULT_THRESHOLD: f64 = 4.0;
pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-7;

fn lex(a: &Vec3, b: &Vec3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Indices of `points` in lexicographic order of their coordinates.
fn canonical_order(points: &[Vec3]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| lex(&points[a], &points[b]).then(a.cmp(&b)));
    idx
}

fn mean_of(points: &[Vec3], members: impl Iterator<Item = usize>) -> Vec3 {
    let mut s = [0.0; 3];
    let mut n = 0usize;
    for i in members {
        s = geometry::add(s, points[i]);
        n += 1;
    }
    geometry::scale(s, 1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanShift {
    /// One mode per cluster, in lexicographic order of the first member.
    pub modes: Vec<Vec3>,
    /// Cluster of each input point.
    pub labels: Vec<usize>,
}

/// Flat-kernel mean shift. Each point climbs to the mean of the input
/// points within `bandwidth` until it moves less than `tol`; converged
/// points closer than `bandwidth / 2` to a cluster's first mode join it.
/// The result does not depend on input order.
pub fn mean_shift(points: &[Vec3], bandwidth: f64, max_iters: usize, tol: f64) -> Result<MeanShift> {
    if !(bandwidth > 0.0) {
        return Err(Error::Argument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let order = canonical_order(points);
    let sorted: Vec<Vec3> = order.iter().map(|&i| points[i]).collect();
    let converged: Vec<Vec3> = sorted
        .iter()
        .map(|&start| {
            let mut y = start;
            for _ in 0..max_iters {
                let next = mean_of(
                    &sorted,
                    (0..sorted.len()).filter(|&j| geometry::distance(sorted[j], y) <= bandwidth),
                );
                let moved = geometry::distance(next, y);
                y = next;
                if moved < tol {
                    break;
                }
            }
            y
        })
        .collect();

    let mut anchors: Vec<Vec3> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut labels = vec![0; points.len()];
    for (s, &y) in converged.iter().enumerate() {
        let c = match anchors.iter().position(|&a| geometry::distance(a, y) < bandwidth / 2.0) {
            Some(c) => c,
            None => {
                anchors.push(y);
                members.push(Vec::new());
                anchors.len() - 1
            }
        };
        members[c].push(s);
        labels[order[s]] = c;
    }
    let modes = members.iter().map(|m| mean_of(&converged, m.iter().copied())).collect();
    Ok(MeanShift { modes, labels })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteredPrediction {
    pub center: Vec3,
    /// Mean confidence of the members.
    pub confidence: f64,
    pub members: usize,
}

/// Merge predictions whose centers share a mean-shift mode. Clusters are
/// ordered by confidence, highest first, then by center coordinates.
pub fn cluster_predictions(predictions: &[SitePrediction], bandwidth: f64) -> Result<Vec<ClusteredPrediction>> {
    let centers: Vec<Vec3> = predictions.iter().map(|p| p.center).collect();
    let ms = mean_shift(&centers, bandwidth, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let order = canonical_order(&centers);
    let mut out: Vec<ClusteredPrediction> = (0..ms.modes.len())
        .map(|c| {
            let idx: Vec<usize> = order.iter().copied().filter(|&i| ms.labels[i] == c).collect();
            let confidence = idx.iter().map(|&i| predictions[i].confidence).sum::<f64>() / idx.len() as f64;
            ClusteredPrediction {
                center: mean_of(&centers, idx.iter().copied()),
                confidence,
                members: idx.len(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(lex(&a.center, &b.center)));
    Ok(out)
}

pub fn select_top_m(clusters: &[ClusteredPrediction], m: usize) -> Vec<ClusteredPrediction> {
    clusters[..m.min(clusters.len())].to_vec()
}

/// Outcome for one ground-truth site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteMatch {
    pub site: usize,
    pub prediction: Option<usize>,
    /// Distance from the matched prediction to the site center.
    pub dcc: Option<f64>,
    /// Distance from the matched prediction to the nearest site atom.
    pub dca: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteEvaluation {
    pub matches: Vec<SiteMatch>,
}

impl SiteEvaluation {
    pub fn sites(&self) -> usize {
        self.matches.len()
    }

    pub fn dcc_successes(&self, threshold: f64) -> usize {
        self.matches.iter().filter(|m| m.dcc.is_some_and(|d| d <= threshold)).count()
    }

    pub fn dca_successes(&self, threshold: f64) -> usize {
        self.matches.iter().filter(|m| m.dca.is_some_and(|d| d <= threshold)).count()
    }
}

/// Pair predictions with sites, closest pair first, each used at most once.
pub fn match_sites(predictions: &[Vec3], sites: &[BindingSite]) -> SiteEvaluation {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(predictions.len() * sites.len());
    for (p, &x) in predictions.iter().enumerate() {
        for (s, site) in sites.iter().enumerate() {
            pairs.push((geometry::distance(x, site.center), p, s));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_pred = vec![false; predictions.len()];
    let mut matches: Vec<SiteMatch> = (0..sites.len())
        .map(|s| SiteMatch {
            site: s,
            prediction: None,
            dcc: None,
            dca: None,
        })
        .collect();
    for (d, p, s) in pairs {
        if used_pred[p] || matches[s].prediction.is_some() {
            continue;
        }
        used_pred[p] = true;
        let dca = sites[s]
            .atoms
            .iter()
            .map(|&a| geometry::distance(a, predictions[p]))
            .fold(f64::INFINITY, f64::min);
        matches[s] = SiteMatch {
            site: s,
            prediction: Some(p),
            dcc: Some(d),
            dca: Some(dca),
        };
    }
    SiteEvaluation { matches }
}

/// Success counts at `threshold` for the selected predictions.
pub fn dcc_dca(selected: &[ClusteredPrediction], sites: &[BindingSite], threshold: f64) -> (usize, usize, SiteEvaluation) {
    let centers: Vec<Vec3> = selected.iter().map(|c| c.center).collect();
    let eval = match_sites(&centers, sites);
    (eval.dcc_successes(threshold), eval.dca_successes(threshold), eval)
}

/// Per-protein record written as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProteinResult {
    pub id: String,
    pub sites: usize,
    pub selected: Vec<ClusteredPrediction>,
    pub dcc_distances: Vec<Option<f64>>,
    pub dca_distances: Vec<Option<f64>>,
    pub dcc_success: Vec<bool>,
    pub dca_success: Vec<bool>,
}

impl ProteinResult {
    pub fn new(id: impl Into<String>, selected: Vec<ClusteredPrediction>, eval: &SiteEvaluation, threshold: f64) -> Self {
        ProteinResult {
            id: id.into(),
            sites: eval.sites(),
            selected,
            dcc_distances: eval.matches.iter().map(|m| m.dcc).collect(),
            dca_distances: eval.matches.iter().map(|m| m.dca).collect(),
            dcc_success: eval.matches.iter().map(|m| m.dcc.is_some_and(|d| d <= threshold)).collect(),
            dca_success: eval.matches.iter().map(|m| m.dca.is_some_and(|d| d <= threshold)).collect(),
        }
    }
}

/// Success rates over a dataset, at one threshold and over a 1–10 Å sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub threshold: f64,
    pub sites: usize,
    pub proteins: usize,
    /// Proteins without any ground-truth site.
    pub skipped: usize,
    pub sweep: Vec<f64>,
    dcc_counts: Vec<usize>,
    dca_counts: Vec<usize>,
}

impl DatasetMetrics {
    pub fn new(threshold: f64) -> Self {
        let mut sweep: Vec<f64> = (1..=10).map(f64::from).collect();
        if !sweep.contains(&threshold) {
            sweep.push(threshold);
            sweep.sort_by(f64::total_cmp);
        }
        let n = sweep.len();
        DatasetMetrics {
            threshold,
            sites: 0,
            proteins: 0,
            skipped: 0,
            sweep,
            dcc_counts: vec![0; n],
            dca_counts: vec![0; n],
        }
    }

    pub fn add(&mut self, eval: &SiteEvaluation) {
        if eval.sites() == 0 {
            self.skipped += 1;
            return;
        }
        self.proteins += 1;
        self.sites += eval.sites();
        for (i, &t) in self.sweep.iter().enumerate() {
            self.dcc_counts[i] += eval.dcc_successes(t);
            self.dca_counts[i] += eval.dca_successes(t);
        }
    }

    /// Combine with metrics gathered elsewhere under the same threshold.
    pub fn merge(&mut self, other: &DatasetMetrics) -> Result<()> {
        if self.sweep != other.sweep {
            return Err(Error::Contract("merging metrics with different thresholds".into()));
        }
        self.sites += other.sites;
        self.proteins += other.proteins;
        self.skipped += other.skipped;
        for i in 0..self.sweep.len() {
            self.dcc_counts[i] += other.dcc_counts[i];
            self.dca_counts[i] += other.dca_counts[i];
        }
        Ok(())
    }

    fn rate(&self, counts: &[usize], t: f64) -> f64 {
        if self.sites == 0 {
            return 0.0;
        }
        let i = self.sweep.iter().position(|&s| s == t).expect("threshold in sweep");
        counts[i] as f64 / self.sites as f64
    }

    pub fn dcc_rate(&self) -> f64 {
        self.rate(&self.dcc_counts, self.threshold)
    }

    pub fn dca_rate(&self) -> f64 {
        self.rate(&self.dca_counts, self.threshold)
    }

    /// `(threshold, dcc rate, dca rate)` for each sweep point.
    pub fn sweep_rates(&self) -> Vec<(f64, f64, f64)> {
        self.sweep
            .iter()
            .map(|&t| (t, self.rate(&self.dcc_counts, t), self.rate(&self.dca_counts, t)))
            .collect()
    }

    pub fn sweep_csv(&self) -> String {
        let mut s = String::from("threshold,dcc,dca\n");
        for (t, a, b) in self.sweep_rates() {
            s.push_str(&format!("{t},{a},{b}\n"));
        }
        s
    }
}
