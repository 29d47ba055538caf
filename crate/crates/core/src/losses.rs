//! Training objectives, as plain functions on values and as tape graphs.
//!
//! The two forms agree exactly: the tape versions compute the same sums in
//! the same order, so the value functions double as their oracles.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffengine::{huber, Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};

pub const DEFAULT_GAMMA: f64 = 4.0;
pub const DEFAULT_C0: f64 = 0.001;

/// Penalty on the residual between a site center and a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BscMode {
    /// Squared Euclidean norm.
    Squared,
    /// Huber per coordinate, summed over the three coordinates.
    Huber { delta: f64 },
}

impl Default for BscMode {
    fn default() -> Self {
        BscMode::Huber { delta: 1.0 }
    }
}

impl BscMode {
    pub fn penalty(self, center: Vec3, prediction: Vec3) -> f64 {
        let r = geometry::sub(prediction, center);
        match self {
            BscMode::Squared => geometry::dot(r, r),
            BscMode::Huber { delta } => r.iter().map(|&c| huber(c, delta)).sum(),
        }
    }
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("{what}: lengths {a} and {b} differ")));
    }
    Ok(())
}

/// `1 - (2 Σ y ŷ + 1) / (Σ y + Σ ŷ + 1)`.
pub fn dice_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_len("dice loss", y.len(), y_hat.len())?;
    let inter: f64 = y.iter().zip(y_hat).map(|(a, b)| a * b).sum();
    let total = y.iter().sum::<f64>() + y_hat.iter().sum::<f64>();
    Ok(1.0 - (2.0 * inter + 1.0) / (total + 1.0))
}

/// For each center, the prediction with the smallest penalty (first on ties).
pub fn min_matching(centers: &[Vec3], predictions: &[Vec3], mode: BscMode) -> Vec<(usize, usize)> {
    centers
        .iter()
        .enumerate()
        .map(|(m, &c)| {
            let mut best = (0, f64::INFINITY);
            for (k, &p) in predictions.iter().enumerate() {
                let v = mode.penalty(c, p);
                if v < best.1 {
                    best = (k, v);
                }
            }
            (m, best.0)
        })
        .collect()
}

/// Mean over centers of the smallest penalty to any prediction, plus the
/// `(center, prediction)` pairs that attained it. No centers gives zero.
pub fn bsc_loss(centers: &[Vec3], predictions: &[Vec3], mode: BscMode) -> Result<(f64, Vec<(usize, usize)>)> {
    if centers.is_empty() {
        log::warn!("no site centers: center loss is zero");
        return Ok((0.0, Vec::new()));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("center loss needs at least one prediction".into()));
    }
    let matched = min_matching(centers, predictions, mode);
    let sum: f64 = matched
        .iter()
        .map(|&(m, k)| mode.penalty(centers[m], predictions[k]))
        .sum();
    Ok((sum / centers.len() as f64, matched))
}

/// Target score per prediction from the distance `d` to its nearest center:
/// `1 - d / (2γ)` up to `γ`, `c0` beyond. Distances are in Å.
pub fn confidence_targets(centers: &[Vec3], predictions: &[Vec3], gamma: f64, c0: f64) -> Vec<f64> {
    predictions
        .iter()
        .map(|&p| {
            let d = centers
                .iter()
                .map(|&c| geometry::distance(c, p))
                .fold(f64::INFINITY, f64::min);
            if d <= gamma {
                1.0 - d / (2.0 * gamma)
            } else {
                c0
            }
        })
        .collect()
}

/// Mean squared difference between targets and predicted scores.
pub fn confidence_loss(targets: &[f64], predicted: &[f64]) -> Result<f64> {
    check_len("confidence loss", targets.len(), predicted.len())?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = targets.iter().zip(predicted).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(s / targets.len() as f64)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dice: f64,
    pub bsc: f64,
    pub confidence: f64,
    pub total: f64,
    pub matched: Vec<(usize, usize)>,
}

impl LossReport {
    pub fn combine(dice: f64, bsc: f64, confidence: f64, lambda_conf: f64, matched: Vec<(usize, usize)>) -> Self {
        LossReport {
            dice,
            bsc,
            confidence,
            total: bsc + dice + lambda_conf * confidence,
            matched,
        }
    }
}

/// Everything needed to score one graph.
pub struct LossInputs<'a> {
    pub labels: &'a [f64],
    pub probabilities: &'a [f64],
    /// Centers and predictions in the frame where the center loss is taken.
    pub centers: &'a [Vec3],
    pub predictions: &'a [Vec3],
    /// The same centers and predictions in Å, for confidence targets.
    pub centers_angstrom: &'a [Vec3],
    pub predictions_angstrom: &'a [Vec3],
    pub confidences: &'a [f64],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub bsc_mode: BscMode,
    pub gamma: f64,
    pub c0: f64,
    pub lambda_conf: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            bsc_mode: BscMode::default(),
            gamma: DEFAULT_GAMMA,
            c0: DEFAULT_C0,
            lambda_conf: 1.0,
        }
    }
}

pub fn total_loss(inputs: &LossInputs<'_>, config: &LossConfig) -> Result<LossReport> {
    let dice = dice_loss(inputs.labels, inputs.probabilities)?;
    let (bsc, matched) = bsc_loss(inputs.centers, inputs.predictions, config.bsc_mode)?;
    let targets = confidence_targets(
        inputs.centers_angstrom,
        inputs.predictions_angstrom,
        config.gamma,
        config.c0,
    );
    let conf = confidence_loss(&targets, inputs.confidences)?;
    Ok(LossReport::combine(dice, bsc, conf, config.lambda_conf, matched))
}

/// Dice loss of an `N×1` probability column against constant labels.
pub fn dice_on_tape(tape: &mut Tape<'_>, labels: &[f64], probabilities: Var) -> Result<Var> {
    let (n, c) = tape.shape(probabilities);
    if c != 1 {
        return Err(Error::Contract(format!("dice loss expects a column, got {n}×{c}")));
    }
    check_len("dice loss", labels.len(), n)?;
    let y = tape.constant(Matrix::column(labels));
    let inter = tape.mul(y, probabilities)?;
    let inter = tape.sum_all(inter);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, 1.0);
    let pred_sum = tape.sum_all(probabilities);
    let den = tape.add_scalar(pred_sum, labels.iter().sum::<f64>() + 1.0);
    let den = tape.recip(den);
    let ratio = tape.mul(num, den)?;
    let neg = tape.scale(ratio, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Center loss of `K×3` predictions against constant centers. The matching
/// is read off the current values and held fixed for differentiation.
pub fn bsc_on_tape(
    tape: &mut Tape<'_>,
    centers: &[Vec3],
    predictions: Var,
    mode: BscMode,
) -> Result<(Option<Var>, Vec<(usize, usize)>)> {
    if centers.is_empty() {
        log::warn!("no site centers: center loss is zero");
        return Ok((None, Vec::new()));
    }
    let (k, c) = tape.shape(predictions);
    if c != 3 || k == 0 {
        return Err(Error::Contract(format!("center loss expects K×3 predictions with K ≥ 1, got {k}×{c}")));
    }
    let values = tape.value(predictions);
    let preds: Vec<Vec3> = (0..k).map(|i| [values.get(i, 0), values.get(i, 1), values.get(i, 2)]).collect();
    let matched = min_matching(centers, &preds, mode);
    let index: Arc<[usize]> = matched.iter().map(|&(_, k)| k).collect();
    let chosen = tape.gather(predictions, &index)?;
    let targets = tape.constant(Matrix::from_rows(centers));
    let r = tape.sub(chosen, targets)?;
    let per = match mode {
        BscMode::Squared => tape.mul(r, r)?,
        BscMode::Huber { delta } => tape.huber(r, delta),
    };
    let total = tape.sum_all(per);
    Ok((Some(tape.scale(total, 1.0 / centers.len() as f64)), matched))
}

/// Mean squared error of a `K×1` score column against constant targets.
pub fn confidence_on_tape(tape: &mut Tape<'_>, targets: &[f64], scores: Var) -> Result<Var> {
    let (k, c) = tape.shape(scores);
    if c != 1 {
        return Err(Error::Contract(format!("confidence loss expects a column, got {k}×{c}")));
    }
    check_len("confidence loss", targets.len(), k)?;
    let t = tape.constant(Matrix::column(targets));
    let d = tape.sub(scores, t)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum_all(sq);
    Ok(tape.scale(s, 1.0 / k.max(1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rigid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dice_examples() {
        assert_eq!(dice_loss(&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(dice_loss(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(dice_loss(&[1.0], &[0.0]).unwrap(), 0.5);
        assert!(matches!(dice_loss(&[1.0], &[0.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn bsc_examples() {
        let (l, _) = bsc_loss(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]], BscMode::Squared).unwrap();
        assert_eq!(l, 0.0);
        let preds = [[0.0, 3.0, 0.0], [1.0, 0.0, 0.0]];
        let (l, m) = bsc_loss(&[[0.0; 3]], &preds, BscMode::Squared).unwrap();
        assert_eq!((l, m), (1.0, vec![(0, 1)]));
        assert_eq!(bsc_loss(&[], &preds, BscMode::Squared).unwrap().0, 0.0);
        assert!(bsc_loss(&[[0.0; 3]], &[], BscMode::Squared).is_err());
    }

    #[test]
    fn huber_is_per_coordinate() {
        let l = BscMode::Huber { delta: 1.0 }.penalty([0.0; 3], [0.5, -3.0, 0.0]);
        assert_eq!(l, 0.125 + 2.5);
    }

    #[test]
    fn confidence_examples() {
        let c = [[0.0; 3]];
        let t = confidence_targets(&c, &[[0.0; 3], [4.0, 0.0, 0.0], [4.01, 0.0, 0.0]], 4.0, 0.001);
        assert_eq!(t, vec![1.0, 0.5, 0.001]);
        assert_eq!(confidence_targets(&[], &[[0.0; 3]], 4.0, 0.001), vec![0.001]);
        assert_eq!(confidence_loss(&[1.0, 0.5], &[1.0, 0.5]).unwrap(), 0.0);
        assert_eq!(confidence_loss(&[1.0], &[0.0]).unwrap(), 1.0);
        assert_eq!(confidence_loss(&[1.0, 0.5], &[0.5, 0.5]).unwrap(), 0.125);
        assert!(confidence_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn total_is_the_weighted_sum() {
        let r = LossReport::combine(0.3, 0.2, 0.1, 1.0, vec![]);
        assert!((r.total - 0.6).abs() < 1e-15);
        assert_eq!(LossReport::combine(0.3, 0.2, 0.1, 0.0, vec![]).total, 0.5);
        assert_eq!(LossReport::combine(0.0, 0.0, 0.0, 1.0, vec![]).total, 0.0);
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| [0; 3].map(|_| rng.random_range(-3.0..3.0))).collect()
    }

    #[test]
    fn tape_forms_match_value_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let (m, k) = (rng.random_range(1..4), rng.random_range(1..9));
            let centers = random_points(&mut rng, m);
            let preds = random_points(&mut rng, k);
            let mut tape = Tape::new();
            let pv = tape.leaf(Matrix::column(&p));
            let d = dice_on_tape(&mut tape, &y, pv).unwrap();
            assert!((tape.value(d).item().unwrap() - dice_loss(&y, &p).unwrap()).abs() < 1e-12);
            let zv = tape.leaf(Matrix::from_rows(&preds));
            for mode in [BscMode::Squared, BscMode::Huber { delta: 1.0 }] {
                let (b, m) = bsc_on_tape(&mut tape, &centers, zv, mode).unwrap();
                let (want, wm) = bsc_loss(&centers, &preds, mode).unwrap();
                assert!((tape.value(b.unwrap()).item().unwrap() - want).abs() < 1e-12);
                assert_eq!(m, wm);
            }
        }
    }

    proptest! {
        #[test]
        fn losses_are_rigid_invariant(seed in any::<u64>(), reflect in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = random_points(&mut rng, 3);
            let preds = random_points(&mut rng, 5);
            let t = random_rigid(&mut rng, 10.0, reflect);
            let (a, _) = bsc_loss(&centers, &preds, BscMode::Squared).unwrap();
            let (b, _) = bsc_loss(&t.apply(&centers), &t.apply(&preds), BscMode::Squared).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
            let ta = confidence_targets(&centers, &preds, 4.0, 0.001);
            let tb = confidence_targets(&t.apply(&centers), &t.apply(&preds), 4.0, 0.001);
            for (x, y) in ta.iter().zip(&tb) {
                prop_assert!((x - y).abs() < 1e-10);
                prop_assert!((0.001..=1.0).contains(x));
            }
        }

        #[test]
        fn bsc_does_not_increase_moving_toward_match(seed in any::<u64>(), step in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = random_points(&mut rng, 2);
            let mut preds = random_points(&mut rng, 4);
            for mode in [BscMode::Squared, BscMode::Huber { delta: 1.0 }] {
                let (before, matched) = bsc_loss(&centers, &preds, mode).unwrap();
                let (m, k) = matched[0];
                // A prediction shared by two centers can move away from the other one.
                if matched.iter().filter(|&&(_, j)| j == k).count() > 1 {
                    continue;
                }
                let dir = geometry::sub(centers[m], preds[k]);
                let old = preds[k];
                preds[k] = geometry::add(old, geometry::scale(dir, step));
                let (after, _) = bsc_loss(&centers, &preds, mode).unwrap();
                prop_assert!(after <= before + 1e-12);
                preds[k] = old;
            }
        }

        #[test]
        fn dice_in_unit_interval(y in proptest::collection::vec(any::<bool>(), 1..20), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = y.into_iter().map(f64::from).collect();
            let p: Vec<f64> = y.iter().map(|_| rng.random_range(0.0..=1.0)).collect();
            let d = dice_loss(&y, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
    }
}
