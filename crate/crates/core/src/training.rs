//! Training loop, validation split and dataset evaluation.
//!
//! Gradients of a micro-batch are computed graph by graph (in parallel when
//! the worker pool has more than one thread), summed in dataset order and
//! averaged, so results do not depend on the thread count.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{AdamW, GradMap, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::graphio::{ProteinGraph, Structure};
use crate::inference::{
    cluster_predictions, dcc_dca, select_top_m, ClusteredPrediction, DatasetMetrics, ProteinResult, SiteEvaluation,
};
use crate::losses::{bsc_on_tape, confidence_on_tape, confidence_targets, dice_on_tape, BscMode, LossReport, DEFAULT_C0};
use crate::model::{forward, init_params, predict, GraphInputs, ModelConfig};
use crate::runtime::with_pool;

/// Multiply the learning rate by `factor` once the monitored metric has not
/// improved for `patience` consecutive epochs, counting only epochs from
/// `start_epoch` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauDecay {
    pub factor: f64,
    pub patience: usize,
    pub start_epoch: usize,
}

impl Default for PlateauDecay {
    fn default() -> Self {
        PlateauDecay {
            factor: 0.1,
            patience: 10,
            start_epoch: 100,
        }
    }
}

/// Running state of a [`PlateauDecay`] schedule. Lower metric is better.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub decay: PlateauDecay,
    pub lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(decay: PlateauDecay, lr: f64) -> Self {
        PlateauScheduler {
            decay,
            lr,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Record the metric of `epoch` and return the learning rate for the next one.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.stale = 0;
        } else if epoch >= self.decay.start_epoch {
            self.stale += 1;
            if self.stale >= self.decay.patience {
                self.lr *= self.decay.factor;
                self.stale = 0;
            }
        }
        self.lr
    }
}

/// Criterion for keeping the best checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMetric {
    /// Lowest validation total loss.
    #[default]
    Loss,
    /// Highest validation DCC success rate.
    Dcc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub bsc_mode: BscMode,
    pub lambda_conf: f64,
    /// Floor of the confidence target.
    pub c0: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Graphs per optimizer step.
    pub micro_batch: usize,
    pub lr_decay: PlateauDecay,
    pub validation_fraction: f64,
    pub select_metric: SelectMetric,
    /// DCC/DCA success threshold in Å.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            bsc_mode: BscMode::default(),
            lambda_conf: 1.0,
            c0: DEFAULT_C0,
            lr: 1e-3,
            weight_decay: 0.01,
            epochs: 200,
            micro_batch: 8,
            lr_decay: PlateauDecay::default(),
            validation_fraction: 0.1,
            select_metric: SelectMetric::Loss,
            threshold: 4.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.micro_batch == 0 {
            return Err(Error::Config("micro_batch must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        for (name, v) in [("lr", self.lr), ("threshold", self.threshold)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) {
            return Err(Error::Config(format!("lr_decay.factor {} outside (0, 1]", self.lr_decay.factor)));
        }
        if self.lambda_conf < 0.0 || self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.c0) {
            return Err(Error::Config("lambda_conf, weight_decay and c0 must be non-negative (c0 < 1)".into()));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a of `id`.
pub fn id_hash(id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(id.as_bytes());
    h.finish()
}

/// Deterministic membership in the validation split.
pub fn is_validation(id: &str, fraction: f64) -> bool {
    ((id_hash(id) % 10_000) as f64) < fraction * 10_000.0
}

/// Split indices of `graphs` into (train, validation) by id hash. If the
/// hash puts nothing in validation while a fraction was requested, the
/// graph with the smallest hash is moved there.
pub fn split_validation(graphs: &[ProteinGraph], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let (mut val, mut train): (Vec<usize>, Vec<usize>) =
        (0..graphs.len()).partition(|&i| is_validation(&graphs[i].id, fraction));
    if val.is_empty() && fraction > 0.0 && train.len() > 1 {
        let pos = (0..train.len())
            .min_by_key(|&p| id_hash(&graphs[train[p]].id))
            .expect("non-empty");
        val.push(train.remove(pos));
    }
    (train, val)
}

/// RNG for one sample in one epoch; independent of processing order.
pub fn sample_rng(seed: u64, epoch: u64, id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(id_hash(id));
    rng
}

/// Total loss of one graph on the tape, with its components.
pub fn graph_loss<'p>(
    tape: &mut Tape<'p>,
    graph: &ProteinGraph,
    config: &TrainConfig,
    params: &'p ParamStore,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<(Var, LossReport)> {
    let model = &config.model;
    let inputs = GraphInputs::from_graph(graph);
    let out = forward(tape, &inputs, model, params, None, rng, training)?;
    let labels: Vec<f64> = graph.labels.iter().map(|&y| f64::from(y)).collect();
    let dice = dice_on_tape(tape, &labels, out.probabilities)?;
    let mut total = dice;
    let mut report = LossReport {
        dice: tape.value(dice).item()?,
        ..Default::default()
    };
    if let (Some(centers), Some(scores)) = (out.centers, out.confidences) {
        let sites = graph.site_centers();
        let normalised: Vec<Vec3> = sites.iter().map(|&c| geometry::scale(c, 1.0 / model.coord_scale)).collect();
        let (bsc, matched) = bsc_on_tape(tape, &normalised, centers, config.bsc_mode)?;
        if let Some(bsc) = bsc {
            report.bsc = tape.value(bsc).item()?;
            total = tape.add(total, bsc)?;
        }
        report.matched = matched;
        let predicted: Vec<Vec3> = out.site_predictions(tape, model).iter().map(|p| p.center).collect();
        let targets = confidence_targets(&sites, &predicted, model.gamma, config.c0);
        let conf = confidence_on_tape(tape, &targets, scores)?;
        report.confidence = tape.value(conf).item()?;
        let weighted = tape.scale(conf, config.lambda_conf);
        total = tape.add(total, weighted)?;
    }
    report.total = tape.value(total).item()?;
    Ok((total, report))
}

/// Mean loss components over a set of graphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTotals {
    pub dice: f64,
    pub bsc: f64,
    pub confidence: f64,
    pub total: f64,
}

impl LossTotals {
    fn mean(reports: &[LossReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&LossReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        LossTotals {
            dice: sum(|r| r.dice),
            bsc: sum(|r| r.bsc),
            confidence: sum(|r| r.confidence),
            total: sum(|r| r.total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossTotals,
    pub validation: Option<LossTotals>,
    pub validation_dcc: Option<f64>,
    /// Best validation metric so far (loss, or DCC rate).
    pub best: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch (the last one without validation data).
    pub params: ParamStore,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,lr,dice,bsc,confidence,total,val_total,val_dcc\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        for r in &self.history {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.lr,
                r.train.dice,
                r.train.bsc,
                r.train.confidence,
                r.train.total,
                opt(r.validation.map(|v| v.total)),
                opt(r.validation_dcc),
            ));
        }
        s
    }
}

fn graph_gradients(
    graph: &ProteinGraph,
    config: &TrainConfig,
    params: &ParamStore,
    epoch: usize,
) -> Result<(GradMap, LossReport)> {
    let mut rng = sample_rng(config.seed, epoch as u64, &graph.id);
    let mut tape = Tape::new();
    let (loss, report) = graph_loss(&mut tape, graph, config, params, &mut rng, true)?;
    Ok((tape.param_gradients(loss)?, report))
}

/// Validation losses, evaluated without dropout under the epoch's grid rotation.
pub fn validation_losses(
    graphs: &[&ProteinGraph],
    config: &TrainConfig,
    params: &ParamStore,
    epoch: usize,
) -> Result<Vec<LossReport>> {
    with_pool(|| {
        graphs
            .par_iter()
            .map(|g| {
                let mut rng = sample_rng(config.seed, epoch as u64, &g.id);
                let mut tape = Tape::new();
                graph_loss(&mut tape, g, config, params, &mut rng, false).map(|(_, r)| r)
            })
            .collect()
    })
}

/// Train from freshly initialised parameters.
pub fn train(graphs: &[ProteinGraph], config: &TrainConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = init_params(&config.model, &mut rng)?;
    train_from(graphs, config, params)
}

/// Train starting from `params`.
pub fn train_from(graphs: &[ProteinGraph], config: &TrainConfig, mut params: ParamStore) -> Result<TrainOutcome> {
    config.validate()?;
    if graphs.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let (train_idx, val_idx) = split_validation(graphs, config.validation_fraction);
    if train_idx.is_empty() {
        return Err(Error::Argument("validation split left no training graphs".into()));
    }
    let val: Vec<&ProteinGraph> = val_idx.iter().map(|&i| &graphs[i]).collect();
    let val_structures: Vec<Structure> = match config.select_metric {
        SelectMetric::Dcc => val.iter().map(|&g| Structure::from_graph(g.clone())).collect(),
        SelectMetric::Loss => Vec::new(),
    };
    log::info!(
        "{} training graphs, {} validation graphs, {} parameters",
        train_idx.len(),
        val.len(),
        params.num_scalars()
    );

    let mut opt = AdamW {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamW::default()
    };
    let mut scheduler = PlateauScheduler::new(config.lr_decay, config.lr);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(u64::MAX - epoch as u64);
        order.clone_from(&train_idx);
        order.shuffle(&mut shuffle_rng);

        let mut reports = Vec::with_capacity(order.len());
        for batch in order.chunks(config.micro_batch) {
            let results: Vec<(GradMap, LossReport)> = with_pool(|| {
                batch
                    .par_iter()
                    .map(|&i| graph_gradients(&graphs[i], config, &params, epoch))
                    .collect::<Result<_>>()
            })?;
            params.zero_grad();
            for (grads, report) in results {
                params.accumulate(&grads)?;
                reports.push(report);
            }
            params.scale_grads(1.0 / batch.len() as f64);
            opt.step(&mut params)?;
        }
        let train_totals = LossTotals::mean(&reports);

        let (validation, validation_dcc, metric) = if val.is_empty() {
            (None, None, None)
        } else {
            let v = LossTotals::mean(&validation_losses(&val, config, &params, epoch)?);
            match config.select_metric {
                SelectMetric::Loss => (Some(v), None, Some(v.total)),
                SelectMetric::Dcc => {
                    let (metrics, _) = evaluate(&val_structures, &config.model, &params, config.threshold, config.seed)?;
                    let dcc = metrics.dcc_rate();
                    (Some(v), Some(dcc), Some(-dcc))
                }
            }
        };
        if let Some(m) = metric {
            if best.as_ref().is_none_or(|(b, _, _)| m < *b) {
                best = Some((m, epoch, params.clone()));
            }
            opt.lr = scheduler.observe(epoch, m);
        }
        let best_value = best.as_ref().map(|(b, _, _)| match config.select_metric {
            SelectMetric::Loss => *b,
            SelectMetric::Dcc => -*b,
        });
        log::info!(
            "epoch {epoch}: train {:.4}, validation {:?}, lr {:.1e}",
            train_totals.total,
            validation.map(|v| v.total),
            opt.lr
        );
        history.push(EpochRecord {
            epoch,
            lr: opt.lr,
            train: train_totals,
            validation,
            validation_dcc,
            best: best_value,
        });
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, config.epochs.saturating_sub(1)),
    };
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}

/// Network output for a whole structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructurePrediction {
    pub clusters: Vec<ClusteredPrediction>,
    /// Per-chain residue probabilities, keyed by chain graph id.
    pub chain_probabilities: Vec<(String, Vec<f64>)>,
}

/// Every chain runs under the grid rotation drawn from `(seed, chain id)`;
/// the virtual-node predictions of all chains are clustered together.
pub fn predict_structure(
    chains: &[ProteinGraph],
    model: &ModelConfig,
    params: &ParamStore,
    seed: u64,
) -> Result<StructurePrediction> {
    let mut sites = Vec::new();
    let mut chain_probabilities = Vec::with_capacity(chains.len());
    for chain in chains {
        let mut rng = sample_rng(seed, 0, &chain.id);
        let p = predict(&GraphInputs::from_graph(chain), model, params, None, &mut rng)?;
        sites.extend(p.sites);
        chain_probabilities.push((chain.id.clone(), p.probabilities));
    }
    let clusters = if sites.is_empty() {
        Vec::new()
    } else {
        cluster_predictions(&sites, model.bandwidth)?
    };
    Ok(StructurePrediction {
        clusters,
        chain_probabilities,
    })
}

/// Clustered site predictions of [`predict_structure`].
pub fn predict_clusters(
    chains: &[ProteinGraph],
    model: &ModelConfig,
    params: &ParamStore,
    seed: u64,
) -> Result<Vec<ClusteredPrediction>> {
    predict_structure(chains, model, params, seed).map(|p| p.clusters)
}

/// DCC/DCA over `structures`, keeping the top M clusters where M is the
/// number of known sites. Structures without sites are skipped and counted.
pub fn evaluate(
    structures: &[Structure],
    model: &ModelConfig,
    params: &ParamStore,
    threshold: f64,
    seed: u64,
) -> Result<(DatasetMetrics, Vec<ProteinResult>)> {
    let per_structure: Vec<Option<(ProteinResult, SiteEvaluation)>> = with_pool(|| {
        structures
            .par_iter()
            .map(|s| {
                if s.sites.is_empty() {
                    return Ok(None);
                }
                let clusters = predict_clusters(&s.chains, model, params, seed)?;
                let selected = select_top_m(&clusters, s.sites.len());
                let (_, _, eval) = dcc_dca(&selected, &s.sites, threshold);
                Ok(Some((ProteinResult::new(s.id.clone(), selected, &eval, threshold), eval)))
            })
            .collect::<Result<_>>()
    })?;
    let mut metrics = DatasetMetrics::new(threshold);
    let mut results = Vec::with_capacity(per_structure.len());
    for entry in per_structure {
        match entry {
            Some((r, eval)) => {
                metrics.add(&eval);
                results.push(r);
            }
            None => metrics.skipped += 1,
        }
    }
    if metrics.skipped > 0 {
        log::warn!("{} structures without binding sites skipped", metrics.skipped);
    }
    Ok((metrics, results))
}
