//! The n-chain separation experiment and a brute-force hop-distinctness
//! oracle.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{AdamW, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec3};
use crate::graphio::{make_kchain_pair, KChainInstance};
use crate::model::{forward, init_params, GraphInputs, ModelConfig, Variant};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KChainRunConfig {
    pub n: usize,
    pub layers: Vec<usize>,
    pub dims: Vec<usize>,
    pub reruns: usize,
    /// Optimizer steps per rerun.
    pub epochs: usize,
    pub lr: f64,
    pub with_virtual_node: bool,
    /// Factor applied to the coordinate MLP's output layer after the
    /// standard initialisation.
    pub coord_gain: f64,
    pub seed: u64,
}

impl Default for KChainRunConfig {
    fn default() -> Self {
        KChainRunConfig {
            n: 4,
            layers: (1..=8).collect(),
            dims: vec![8, 16, 32, 64, 128],
            reruns: 100,
            epochs: 400,
            lr: 3e-3,
            with_virtual_node: false,
            coord_gain: 3.0,
            seed: 0,
        }
    }
}

impl KChainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("chain length must be at least 2, got {}", self.n)));
        }
        if self.reruns == 0 || self.layers.is_empty() || self.dims.is_empty() {
            return Err(Error::Config("reruns, layers and dims must be non-empty".into()));
        }
        if self.layers.contains(&0) || self.dims.contains(&0) {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if !(self.coord_gain >= 0.0 && self.coord_gain.is_finite()) {
            return Err(Error::Config(format!("coordinate gain must be non-negative, got {}", self.coord_gain)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Network used for one grid cell.
    pub fn model_config(&self, layers: usize, dim: usize) -> ModelConfig {
        ModelConfig {
            layers,
            input_dim: 1,
            hidden_dim: dim,
            message_dim: dim,
            virtual_nodes: usize::from(self.with_virtual_node),
            coord_scale: 1.0,
            variant: Variant::Homogeneous,
            layer_norm: true,
            dropout: 0.0,
            zero_init_coord: false,
            ..ModelConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub layers: usize,
    pub dim: usize,
    /// Per-rerun score: 100 when both members end up correct, 50 for one, 0 for none.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `scores`.
    pub std: f64,
}

impl CellResult {
    fn new(layers: usize, dim: usize, scores: Vec<f64>) -> Self {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        CellResult {
            layers,
            dim,
            scores,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KChainGrid {
    pub config: KChainRunConfig,
    pub cells: Vec<CellResult>,
}

impl KChainGrid {
    pub fn cell(&self, layers: usize, dim: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.layers == layers && c.dim == dim)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("virtual_node,layers,dim,mean,std\n");
        for c in &self.cells {
            s.push_str(&format!(
                "{},{},{},{:.1},{:.1}\n",
                self.config.with_virtual_node, c.layers, c.dim, c.mean, c.std
            ));
        }
        s
    }

    /// Layers down, widths across, `mean ± std` per cell.
    pub fn to_table(&self) -> String {
        let title = if self.config.with_virtual_node { "VN-EGNN" } else { "EGNN" };
        let mut s = format!("{title} ({}-chain, {} reruns)\n", self.config.n, self.config.reruns);
        s.push_str(&format!("{:>7}", "layers"));
        for d in &self.config.dims {
            s.push_str(&format!(" | {:>13}", format!("dim {d}")));
        }
        s.push('\n');
        for &l in &self.config.layers {
            s.push_str(&format!("{l:>7}"));
            for &d in &self.config.dims {
                let cell = self.cell(l, d).map_or_else(String::new, |c| format!("{:.1} ± {:.1}", c.mean, c.std));
                s.push_str(&format!(" | {cell:>13}"));
            }
            s.push('\n');
        }
        s
    }
}

fn rerun_rng(config: &KChainRunConfig, layers: usize, dim: usize, rerun: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stream = (u64::from(config.with_virtual_node) << 60)
        ^ ((layers as u64) << 40)
        ^ ((dim as u64) << 20)
        ^ rerun as u64;
    rng.set_stream(stream);
    rng
}

fn pooled_logit<'p>(
    tape: &mut Tape<'p>,
    chain: &KChainInstance,
    config: &ModelConfig,
    params: &'p ParamStore,
    rng: &mut ChaCha8Rng,
) -> Result<crate::diffengine::Var> {
    let inputs = GraphInputs::from_kchain(chain);
    let seed: Vec<Vec3> = chain.virtual_seed.into_iter().take(config.virtual_nodes).collect();
    let z0 = (config.virtual_nodes > 0).then_some(seed.as_slice());
    let out = forward(tape, &inputs, config, params, z0, rng, true)?;
    let n = inputs.len();
    let all: Arc<[usize]> = vec![0; n].into();
    let pooled = tape.segment_sum(out.final_state.physical.h, &all, 1)?;
    let pooled = tape.scale(pooled, 1.0 / n as f64);
    let w = tape.param(params, "readout.w")?;
    let b = tape.param(params, "readout.b")?;
    let logit = tape.matmul(pooled, w)?;
    tape.add_row(logit, b)
}

fn param_mut<'a>(params: &'a mut ParamStore, name: &str) -> Result<&'a mut crate::diffengine::Matrix> {
    params
        .get_mut(name)
        .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
}

/// Final state of one training rerun.
#[derive(Clone, Debug, PartialEq)]
pub struct RerunOutcome {
    /// Predicted probability of label 1 for the (opposite, same) members.
    pub probabilities: [f64; 2],
    /// Mean cross-entropy after every optimizer step, plus the final evaluation.
    pub losses: Vec<f64>,
    pub score: f64,
}

/// Train one classifier on one fresh pair and score it.
pub fn run_single(config: &KChainRunConfig, layers: usize, dim: usize, rerun: usize) -> Result<f64> {
    train_pair(config, layers, dim, rerun).map(|o| o.score)
}

pub fn train_pair(config: &KChainRunConfig, layers: usize, dim: usize, rerun: usize) -> Result<RerunOutcome> {
    let mut rng = rerun_rng(config, layers, dim, rerun);
    let pair = make_kchain_pair(config.n, &mut rng)?;
    let model = config.model_config(layers, dim);
    let mut params = init_params(&model, &mut rng)?;
    for l in 0..layers {
        for suffix in ["w1", "b1"] {
            param_mut(&mut params, &format!("layer{l}.egnn.coord.{suffix}"))?
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= config.coord_gain);
        }
    }
    // Both members start at p = 1/2, so the first gradients only see their
    // difference rather than a shared offset.
    for name in ["readout.w", "readout.b"] {
        param_mut(&mut params, name)?.data_mut().fill(0.0);
    }
    // A short second-moment memory lets the optimizer recover from the loss
    // spikes this two-sample problem produces.
    let opt = AdamW {
        betas: (0.9, 0.9),
        ..AdamW::with_lr(config.lr)
    };
    let members = [&pair.0, &pair.1];
    let mut probs = [0.5; 2];
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for step in 0..=config.epochs {
        let mut tape = Tape::new();
        let mut loss = None;
        for (i, chain) in members.iter().enumerate() {
            let logit = pooled_logit(&mut tape, chain, &model, &params, &mut rng)?;
            let z = tape.value(logit).item()?;
            probs[i] = crate::diffengine::sigmoid(z);
            // Binary cross-entropy: softplus(z) - y z.
            let sp = tape.softplus(logit);
            let term = if chain.label == 1 {
                let neg = tape.scale(logit, -1.0);
                tape.add(sp, neg)?
            } else {
                sp
            };
            loss = Some(match loss {
                None => term,
                Some(l) => tape.add(l, term)?,
            });
        }
        let loss = tape.scale(loss.expect("two members"), 0.5);
        losses.push(tape.value(loss).item()?);
        if step == config.epochs {
            break;
        }
        let grads = tape.param_gradients(loss)?;
        drop(tape);
        params.zero_grad();
        params.accumulate(&grads)?;
        opt.step(&mut params)?;
    }
    let correct = members
        .iter()
        .zip(probs)
        .filter(|(c, p)| (*p > 0.5) == (c.label == 1))
        .count();
    Ok(RerunOutcome {
        probabilities: probs,
        losses,
        score: 50.0 * correct as f64,
    })
}

/// Every (layers, dim) cell of the grid, reruns spread over the worker pool.
pub fn run_kchain(config: &KChainRunConfig) -> Result<KChainGrid> {
    config.validate()?;
    let mut cells = Vec::new();
    for &l in &config.layers {
        for &d in &config.dims {
            let scores = crate::runtime::with_pool(|| {
                (0..config.reruns)
                    .into_par_iter()
                    .map(|r| run_single(config, l, d, r))
                    .collect::<Result<Vec<f64>>>()
            })?;
            let cell = CellResult::new(l, d, scores);
            log::info!("layers {l} dim {d}: {:.1} ± {:.1}", cell.mean, cell.std);
            cells.push(cell);
        }
    }
    Ok(KChainGrid {
        config: config.clone(),
        cells,
    })
}

struct GeoGraph {
    coords: Vec<Vec3>,
    adj: Vec<Vec<bool>>,
}

impl GeoGraph {
    fn from_chain(chain: &KChainInstance, with_virtual: bool) -> Result<Self> {
        let mut coords = chain.coords.clone();
        let n = coords.len();
        let total = n + usize::from(with_virtual);
        let mut adj = vec![vec![false; total]; total];
        for &[a, b] in &chain.edges {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        if with_virtual {
            let seed = chain
                .virtual_seed
                .ok_or_else(|| Error::Argument("chain has no virtual-node seed".into()))?;
            coords.push(seed);
            for i in 0..n {
                adj[i][n] = true;
                adj[n][i] = true;
            }
        }
        Ok(GeoGraph { coords, adj })
    }

    fn len(&self) -> usize {
        self.coords.len()
    }

    fn hops(&self, v: usize, k: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        dist[v] = 0;
        let mut q = VecDeque::from([v]);
        while let Some(u) = q.pop_front() {
            if dist[u] == k {
                continue;
            }
            for w in 0..self.len() {
                if self.adj[u][w] && dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    q.push_back(w);
                }
            }
        }
        (0..self.len()).filter(|&w| dist[w] <= k).collect()
    }
}

/// All adjacency-preserving bijections from `a` to `b`.
fn isomorphisms(a: &GeoGraph, b: &GeoGraph) -> Vec<Vec<usize>> {
    fn extend(a: &GeoGraph, b: &GeoGraph, map: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        let i = map.len();
        if i == a.len() {
            out.push(map.clone());
            return;
        }
        for j in 0..b.len() {
            if used[j] {
                continue;
            }
            let consistent = (0..i).all(|p| a.adj[i][p] == b.adj[j][map[p]])
                && a.adj[i].iter().filter(|&&e| e).count() == b.adj[j].iter().filter(|&&e| e).count();
            if consistent {
                used[j] = true;
                map.push(j);
                extend(a, b, map, used, out);
                map.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    if a.len() == b.len() {
        extend(a, b, &mut Vec::new(), &mut vec![false; b.len()], &mut out);
    }
    out
}

const GEOMETRY_TOL: f64 = 1e-9;

/// Whether every k-hop neighborhood of `a` is congruent to its image under `map`.
fn k_hop_identical_under(a: &GeoGraph, b: &GeoGraph, map: &[usize], k: usize) -> bool {
    (0..a.len()).all(|v| {
        let hood = a.hops(v, k);
        let mut image: Vec<usize> = hood.iter().map(|&u| map[u]).collect();
        image.sort_unstable();
        if image != b.hops(map[v], k) {
            return false;
        }
        hood.iter().all(|&p| {
            hood.iter().all(|&q| {
                let da = geometry::distance(a.coords[p], a.coords[q]);
                let db = geometry::distance(b.coords[map[p]], b.coords[map[q]]);
                (da - db).abs() <= GEOMETRY_TOL
            })
        })
    })
}

/// Smallest `k` for which the two members are k-hop distinct: no graph
/// isomorphism makes all k-hop neighborhoods congruent. With
/// `with_virtual`, a node at the shared seed joined to every node is added
/// to both members. `None` if the members are never distinct.
pub fn gwl_hop_check(pair: &(KChainInstance, KChainInstance), with_virtual: bool) -> Result<Option<usize>> {
    let a = GeoGraph::from_chain(&pair.0, with_virtual)?;
    let b = GeoGraph::from_chain(&pair.1, with_virtual)?;
    let isos = isomorphisms(&a, &b);
    if isos.is_empty() {
        return Ok(Some(0));
    }
    for k in 1..=a.len() {
        if !isos.iter().any(|m| k_hop_identical_under(&a, &b, m, k)) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_rigid;
    use rand::Rng;

    #[test]
    fn hop_distinctness_of_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 2..=8 {
            let pair = make_kchain_pair(n, &mut rng).unwrap();
            assert_eq!(gwl_hop_check(&pair, false).unwrap(), Some(n / 2 + 1), "n = {n}");
            assert_eq!(gwl_hop_check(&pair, true).unwrap(), Some(1), "n = {n}");
        }
    }

    #[test]
    fn one_hop_identical() {
        let pair = make_kchain_pair(4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(gwl_hop_check(&pair, false).unwrap().unwrap() > 1);
    }

    #[test]
    fn hop_check_is_rigid_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [3, 4, 5] {
            let pair = make_kchain_pair(n, &mut rng).unwrap();
            let reflect = rng.random_bool(0.5);
            let t = random_rigid(&mut rng, 5.0, reflect);
            let moved = |c: &KChainInstance| KChainInstance {
                coords: t.apply(&c.coords),
                virtual_seed: c.virtual_seed.map(|s| t.apply_point(s)),
                ..c.clone()
            };
            let pair_t = (moved(&pair.0), moved(&pair.1));
            for vn in [false, true] {
                assert_eq!(gwl_hop_check(&pair, vn).unwrap(), gwl_hop_check(&pair_t, vn).unwrap());
            }
        }
    }

    #[test]
    fn identical_graphs_are_never_distinct() {
        let pair = make_kchain_pair(4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(gwl_hop_check(&(pair.0.clone(), pair.0), false).unwrap(), None);
    }

    #[test]
    fn shallow_egnn_cannot_separate_the_pair() {
        let config = KChainRunConfig {
            reruns: 3,
            epochs: 20,
            layers: vec![1, 2],
            dims: vec![8],
            ..Default::default()
        };
        let grid = run_kchain(&config).unwrap();
        for c in &grid.cells {
            assert_eq!((c.mean, c.std), (50.0, 0.0));
        }
        assert!(grid.to_table().contains("50.0 ± 0.0"));
        assert!(grid.to_csv().starts_with("virtual_node,layers,dim,mean,std\nfalse,1,8,50.0,0.0\n"));
    }

    #[test]
    fn reruns_are_deterministic() {
        let config = KChainRunConfig {
            with_virtual_node: true,
            epochs: 10,
            ..Default::default()
        };
        assert_eq!(run_single(&config, 1, 8, 4).unwrap(), run_single(&config, 1, 8, 4).unwrap());
    }
}
