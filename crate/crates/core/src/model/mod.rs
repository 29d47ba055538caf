//! EGNN and virtual-node EGNN networks.
//!
//! Coordinates enter in Å, are divided by [`ModelConfig::coord_scale`] for
//! message passing, and virtual-node positions are scaled back on exit.

mod config;
mod layers;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{Aggregation, ModelConfig, Variant};
pub use layers::{
    egnn_layer, message_block, phase_physical, phase_to_physical, phase_to_virtual, vn_layer, Average, BlockStyle,
    DistanceInput, GraphState, LayerContext, Neighborhood, NodeSet, Pairs, DISTANCE_EPS,
};

use crate::diffengine::{forward_mlp, init_mlp, Init, Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{self, fibonacci_grid, random_rotation, RigidTransform, Vec3};
use crate::graphio::{KChainInstance, ProteinGraph};

/// Geometry and connectivity of one input graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInputs {
    /// Physical coordinates in Å.
    pub coords: Vec<Vec3>,
    pub features: Matrix,
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
}

impl GraphInputs {
    /// `neighbors[i]` lists the senders of node `i`.
    pub fn new(coords: Vec<Vec3>, features: Matrix, neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::EmptyStructure("graph has no nodes".into()));
        }
        if features.rows() != n || neighbors.len() != n {
            return Err(Error::Argument(format!(
                "{n} coordinates, {} feature rows, {} neighbor lists",
                features.rows(),
                neighbors.len()
            )));
        }
        let mut recv = Vec::new();
        let mut send = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                if j >= n {
                    return Err(Error::Argument(format!("neighbor {j} of node {i} out of range")));
                }
                recv.push(i);
                send.push(j);
            }
        }
        Ok(GraphInputs {
            coords,
            features,
            recv: recv.into(),
            send: send.into(),
        })
    }

    pub fn from_graph(graph: &ProteinGraph) -> Self {
        Self::new(graph.coords.clone(), graph.features.clone(), &graph.neighbors).expect("graph invariants hold")
    }

    /// Chain graphs carry a constant one-dimensional feature.
    pub fn from_kchain(chain: &KChainInstance) -> Self {
        let n = chain.coords.len();
        Self::new(chain.coords.clone(), Matrix::filled(n, 1, 1.0), &chain.neighbors()).expect("valid chain")
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        GraphInputs {
            coords: t.apply(&self.coords),
            ..self.clone()
        }
    }
}

/// Register all parameters for `config`. Coordinate MLPs start with a zero
/// last layer when `zero_init_coord` is set.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    config.validate()?;
    let coord_init = if config.zero_init_coord { Init::ZeroLast } else { Init::FanIn };
    let mut store = ParamStore::new();
    let d = config.hidden_dim;
    let uniform = |rng: &mut R, fan_in: usize, rows: usize, cols: usize| {
        let b = 1.0 / (fan_in as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-b..b))
    };
    store.insert("embed.w", uniform(rng, config.input_dim, config.input_dim, d))?;
    store.insert("embed.b", uniform(rng, config.input_dim, 1, d))?;
    for l in 0..config.layers {
        for prefix in config.block_prefixes(l) {
            init_mlp(&mut store, &format!("{prefix}.edge"), &config.edge_mlp(), Init::FanIn, rng)?;
            init_mlp(&mut store, &format!("{prefix}.coord"), &config.coord_mlp(), coord_init, rng)?;
            init_mlp(&mut store, &format!("{prefix}.node"), &config.node_mlp(), Init::FanIn, rng)?;
        }
    }
    store.insert("readout.w", uniform(rng, d, d, 1))?;
    store.insert("readout.b", uniform(rng, d, 1, 1))?;
    if config.virtual_nodes > 0 {
        init_mlp(&mut store, "confidence", &config.confidence_mlp(), Init::FanIn, rng)?;
    }
    Ok(store)
}

/// `k` points of a Fibonacci grid around the centroid of `coords`, at the
/// distance of the farthest node, turned by `rotation` about the centroid.
pub fn virtual_grid(coords: &[Vec3], k: usize, rotation: &RigidTransform) -> Result<Vec<Vec3>> {
    if coords.is_empty() {
        return Err(Error::EmptyStructure("graph has no nodes".into()));
    }
    let c = geometry::centroid(coords);
    let mut radius = coords.iter().map(|&x| geometry::distance(x, c)).fold(0.0, f64::max);
    if radius <= 0.0 {
        // A single node (or coincident nodes) has no extent.
        radius = 1.0;
    }
    Ok(fibonacci_grid(k, c, radius)?.rotated(rotation).points)
}

/// Virtual-node start positions under a fresh random rotation.
pub fn init_virtual<R: Rng + ?Sized>(coords: &[Vec3], k: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    virtual_grid(coords, k, &random_rotation(rng))
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `N×1` pre-sigmoid node scores.
    pub logits: Var,
    /// `N×1` node probabilities.
    pub probabilities: Var,
    /// `K×3` virtual-node positions in the normalised frame.
    pub centers: Option<Var>,
    /// `K×1` confidences in `[0, 1]`.
    pub confidences: Option<Var>,
    pub final_state: GraphState,
    /// Virtual-node start positions in Å.
    pub virtual_init: Vec<Vec3>,
}

/// A predicted site before clustering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SitePrediction {
    pub center: Vec3,
    pub confidence: f64,
}

impl ForwardOutput {
    pub fn probabilities(&self, tape: &Tape<'_>) -> Vec<f64> {
        tape.value(self.probabilities).data().to_vec()
    }

    /// Centers in Å with their confidences.
    pub fn site_predictions(&self, tape: &Tape<'_>, config: &ModelConfig) -> Vec<SitePrediction> {
        let (Some(c), Some(s)) = (self.centers, self.confidences) else {
            return Vec::new();
        };
        let (c, s) = (tape.value(c), tape.value(s));
        (0..c.rows())
            .map(|k| SitePrediction {
                center: [0, 1, 2].map(|j| c.get(k, j) * config.coord_scale),
                confidence: s.get(k, 0),
            })
            .collect()
    }
}

fn embed<'p>(tape: &mut Tape<'p>, params: &'p ParamStore, features: &Matrix) -> Result<Var> {
    let f = tape.constant(features.clone());
    let w = tape.param(params, "embed.w")?;
    let b = tape.param(params, "embed.b")?;
    let h = tape.matmul(f, w)?;
    tape.add_row(h, b)
}

fn scaled_constant(tape: &mut Tape<'_>, points: &[Vec3], scale: f64) -> Var {
    let rows: Vec<Vec3> = points.iter().map(|&p| geometry::scale(p, 1.0 / scale)).collect();
    tape.constant(Matrix::from_rows(&rows))
}

/// Run the network. Virtual nodes start at `z0` (Å) when given, otherwise
/// on a randomly rotated grid drawn from `rng`.
pub fn forward<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    inputs: &GraphInputs,
    config: &ModelConfig,
    params: &'p ParamStore,
    z0: Option<&[Vec3]>,
    rng: &mut R,
    training: bool,
) -> Result<ForwardOutput> {
    config.validate()?;
    if inputs.features.cols() != config.input_dim {
        return Err(Error::Dimension {
            op: "forward",
            left: inputs.features.shape(),
            right: (config.input_dim, config.hidden_dim),
        });
    }
    let n = inputs.len();
    let k = config.virtual_nodes;
    let virtual_init = match (k, z0) {
        (0, _) => Vec::new(),
        (_, Some(z)) if z.len() == k => z.to_vec(),
        (_, Some(z)) => {
            return Err(Error::Argument(format!("{} virtual start positions for K = {k}", z.len())));
        }
        (_, None) => init_virtual(&inputs.coords, k, rng)?,
    };

    let x = scaled_constant(tape, &inputs.coords, config.coord_scale);
    let h = embed(tape, params, &inputs.features)?;
    let virtuals = if k > 0 {
        let z = scaled_constant(tape, &virtual_init, config.coord_scale);
        let all: Arc<[usize]> = vec![0; n].into();
        let mean = tape.segment_sum(h, &all, 1)?;
        let mean = tape.scale(mean, 1.0 / n as f64);
        let rows: Arc<[usize]> = vec![0; k].into();
        let v = tape.gather(mean, &rows)?;
        Some(NodeSet { x: z, h: v })
    } else {
        None
    };
    let state = GraphState {
        physical: NodeSet { x, h },
        virtuals,
    };

    let mut ctx = LayerContext {
        config,
        params,
        rng,
        training,
    };
    let final_state = match config.variant {
        Variant::Heterogeneous => {
            let nb = Neighborhood::new(tape, n, Arc::clone(&inputs.recv), Arc::clone(&inputs.send));
            let mut s = state;
            for l in 0..config.layers {
                s = vn_layer(tape, &mut ctx, l, s, &nb)?;
            }
            s
        }
        Variant::Homogeneous => homogeneous_layers(tape, &mut ctx, inputs, state)?,
    };

    let w = tape.param(params, "readout.w")?;
    let b = tape.param(params, "readout.b")?;
    let logits = tape.matmul(final_state.physical.h, w)?;
    let logits = tape.add_row(logits, b)?;
    let probabilities = tape.sigmoid(logits);
    let (centers, confidences) = match final_state.virtuals {
        Some(v) => {
            let spec = config.confidence_mlp();
            let c = forward_mlp(tape, &spec, params, "confidence", v.h, ctx.rng, training)?;
            (Some(v.x), Some(c))
        }
        None => (None, None),
    };
    if !tape.value(probabilities).all_finite() || confidences.is_some_and(|c| !tape.value(c).all_finite()) {
        return Err(Error::NonFinite {
            layer: config.layers,
            phase: "readout",
        });
    }
    Ok(ForwardOutput {
        logits,
        probabilities,
        centers,
        confidences,
        final_state,
        virtual_init,
    })
}

/// EGNN layers over the union of physical and virtual nodes, with every
/// virtual node linked both ways to every physical node.
fn homogeneous_layers<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    inputs: &GraphInputs,
    state: GraphState,
) -> Result<GraphState> {
    let n = inputs.len();
    let k = state.virtuals.map_or(0, |v| tape.shape(v.x).0);
    let mut recv: Vec<usize> = inputs.recv.to_vec();
    let mut send: Vec<usize> = inputs.send.to_vec();
    for v in n..n + k {
        for p in 0..n {
            recv.push(v);
            send.push(p);
            recv.push(p);
            send.push(v);
        }
    }
    let nb = Neighborhood::new(tape, n + k, recv.into(), send.into());
    let mut nodes = match state.virtuals {
        Some(v) => NodeSet {
            x: tape.concat_rows(&[state.physical.x, v.x])?,
            h: tape.concat_rows(&[state.physical.h, v.h])?,
        },
        None => state.physical,
    };
    for l in 0..ctx.config.layers {
        nodes = egnn_layer(tape, ctx, &format!("layer{l}.egnn"), nodes, &nb, l)?;
    }
    if k == 0 {
        return Ok(GraphState {
            physical: nodes,
            virtuals: None,
        });
    }
    let split = |tape: &mut Tape<'p>, a: Var| -> Result<(Var, Var)> {
        Ok((tape.slice_rows(a, 0, n)?, tape.slice_rows(a, n, n + k)?))
    };
    let (px, vx) = split(tape, nodes.x)?;
    let (ph, vh) = split(tape, nodes.h)?;
    Ok(GraphState {
        physical: NodeSet { x: px, h: ph },
        virtuals: Some(NodeSet { x: vx, h: vh }),
    })
}

/// Forward pass on the union graph regardless of `config.variant`.
pub fn homogeneous_vn_forward<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    inputs: &GraphInputs,
    config: &ModelConfig,
    params: &'p ParamStore,
    z0: Option<&[Vec3]>,
    rng: &mut R,
    training: bool,
) -> Result<ForwardOutput> {
    let config = ModelConfig {
        variant: Variant::Homogeneous,
        ..config.clone()
    };
    forward(tape, inputs, &config, params, z0, rng, training)
}

/// Evaluation-mode outputs as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub sites: Vec<SitePrediction>,
}

pub fn predict<R: Rng + ?Sized>(
    inputs: &GraphInputs,
    config: &ModelConfig,
    params: &ParamStore,
    z0: Option<&[Vec3]>,
    rng: &mut R,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, inputs, config, params, z0, rng, false)?;
    Ok(Prediction {
        probabilities: out.probabilities(&tape),
        sites: out.site_predictions(&tape, config),
    })
}
