//! Equivariant message blocks and the layers built from them.

use std::sync::Arc;

use rand::Rng;

use super::config::{Aggregation, ModelConfig};
use crate::diffengine::{forward_mlp, forward_mlp_parts, Matrix, MlpPart, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Guard added to pair distances before dividing.
pub const DISTANCE_EPS: f64 = 1e-8;

/// Coordinates and features of one node set on the tape.
#[derive(Clone, Copy, Debug)]
pub struct NodeSet {
    pub x: Var,
    pub h: Var,
}

/// Node state flowing through the network. Coordinates are in the
/// normalised frame.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub physical: NodeSet,
    pub virtuals: Option<NodeSet>,
}

/// Per-receiver averaging applied to a sum over incoming pairs.
#[derive(Clone, Copy, Debug)]
pub enum Average {
    None,
    /// Column of per-receiver factors, e.g. inverse in-degrees.
    PerReceiver(Var),
    Uniform(f64),
}

impl Average {
    fn apply(self, tape: &mut Tape<'_>, a: Var) -> Result<Var> {
        match self {
            Average::None => Ok(a),
            Average::PerReceiver(col) => tape.mul_col(a, col),
            Average::Uniform(s) => Ok(tape.scale(a, s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceInput {
    Squared,
    Norm,
}

/// The directed pairs of a block: pair `p` carries a message from sender
/// `send[p]` to receiver `recv[p]`.
#[derive(Clone, Debug)]
pub struct Pairs {
    pub recv: Arc<[usize]>,
    pub send: Arc<[usize]>,
    pub receivers: usize,
}

impl Pairs {
    /// Every sender to every receiver, receiver-major.
    pub fn complete(receivers: usize, senders: usize) -> Self {
        let recv: Arc<[usize]> = (0..receivers).flat_map(|r| std::iter::repeat_n(r, senders)).collect();
        let send: Arc<[usize]> = (0..receivers).flat_map(|_| 0..senders).collect();
        Pairs { recv, send, receivers }
    }
}

/// Wiring of one message block.
#[derive(Clone, Copy, Debug)]
pub struct BlockStyle {
    pub distance: DistanceInput,
    /// Message MLP sees `[receiver, sender, distance]` when true, otherwise
    /// `[sender, receiver, distance]`.
    pub receiver_first: bool,
    /// Coordinate steps point from receiver to sender when true, otherwise
    /// away from the sender.
    pub toward_sender: bool,
    pub message_average: Average,
    pub coord_average: Average,
    pub residual: bool,
}

pub struct LayerContext<'a, 'p, R: Rng + ?Sized> {
    pub config: &'a ModelConfig,
    pub params: &'p ParamStore,
    pub rng: &'a mut R,
    pub training: bool,
}

/// One round of equivariant message passing into `receivers` from
/// `senders`, returning the receivers' updated coordinates and features.
pub fn message_block<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    prefix: &str,
    receivers: NodeSet,
    senders: NodeSet,
    pairs: &Pairs,
    style: BlockStyle,
) -> Result<NodeSet> {
    let xr = tape.gather(receivers.x, &pairs.recv)?;
    let xs = tape.gather(senders.x, &pairs.send)?;
    let diff = if style.toward_sender {
        tape.sub(xs, xr)?
    } else {
        tape.sub(xr, xs)?
    };
    let norm = tape.row_norm(diff)?;
    let dist = match style.distance {
        DistanceInput::Norm => norm,
        DistanceInput::Squared => {
            let sq = tape.mul(diff, diff)?;
            tape.row_sum(sq)
        }
    };

    let hr = MlpPart::gathered(receivers.h, &pairs.recv);
    let hs = MlpPart::gathered(senders.h, &pairs.send);
    let parts = if style.receiver_first {
        [hr, hs, MlpPart::dense(dist)]
    } else {
        [hs, hr, MlpPart::dense(dist)]
    };
    let cfg = ctx.config;
    let m = forward_mlp_parts(
        tape,
        &cfg.edge_mlp(),
        ctx.params,
        &format!("{prefix}.edge"),
        &parts,
        ctx.rng,
        ctx.training,
    )?;

    let w = forward_mlp(tape, &cfg.coord_mlp(), ctx.params, &format!("{prefix}.coord"), m, ctx.rng, ctx.training)?;
    let guarded = tape.add_scalar(norm, DISTANCE_EPS);
    let inv = tape.recip(guarded);
    let unit = tape.mul_col(diff, inv)?;
    let step = tape.mul_col(unit, w)?;
    let step = tape.segment_sum(step, &pairs.recv, pairs.receivers)?;
    let step = style.coord_average.apply(tape, step)?;
    let x = tape.add(receivers.x, step)?;

    let agg = tape.segment_sum(m, &pairs.recv, pairs.receivers)?;
    let agg = style.message_average.apply(tape, agg)?;
    let upd = forward_mlp_parts(
        tape,
        &cfg.node_mlp(),
        ctx.params,
        &format!("{prefix}.node"),
        &[MlpPart::dense(receivers.h), MlpPart::dense(agg)],
        ctx.rng,
        ctx.training,
    )?;
    let h = if style.residual { tape.add(receivers.h, upd)? } else { upd };
    Ok(NodeSet { x, h })
}

fn check_finite(tape: &Tape<'_>, set: NodeSet, layer: usize, phase: &'static str) -> Result<()> {
    if tape.value(set.x).all_finite() && tape.value(set.h).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { layer, phase })
    }
}

/// Neighborhood structure of the physical graph on the tape.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    pub pairs: Pairs,
    /// `N×1` inverse in-degrees, zero for isolated nodes.
    pub inv_degree: Var,
}

impl Neighborhood {
    pub fn new(tape: &mut Tape<'_>, nodes: usize, recv: Arc<[usize]>, send: Arc<[usize]>) -> Self {
        let mut deg = vec![0usize; nodes];
        for &r in recv.iter() {
            deg[r] += 1;
        }
        let inv: Vec<f64> = deg.iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / d as f64 }).collect();
        Neighborhood {
            pairs: Pairs {
                recv,
                send,
                receivers: nodes,
            },
            inv_degree: tape.constant(Matrix::column(&inv)),
        }
    }
}

/// EGNN layer: squared distances, summed messages, coordinate steps averaged
/// over neighbors, feature update without residual.
pub fn egnn_layer<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    prefix: &str,
    nodes: NodeSet,
    nb: &Neighborhood,
    layer: usize,
) -> Result<NodeSet> {
    let style = BlockStyle {
        distance: DistanceInput::Squared,
        receiver_first: true,
        toward_sender: false,
        message_average: Average::None,
        coord_average: Average::PerReceiver(nb.inv_degree),
        residual: false,
    };
    let out = message_block(tape, ctx, prefix, nodes, nodes, &nb.pairs, style)?;
    check_finite(tape, out, layer, "egnn")?;
    Ok(out)
}

/// Phase I: physical to physical.
pub fn phase_physical<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    prefix: &str,
    nodes: NodeSet,
    nb: &Neighborhood,
    layer: usize,
) -> Result<NodeSet> {
    let message_average = match ctx.config.aggregation {
        Aggregation::Mean => Average::PerReceiver(nb.inv_degree),
        Aggregation::Sum => Average::None,
    };
    let style = BlockStyle {
        distance: DistanceInput::Norm,
        receiver_first: true,
        toward_sender: false,
        message_average,
        coord_average: Average::PerReceiver(nb.inv_degree),
        residual: true,
    };
    let out = message_block(tape, ctx, prefix, nodes, nodes, &nb.pairs, style)?;
    check_finite(tape, out, layer, "phase I")?;
    Ok(out)
}

/// Phase II: every physical node to every virtual node. Physical nodes are
/// not touched.
pub fn phase_to_virtual<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    prefix: &str,
    physical: NodeSet,
    virtuals: NodeSet,
    layer: usize,
) -> Result<NodeSet> {
    let n = tape.shape(physical.x).0;
    let k = tape.shape(virtuals.x).0;
    let avg = Average::Uniform(1.0 / n as f64);
    let style = BlockStyle {
        distance: DistanceInput::Norm,
        receiver_first: false,
        toward_sender: true,
        message_average: avg,
        coord_average: avg,
        residual: true,
    };
    let out = message_block(tape, ctx, prefix, virtuals, physical, &Pairs::complete(k, n), style)?;
    check_finite(tape, out, layer, "phase II")?;
    Ok(out)
}

/// Phase III: every virtual node to every physical node. Virtual nodes are
/// not touched.
pub fn phase_to_physical<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    prefix: &str,
    physical: NodeSet,
    virtuals: NodeSet,
    layer: usize,
) -> Result<NodeSet> {
    let n = tape.shape(physical.x).0;
    let k = tape.shape(virtuals.x).0;
    let avg = Average::Uniform(1.0 / k as f64);
    let style = BlockStyle {
        distance: DistanceInput::Norm,
        receiver_first: false,
        toward_sender: true,
        message_average: avg,
        coord_average: avg,
        residual: true,
    };
    let out = message_block(tape, ctx, prefix, physical, virtuals, &Pairs::complete(n, k), style)?;
    check_finite(tape, out, layer, "phase III")?;
    Ok(out)
}

/// The three-phase layer. Without virtual nodes only phase I runs.
pub fn vn_layer<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    ctx: &mut LayerContext<'_, 'p, R>,
    layer: usize,
    state: GraphState,
    nb: &Neighborhood,
) -> Result<GraphState> {
    let half = phase_physical(tape, ctx, &format!("layer{layer}.aa"), state.physical, nb, layer)?;
    let Some(virtuals) = state.virtuals else {
        return Ok(GraphState {
            physical: half,
            virtuals: None,
        });
    };
    let virtuals = phase_to_virtual(tape, ctx, &format!("layer{layer}.av"), half, virtuals, layer)?;
    let physical = phase_to_physical(tape, ctx, &format!("layer{layer}.va"), half, virtuals, layer)?;
    Ok(GraphState {
        physical,
        virtuals: Some(virtuals),
    })
}
