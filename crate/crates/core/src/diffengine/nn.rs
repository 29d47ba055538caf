//! Multilayer perceptrons on top of the tape.
//!
//! An MLP named `prefix` owns the parameters `prefix.w{i}` / `prefix.b{i}`
//! for each affine map and, when layer normalisation is enabled,
//! `prefix.ln_gain` / `prefix.ln_bias` applied to the output.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Shape and regularisation of one MLP. Hidden layers use SiLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
    pub layer_norm: bool,
    pub dropout: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        Self {
            widths,
            output: OutputActivation::Identity,
            layer_norm: false,
            dropout: 0.0,
        }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec has widths")
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config(format!(
                "an MLP needs an input, at least one hidden and an output width, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("MLP widths must be positive, got {:?}", self.widths)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        let affine: usize = self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        affine + if self.layer_norm { 2 * self.output_width() } else { 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±1/√fan_in for every affine map.
    FanIn,
    /// As `FanIn`, but the last affine map starts at zero.
    ZeroLast,
}

/// Register freshly initialised parameters for `spec` under `prefix`.
pub fn init_mlp<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    spec: &MlpSpec,
    init: Init,
    rng: &mut R,
) -> Result<()> {
    spec.validate()?;
    let last = spec.widths.len() - 2;
    for (i, w) in spec.widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let zero = init == Init::ZeroLast && i == last;
        let mut draw = |_: usize, _: usize| {
            if zero {
                0.0
            } else {
                rng.random_range(-bound..bound)
            }
        };
        let weight = Matrix::from_fn(fan_in, fan_out, &mut draw);
        let bias = Matrix::from_fn(1, fan_out, &mut draw);
        store.insert(format!("{prefix}.w{i}"), weight)?;
        store.insert(format!("{prefix}.b{i}"), bias)?;
    }
    if spec.layer_norm {
        store.insert(format!("{prefix}.ln_gain"), Matrix::filled(1, spec.output_width(), 1.0))?;
        store.insert(format!("{prefix}.ln_bias"), Matrix::zeros(1, spec.output_width()))?;
    }
    Ok(())
}

/// One block of the first-layer input. When `rows` is set, the block is
/// projected first and the projected rows are then gathered, which is the same
/// as gathering the block and projecting the result.
#[derive(Clone, Debug)]
pub struct MlpPart {
    pub var: Var,
    pub rows: Option<Arc<[usize]>>,
}

impl MlpPart {
    pub fn dense(var: Var) -> Self {
        Self { var, rows: None }
    }

    pub fn gathered(var: Var, rows: &Arc<[usize]>) -> Self {
        Self {
            var,
            rows: Some(Arc::clone(rows)),
        }
    }
}

pub fn forward_mlp<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    spec: &MlpSpec,
    params: &'p ParamStore,
    prefix: &str,
    input: Var,
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    forward_mlp_parts(tape, spec, params, prefix, &[MlpPart::dense(input)], rng, training)
}

/// MLP applied to the column-wise concatenation of `parts`.
pub fn forward_mlp_parts<'p, R: Rng + ?Sized>(
    tape: &mut Tape<'p>,
    spec: &MlpSpec,
    params: &'p ParamStore,
    prefix: &str,
    parts: &[MlpPart],
    rng: &mut R,
    training: bool,
) -> Result<Var> {
    let in_width: usize = parts.iter().map(|p| tape.shape(p.var).1).sum();
    if in_width != spec.input_width() {
        let rows = parts.first().map_or(0, |p| tape.shape(p.var).0);
        return Err(Error::Dimension {
            op: "forward_mlp",
            left: (rows, in_width),
            right: (spec.input_width(), spec.widths[1]),
        });
    }

    let w0 = tape.param(params, &format!("{prefix}.w0"))?;
    let mut acc: Option<Var> = None;
    let mut offset = 0;
    for part in parts {
        let cols = tape.shape(part.var).1;
        let block = if parts.len() == 1 {
            w0
        } else {
            tape.slice_rows(w0, offset, offset + cols)?
        };
        offset += cols;
        let mut y = tape.matmul(part.var, block)?;
        if let Some(rows) = &part.rows {
            y = tape.gather(y, rows)?;
        }
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y)?,
        });
    }
    let b0 = tape.param(params, &format!("{prefix}.b0"))?;
    let mut h = tape.add_row(acc.expect("at least one part"), b0)?;

    let n_affine = spec.widths.len() - 1;
    for i in 1..n_affine {
        h = tape.silu(h);
        if training {
            h = tape.dropout(h, spec.dropout, rng)?;
        }
        let w = tape.param(params, &format!("{prefix}.w{i}"))?;
        let b = tape.param(params, &format!("{prefix}.b{i}"))?;
        h = tape.matmul(h, w)?;
        h = tape.add_row(h, b)?;
    }

    if spec.layer_norm {
        h = tape.layer_norm(h);
        let gain = tape.param(params, &format!("{prefix}.ln_gain"))?;
        let bias = tape.param(params, &format!("{prefix}.ln_bias"))?;
        h = tape.mul_row(h, gain)?;
        h = tape.add_row(h, bias)?;
    }
    Ok(match spec.output {
        OutputActivation::Identity => h,
        OutputActivation::Sigmoid => tape.sigmoid(h),
    })
}
