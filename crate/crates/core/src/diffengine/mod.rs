//! Reverse-mode differentiation over dense `f64` matrices, the MLP building
//! blocks used by every network in the crate, and the AdamW optimizer.

mod checkpoint;
mod matrix;
mod nn;
mod optim;
mod params;
mod tape;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use matrix::Matrix;
pub use nn::{forward_mlp, forward_mlp_parts, init_mlp, Init, MlpPart, MlpSpec, OutputActivation};
pub use optim::{adamw_step, AdamW};
pub use params::{Param, ParamStore};
pub use tape::{huber, sigmoid, softplus, GradMap, Gradients, Tape, Var};
