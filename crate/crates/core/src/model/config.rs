use serde::{Deserialize, Serialize};

use crate::diffengine::{MlpSpec, OutputActivation};
use crate::error::{Error, Result};
use crate::graphio::FEATURE_DIM;

/// How virtual nodes take part in message passing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Three phases per layer with separate parameters.
    #[default]
    Heterogeneous,
    /// One EGNN layer over physical and virtual nodes together.
    Homogeneous,
}

/// Aggregation of messages between physical nodes in the three-phase layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Width of the input node features.
    pub input_dim: usize,
    /// Node feature width D.
    pub hidden_dim: usize,
    /// Message width E.
    pub message_dim: usize,
    pub virtual_nodes: usize,
    /// Coordinates are divided by this on entry and multiplied on exit.
    pub coord_scale: f64,
    pub variant: Variant,
    pub aggregation: Aggregation,
    pub layer_norm: bool,
    pub dropout: f64,
    /// Start every coordinate MLP with a zero last layer.
    pub zero_init_coord: bool,
    pub label_radius: f64,
    pub bandwidth: f64,
    pub gamma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 5,
            input_dim: FEATURE_DIM,
            hidden_dim: 100,
            message_dim: 100,
            virtual_nodes: 8,
            coord_scale: 5.0,
            variant: Variant::Heterogeneous,
            aggregation: Aggregation::Mean,
            layer_norm: true,
            dropout: 0.1,
            zero_init_coord: true,
            label_radius: 4.0,
            bandwidth: 5.0,
            gamma: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("message_dim", self.message_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        for (name, v) in [
            ("coord_scale", self.coord_scale),
            ("label_radius", self.label_radius),
            ("bandwidth", self.bandwidth),
            ("gamma", self.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub(crate) fn edge_mlp(&self) -> MlpSpec {
        let (d, e) = (self.hidden_dim, self.message_dim);
        MlpSpec::new(vec![2 * d + 1, e, e])
            .with_layer_norm(self.layer_norm)
            .with_dropout(self.dropout)
    }

    pub(crate) fn coord_mlp(&self) -> MlpSpec {
        MlpSpec::new(vec![self.message_dim, self.message_dim, 1])
    }

    pub(crate) fn node_mlp(&self) -> MlpSpec {
        let (d, e) = (self.hidden_dim, self.message_dim);
        MlpSpec::new(vec![d + e, d, d])
            .with_layer_norm(self.layer_norm)
            .with_dropout(self.dropout)
    }

    pub(crate) fn confidence_mlp(&self) -> MlpSpec {
        let d = self.hidden_dim;
        MlpSpec::new(vec![d, d, 1]).with_output(OutputActivation::Sigmoid)
    }

    /// Parameter-name prefixes of the message blocks of layer `l`.
    pub(crate) fn block_prefixes(&self, l: usize) -> Vec<String> {
        match (self.variant, self.virtual_nodes) {
            (Variant::Homogeneous, _) => vec![format!("layer{l}.egnn")],
            (Variant::Heterogeneous, 0) => vec![format!("layer{l}.aa")],
            (Variant::Heterogeneous, _) => ["aa", "av", "va"].iter().map(|p| format!("layer{l}.{p}")).collect(),
        }
    }
}
