use std::path::Path;

use serde::{Deserialize, Serialize};
use vnegnn::expressivity::KChainRunConfig;
use vnegnn::graphio::{SyntheticSpec, DEFAULT_MIN_LIGAND_ATOMS};
use vnegnn::model::Variant;
use vnegnn::training::TrainConfig;

use crate::args::{Overrides, VariantArg};
use crate::exit::CliError;

/// Everything a run can be configured with. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub kchain: KChainRunConfig,
    pub synthetic: SyntheticSpec,
    /// Ligands with fewer heavy atoms are ignored.
    pub min_ligand_atoms: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            kchain: KChainRunConfig::default(),
            synthetic: SyntheticSpec::default(),
            min_ligand_atoms: DEFAULT_MIN_LIGAND_ATOMS,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))
    }

    pub fn from_overrides(o: &Overrides) -> Result<Self, CliError> {
        let mut c = Self::load(o.config.as_deref())?;
        c.apply(o);
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let m = &mut self.train.model;
        if let Some(v) = o.lr {
            self.train.lr = v;
        }
        if let Some(v) = o.layers {
            m.layers = v;
        }
        if let Some(v) = o.virtual_nodes {
            m.virtual_nodes = v;
        }
        if let Some(v) = o.bandwidth {
            m.bandwidth = v;
        }
        if let Some(v) = o.gamma {
            m.gamma = v;
        }
        if let Some(v) = o.label_radius {
            m.label_radius = v;
            self.synthetic.label_radius = v;
        }
        if let Some(v) = o.variant {
            m.variant = match v {
                VariantArg::Heterogeneous => Variant::Heterogeneous,
                VariantArg::Homogeneous => Variant::Homogeneous,
            };
        }
        if let Some(v) = o.seed {
            self.train.seed = v;
            self.kchain.seed = v;
        }
        if let Some(v) = o.threshold {
            self.train.threshold = v;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_overrides() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            lr: Some(0.5),
            layers: Some(2),
            variant: Some(VariantArg::Homogeneous),
            seed: Some(9),
            label_radius: Some(3.5),
            ..Default::default()
        });
        assert_eq!((c.train.lr, c.train.model.layers, c.kchain.seed), (0.5, 2, 9));
        assert_eq!(c.train.model.variant, Variant::Homogeneous);
        assert_eq!(c.synthetic.label_radius, 3.5);
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"model": {"layerz": 1}}}"#).is_err());
    }
}
