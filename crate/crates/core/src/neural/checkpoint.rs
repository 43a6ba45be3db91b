//! Model checkpoints: a JSON document with the architecture, training
//! configuration, seed, a manifest of named parameter blocks and the flat
//! parameter array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{NetSpec, Normalization, ParamBlock, SequenceModel};
use super::train::{EpochStats, TrainConfig};
use super::NeuralError;

pub const CHECKPOINT_FORMAT: &str = "reachgrasp-sequence-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub tag: String,
    pub spec: NetSpec,
    pub normalization: Normalization,
    pub config: Option<TrainConfig>,
    pub seed: u64,
    pub history: Vec<EpochStats>,
    pub manifest: Vec<ParamBlock>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &SequenceModel, config: Option<TrainConfig>, seed: u64, history: Vec<EpochStats>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            tag: model.tag.clone(),
            spec: model.spec.clone(),
            normalization: model.norm.clone(),
            config,
            seed,
            history,
            manifest: model.spec.manifest(),
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model after checking format, manifest and length.
    pub fn into_model(self) -> Result<SequenceModel, NeuralError> {
        let fail = |m: String| Err(NeuralError::Checkpoint(m));
        if self.format != CHECKPOINT_FORMAT {
            return fail(format!("unknown format {:?}", self.format));
        }
        if self.manifest != self.spec.manifest() {
            return fail("parameter manifest does not match the architecture".into());
        }
        if self.params.len() != self.spec.param_count() {
            return fail(format!("expected {} parameters, found {}", self.spec.param_count(), self.params.len()));
        }
        let mut model = SequenceModel::init(self.tag, self.spec, self.normalization, 0)?;
        model.params = self.params;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        fs::write(path.as_ref(), self.to_json()).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", p.display())))
    }
}
