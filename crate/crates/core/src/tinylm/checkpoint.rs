//! JSON checkpoint: config, vocabulary hash and tensors in declared order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, TinyLm};

pub const CHECKPOINT_FORMAT: &str = "numrep-tinylm/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    pub fn from_model(model: &TinyLm, vocab_hash: &str) -> Self {
        let tensors = model
            .layout()
            .slots
            .iter()
            .map(|s| CheckpointTensor {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: model.params()[s.range()].to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config: model.config().clone(),
            vocab_hash: vocab_hash.into(),
            tensors,
        }
    }

    pub fn into_model(self, vocab_hash: &str) -> Result<TinyLm, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unsupported format {:?}", self.format)));
        }
        if self.vocab_hash != vocab_hash {
            return Err(ModelError::VocabMismatch {
                expected: self.vocab_hash,
                found: vocab_hash.into(),
            });
        }
        let layout = super::ParamLayout::new(&self.config);
        if layout.slots.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.slots.len(),
                self.tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(layout.total);
        for (slot, t) in layout.slots.iter().zip(self.tensors) {
            if slot.name != t.name || slot.shape != t.shape || t.data.len() != slot.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, slot.name, slot.shape
                )));
            }
            params.extend(t.data);
        }
        TinyLm::from_params(self.config, params)
    }
}

pub fn save_checkpoint(path: &Path, model: &TinyLm, vocab_hash: &str) -> Result<(), ModelError> {
    let io = |e: std::io::Error| ModelError::Checkpoint(format!("{}: {e}", path.display()));
    let f = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(f);
    serde_json::to_writer(&mut w, &Checkpoint::from_model(model, vocab_hash))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    std::io::Write::flush(&mut w).map_err(io)
}

pub fn load_checkpoint(path: &Path, vocab_hash: &str) -> Result<TinyLm, ModelError> {
    let f = std::fs::File::open(path)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(f))
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    ck.into_model(vocab_hash)
}
