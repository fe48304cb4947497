//! Token-in, logits-out models with hidden-state capture and additive
//! activation patches.
//!
//! Hidden layer `0` is the embedding output; layer `i >= 1` is the residual
//! stream after block `i`. A patch adds a delta to the residual stream right
//! after the given layer at the given position, before later layers read it.
//! Captures observe the state after patching.
//!
//! Two realizations: [`TinyLm`], a small pre-LN decoder-only transformer
//! trained on the fact corpus with a hand-written backward pass, and
//! [`OracleLm`], an analytic model whose entity states are planted linear
//! encodings of the attribute value.

mod checkpoint;
mod config;
mod gradcheck;
mod oracle;
mod params;
mod train;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use config::ModelConfig;
pub use gradcheck::{grad_check, GradCheckReport};
pub use oracle::{build_oracle, planted_data, OracleLm, OracleSpec, PlantedData};
pub use params::{ParamLayout, TensorSlot};
pub use train::{
    answer_accuracy, build_training_set, train, LossCurve, TrainConfig, TrainExample,
};
pub use transformer::TinyLm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("planted directions are not orthonormal: {0}")]
    NonOrthogonalDirections(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("vocabulary hash mismatch: checkpoint {expected}, world {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("training data error: {0}")]
    Data(String),
}

/// One additive edit of the residual stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEdit {
    pub layer: usize,
    pub position: usize,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub edits: Vec<PatchEdit>,
}

impl PatchSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, layer: usize, position: usize, delta: Vec<f64>) {
        self.edits.push(PatchEdit {
            layer,
            position,
            delta,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    /// The same direction scaled by `alpha` at every `(layer, position)`.
    pub fn along(direction: &[f64], alpha: f64, points: &[(usize, usize)]) -> Self {
        let delta: Vec<f64> = direction.iter().map(|u| alpha * u).collect();
        Self {
            edits: points
                .iter()
                .map(|&(layer, position)| PatchEdit {
                    layer,
                    position,
                    delta: delta.clone(),
                })
                .collect(),
        }
    }

    /// Adds every edit targeting `layer` into the row-major `[len, d]` states.
    pub(crate) fn apply(&self, layer: usize, states: &mut [f64], d: usize) {
        for e in self.edits.iter().filter(|e| e.layer == layer) {
            let row = &mut states[e.position * d..(e.position + 1) * d];
            for (x, dx) in row.iter_mut().zip(&e.delta) {
                *x += dx;
            }
        }
    }
}

/// Captured residual-stream states keyed by `(layer, position)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    pub entries: Vec<((usize, usize), Vec<f64>)>,
}

impl ActivationTrace {
    pub fn get(&self, layer: usize, position: usize) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(k, _)| *k == (layer, position))
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Row-major `[seq_len, vocab]`.
    pub logits: Vec<f64>,
    pub vocab_size: usize,
    pub trace: ActivationTrace,
}

impl ForwardOutput {
    pub fn logits_at(&self, position: usize) -> &[f64] {
        &self.logits[position * self.vocab_size..(position + 1) * self.vocab_size]
    }
}

/// Common surface of the trained transformer and the analytic oracle.
pub trait LanguageModel: Send + Sync {
    /// Number of blocks; hidden layers are `0..=n_layers`.
    fn n_layers(&self) -> usize;
    fn d_model(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn max_seq_len(&self) -> usize;

    fn forward(
        &self,
        tokens: &[u32],
        capture: &[(usize, usize)],
        patch: Option<&PatchSpec>,
    ) -> Result<ForwardOutput, ModelError>;

    /// Logits for the token following `tokens`.
    fn next_token_logits(
        &self,
        tokens: &[u32],
        patch: Option<&PatchSpec>,
    ) -> Result<Vec<f64>, ModelError> {
        let out = self.forward(tokens, &[], patch)?;
        Ok(out.logits_at(tokens.len() - 1).to_vec())
    }

    /// Shared argument validation for `forward`.
    fn check_inputs(
        &self,
        tokens: &[u32],
        capture: &[(usize, usize)],
        patch: Option<&PatchSpec>,
    ) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::IndexOutOfRange("empty token sequence".into()));
        }
        if tokens.len() > self.max_seq_len() {
            return Err(ModelError::IndexOutOfRange(format!(
                "sequence length {} exceeds max_seq_len {}",
                tokens.len(),
                self.max_seq_len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.vocab_size()) {
            return Err(ModelError::IndexOutOfRange(format!(
                "token {t} >= vocab size {}",
                self.vocab_size()
            )));
        }
        let point_ok = |layer: usize, pos: usize| layer <= self.n_layers() && pos < tokens.len();
        for &(layer, pos) in capture {
            if !point_ok(layer, pos) {
                return Err(ModelError::IndexOutOfRange(format!(
                    "capture at layer {layer}, position {pos}"
                )));
            }
        }
        if let Some(p) = patch {
            for e in &p.edits {
                if !point_ok(e.layer, e.position) {
                    return Err(ModelError::IndexOutOfRange(format!(
                        "patch at layer {}, position {}",
                        e.layer, e.position
                    )));
                }
                if e.delta.len() != self.d_model() || e.delta.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::IndexOutOfRange(format!(
                        "patch delta must be {} finite values",
                        self.d_model()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. The patch stays anchored at its absolute positions on
/// every step. Returns the generated tokens, including a final EOS if one
/// was produced.
pub fn generate<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[u32],
    patch: Option<&PatchSpec>,
    max_new: usize,
    eos: u32,
) -> Result<Vec<u32>, ModelError> {
    if max_new == 0 {
        return Err(ModelError::IndexOutOfRange("max_new must be >= 1".into()));
    }
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        if seq.len() >= model.max_seq_len() {
            break;
        }
        let logits = model.next_token_logits(&seq, patch)?;
        let next = argmax(&logits) as u32;
        out.push(next);
        seq.push(next);
        if next == eos {
            break;
        }
    }
    Ok(out)
}

/// Maps a fractional layer position onto a hidden-layer index.
pub fn layer_from_fraction(fraction: f64, n_layers: usize) -> usize {
    ((fraction * n_layers as f64).round().max(0.0) as usize).min(n_layers)
}
