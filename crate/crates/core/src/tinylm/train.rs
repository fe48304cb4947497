use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, ModelError, TinyLm};
use crate::synthworld::{FactRecord, NumericProperty, Vocab};

/// A fact sequence: prompt followed by the answer token. The loss covers
/// the answer (predicted at the last prompt position) and the EOS after it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub tokens: Vec<u32>,
    pub answer_pos: usize,
    pub answer: u32,
    pub answer_first: u32,
    pub levels: usize,
    pub eos: u32,
}

impl TrainExample {
    pub fn prompt(&self) -> &[u32] {
        &self.tokens[..=self.answer_pos]
    }
}

pub fn build_training_set(
    vocab: &Vocab,
    properties: &[NumericProperty],
    facts: &[FactRecord],
    instruction_suffix: bool,
    max_seq_len: usize,
) -> Result<Vec<TrainExample>, ModelError> {
    let err = |e: crate::synthworld::WorldError| ModelError::Data(e.to_string());
    facts
        .iter()
        .map(|f| {
            let p = properties
                .iter()
                .find(|p| p.id == f.property_id)
                .ok_or_else(|| ModelError::Data(format!("unknown property {}", f.property_id)))?;
            let prompt = vocab.render_prompt(p, &f.entity_name, instruction_suffix).map_err(err)?;
            let answer = vocab.answer_for_value(&p.id, f.value).map_err(err)?;
            let range = vocab.answer_range(&p.id).expect("answer range of known property");
            let mut tokens = prompt.tokens;
            let answer_pos = tokens.len() - 1;
            tokens.push(answer);
            // the EOS target sits at the answer position, so the input ends there
            if tokens.len() > max_seq_len {
                return Err(ModelError::Data(format!(
                    "sequence of {} tokens exceeds max_seq_len {max_seq_len}",
                    tokens.len()
                )));
            }
            Ok(TrainExample {
                tokens,
                answer_pos,
                answer,
                answer_first: range.start,
                levels: (range.end - range.start) as usize,
                eos: vocab.eos(),
            })
        })
        .collect()
}

fn default_lr() -> f64 {
    3e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    /// Width in answer levels of a Gaussian soft target around the gold
    /// answer; 0 trains on the gold token only.
    #[serde(default)]
    pub answer_smoothing: f64,
    /// When positive, the smoothing width falls linearly to 0 over this
    /// many epochs.
    #[serde(default)]
    pub smoothing_anneal_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            batch_size: default_batch(),
            seed: 0,
            answer_smoothing: 0.0,
            smoothing_anneal_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.answer_smoothing >= 0.0 && self.answer_smoothing.is_finite()) {
            return bad("answer_smoothing must be >= 0");
        }
        Ok(())
    }

    /// Smoothing width used during `epoch`.
    pub fn smoothing_at(&self, epoch: usize) -> f64 {
        if self.smoothing_anneal_epochs == 0 {
            return self.answer_smoothing;
        }
        let left = 1.0 - epoch as f64 / self.smoothing_anneal_epochs as f64;
        self.answer_smoothing * left.max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub step_losses: Vec<f64>,
    pub epoch_mean: Vec<f64>,
    /// Loss of the first batch of each epoch, before its update.
    pub epoch_start: Vec<f64>,
}

fn answer_target(ex: &TrainExample, width: f64) -> Vec<(u32, f64)> {
    if width <= 0.0 {
        return vec![(ex.answer, 1.0)];
    }
    let gold = (ex.answer - ex.answer_first) as i64;
    let reach = (3.0 * width).ceil() as i64;
    let lo = (gold - reach).max(0);
    let hi = (gold + reach).min(ex.levels as i64 - 1);
    let mut dist: Vec<(u32, f64)> = (lo..=hi)
        .map(|j| {
            let z = (j - gold) as f64 / width;
            (ex.answer_first + j as u32, (-0.5 * z * z).exp())
        })
        .collect();
    let total: f64 = dist.iter().map(|(_, w)| w).sum();
    dist.iter_mut().for_each(|(_, w)| *w /= total);
    dist
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}

/// Mean loss and gradient over a batch of examples.
pub(crate) fn batch_loss(
    model: &TinyLm,
    batch: &[&TrainExample],
    smoothing: f64,
    grad: &mut [f64],
) -> f64 {
    let mut seqs = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(2 * batch.len());
    let mut offset = 0;
    for ex in batch {
        seqs.push(ex.tokens.as_slice());
        let row = offset + ex.answer_pos;
        targets.push((row, answer_target(ex, smoothing)));
        targets.push((row + 1, vec![(ex.eos, 1.0)]));
        offset += ex.tokens.len();
    }
    let mut dlogits = Vec::new();
    let (loss, fwd) = model.loss_and_dlogits(&seqs, &targets, &mut dlogits);
    grad.fill(0.0);
    model.backward(&fwd, &dlogits, grad);
    loss
}

pub fn train(
    model: &mut TinyLm,
    examples: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<LossCurve, ModelError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(ModelError::Data("no training facts".into()));
    }
    let max = model.config().max_seq_len;
    if let Some(ex) = examples.iter().find(|e| e.tokens.len() > max) {
        return Err(ModelError::Data(format!(
            "sequence of {} tokens exceeds max_seq_len {max}",
            ex.tokens.len()
        )));
    }
    let n = model.n_params();
    let mut adam = Adam {
        m: vec![0.0; n],
        v: vec![0.0; n],
        t: 0,
    };
    let mut grad = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut curve = LossCurve::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let smoothing = cfg.smoothing_at(epoch);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = batch_loss(model, &batch, smoothing, &mut grad);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("loss = {loss}"),
                });
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("gradient of {} is {}", model.layout().slot_of(i).name, grad[i]),
                });
            }
            if step == 0 {
                curve.epoch_start.push(loss);
            }
            curve.step_losses.push(loss);
            total += loss;
            batches += 1;
            adam.step(model.params_mut(), &grad, cfg);
        }
        let mean = total / batches as f64;
        curve.epoch_mean.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(curve)
}

/// Fraction of examples whose greedy first answer token is the gold answer.
pub fn answer_accuracy(model: &TinyLm, examples: &[TrainExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let v = model.config().vocab_size;
    let mut correct = 0;
    for chunk in examples.chunks(256) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|e| e.prompt()).collect();
        let mut rows = Vec::with_capacity(chunk.len());
        let mut offset = 0;
        for e in chunk {
            rows.push(offset + e.answer_pos);
            offset += e.answer_pos + 1;
        }
        let fwd = model.forward_batch(&seqs, None, &rows);
        for (i, e) in chunk.iter().enumerate() {
            if argmax(&fwd.logits[i * v..(i + 1) * v]) as u32 == e.answer {
                correct += 1;
            }
        }
    }
    correct as f64 / examples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};
    use crate::tinylm::{generate, ModelConfig};

    fn setup(n_entities: usize) -> (crate::synthworld::World, Vec<TrainExample>, ModelConfig) {
        let w = generate_world(&WorldConfig {
            n_entities,
            ..WorldConfig::default()
        })
        .unwrap();
        let vocab = w.vocab();
        let ex = build_training_set(&vocab, &w.config.properties, &w.facts, true, 16).unwrap();
        let cfg = ModelConfig::new(vocab.len(), 11);
        (w, ex, cfg)
    }

    #[test]
    fn sequences_fit_and_end_with_answer() {
        let (_, ex, _) = setup(10);
        for e in &ex {
            assert!(e.tokens.len() <= 16);
            assert_eq!(*e.tokens.last().unwrap(), e.answer);
            assert_eq!(e.answer_pos + 2, e.tokens.len());
        }
    }

    #[test]
    fn smoothed_target_is_a_distribution() {
        let (_, ex, _) = setup(10);
        let d = answer_target(&ex[0], 2.0);
        assert!((d.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-12);
        let best = d.iter().cloned().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(best.0, ex[0].answer);
        assert_eq!(answer_target(&ex[0], 0.0), vec![(ex[0].answer, 1.0)]);
    }

    #[test]
    fn zero_epochs_leave_params_unchanged() {
        let (_, ex, cfg) = setup(10);
        let mut m = TinyLm::new(cfg).unwrap();
        let before = m.params().to_vec();
        let curve = train(&mut m, &ex, &TrainConfig { epochs: 0, ..TrainConfig::default() }, |_, _| {}).unwrap();
        assert_eq!(m.params(), before.as_slice());
        assert!(curve.step_losses.is_empty());
    }

    #[test]
    fn empty_facts_rejected() {
        let (_, _, cfg) = setup(10);
        let mut m = TinyLm::new(cfg).unwrap();
        assert!(train(&mut m, &[], &TrainConfig::default(), |_, _| {}).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let (_, ex, cfg) = setup(10);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let mut a = TinyLm::new(cfg.clone()).unwrap();
        let mut b = TinyLm::new(cfg).unwrap();
        let ca = train(&mut a, &ex, &tc, |_, _| {}).unwrap();
        let cb = train(&mut b, &ex, &tc, |_, _| {}).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ca, cb);
    }

    #[test]
    fn overfits_fifty_facts() {
        let (w, ex, cfg) = setup(10);
        let ex = &ex[..50];
        let mut m = TinyLm::new(cfg).unwrap();
        let tc = TrainConfig {
            epochs: 200,
            lr: 3e-3,
            batch_size: 64,
            seed: 1,
            ..TrainConfig::default()
        };
        let curve = train(&mut m, ex, &tc, |_, _| {}).unwrap();
        assert!(curve.epoch_start[1] <= curve.epoch_start[0]);
        let acc = answer_accuracy(&m, ex);
        assert!(acc >= 0.98, "accuracy {acc}");
        // greedy decoding agrees and terminates
        let eos = w.vocab().eos();
        let mut exact = 0;
        for e in ex {
            let out = generate(&m, e.prompt(), None, 2, eos).unwrap();
            if out == vec![e.answer, eos] {
                exact += 1;
            }
        }
        assert!(exact as f64 >= 0.98 * ex.len() as f64, "{exact}/50");
    }
}
