use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::batch_loss;
use super::{ModelConfig, ModelError, TinyLm, TrainExample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_probed: usize,
    /// Tensor and flat index of the worst parameter.
    pub worst: (String, usize),
}

const GRAD_FLOOR: f64 = 1e-6;

/// `L(up) - L(down)` for hard-target cross-entropy, computed from the two
/// logit sets directly so the large common log-partition cancels exactly.
fn loss_difference(up: &[f64], down: &[f64], targets: &[u32], v: usize) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let a = &up[r * v..(r + 1) * v];
        let b = &down[r * v..(r + 1) * v];
        let mx = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut base = 0.0;
        let mut delta = 0.0;
        for (x, y) in a.iter().zip(b) {
            let e = (y - mx).exp();
            base += e;
            delta += e * (x - y).exp_m1();
        }
        total += (delta / base).ln_1p() - (a[t as usize] - b[t as usize]);
    }
    total / targets.len() as f64
}

/// Central finite differences against the analytic gradient for
/// `n_params_probed` parameters, visiting tensors round-robin and picking a
/// seeded random entry in each. Step is `1e-5 * max(1, |theta|)`; the
/// error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(
    config: &ModelConfig,
    batch: &[TrainExample],
    n_params_probed: usize,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Data("empty grad-check batch".into()));
    }
    let mut model = TinyLm::new(config.clone())?;
    let refs: Vec<&TrainExample> = batch.iter().collect();
    let mut grad = vec![0.0; model.n_params()];
    batch_loss(&model, &refs, 0.0, &mut grad);

    let seqs: Vec<&[u32]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for e in batch {
        rows.extend([offset + e.answer_pos, offset + e.answer_pos + 1]);
        targets.extend([e.answer, e.eos]);
        offset += e.tokens.len();
    }
    let v = config.vocab_size;

    let slots = model.layout().slots.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (String::new(), 0);
    let mut max_rel = 0.0f64;
    for i in 0..n_params_probed {
        let slot = &slots[i % slots.len()];
        let idx = slot.offset + rng.random_range(0..slot.len());
        let theta = model.params()[idx];
        let h = 1e-5 * theta.abs().max(1.0);
        model.params_mut()[idx] = theta + h;
        let up = model.forward_batch(&seqs, None, &rows).logits;
        model.params_mut()[idx] = theta - h;
        let down = model.forward_batch(&seqs, None, &rows).logits;
        model.params_mut()[idx] = theta;
        let numeric = loss_difference(&up, &down, &targets, v) / (2.0 * h);
        let analytic = grad[idx];
        // exact-zero gradients (key biases under softmax shift invariance)
        // are compared on an absolute 1e-6 scale
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        if rel > max_rel || worst.0.is_empty() {
            max_rel = max_rel.max(rel);
            worst = (slot.name.clone(), idx);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        n_probed: n_params_probed,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};
    use crate::tinylm::build_training_set;

    fn batch() -> (Vec<TrainExample>, usize) {
        let w = generate_world(&WorldConfig {
            n_entities: 10,
            ..WorldConfig::default()
        })
        .unwrap();
        let vocab = w.vocab();
        let ex = build_training_set(&vocab, &w.config.properties, &w.facts, true, 16).unwrap();
        (ex.into_iter().step_by(3).take(6).collect(), vocab.len())
    }

    #[test]
    fn default_config_passes() {
        let (b, v) = batch();
        let r = grad_check(&ModelConfig::new(v, 2), &b, 120, 0).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn attention_free_single_layer_is_near_exact() {
        let (b, v) = batch();
        let cfg = ModelConfig {
            n_layers: 1,
            attention: false,
            ..ModelConfig::new(v, 2)
        };
        let r = grad_check(&cfg, &b, 120, 1).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn symmetric_perturbation_is_second_order() {
        let (b, v) = batch();
        let mut m = TinyLm::new(ModelConfig::new(v, 2)).unwrap();
        let refs: Vec<&TrainExample> = b.iter().collect();
        let mut g = vec![0.0; m.n_params()];
        let l0 = batch_loss(&m, &refs, 0.0, &mut g);
        let idx = m.layout().slot("blocks.1.mlp.w1").unwrap().offset + 7;
        let theta = m.params()[idx];
        let asym = |h: f64, m: &mut TinyLm| {
            m.params_mut()[idx] = theta + h;
            let up = batch_loss(m, &refs, 0.0, &mut g.clone());
            m.params_mut()[idx] = theta - h;
            let down = batch_loss(m, &refs, 0.0, &mut g.clone());
            m.params_mut()[idx] = theta;
            (up + down - 2.0 * l0).abs()
        };
        let a1 = asym(1e-3, &mut m);
        let a2 = asym(5e-4, &mut m);
        // halving h shrinks the even part by about 4
        assert!(a2 < a1 / 3.0, "{a1} {a2}");
    }
}
