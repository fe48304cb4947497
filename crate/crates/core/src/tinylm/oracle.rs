//! Analytic stand-in model with planted linear encodings.
//!
//! Hidden layer 0 holds a fixed random embedding per token and every block is
//! the identity, except at the recall layer `c = round(0.3 L)`: there the
//! entity position's state is replaced by `m + v_p(e) u*_p + eps_{e,p}` for
//! the property `p` the prompt asks about. `v_p(e)` is the value on the
//! property's normalized scale. The noise is drawn in the orthogonal
//! complement of all planted directions, so the readout `<h - m, u*_p>` is
//! exactly `v_p(e)` for an unedited forward.
//!
//! The answer head reads the entity state at layer `c` (after patches) and
//! emits the level `round(clamp(s, 0, 1) (levels - 1))` as a one-hot logit.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    layer_from_fraction, ActivationTrace, ForwardOutput, LanguageModel, ModelError, PatchSpec,
};
use crate::regress::{dot, Matrix};
use crate::synthworld::{entity_name, FactRecord, NumericProperty, Vocab};

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub d_model: usize,
    pub n_layers: usize,
    pub max_seq_len: usize,
    pub recall_layer_fraction: f64,
    /// `(property id, u*_p)`.
    pub directions: Vec<(String, Vec<f64>)>,
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub answer_bins: usize,
    pub seed: u64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gram-Schmidt with re-orthogonalization; `None` if the inputs are dependent.
fn orthonormalize(mut vs: Vec<Vec<f64>>) -> Option<Vec<Vec<f64>>> {
    for i in 0..vs.len() {
        for _ in 0..2 {
            for j in 0..i {
                let c = dot(&vs[i], &vs[j]);
                let (head, tail) = vs.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= c * b;
                }
            }
        }
        let n = dot(&vs[i], &vs[i]).sqrt();
        if n < 1e-8 {
            return None;
        }
        vs[i].iter_mut().for_each(|x| *x /= n);
    }
    Some(vs)
}

/// Removes the components along each (orthonormal) direction.
fn project_out(v: &mut [f64], dirs: &[&[f64]]) {
    for u in dirs {
        let c = dot(v, u);
        for (a, b) in v.iter_mut().zip(u.iter()) {
            *a -= c * b;
        }
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix-style combination, stable across platforms
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl OracleSpec {
    /// Seeded orthonormal directions, one per property, and a Gaussian mean.
    pub fn seeded(
        properties: &[NumericProperty],
        answer_bins: usize,
        d_model: usize,
        n_layers: usize,
        sigma: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if properties.len() > d_model {
            return Err(ModelError::InvalidConfig(format!(
                "{} properties need d_model >= {}",
                properties.len(),
                properties.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = properties.iter().map(|_| gaussian_vec(&mut rng, d_model)).collect();
        let dirs = orthonormalize(raw)
            .ok_or_else(|| ModelError::NonOrthogonalDirections("degenerate draw".into()))?;
        let mean = gaussian_vec(&mut rng, d_model);
        Ok(Self {
            d_model,
            n_layers,
            max_seq_len: 16,
            recall_layer_fraction: 0.3,
            directions: properties.iter().map(|p| p.id.clone()).zip(dirs).collect(),
            mean,
            sigma,
            answer_bins,
            seed,
        })
    }

    pub fn recall_layer(&self) -> usize {
        layer_from_fraction(self.recall_layer_fraction, self.n_layers)
    }

    pub fn direction(&self, property: &str) -> Option<&[f64]> {
        self.directions
            .iter()
            .find(|(p, _)| p == property)
            .map(|(_, u)| u.as_slice())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d_model == 0 || self.n_layers == 0 || self.max_seq_len == 0 {
            return bad("d_model, n_layers and max_seq_len must be positive".into());
        }
        let c = self.recall_layer();
        if c == 0 {
            return bad(format!(
                "recall layer fraction {} maps to the embedding layer",
                self.recall_layer_fraction
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.mean.len() != self.d_model || self.mean.iter().any(|x| !x.is_finite()) {
            return bad("mean must be a finite d_model-vector".into());
        }
        for (i, (pi, ui)) in self.directions.iter().enumerate() {
            if ui.len() != self.d_model {
                return bad(format!("direction for {pi} has wrong length"));
            }
            let n = dot(ui, ui).sqrt();
            if (n - 1.0).abs() > ORTHO_TOL || !n.is_finite() {
                return Err(ModelError::NonOrthogonalDirections(format!(
                    "|u*_{pi}| = {n}"
                )));
            }
            for (pj, uj) in &self.directions[..i] {
                let c = dot(ui, uj);
                if c.abs() > ORTHO_TOL {
                    return Err(ModelError::NonOrthogonalDirections(format!(
                        "<u*_{pi}, u*_{pj}> = {c:e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct PlantedProperty {
    id: String,
    prefix: Vec<u32>,
    direction: Vec<f64>,
    mean_proj: f64,
    answers: std::ops::Range<u32>,
    /// Entity token -> planted state.
    states: HashMap<u32, Vec<f64>>,
    answer_first: u32,
    levels: usize,
}

#[derive(Debug, Clone)]
pub struct OracleLm {
    spec: OracleSpec,
    vocab_size: usize,
    /// `[vocab, d]`.
    embedding: Vec<f64>,
    properties: Vec<PlantedProperty>,
    eos: u32,
}

pub fn build_oracle(
    spec: OracleSpec,
    vocab: &Vocab,
    properties: &[NumericProperty],
    facts: &[FactRecord],
) -> Result<OracleLm, ModelError> {
    spec.validate()?;
    let d = spec.d_model;
    let world_err = |e: crate::synthworld::WorldError| ModelError::InvalidConfig(e.to_string());
    let all_dirs: Vec<&[f64]> = spec.directions.iter().map(|(_, u)| u.as_slice()).collect();

    let mut planted = Vec::new();
    for (pi, p) in properties.iter().enumerate() {
        let has_facts = facts.iter().any(|f| f.property_id == p.id);
        let Some(u) = spec.direction(&p.id) else {
            if has_facts {
                return Err(ModelError::InvalidConfig(format!(
                    "no planted direction for property {}",
                    p.id
                )));
            }
            continue;
        };
        let q = vocab.quantizer(&p.id).map_err(world_err)?;
        if p.answer == crate::synthworld::AnswerKind::Binned && q.levels() != spec.answer_bins {
            return Err(ModelError::InvalidConfig(format!(
                "answer_bins {} does not match vocabulary ({} levels for {})",
                spec.answer_bins,
                q.levels(),
                p.id
            )));
        }
        let probe = vocab
            .render_prompt(p, &entity_name(0), false)
            .map_err(world_err)?;
        let prefix = probe.tokens[..probe.entity_pos].to_vec();
        let mut states = HashMap::new();
        for f in facts.iter().filter(|f| f.property_id == p.id) {
            let tok = vocab.entity_token(&f.entity_name).map_err(world_err)?;
            let v = p.normalize(f.value);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, tok as u64, pi as u64));
            let mut eps = gaussian_vec(&mut rng, d);
            project_out(&mut eps, &all_dirs);
            let h: Vec<f64> = (0..d)
                .map(|i| spec.mean[i] + v * u[i] + spec.sigma * eps[i])
                .collect();
            states.insert(tok, h);
        }
        let answers = vocab.answer_range(&p.id).expect("quantizer exists");
        planted.push(PlantedProperty {
            id: p.id.clone(),
            prefix,
            direction: u.to_vec(),
            mean_proj: dot(&spec.mean, u),
            answer_first: answers.start,
            levels: q.levels(),
            answers,
            states,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, u64::MAX, 0));
    let scale = 1.0 / (d as f64).sqrt();
    let embedding: Vec<f64> = (0..vocab.len() * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|x: f64| x * scale)
        .collect();
    Ok(OracleLm {
        spec,
        vocab_size: vocab.len(),
        embedding,
        properties: planted,
        eos: vocab.eos(),
    })
}

impl OracleLm {
    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    pub fn recall_layer(&self) -> usize {
        self.spec.recall_layer()
    }

    /// Planted state of an entity token for a property, if present.
    pub fn planted_state(&self, property: &str, entity_token: u32) -> Option<&[f64]> {
        self.properties
            .iter()
            .find(|p| p.id == property)?
            .states
            .get(&entity_token)
            .map(|v| v.as_slice())
    }

    /// Property queried by the prompt and the entity position.
    fn locate(&self, tokens: &[u32]) -> Option<(&PlantedProperty, usize)> {
        self.properties.iter().find_map(|p| {
            let pos = p.prefix.len();
            (tokens.len() > pos && tokens[..pos] == p.prefix[..] && p.states.contains_key(&tokens[pos]))
                .then_some((p, pos))
        })
    }
}

impl LanguageModel for OracleLm {
    fn n_layers(&self) -> usize {
        self.spec.n_layers
    }

    fn d_model(&self) -> usize {
        self.spec.d_model
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.spec.max_seq_len
    }

    fn forward(
        &self,
        tokens: &[u32],
        capture: &[(usize, usize)],
        patch: Option<&PatchSpec>,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_inputs(tokens, capture, patch)?;
        let d = self.spec.d_model;
        let n = tokens.len();
        let c = self.recall_layer();
        let located = self.locate(tokens);

        let mut h = vec![0.0; n * d];
        for (i, &t) in tokens.iter().enumerate() {
            h[i * d..(i + 1) * d].copy_from_slice(&self.embedding[t as usize * d..(t as usize + 1) * d]);
        }
        let mut trace = ActivationTrace::default();
        let mut readout = None;
        for layer in 0..=self.spec.n_layers {
            if layer == c {
                if let Some((p, pos)) = located {
                    h[pos * d..(pos + 1) * d].copy_from_slice(&p.states[&tokens[pos]]);
                }
            }
            if let Some(ps) = patch {
                ps.apply(layer, &mut h, d);
            }
            for &(l, pos) in capture.iter().filter(|(l, _)| *l == layer) {
                trace
                    .entries
                    .push(((l, pos), h[pos * d..(pos + 1) * d].to_vec()));
            }
            if layer == c {
                if let Some((p, pos)) = located {
                    let s = dot(&h[pos * d..(pos + 1) * d], &p.direction) - p.mean_proj;
                    let s = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
                    let level = (s * (p.levels - 1) as f64).round() as usize;
                    readout = Some((p, pos, p.answer_first + level as u32));
                }
            }
        }
        // keep captures in request order
        trace.entries.sort_by_key(|(k, _)| {
            capture.iter().position(|c| c == k).unwrap_or(usize::MAX)
        });

        let v = self.vocab_size;
        let mut logits = vec![0.0; n * v];
        if let Some((p, pos, answer)) = readout {
            for t in pos..n {
                let next = if p.answers.contains(&tokens[t]) { self.eos } else { answer };
                logits[t * v + next as usize] = 1.0;
            }
        }
        Ok(ForwardOutput {
            logits,
            vocab_size: v,
            trace,
        })
    }
}

/// Rows `m + v u* + sigma eps` with `v ~ U[0, 1]` and `eps` Gaussian in the
/// orthogonal complement of `u*`; `y = v`.
#[derive(Debug, Clone)]
pub struct PlantedData {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub direction: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn planted_data(n: usize, d: usize, sigma: f64, seed: u64) -> PlantedData {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = orthonormalize(vec![gaussian_vec(&mut rng, d)]).expect("nonzero draw").remove(0);
    let mean = gaussian_vec(&mut rng, d);
    let mut y = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let v: f64 = rng.random_range(0.0..1.0);
        let mut eps = gaussian_vec(&mut rng, d);
        project_out(&mut eps, &[&direction]);
        data.extend((0..d).map(|i| mean[i] + v * direction[i] + sigma * eps[i]));
        y.push(v);
    }
    PlantedData {
        x: Matrix::from_vec(n, d, data).expect("shape"),
        y,
        direction,
        mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};
    use crate::tinylm::{argmax, generate};

    fn world() -> crate::synthworld::World {
        generate_world(&WorldConfig {
            n_entities: 40,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    fn oracle(w: &crate::synthworld::World, sigma: f64) -> OracleLm {
        let spec = OracleSpec::seeded(&w.config.properties, w.config.answer_bins, 64, 4, sigma, 5).unwrap();
        build_oracle(spec, &w.vocab(), &w.config.properties, &w.facts).unwrap()
    }

    #[test]
    fn seeded_directions_are_orthonormal() {
        let w = world();
        let spec = OracleSpec::seeded(&w.config.properties, 200, 64, 4, 0.05, 1).unwrap();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.recall_layer(), 1);
    }

    #[test]
    fn skewed_directions_rejected() {
        let w = world();
        let mut spec = OracleSpec::seeded(&w.config.properties, 200, 64, 4, 0.05, 1).unwrap();
        let u0 = spec.directions[0].1.clone();
        for (a, b) in spec.directions[1].1.iter_mut().zip(&u0) {
            *a += 1e-6 * b;
        }
        assert!(matches!(
            build_oracle(spec, &w.vocab(), &w.config.properties, &w.facts),
            Err(ModelError::NonOrthogonalDirections(_))
        ));
    }

    #[test]
    fn recall_at_embedding_layer_rejected() {
        let w = world();
        let mut spec = OracleSpec::seeded(&w.config.properties, 200, 64, 4, 0.0, 1).unwrap();
        spec.recall_layer_fraction = 0.05;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn unedited_answer_is_true_level() {
        let w = world();
        let m = oracle(&w, 0.05);
        let vocab = w.vocab();
        for f in &w.facts {
            let p = w.property(&f.property_id).unwrap();
            let prompt = vocab.render_prompt(p, &f.entity_name, true).unwrap();
            let out = generate(&m, &prompt.tokens, None, 2, vocab.eos()).unwrap();
            let gold = vocab.answer_for_value(&p.id, f.value).unwrap();
            assert_eq!(out, vec![gold, vocab.eos()], "{} {}", f.entity_name, p.id);
        }
    }

    #[test]
    fn entity_state_matches_construction() {
        let w = world();
        let m = oracle(&w, 0.0);
        let vocab = w.vocab();
        let p = &w.config.properties[0];
        let f = w.fact(3, &p.id).unwrap();
        let prompt = vocab.render_prompt(p, &f.entity_name, true).unwrap();
        let c = m.recall_layer();
        let out = m.forward(&prompt.tokens, &[(c, prompt.entity_pos)], None).unwrap();
        let u = m.spec().direction(&p.id).unwrap();
        let v = p.normalize(f.value);
        let h = out.trace.get(c, prompt.entity_pos).unwrap();
        for i in 0..64 {
            assert!((h[i] - (m.spec().mean[i] + v * u[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn staircase_along_planted_direction() {
        let w = world();
        let m = oracle(&w, 0.05);
        let vocab = w.vocab();
        let p = &w.config.properties[0];
        let f = w.fact(0, &p.id).unwrap();
        let prompt = vocab.render_prompt(p, &f.entity_name, true).unwrap();
        let u = m.spec().direction(&p.id).unwrap().to_vec();
        let c = m.recall_layer();
        let mut prev = 0;
        for s in -10..=10 {
            let patch = PatchSpec::along(&u, s as f64 * 0.1, &[(c, prompt.entity_pos)]);
            let logits = m.next_token_logits(&prompt.tokens, Some(&patch)).unwrap();
            let tok = argmax(&logits);
            assert!(tok >= prev);
            prev = tok;
        }
        // orthogonal direction leaves the answer alone
        let other = m.spec().direction(&w.config.properties[1].id).unwrap().to_vec();
        let base = m.next_token_logits(&prompt.tokens, None).unwrap();
        let patch = PatchSpec::along(&other, 3.0, &[(c, prompt.entity_pos)]);
        assert_eq!(m.next_token_logits(&prompt.tokens, Some(&patch)).unwrap(), base);
    }

    #[test]
    fn patches_before_recall_are_overwritten() {
        let w = world();
        let m = oracle(&w, 0.05);
        let vocab = w.vocab();
        let p = &w.config.properties[2];
        let f = w.fact(1, &p.id).unwrap();
        let prompt = vocab.render_prompt(p, &f.entity_name, true).unwrap();
        let u = m.spec().direction(&p.id).unwrap().to_vec();
        let base = m.next_token_logits(&prompt.tokens, None).unwrap();
        let early = PatchSpec::along(&u, 0.5, &[(0, prompt.entity_pos)]);
        assert_eq!(m.next_token_logits(&prompt.tokens, Some(&early)).unwrap(), base);
    }

    #[test]
    fn planted_data_noise_is_orthogonal() {
        let pd = planted_data(50, 16, 0.1, 9);
        for (r, &v) in pd.y.iter().enumerate() {
            let row: Vec<f64> = pd.x.row(r).iter().zip(&pd.mean).map(|(a, b)| a - b).collect();
            assert!((dot(&row, &pd.direction) - v).abs() < 1e-12);
        }
    }
}
