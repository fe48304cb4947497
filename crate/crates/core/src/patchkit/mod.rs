//! Directed activation patching along probe directions: edit-weight
//! schedules, per-entity sweeps with layer and token windows, per-component
//! tables, edit-locus search and the cross-property side-effect matrix.

mod locus;
mod side;

pub use locus::{search_edit_locus, LocusCell, LocusGrid, LocusSearch};
pub use side::{run_side_effect_matrix, SideEffectResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe::{express, Locus, ProbeError};
use crate::regress::{PlsModel, RegressError};
use crate::stats::{aggregate_effects, spearman_rho, EffectSummary, RankedPairSeries, StatsError};
use crate::synthworld::{FactRecord, NumericProperty, Vocab, WorldError};
use crate::tinylm::{LanguageModel, ModelError, PatchSpec};

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("no probe for property {0}")]
    MissingProbe(String),
    #[error("locus grid is empty")]
    EmptyGrid,
    #[error("invalid patch input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub const DEFAULT_STEPS: usize = 80;
pub const DEFAULT_LAYER_WINDOW: usize = 2;
pub const DEFAULT_TOKEN_WINDOW: (i64, i64) = (-2, 1);

/// `steps` values spaced evenly over `[lo, hi]`, with 0 added when absent.
/// Values within `1e-12 * (hi - lo)` of zero are snapped to it.
fn schedule_over(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>, PatchError> {
    if steps < 3 {
        return Err(PatchError::InvalidInput(format!("need at least 3 steps, got {steps}")));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(RegressError::DimensionMismatch(format!("degenerate score range [{lo}, {hi}]")).into());
    }
    let snap = 1e-12 * (hi - lo);
    let mut out: Vec<f64> = (0..steps)
        .map(|i| {
            let a = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
            if a.abs() <= snap {
                0.0
            } else {
                a
            }
        })
        .collect();
    if !out.contains(&0.0) {
        out.push(0.0);
        out.sort_by(f64::total_cmp);
    }
    Ok(out)
}

/// Edit weights for component `k` (1-based) over its training score range.
pub fn make_alpha_schedule(model: &PlsModel, k: usize, steps: usize) -> Result<Vec<f64>, PatchError> {
    if k == 0 || k > model.k {
        return Err(RegressError::DimensionMismatch(format!("component {k} outside 1..={}", model.k)).into());
    }
    let (lo, hi) = model.train_score_range[k - 1];
    schedule_over(lo, hi, steps)
}

fn normalize_alphas(alphas: &[f64]) -> Vec<f64> {
    let m = alphas.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    alphas.iter().map(|a| a / m).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPlan {
    pub property_id: String,
    /// 1-based component of the probe.
    pub component: usize,
    pub direction: Vec<f64>,
    pub score_range: (f64, f64),
    pub alpha_schedule: Vec<f64>,
    pub normalized_alphas: Vec<f64>,
    pub locus: Locus,
    pub layer_window: usize,
    /// Inclusive offsets from the entity token.
    pub token_window: (i64, i64),
}

impl PatchPlan {
    /// Plan along component `k` of a fitted probe with the default windows.
    pub fn from_probe(
        property_id: &str,
        probe: &PlsModel,
        k: usize,
        steps: usize,
        locus: Locus,
    ) -> Result<Self, PatchError> {
        make_alpha_schedule(probe, k, steps)?;
        // oriented so that a positive edit raises the probe's prediction
        let sign = if probe.y_loadings[k - 1] < 0.0 { -1.0 } else { 1.0 };
        let direction: Vec<f64> = probe.direction(k - 1).iter().map(|v| sign * v).collect();
        let (lo, hi) = probe.train_score_range[k - 1];
        let score_range = if sign < 0.0 { (-hi, -lo) } else { (lo, hi) };
        let alpha_schedule = schedule_over(score_range.0, score_range.1, steps)?;
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(PatchError::InvalidInput(format!("direction norm {norm}")));
        }
        Ok(Self {
            property_id: property_id.into(),
            component: k,
            direction,
            score_range,
            normalized_alphas: normalize_alphas(&alpha_schedule),
            alpha_schedule,
            locus,
            layer_window: DEFAULT_LAYER_WINDOW,
            token_window: DEFAULT_TOKEN_WINDOW,
        })
    }

    /// Same direction and range with a different number of steps.
    pub fn with_steps(&self, steps: usize) -> Result<Self, PatchError> {
        let alpha_schedule = schedule_over(self.score_range.0, self.score_range.1, steps)?;
        Ok(Self {
            normalized_alphas: normalize_alphas(&alpha_schedule),
            alpha_schedule,
            ..self.clone()
        })
    }

    /// Distinct `(layer, position)` cells of the edit window, clipped to
    /// layers `0..=n_layers` and positions `0..len`.
    pub fn edit_points(&self, n_layers: usize, entity_pos: usize, len: usize) -> Vec<(usize, usize)> {
        let c = self.locus.layer(n_layers);
        let layers = c.saturating_sub(self.layer_window)..=(c + self.layer_window).min(n_layers);
        let lo = (entity_pos as i64 + self.token_window.0).max(0);
        let hi = (entity_pos as i64 + self.token_window.1).min(len as i64 - 1);
        let mut out = Vec::new();
        for l in layers {
            for p in lo..=hi {
                out.push((l, p as usize));
            }
        }
        out
    }

    fn check(&self, d_model: usize) -> Result<(), PatchError> {
        if self.direction.len() != d_model {
            return Err(PatchError::InvalidInput(format!(
                "direction has {} entries, model width is {d_model}",
                self.direction.len()
            )));
        }
        if self.alpha_schedule.len() < 3 || self.alpha_schedule.len() != self.normalized_alphas.len() {
            return Err(PatchError::InvalidInput("schedule needs at least 3 steps".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub s: usize,
    pub alpha: f64,
    pub normalized_alpha: f64,
    pub raw_answer: String,
    pub parsed_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySweep {
    pub entity_id: String,
    pub entity_name: String,
    pub gold: f64,
    pub points: Vec<SweepPoint>,
    /// `None` when fewer than 3 outputs parsed.
    pub rho: Option<f64>,
}

impl EntitySweep {
    pub fn series(&self) -> Option<RankedPairSeries> {
        let (a, y): (Vec<f64>, Vec<f64>) = self
            .points
            .iter()
            .filter_map(|p| p.parsed_value.map(|v| (p.alpha, v)))
            .unzip();
        RankedPairSeries::new(a, y).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionSweep {
    /// Property whose direction was patched.
    pub property_id: String,
    /// Property the prompts asked for; equals `property_id` for a plain sweep.
    pub prompted_property_id: String,
    pub component: usize,
    pub locus: Locus,
    pub alpha_schedule: Vec<f64>,
    pub normalized_alphas: Vec<f64>,
    pub entities: Vec<EntitySweep>,
    pub n_excluded: usize,
    pub summary: Option<EffectSummary>,
}

impl InterventionSweep {
    pub fn mean_rho(&self) -> Option<f64> {
        self.summary.as_ref().map(|s| s.mean_rho)
    }

    /// Per-entity series with at least 3 parsed points.
    pub fn series(&self) -> Vec<RankedPairSeries> {
        self.entities.iter().filter_map(EntitySweep::series).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(["entity_id", "s", "alpha", "normalized_alpha", "raw_answer", "parsed_value", "dropped"])
            .expect("in-memory write");
        for e in &self.entities {
            for p in &e.points {
                w.write_record([
                    e.entity_id.clone(),
                    p.s.to_string(),
                    format!("{:.9}", p.alpha),
                    format!("{:.6}", p.normalized_alpha),
                    p.raw_answer.clone(),
                    p.parsed_value.map(|v| v.to_string()).unwrap_or_default(),
                    p.parsed_value.is_none().to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Patches `plan` into prompts for `prompted`, one entity per fact.
fn sweep_core<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    prompted: &NumericProperty,
    facts: &[FactRecord],
    plan: &PatchPlan,
    max_new: usize,
) -> Result<InterventionSweep, PatchError> {
    plan.check(model.d_model())?;
    if let Some(f) = facts.iter().find(|f| f.property_id != prompted.id) {
        return Err(PatchError::InvalidInput(format!(
            "fact for {} in a {} sweep",
            f.property_id, prompted.id
        )));
    }
    let entities: Vec<EntitySweep> = facts
        .par_iter()
        .map(|f| {
            let prompt = vocab.render_prompt(prompted, &f.entity_name, true)?;
            let cells = plan.edit_points(model.n_layers(), prompt.entity_pos, prompt.tokens.len());
            let mut points = Vec::with_capacity(plan.alpha_schedule.len());
            for (s, (&alpha, &na)) in plan.alpha_schedule.iter().zip(&plan.normalized_alphas).enumerate() {
                let patch = PatchSpec::along(&plan.direction, alpha, &cells);
                let out = express(model, vocab, &prompt.tokens, Some(&patch), max_new)?;
                points.push(SweepPoint {
                    s,
                    alpha,
                    normalized_alpha: na,
                    raw_answer: out.raw,
                    parsed_value: out.value,
                });
            }
            let mut e = EntitySweep {
                entity_id: f.entity_id.clone(),
                entity_name: f.entity_name.clone(),
                gold: f.value,
                points,
                rho: None,
            };
            e.rho = e.series().map(|s| spearman_rho(&s));
            Ok(e)
        })
        .collect::<Result<_, PatchError>>()?;

    let series: Vec<RankedPairSeries> = entities.iter().filter_map(EntitySweep::series).collect();
    let n_excluded = entities.len() - series.len();
    let summary = if series.is_empty() {
        None
    } else {
        Some(aggregate_effects(&series)?)
    };
    Ok(InterventionSweep {
        property_id: plan.property_id.clone(),
        prompted_property_id: prompted.id.clone(),
        component: plan.component,
        locus: plan.locus,
        alpha_schedule: plan.alpha_schedule.clone(),
        normalized_alphas: plan.normalized_alphas.clone(),
        entities,
        n_excluded,
        summary,
    })
}

/// For each entity and edit weight, patches along the plan's direction at
/// every cell of its window and greedily decodes the answer. The patch is
/// held at the prompt positions for every decoding step.
pub fn run_intervention_sweep<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    facts: &[FactRecord],
    plan: &PatchPlan,
    max_new: usize,
) -> Result<InterventionSweep, PatchError> {
    if plan.property_id != property.id {
        return Err(PatchError::InvalidInput(format!(
            "plan for {} used on {}",
            plan.property_id, property.id
        )));
    }
    sweep_core(model, vocab, property, facts, plan, max_new)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentSelection {
    /// Always the first component.
    First,
    /// The candidate with the highest mean rho on dev entities.
    BestOnDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentChoice {
    pub component: usize,
    /// `(k, mean rho)` per candidate; empty for `First`.
    pub dev_rho: Vec<(usize, f64)>,
}

/// Picks the component to patch. Candidates with no usable dev series score 0.
#[allow(clippy::too_many_arguments)]
pub fn select_component<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    probe: &PlsModel,
    dev_facts: &[FactRecord],
    locus: Locus,
    mode: ComponentSelection,
    candidates: &[usize],
    steps: usize,
    max_new: usize,
) -> Result<ComponentChoice, PatchError> {
    match mode {
        ComponentSelection::First => Ok(ComponentChoice {
            component: 1,
            dev_rho: Vec::new(),
        }),
        ComponentSelection::BestOnDev => {
            let mut dev_rho = Vec::new();
            let mut best = (1, f64::NEG_INFINITY);
            for &k in candidates.iter().filter(|&&k| k >= 1 && k <= probe.k) {
                let plan = PatchPlan::from_probe(&property.id, probe, k, steps, locus)?;
                let rho = run_intervention_sweep(model, vocab, property, dev_facts, &plan, max_new)?
                    .mean_rho()
                    .unwrap_or(0.0);
                dev_rho.push((k, rho));
                if rho > best.1 {
                    best = (k, rho);
                }
            }
            if dev_rho.is_empty() {
                return Err(PatchError::InvalidInput("no candidate component within the probe".into()));
            }
            Ok(ComponentChoice {
                component: best.0,
                dev_rho,
            })
        }
    }
}

/// One entity's answers per edit weight, one column per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    pub property_id: String,
    pub entity_id: String,
    pub entity_name: String,
    pub gold: f64,
    /// Row labels, descending.
    pub normalized_alphas: Vec<f64>,
    pub components: Vec<usize>,
    /// `values[row][col]`.
    pub values: Vec<Vec<Option<f64>>>,
    pub raw: Vec<Vec<String>>,
    pub rho: Vec<Option<f64>>,
}

impl ComponentTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("normalized_alpha");
        for k in &self.components {
            out.push_str(&format!(",k{k}"));
        }
        out.push('\n');
        for (a, row) in self.normalized_alphas.iter().zip(&self.values) {
            out.push_str(&format!("{a:.2}"));
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out.push_str("rho");
        for r in &self.rho {
            out.push(',');
            if let Some(r) = r {
                out.push_str(&format!("{r:.2}"));
            }
        }
        out.push('\n');
        out
    }
}

/// Rows share a normalized grid `linspace(-1, 1, steps)`; for component k
/// the edit weight is the grid value times the largest `|score|` of k.
#[allow(clippy::too_many_arguments)]
pub fn component_table<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    fact: &FactRecord,
    probe: &PlsModel,
    components: &[usize],
    steps: usize,
    locus: Locus,
    max_new: usize,
) -> Result<ComponentTable, PatchError> {
    let grid = schedule_over(-1.0, 1.0, steps)?;
    let rows = grid.len();
    let mut values = vec![Vec::with_capacity(components.len()); rows];
    let mut raw = vec![Vec::with_capacity(components.len()); rows];
    let mut rho = Vec::with_capacity(components.len());
    for &k in components {
        let mut plan = PatchPlan::from_probe(&property.id, probe, k, 3, locus)?;
        let scale = plan.score_range.0.abs().max(plan.score_range.1.abs());
        plan.alpha_schedule = grid.iter().map(|g| g * scale).collect();
        plan.normalized_alphas = grid.clone();
        let sweep = run_intervention_sweep(model, vocab, property, std::slice::from_ref(fact), &plan, max_new)?;
        let e = &sweep.entities[0];
        // descending rows
        for (row, p) in e.points.iter().rev().enumerate() {
            values[row].push(p.parsed_value);
            raw[row].push(p.raw_answer.clone());
        }
        rho.push(e.rho);
    }
    Ok(ComponentTable {
        property_id: property.id.clone(),
        entity_id: fact.entity_id.clone(),
        entity_name: fact.entity_name.clone(),
        gold: fact.value,
        normalized_alphas: grid.into_iter().rev().collect(),
        components: components.to_vec(),
        values,
        raw,
        rho,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::probe::{collect_representations, CollectOptions};
    use crate::regress::{fit_pls, Matrix, PlsOptions};
    use crate::synthworld::{generate_world, World, WorldConfig};
    use crate::tinylm::{build_oracle, OracleLm, OracleSpec};

    pub(crate) fn oracle_world(n: usize) -> (World, Vocab, OracleLm) {
        let w = generate_world(&WorldConfig {
            n_entities: n,
            ..WorldConfig::default()
        })
        .unwrap();
        let vocab = w.vocab();
        let spec = OracleSpec::seeded(&w.config.properties, w.config.answer_bins, 32, 4, 0.05, 5).unwrap();
        let m = build_oracle(spec, &vocab, &w.config.properties, &w.facts).unwrap();
        (w, vocab, m)
    }

    pub(crate) fn oracle_probe(w: &World, vocab: &Vocab, m: &OracleLm, property: &str) -> PlsModel {
        let p = w.property(property).unwrap();
        let facts = w.facts_for(property, &w.train_entities).unwrap();
        let ds = collect_representations(m, vocab, p, &facts, Locus::default(), &CollectOptions::default()).unwrap();
        fit_pls(&ds.x, &ds.y, 2, PlsOptions::default()).unwrap()
    }

    fn toy_probe(lo: f64, hi: f64) -> PlsModel {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let mut m = fit_pls(&x, &[1.0, 2.0, 4.0, 3.0], 1, PlsOptions::default()).unwrap();
        m.train_score_range = vec![(lo, hi)];
        m
    }

    #[test]
    fn symmetric_schedule() {
        let s = make_alpha_schedule(&toy_probe(-2.0, 2.0), 1, 5).unwrap();
        assert_eq!(s, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_inserted_for_one_sided_and_offset_ranges() {
        let s = make_alpha_schedule(&toy_probe(0.5, 2.0), 1, 4).unwrap();
        assert_eq!(s, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let s = make_alpha_schedule(&toy_probe(-1.0, 2.0), 1, 4).unwrap();
        assert_eq!(s, vec![-1.0, 0.0, 1.0, 2.0]);
        let s = make_alpha_schedule(&toy_probe(-1.0, 0.5), 1, 4).unwrap();
        assert!(s.contains(&0.0) && s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn schedule_rejects_bad_inputs() {
        assert!(matches!(
            make_alpha_schedule(&toy_probe(-1.0, 1.0), 2, 5),
            Err(PatchError::Regress(RegressError::DimensionMismatch(_)))
        ));
        assert!(make_alpha_schedule(&toy_probe(-1.0, 1.0), 1, 2).is_err());
        assert!(make_alpha_schedule(&toy_probe(1.0, 1.0), 1, 5).is_err());
    }

    #[test]
    fn oracle_schedule_matches_score_extrema() {
        let (w, vocab, m) = oracle_world(60);
        let p = w.property("birthyear").unwrap();
        let facts = w.facts_for("birthyear", &w.train_entities).unwrap();
        let ds = collect_representations(&m, &vocab, p, &facts, Locus::default(), &CollectOptions::default()).unwrap();
        let probe = fit_pls(&ds.x, &ds.y, 1, PlsOptions::default()).unwrap();
        // independent: project centered rows on the weight vector
        let w1 = probe.direction(0);
        let scores: Vec<f64> = ds
            .x
            .iter_rows()
            .map(|r| r.iter().zip(&probe.x_mean).zip(w1).map(|((a, b), c)| (a - b) * c).sum())
            .collect();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s = make_alpha_schedule(&probe, 1, 80).unwrap();
        assert!((s[0] - lo).abs() < 1e-9 && (s[s.len() - 1] - hi).abs() < 1e-9);
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn plan_invariants() {
        let plan = PatchPlan::from_probe("p", &toy_probe(-1.0, 3.0), 1, 9, Locus::default()).unwrap();
        let n: f64 = plan.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert!(plan.alpha_schedule.windows(2).all(|w| w[0] < w[1]));
        assert!(plan.normalized_alphas.iter().all(|a| (-1.0..=1.0).contains(a)));
        assert_eq!(plan.normalized_alphas.last(), Some(&1.0));
        let p2 = plan.with_steps(3).unwrap();
        assert_eq!(p2.alpha_schedule, vec![-1.0, 0.0, 1.0, 3.0]);
    }

    #[test]
    fn window_is_clipped() {
        let plan = PatchPlan::from_probe("p", &toy_probe(-1.0, 1.0), 1, 3, Locus::default()).unwrap();
        // 4 layers: centre 1, layers 0..=3; entity at 1 of 5 tokens: positions 0..=2
        let pts = plan.edit_points(4, 1, 5);
        assert_eq!(pts.len(), 4 * 3);
        assert!(pts.iter().all(|&(l, p)| l <= 4 && p < 5));
        assert_eq!(pts.first(), Some(&(0, 0)));
        assert_eq!(pts.last(), Some(&(3, 2)));
        let end = PatchPlan {
            locus: Locus {
                layer_fraction: 1.0,
                token_offset: 0,
            },
            ..plan
        };
        let pts = end.edit_points(4, 4, 5);
        assert!(pts.iter().all(|&(l, p)| (2..=4).contains(&l) && (2..5).contains(&p)));
        assert_eq!(pts.len(), 3 * 3);
    }

    #[test]
    fn oracle_sweep_is_monotone_and_zero_row_is_unedited() {
        let (w, vocab, m) = oracle_world(150);
        let probe = oracle_probe(&w, &vocab, &m, "birthyear");
        let p = w.property("birthyear").unwrap();
        let plan = PatchPlan::from_probe("birthyear", &probe, 1, 21, Locus::default()).unwrap();
        let test = w.facts_for("birthyear", &w.test_entities).unwrap();
        let sweep = run_intervention_sweep(&m, &vocab, p, &test, &plan, 2).unwrap();
        assert_eq!(sweep.entities.len(), test.len());
        let zero = plan.alpha_schedule.iter().position(|a| *a == 0.0).unwrap();
        for (e, f) in sweep.entities.iter().zip(&test) {
            let prompt = vocab.render_prompt(p, &f.entity_name, true).unwrap();
            let unedited = express(&m, &vocab, &prompt.tokens, None, 2).unwrap();
            assert_eq!(e.points[zero].raw_answer, unedited.raw);
            let ys: Vec<f64> = e.points.iter().map(|p| p.parsed_value.unwrap()).collect();
            assert!(ys.windows(2).all(|w| w[0] <= w[1]), "{ys:?}");
            assert!(e.rho.unwrap() >= -1.0 && e.rho.unwrap() <= 1.0);
        }
        assert!(sweep.mean_rho().unwrap() >= 0.95, "{:?}", sweep.mean_rho());
        assert_eq!(sweep.n_excluded, 0);
    }

    #[test]
    fn sweep_is_deterministic_and_serializes() {
        let (w, vocab, m) = oracle_world(40);
        let probe = oracle_probe(&w, &vocab, &m, "elevation");
        let p = w.property("elevation").unwrap();
        let plan = PatchPlan::from_probe("elevation", &probe, 1, 5, Locus::default()).unwrap();
        let test = w.facts_for("elevation", &w.test_entities).unwrap();
        let a = run_intervention_sweep(&m, &vocab, p, &test, &plan, 2).unwrap();
        let b = run_intervention_sweep(&m, &vocab, p, &test, &plan, 2).unwrap();
        assert_eq!(a, b);
        let csv = a.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("entity_id,s,alpha,normalized_alpha,raw_answer,parsed_value,dropped")
        );
        assert_eq!(lines.count(), test.len() * plan.alpha_schedule.len());
        let back: InterventionSweep = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(back.entities.len(), a.entities.len());
    }

    #[test]
    fn mismatched_plan_rejected() {
        let (w, vocab, m) = oracle_world(20);
        let probe = oracle_probe(&w, &vocab, &m, "elevation");
        let plan = PatchPlan::from_probe("elevation", &probe, 1, 5, Locus::default()).unwrap();
        let p = w.property("birthyear").unwrap();
        let facts = w.facts_for("birthyear", &w.test_entities).unwrap();
        assert!(matches!(
            run_intervention_sweep(&m, &vocab, p, &facts, &plan, 2),
            Err(PatchError::InvalidInput(_))
        ));
    }

    #[test]
    fn component_table_shape() {
        let (w, vocab, m) = oracle_world(40);
        let probe = oracle_probe(&w, &vocab, &m, "birthyear");
        let p = w.property("birthyear").unwrap();
        let fact = w.fact(w.test_entities[0], "birthyear").unwrap();
        let t = component_table(&m, &vocab, p, fact, &probe, &[1, 2], 9, Locus::default(), 2).unwrap();
        assert_eq!(t.normalized_alphas.first(), Some(&1.0));
        assert_eq!(t.normalized_alphas.last(), Some(&-1.0));
        assert!(t.normalized_alphas.windows(2).all(|w| w[0] > w[1]));
        assert!(t.values.iter().all(|r| r.len() == 2));
        let csv = t.to_csv();
        assert!(csv.starts_with("normalized_alpha,k1,k2\n1.00,"));
        assert!(csv.lines().last().unwrap().starts_with("rho,"));
        // component 1 is the planted direction
        assert!(t.rho[0].unwrap() > 0.9);
    }

    #[test]
    fn best_on_dev_scores_each_candidate() {
        let (w, vocab, m) = oracle_world(40);
        let probe = oracle_probe(&w, &vocab, &m, "birthyear");
        let p = w.property("birthyear").unwrap();
        let dev = w.facts_for("birthyear", &w.test_entities).unwrap();
        let c = select_component(&m, &vocab, p, &probe, &dev, Locus::default(), ComponentSelection::BestOnDev, &[1, 2, 7], 7, 2)
            .unwrap();
        assert_eq!(c.dev_rho.len(), 2, "{c:?}");
        let best = c.dev_rho.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(c.component, best.0);
        let f = select_component(&m, &vocab, p, &probe, &dev, Locus::default(), ComponentSelection::First, &[2], 7, 2).unwrap();
        assert_eq!(f.component, 1);
    }
}
