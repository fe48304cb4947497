//! Probing: collect entity representations and the quantities the model
//! expresses, fit PLS probes across component counts, run the shuffled-label
//! and random-representation controls, and project onto two components.

mod parse;

pub use parse::{parse_quantity, Unparseable};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regress::{
    fit_pca, fit_pls, pca_regression, r_squared, Matrix, PlsModel, PlsOptions, RegressError,
};
use crate::synthworld::{FactRecord, NumericProperty, Vocab, WorldError};
use crate::tinylm::{generate, layer_from_fraction, LanguageModel, ModelError, PatchSpec};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("every model output for {0} was unparseable")]
    AllOutputsUnparseable(String),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid probe input: {0}")]
    InvalidInput(String),
}

pub const DEFAULT_K_SWEEP: [usize; 14] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 16, 24, 32];

/// Where representations are read: a fractional layer and an offset from
/// the entity token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Locus {
    pub layer_fraction: f64,
    pub token_offset: i64,
}

impl Default for Locus {
    fn default() -> Self {
        Self {
            layer_fraction: 0.3,
            token_offset: 0,
        }
    }
}

impl Locus {
    pub fn layer(&self, n_layers: usize) -> usize {
        layer_from_fraction(self.layer_fraction, n_layers)
    }

    /// Token position, clipped to the sequence.
    pub fn position(&self, entity_pos: usize, len: usize) -> usize {
        (entity_pos as i64 + self.token_offset).clamp(0, len as i64 - 1) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    /// The quantity the model answers with.
    Expressed,
    /// The world's gold value.
    Gold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectOptions {
    pub instruction_suffix: bool,
    pub target: TargetSource,
    pub max_new: usize,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            instruction_suffix: true,
            target: TargetSource::Expressed,
            max_new: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDataset {
    pub property_id: String,
    pub x: Matrix,
    pub y: Vec<f64>,
    pub entity_ids: Vec<String>,
    pub locus: Locus,
    pub layer: usize,
    pub dropped_count: usize,
}

impl ProbeDataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }
}

/// Generated answer text and its parsed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expressed {
    pub raw: String,
    pub value: Option<f64>,
}

/// Greedy answer for one prompt, with the EOS stripped.
pub fn express<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    prompt: &[u32],
    patch: Option<&PatchSpec>,
    max_new: usize,
) -> Result<Expressed, ModelError> {
    let mut out = generate(model, prompt, patch, max_new, vocab.eos())?;
    if out.last() == Some(&vocab.eos()) {
        out.pop();
    }
    let raw = vocab.decode(&out);
    let value = parse_quantity(&raw).ok();
    Ok(Expressed { raw, value })
}

pub fn collect_expressed_quantities<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    prompts: &[Vec<u32>],
    max_new: usize,
) -> Result<Vec<Expressed>, ProbeError> {
    prompts
        .par_iter()
        .map(|p| express(model, vocab, p, None, max_new).map_err(ProbeError::from))
        .collect()
}

fn single_property<'a>(facts: &'a [FactRecord], property: &NumericProperty) -> Result<&'a [FactRecord], ProbeError> {
    if facts.is_empty() {
        return Err(ProbeError::InvalidInput("no facts".into()));
    }
    if let Some(f) = facts.iter().find(|f| f.property_id != property.id) {
        return Err(ProbeError::InvalidInput(format!(
            "fact for {} mixed into {} probe",
            f.property_id, property.id
        )));
    }
    Ok(facts)
}

/// One row per fact: the hidden state at the locus and the answer value.
/// Entities whose answer does not parse are dropped from every output.
pub fn collect_representations<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    facts: &[FactRecord],
    locus: Locus,
    opts: &CollectOptions,
) -> Result<ProbeDataset, ProbeError> {
    let facts = single_property(facts, property)?;
    let layer = locus.layer(model.n_layers());
    let rows: Vec<(Vec<f64>, Option<f64>)> = facts
        .par_iter()
        .map(|f| {
            let prompt = vocab.render_prompt(property, &f.entity_name, opts.instruction_suffix)?;
            let pos = locus.position(prompt.entity_pos, prompt.tokens.len());
            let out = model.forward(&prompt.tokens, &[(layer, pos)], None)?;
            let h = out.trace.get(layer, pos).expect("requested capture").to_vec();
            let y = match opts.target {
                TargetSource::Expressed => {
                    express(model, vocab, &prompt.tokens, None, opts.max_new)?.value
                }
                TargetSource::Gold => Some(f.value),
            };
            Ok((h, y))
        })
        .collect::<Result<_, ProbeError>>()?;

    let mut kept = Vec::new();
    let mut y = Vec::new();
    let mut entity_ids = Vec::new();
    for (f, (h, v)) in facts.iter().zip(rows) {
        if let Some(v) = v {
            kept.push(h);
            y.push(v);
            entity_ids.push(f.entity_id.clone());
        }
    }
    if kept.is_empty() {
        return Err(ProbeError::AllOutputsUnparseable(property.id.clone()));
    }
    Ok(ProbeDataset {
        property_id: property.id.clone(),
        x: Matrix::from_rows(&kept)?,
        dropped_count: facts.len() - y.len(),
        y,
        entity_ids,
        locus,
        layer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub train_r2: f64,
    pub test_r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub property_id: String,
    pub pls: Vec<CurvePoint>,
    pub pca: Vec<CurvePoint>,
    pub shuffled: Vec<CurvePoint>,
    pub random: Vec<CurvePoint>,
    pub max_test_r2: f64,
    /// Smallest k whose test R² reaches 80% / 95% of the maximum.
    pub k80: Option<usize>,
    pub k95: Option<usize>,
    /// Set when the data supported fewer components than requested.
    pub truncated_at: Option<usize>,
}

impl ProbeCurve {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    /// `k, train_r2, test_r2` plus PCA and control columns; blank where a
    /// curve stopped early.
    pub fn to_csv(&self) -> String {
        let mut ks: Vec<usize> = self
            .pls
            .iter()
            .chain(&self.pca)
            .chain(&self.shuffled)
            .chain(&self.random)
            .map(|p| p.k)
            .collect();
        ks.sort_unstable();
        ks.dedup();
        let cell = |c: &[CurvePoint], k: usize, test: bool| {
            c.iter()
                .find(|p| p.k == k)
                .map(|p| format!("{:.6}", if test { p.test_r2 } else { p.train_r2 }))
                .unwrap_or_default()
        };
        let mut out = String::from(
            "k,train_r2,test_r2,pca_train_r2,pca_test_r2,shuffled_train_r2,shuffled_test_r2,random_train_r2,random_test_r2\n",
        );
        for k in ks {
            let cols: Vec<String> = [&self.pls, &self.pca, &self.shuffled, &self.random]
                .iter()
                .flat_map(|c| [cell(c, k, false), cell(c, k, true)])
                .collect();
            out.push_str(&format!("{k},{}\n", cols.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFit {
    pub curve: ProbeCurve,
    /// Fitted at the largest supported k; smaller k use its leading
    /// components.
    pub model: PlsModel,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Row indices of the dataset split by entity membership in `test_ids`.
pub fn split_rows(dataset: &ProbeDataset, test_ids: &[String]) -> (Vec<usize>, Vec<usize>) {
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    (0..dataset.entity_ids.len()).partition(|&i| !test.contains(dataset.entity_ids[i].as_str()))
}

fn check_sweep(k_sweep: &[usize]) -> Result<(), ProbeError> {
    if k_sweep.is_empty() || k_sweep[0] == 0 || k_sweep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProbeError::InvalidInput(
            "k_sweep must be non-empty, positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// PLS at the largest k the data supports, truncating on rank exhaustion.
fn fit_pls_truncating(x: &Matrix, y: &[f64], k: usize) -> Result<(PlsModel, Option<usize>), ProbeError> {
    match fit_pls(x, y, k, PlsOptions::default()) {
        Ok(m) => Ok((m, None)),
        Err(RegressError::RankExhausted { achieved }) if achieved > 0 => {
            Ok((fit_pls(x, y, achieved, PlsOptions::default())?, Some(achieved)))
        }
        Err(e) => Err(e.into()),
    }
}

fn pls_curve(
    x: &Matrix,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    k_sweep: &[usize],
) -> Result<(Vec<CurvePoint>, PlsModel, Option<usize>), ProbeError> {
    let xtr = x.select_rows(train);
    let xte = x.select_rows(test);
    let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let kmax = *k_sweep.last().expect("non-empty sweep");
    let (model, truncated) = fit_pls_truncating(&xtr, &ytr, kmax.min(xtr.rows().saturating_sub(1)).min(xtr.cols()).max(1))?;
    let truncated = truncated.or((model.k < kmax).then_some(model.k));
    let points = k_sweep
        .iter()
        .filter(|&&k| k <= model.k)
        .map(|&k| {
            Ok(CurvePoint {
                k,
                train_r2: r_squared(&ytr, &model.predict(&xtr, k)?)?,
                test_r2: r_squared(&yte, &model.predict(&xte, k)?)?,
            })
        })
        .collect::<Result<Vec<_>, RegressError>>()?;
    Ok((points, model, truncated))
}

fn pca_curve(
    x: &Matrix,
    y: &[f64],
    train: &[usize],
    test: &[usize],
    k_sweep: &[usize],
) -> Result<Vec<CurvePoint>, ProbeError> {
    let xtr = x.select_rows(train);
    let xte = x.select_rows(test);
    let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
    let kmax = (*k_sweep.last().expect("non-empty")).min(xtr.cols());
    let pca = match fit_pca(&xtr, kmax) {
        Ok(p) => p,
        Err(RegressError::RankExhausted { achieved }) if achieved > 0 => fit_pca(&xtr, achieved)?,
        Err(e) => return Err(e.into()),
    };
    let kp = pca.components.len();
    k_sweep
        .iter()
        .filter(|&&k| k <= kp)
        .map(|&k| {
            let reg = pca_regression(&pca, &xtr, &ytr, k)?;
            Ok(CurvePoint {
                k,
                train_r2: r_squared(&ytr, &reg.predict(&pca, &xtr)?)?,
                test_r2: r_squared(&yte, &reg.predict(&pca, &xte)?)?,
            })
        })
        .collect()
}

fn threshold_k(points: &[CurvePoint], max: f64, frac: f64) -> Option<usize> {
    if !(max > 0.0) {
        return None;
    }
    points.iter().find(|p| p.test_r2 >= frac * max).map(|p| p.k)
}

/// Per-k train/test R² of PLS (and the PCA-regression baseline). Rows whose
/// entity is in `test_ids` form the test split.
pub fn fit_property_probe(
    dataset: &ProbeDataset,
    k_sweep: &[usize],
    test_ids: &[String],
) -> Result<ProbeFit, ProbeError> {
    check_sweep(k_sweep)?;
    let (train, test) = split_rows(dataset, test_ids);
    if train.len() < 2 || test.len() < 2 {
        return Err(ProbeError::InvalidInput(format!(
            "split has {} train and {} test rows; need at least 2 each",
            train.len(),
            test.len()
        )));
    }
    let (pls, model, truncated_at) = pls_curve(&dataset.x, &dataset.y, &train, &test, k_sweep)?;
    let pca = pca_curve(&dataset.x, &dataset.y, &train, &test, k_sweep)?;
    let max = pls.iter().map(|p| p.test_r2).fold(f64::NEG_INFINITY, f64::max);
    Ok(ProbeFit {
        curve: ProbeCurve {
            property_id: dataset.property_id.clone(),
            k80: threshold_k(&pls, max, 0.8),
            k95: threshold_k(&pls, max, 0.95),
            max_test_r2: max,
            pls,
            pca,
            shuffled: Vec::new(),
            random: Vec::new(),
            truncated_at,
        },
        model,
        train_rows: train,
        test_rows: test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCurves {
    pub shuffled: Vec<CurvePoint>,
    pub random: Vec<CurvePoint>,
}

/// Shuffled labels, and Gaussian noise with the per-column mean and variance
/// of X, each fitted like the real probe.
pub fn run_controls(
    dataset: &ProbeDataset,
    k_sweep: &[usize],
    test_ids: &[String],
    seed: u64,
) -> Result<ControlCurves, ProbeError> {
    check_sweep(k_sweep)?;
    let (train, test) = split_rows(dataset, test_ids);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut y_shuf = dataset.y.clone();
    y_shuf.shuffle(&mut rng);
    let shuffled = pls_curve(&dataset.x, &y_shuf, &train, &test, k_sweep)?.0;

    let (n, d) = (dataset.x.rows(), dataset.x.cols());
    let means = dataset.x.column_means();
    let stds: Vec<f64> = (0..d)
        .map(|j| {
            let var = dataset.x.iter_rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64;
            var.sqrt()
        })
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            let z: f64 = unit.sample(&mut rng);
            noise.set(i, j, means[j] + stds[j] * z);
        }
    }
    let random = pls_curve(&noise, &dataset.y, &train, &test, k_sweep)?.0;
    Ok(ControlCurves { shuffled, random })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub t1: f64,
    pub t2: f64,
    pub value: f64,
}

/// Scores of rows on the first two components paired with their values.
pub fn project_2d(model: &PlsModel, x: &Matrix, y: &[f64]) -> Result<Vec<Projection>, ProbeError> {
    if model.k < 2 {
        return Err(RegressError::DimensionMismatch(format!("model has k = {}, need 2", model.k)).into());
    }
    if x.rows() != y.len() {
        return Err(RegressError::DimensionMismatch(format!("{} rows vs {} values", x.rows(), y.len())).into());
    }
    let t = model.scores(x, 2)?;
    Ok((0..x.rows())
        .map(|i| Projection {
            t1: t.get(i, 0),
            t2: t.get(i, 1),
            value: y[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};
    use crate::tinylm::{build_oracle, planted_data, OracleLm, OracleSpec};

    fn oracle_world(sigma: f64) -> (crate::synthworld::World, OracleLm) {
        let w = generate_world(&WorldConfig {
            n_entities: 200,
            ..WorldConfig::default()
        })
        .unwrap();
        let spec = OracleSpec::seeded(&w.config.properties, w.config.answer_bins, 64, 4, sigma, 3).unwrap();
        let m = build_oracle(spec, &w.vocab(), &w.config.properties, &w.facts).unwrap();
        (w, m)
    }

    fn dataset_from(pd: &crate::tinylm::PlantedData) -> ProbeDataset {
        ProbeDataset {
            property_id: "p".into(),
            x: pd.x.clone(),
            y: pd.y.clone(),
            entity_ids: (0..pd.y.len()).map(|i| format!("Q{i}")).collect(),
            locus: Locus::default(),
            layer: 1,
            dropped_count: 0,
        }
    }

    fn test_ids(n: usize, every: usize) -> Vec<String> {
        (0..n).filter(|i| i % every == 0).map(|i| format!("Q{i}")).collect()
    }

    #[test]
    fn oracle_rows_are_planted_states() {
        let (w, m) = oracle_world(0.0);
        let vocab = w.vocab();
        let p = w.property("birthyear").unwrap();
        let facts = w.facts_for("birthyear", &(0..50).collect::<Vec<_>>()).unwrap();
        let ds = collect_representations(&m, &vocab, p, &facts, Locus::default(), &CollectOptions::default()).unwrap();
        assert_eq!(ds.dropped_count, 0);
        assert_eq!((ds.x.rows(), ds.x.cols()), (50, 64));
        let u = m.spec().direction("birthyear").unwrap();
        for (i, f) in facts.iter().enumerate() {
            let v = p.normalize(f.value);
            for j in 0..64 {
                assert!((ds.x.get(i, j) - (m.spec().mean[j] + v * u[j])).abs() < 1e-12);
            }
            // expressed quantity equals the gold year
            assert_eq!(ds.y[i], f.value);
        }
    }

    #[test]
    fn mixed_properties_rejected() {
        let (w, m) = oracle_world(0.0);
        let p = w.property("birthyear").unwrap();
        let facts = &w.facts[..3];
        assert!(matches!(
            collect_representations(&m, &w.vocab(), p, facts, Locus::default(), &CollectOptions::default()),
            Err(ProbeError::InvalidInput(_))
        ));
    }

    #[test]
    fn expressed_quantities_parse_or_flag() {
        let (w, m) = oracle_world(0.0);
        let vocab = w.vocab();
        let p = w.property("population").unwrap();
        let facts = w.facts_for("population", &[0, 1, 2]).unwrap();
        let prompts: Vec<Vec<u32>> = facts
            .iter()
            .map(|f| vocab.render_prompt(p, &f.entity_name, true).unwrap().tokens)
            .collect();
        let ex = collect_expressed_quantities(&m, &vocab, &prompts, 2).unwrap();
        for (e, f) in ex.iter().zip(&facts) {
            let q = vocab.quantizer("population").unwrap();
            assert_eq!(e.raw, q.label(q.level_of(f.value)));
            assert!(e.value.is_some());
        }
        // a prompt without an entity yields no answer, which is flagged
        let junk = collect_expressed_quantities(&m, &vocab, &[vec![vocab.bos()]], 2).unwrap();
        assert_eq!(junk[0].value, None);
    }

    #[test]
    fn one_dimensional_signal_saturates_at_k1() {
        let pd = planted_data(300, 16, 0.0, 4);
        let ds = dataset_from(&pd);
        let fit = fit_property_probe(&ds, &DEFAULT_K_SWEEP, &test_ids(300, 5)).unwrap();
        assert_eq!(fit.curve.truncated_at, Some(1));
        assert_eq!(fit.curve.pls.len(), 1);
        assert_eq!(fit.curve.k95, Some(1));
        assert!(fit.curve.max_test_r2 > 0.999_999);
    }

    #[test]
    fn single_k_sweep_gives_single_point() {
        let pd = planted_data(100, 8, 0.1, 2);
        let fit = fit_property_probe(&dataset_from(&pd), &[1], &test_ids(100, 4)).unwrap();
        assert_eq!(fit.curve.pls.len(), 1);
    }

    #[test]
    fn bad_sweeps_rejected() {
        let pd = planted_data(40, 4, 0.1, 2);
        let ds = dataset_from(&pd);
        for bad in [&[][..], &[0, 1], &[3, 2], &[2, 2]] {
            assert!(fit_property_probe(&ds, bad, &test_ids(40, 4)).is_err());
        }
    }

    #[test]
    fn train_r2_non_decreasing_and_test_bounded() {
        let pd = planted_data(200, 24, 0.3, 8);
        let fit = fit_property_probe(&dataset_from(&pd), &DEFAULT_K_SWEEP, &test_ids(200, 5)).unwrap();
        for w in fit.curve.pls.windows(2) {
            assert!(w[1].train_r2 >= w[0].train_r2 - 1e-12);
        }
        assert!(fit.curve.pls.iter().all(|p| p.test_r2 <= 1.0));
    }

    #[test]
    fn controls_fail_to_predict() {
        let pd = planted_data(500, 64, 0.05, 11);
        let ds = dataset_from(&pd);
        let c = run_controls(&ds, &DEFAULT_K_SWEEP, &test_ids(500, 5), 3).unwrap();
        for p in c.shuffled.iter().chain(&c.random) {
            assert!(p.test_r2 <= 0.1, "{p:?}");
        }
        assert_eq!(c, run_controls(&ds, &DEFAULT_K_SWEEP, &test_ids(500, 5), 3).unwrap());
    }

    #[test]
    fn projection_first_score_tracks_value() {
        let pd = planted_data(200, 16, 0.05, 6);
        let ds = dataset_from(&pd);
        let fit = fit_property_probe(&ds, &[1, 2], &test_ids(200, 4)).unwrap();
        let xte = ds.x.select_rows(&fit.test_rows);
        let yte: Vec<f64> = fit.test_rows.iter().map(|&i| ds.y[i]).collect();
        let proj = project_2d(&fit.model, &xte, &yte).unwrap();
        assert_eq!(proj.len(), fit.test_rows.len());
        let series = crate::stats::RankedPairSeries::new(
            proj.iter().map(|p| p.value).collect(),
            proj.iter().map(|p| p.t1).collect(),
        )
        .unwrap();
        assert!(crate::stats::spearman_rho(&series) > 0.98);
        // held-out scores are centred within three standard errors
        let n = proj.len() as f64;
        let mean = proj.iter().map(|p| p.t1).sum::<f64>() / n;
        let sd = (proj.iter().map(|p| (p.t1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() <= 3.0 * sd / n.sqrt());
    }

    #[test]
    fn projection_needs_two_components() {
        let pd = planted_data(50, 8, 0.1, 1);
        let fit = fit_property_probe(&dataset_from(&pd), &[1], &test_ids(50, 5)).unwrap();
        assert!(project_2d(&fit.model, &pd.x, &pd.y).is_err());
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let pd = planted_data(120, 8, 0.1, 1);
        let ds = dataset_from(&pd);
        let ids = test_ids(120, 4);
        let mut fit = fit_property_probe(&ds, &[1, 2, 4], &ids).unwrap();
        let c = run_controls(&ds, &[1, 2, 4], &ids, 0).unwrap();
        fit.curve.shuffled = c.shuffled;
        fit.curve.random = c.random;
        let csv = fit.curve.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("k,train_r2,test_r2"));
        assert_eq!(lines[1].split(',').count(), 9);
        let back: ProbeCurve = serde_json::from_str(&fit.curve.to_json()).unwrap();
        assert_eq!(back, fit.curve);
    }
}
