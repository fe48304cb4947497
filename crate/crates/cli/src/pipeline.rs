//! Pipeline stages. Each stage is a function over in-memory values plus a
//! pair of helpers that persist its outputs under the run directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use numrep::patchkit::{
    component_table, run_intervention_sweep, run_side_effect_matrix, search_edit_locus, select_component,
    ComponentChoice, ComponentTable, InterventionSweep, LocusSearch, PatchPlan, SideEffectResult,
};
use numrep::probe::{
    collect_representations, express, fit_property_probe, project_2d, run_controls, CollectOptions, ProbeDataset,
};
use numrep::regress::PlsModel;
use numrep::report::{ProbeReport, RunResults};
use numrep::synthworld::{generate_world, FactRecord, NumericProperty, Vocab, World};
use numrep::tinylm::{
    answer_accuracy, build_oracle, build_training_set, load_checkpoint, save_checkpoint, train, LanguageModel,
    LossCurve, OracleLm, OracleSpec, TinyLm,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

/// Accuracy, R² and rho levels the trained model is expected to reach.
pub const EMERGENCE_ACCURACY: f64 = 0.95;
pub const EMERGENCE_R2: f64 = 0.8;
pub const EMERGENCE_MAX_K: usize = 8;
pub const EMERGENCE_RHO: f64 = 0.6;

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Files of a run directory.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn world(&self) -> PathBuf {
        self.root.join("data/world.json")
    }

    pub fn facts(&self) -> PathBuf {
        self.root.join("data/facts.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.json")
    }

    pub fn train_info(&self) -> PathBuf {
        self.root.join("model/train.json")
    }

    pub fn result(&self, name: &str) -> PathBuf {
        self.root.join("results").join(format!("{name}.json"))
    }

    pub fn require(&self, path: &Path, what: &str) -> Result<(), CliError> {
        if path.is_file() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "missing {what} at {}; run the earlier stage first",
                path.display()
            )))
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| rt(format!("{}: {e}", dir.display())))?;
    }
    let mut s = serde_json::to_string_pretty(value).map_err(rt)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| rt(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| rt(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| rt(format!("{}: {e}", path.display())))
}

/// Entity splits: dev entities are carved from the world's training
/// entities; probes train on the remainder.
pub struct Splits {
    pub probe_train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn splits(cfg: &RunConfig, world: &World) -> Result<Splits, CliError> {
    let mut pool = world.train_entities.clone();
    if pool.len() <= cfg.n_dev + 1 {
        return Err(CliError::Config(format!(
            "invalid config field `n_dev`: {} dev entities leave too few of {} training entities",
            cfg.n_dev,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6465_7673);
    pool.shuffle(&mut rng);
    let mut dev = pool[..cfg.n_dev].to_vec();
    let mut probe_train = pool[cfg.n_dev..].to_vec();
    dev.sort_unstable();
    probe_train.sort_unstable();
    let test: Vec<usize> = world.test_entities.iter().copied().take(cfg.n_test).collect();
    Ok(Splits { probe_train, dev, test })
}

pub fn gen_data(cfg: &RunConfig) -> Result<World, CliError> {
    generate_world(&cfg.world()?).map_err(rt)
}

pub fn save_world(dir: &RunDir, world: &World) -> Result<(), CliError> {
    write_json(&dir.world(), world)?;
    FactRecord::save_all(&dir.facts(), &world.facts).map_err(rt)
}

pub fn oracle_model(cfg: &RunConfig, world: &World, vocab: &Vocab) -> Result<OracleLm, CliError> {
    let shape = cfg.shape()?;
    let spec = OracleSpec {
        max_seq_len: shape.max_seq_len,
        recall_layer_fraction: cfg.locus.layer_fraction,
        ..OracleSpec::seeded(
            &world.config.properties,
            world.config.answer_bins,
            shape.d_model,
            shape.n_layers,
            cfg.oracle_sigma,
            cfg.seed,
        )
        .map_err(|e| CliError::Config(format!("invalid config field `model_config`: {e}")))?
    };
    build_oracle(spec, vocab, &world.config.properties, &world.facts).map_err(rt)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainInfo {
    pub accuracy: f64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub curve: LossCurve,
}

pub fn train_model(cfg: &RunConfig, world: &World, vocab: &Vocab) -> Result<(TinyLm, TrainInfo), CliError> {
    let shape = cfg.shape()?;
    let examples = build_training_set(
        vocab,
        &world.config.properties,
        &world.facts,
        cfg.instruction_suffix,
        shape.max_seq_len,
    )
    .map_err(rt)?;
    let mut model = TinyLm::new(shape.config(vocab.len(), cfg.seed)).map_err(rt)?;
    let tc = numrep::tinylm::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let curve = train(&mut model, &examples, &tc, |e, l| {
        eprintln!("epoch {:>3}  loss {l:.4}", e + 1);
    })
    .map_err(rt)?;
    let accuracy = answer_accuracy(&model, &examples);
    eprintln!("training-fact accuracy {accuracy:.4}");
    let info = TrainInfo {
        accuracy,
        epochs: tc.epochs,
        final_loss: curve.epoch_mean.last().copied(),
        curve,
    };
    Ok((model, info))
}

pub fn save_model(dir: &RunDir, model: &TinyLm, vocab: &Vocab, info: &TrainInfo) -> Result<(), CliError> {
    std::fs::create_dir_all(dir.root.join("model")).map_err(rt)?;
    save_checkpoint(&dir.checkpoint(), model, &vocab.hash()).map_err(rt)?;
    write_json(&dir.train_info(), info)
}

pub enum Model {
    Trained(Box<TinyLm>),
    Oracle(Box<OracleLm>),
}

impl Model {
    pub fn lm(&self) -> &dyn LanguageModel {
        match self {
            Model::Trained(m) => m.as_ref(),
            Model::Oracle(m) => m.as_ref(),
        }
    }
}

/// The oracle is rebuilt from the world; a trained model is read from its
/// checkpoint.
pub fn load_model(cfg: &RunConfig, dir: &RunDir, world: &World, vocab: &Vocab) -> Result<Model, CliError> {
    if cfg.oracle {
        return Ok(Model::Oracle(Box::new(oracle_model(cfg, world, vocab)?)));
    }
    let m = load_checkpoint(&dir.checkpoint(), &vocab.hash()).map_err(rt)?;
    Ok(Model::Trained(Box::new(m)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub report: ProbeReport,
    pub model: PlsModel,
    pub n_rows: usize,
    pub dropped: usize,
    pub layer: usize,
}

fn facts_of(world: &World, property: &str, entities: &[usize]) -> Result<Vec<FactRecord>, CliError> {
    world.facts_for(property, entities).map_err(rt)
}

fn ids_of(world: &World, entities: &[usize]) -> Vec<String> {
    entities.iter().map(|&e| world.entities[e].id.clone()).collect()
}

fn probe_one(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
    sp: &Splits,
    property: &NumericProperty,
) -> Result<ProbeOutcome, CliError> {
    let mut entities: Vec<usize> = sp.probe_train.iter().chain(&world.test_entities).copied().collect();
    entities.sort_unstable();
    let facts = facts_of(world, &property.id, &entities)?;
    let opts = CollectOptions {
        instruction_suffix: cfg.instruction_suffix,
        max_new: cfg.max_new,
        ..CollectOptions::default()
    };
    let ds: ProbeDataset = collect_representations(lm, vocab, property, &facts, cfg.locus, &opts).map_err(rt)?;
    let test_ids = ids_of(world, &world.test_entities);
    let mut fit = fit_property_probe(&ds, &cfg.k_sweep, &test_ids).map_err(rt)?;
    let controls = run_controls(&ds, &cfg.k_sweep, &test_ids, cfg.seed).map_err(rt)?;
    fit.curve.shuffled = controls.shuffled;
    fit.curve.random = controls.random;
    let projection = if fit.model.k >= 2 {
        let xte = ds.x.select_rows(&fit.test_rows);
        let yte: Vec<f64> = fit.test_rows.iter().map(|&i| ds.y[i]).collect();
        project_2d(&fit.model, &xte, &yte).map_err(rt)?
    } else {
        Vec::new()
    };
    Ok(ProbeOutcome {
        report: ProbeReport {
            curve: fit.curve,
            projection,
        },
        model: fit.model,
        n_rows: ds.y.len(),
        dropped: ds.dropped_count,
        layer: ds.layer,
    })
}

/// A property a stage could not handle; later stages skip it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub property_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProbeResults {
    pub probes: Vec<ProbeOutcome>,
    pub failures: Vec<Failure>,
}

impl ProbeResults {
    pub fn get(&self, property_id: &str) -> Option<&ProbeOutcome> {
        self.probes.iter().find(|p| p.report.curve.property_id == property_id)
    }
}

pub fn run_probes(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
) -> Result<ProbeResults, CliError> {
    let sp = splits(cfg, world)?;
    let mut out = ProbeResults::default();
    for p in &world.config.properties {
        match probe_one(cfg, world, vocab, lm, &sp, p) {
            Ok(o) => {
                eprintln!(
                    "probe {:<12} rows {:>5}  max test R2 {:.3}",
                    p.id, o.n_rows, o.report.curve.max_test_r2
                );
                out.probes.push(o);
            }
            Err(e) => {
                eprintln!("probe {:<12} failed: {e}", p.id);
                out.failures.push(Failure {
                    property_id: p.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchOutcome {
    pub plans: Vec<PatchPlan>,
    pub choices: Vec<ComponentChoice>,
    pub sweeps: Vec<InterventionSweep>,
    pub component_tables: Vec<ComponentTable>,
    pub zero_patch_identical: bool,
    pub failures: Vec<Failure>,
}

impl PatchOutcome {
    pub fn sweep(&self, property_id: &str) -> Option<&InterventionSweep> {
        self.sweeps.iter().find(|s| s.property_id == property_id)
    }
}

/// Property used for the locus search, the component table and the
/// emergence numbers.
pub fn focus_property(world: &World) -> &NumericProperty {
    world
        .config
        .properties
        .iter()
        .find(|p| p.id == "birthyear")
        .unwrap_or(&world.config.properties[0])
}

/// The edit-weight-0 answer of every swept entity against its unedited
/// greedy answer.
pub fn zero_patch_identical(
    lm: &dyn LanguageModel,
    world: &World,
    vocab: &Vocab,
    sweeps: &[InterventionSweep],
    max_new: usize,
) -> Result<bool, CliError> {
    for s in sweeps {
        let p = world.property(&s.prompted_property_id).map_err(rt)?;
        let Some(z) = s.alpha_schedule.iter().position(|a| *a == 0.0) else {
            return Ok(false);
        };
        for e in &s.entities {
            let prompt = vocab.render_prompt(p, &e.entity_name, true).map_err(rt)?;
            let plain = express(lm, vocab, &prompt.tokens, None, max_new).map_err(rt)?;
            if plain.raw != e.points[z].raw_answer {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn patch_one(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
    sp: &Splits,
    p: &NumericProperty,
    probe: &ProbeOutcome,
) -> Result<(PatchPlan, ComponentChoice, InterventionSweep), CliError> {
    let dev = facts_of(world, &p.id, &sp.dev)?;
    let candidates: Vec<usize> = (1..=probe.model.k.min(cfg.table_components)).collect();
    let choice = select_component(
        lm,
        vocab,
        p,
        &probe.model,
        &dev,
        cfg.locus,
        cfg.component_selection,
        &candidates,
        cfg.locus_grid.steps,
        cfg.max_new,
    )
    .map_err(rt)?;
    let plan = PatchPlan::from_probe(&p.id, &probe.model, choice.component, cfg.steps, cfg.locus).map_err(rt)?;
    let test = facts_of(world, &p.id, &sp.test)?;
    let sweep = run_intervention_sweep(lm, vocab, p, &test, &plan, cfg.max_new).map_err(rt)?;
    Ok((plan, choice, sweep))
}

pub fn run_patch(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
    probes: &ProbeResults,
) -> Result<PatchOutcome, CliError> {
    let sp = splits(cfg, world)?;
    let mut plans = Vec::new();
    let mut choices = Vec::new();
    let mut sweeps = Vec::new();
    let mut failures = Vec::new();
    for p in &world.config.properties {
        let Some(probe) = probes.get(&p.id) else {
            continue;
        };
        match patch_one(cfg, world, vocab, lm, &sp, p, probe) {
            Ok((plan, choice, sweep)) => {
                eprintln!(
                    "patch {:<12} k={} mean rho {}",
                    p.id,
                    plan.component,
                    sweep.mean_rho().map_or("n/a".into(), |r| format!("{r:.3}"))
                );
                plans.push(plan);
                choices.push(choice);
                sweeps.push(sweep);
            }
            Err(e) => {
                eprintln!("patch {:<12} failed: {e}", p.id);
                failures.push(Failure {
                    property_id: p.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    let zero = zero_patch_identical(lm, world, vocab, &sweeps, cfg.max_new)?;

    let focus = focus_property(world);
    let mut component_tables = Vec::new();
    if let (Some(&e), Some(probe)) = (sp.test.first(), probes.get(&focus.id)) {
        let fact = world.fact(e, &focus.id).map_err(rt)?;
        let ks: Vec<usize> = (1..=probe.model.k.min(cfg.table_components)).collect();
        match component_table(lm, vocab, focus, fact, &probe.model, &ks, 11, cfg.locus, cfg.max_new) {
            Ok(t) => component_tables.push(t),
            Err(e) => eprintln!("component table for {} failed: {e}", focus.id),
        }
    }
    Ok(PatchOutcome {
        plans,
        choices,
        sweeps,
        component_tables,
        zero_patch_identical: zero,
        failures,
    })
}

pub fn run_side_effects(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
    plans: &[PatchPlan],
) -> Result<SideEffectResult, CliError> {
    let sp = splits(cfg, world)?;
    let properties: Vec<NumericProperty> = world
        .config
        .properties
        .iter()
        .filter(|p| plans.iter().any(|pl| pl.property_id == p.id))
        .cloned()
        .collect();
    if properties.is_empty() {
        return Err(CliError::Runtime("no property has a patch plan".into()));
    }
    let ents: Vec<usize> = sp.test.iter().copied().take(cfg.side_effect_entities).collect();
    let facts: Vec<FactRecord> = ents
        .iter()
        .flat_map(|&e| properties.iter().map(move |p| (e, p)))
        .map(|(e, p)| world.fact(e, &p.id).cloned().map_err(rt))
        .collect::<Result<_, _>>()?;
    let r = run_side_effect_matrix(
        lm,
        vocab,
        &properties,
        plans,
        &facts,
        Some(cfg.side_effect_steps),
        cfg.side_effect_entities,
        cfg.max_new,
    )
    .map_err(rt)?;
    eprintln!(
        "side effects: diagonal {:.3}, off-diagonal {:.3}",
        r.matrix.diagonal_mean, r.matrix.off_diagonal_mean
    );
    Ok(r)
}

pub fn run_locus_search(
    cfg: &RunConfig,
    world: &World,
    vocab: &Vocab,
    lm: &dyn LanguageModel,
) -> Result<LocusSearch, CliError> {
    let sp = splits(cfg, world)?;
    let focus = focus_property(world);
    let train = facts_of(world, &focus.id, &sp.probe_train)?;
    let dev = facts_of(world, &focus.id, &sp.dev)?;
    let s = search_edit_locus(lm, vocab, focus, &train, &dev, &cfg.locus_grid).map_err(rt)?;
    eprintln!(
        "locus search: best layer {} offset {} rho {:.3}",
        s.best.layer_fraction, s.best.token_offset, s.best_rho
    );
    Ok(s)
}

fn best_r2_up_to(curve: &numrep::probe::ProbeCurve, k_max: usize) -> Option<(usize, f64)> {
    curve
        .pls
        .iter()
        .filter(|p| p.k <= k_max)
        .max_by(|a, b| a.test_r2.total_cmp(&b.test_r2))
        .map(|p| (p.k, p.test_r2))
}

/// Headline numbers of whatever stages have run.
pub fn summarize(
    cfg: &RunConfig,
    world: &World,
    train: Option<&TrainInfo>,
    probes: &ProbeResults,
    patch: Option<&PatchOutcome>,
    side: Option<&SideEffectResult>,
    locus: Option<&LocusSearch>,
) -> serde_json::Value {
    let mut props = serde_json::Map::new();
    for p in &world.config.properties {
        let mut o = serde_json::Map::new();
        if let Some(pr) = probes.get(&p.id) {
            let c = &pr.report.curve;
            let control = c
                .shuffled
                .iter()
                .chain(&c.random)
                .map(|q| q.test_r2)
                .fold(f64::NEG_INFINITY, f64::max);
            o.insert("max_test_r2".into(), json!(c.max_test_r2));
            o.insert("k80".into(), json!(c.k80));
            o.insert("k95".into(), json!(c.k95));
            o.insert("truncated_at".into(), json!(c.truncated_at));
            o.insert("control_max_test_r2".into(), json!(control));
            o.insert("probe_rows".into(), json!(pr.n_rows));
            o.insert("unparseable".into(), json!(pr.dropped));
        }
        let failed = probes
            .failures
            .iter()
            .chain(patch.map(|pa| pa.failures.as_slice()).unwrap_or_default())
            .find(|f| f.property_id == p.id);
        if let Some(f) = failed {
            o.insert("failed".into(), json!(f.error));
        }
        if let Some(s) = patch.and_then(|pa| pa.sweep(&p.id)) {
            o.insert("component".into(), json!(s.component));
            o.insert("mean_rho".into(), json!(s.mean_rho()));
            o.insert("std_rho".into(), json!(s.summary.as_ref().map(|x| x.std_rho)));
            o.insert("sweep_entities".into(), json!(s.entities.len()));
            o.insert("excluded_entities".into(), json!(s.n_excluded));
        }
        props.insert(p.id.clone(), serde_json::Value::Object(o));
    }
    let mut out = json!({
        "mode": if cfg.oracle { "oracle" } else { "trained" },
        "seed": cfg.seed,
        "properties": props,
    });
    if let Some(pa) = patch {
        out["zero_patch_identical"] = json!(pa.zero_patch_identical);
    }
    if let Some(s) = side {
        out["side_effects"] = json!({
            "diagonal_mean": s.matrix.diagonal_mean,
            "diagonal_std": s.matrix.diagonal_std,
            "off_diagonal_mean": s.matrix.off_diagonal_mean,
            "off_diagonal_std": s.matrix.off_diagonal_std,
            "max_abs_off_diagonal": s.matrix.max_abs_off_diagonal(&[]),
        });
    }
    if let Some(l) = locus {
        out["locus_search"] = json!({
            "property": l.property_id,
            "best_layer_fraction": l.best.layer_fraction,
            "best_token_offset": l.best.token_offset,
            "best_mean_rho": l.best_rho,
        });
    }
    if let Some(t) = train {
        out["train"] = json!({ "accuracy": t.accuracy, "epochs": t.epochs, "final_loss": t.final_loss });
    }
    if !cfg.oracle {
        let focus = focus_property(world);
        let best = probes
            .get(&focus.id)
            .and_then(|p| best_r2_up_to(&p.report.curve, EMERGENCE_MAX_K));
        let rho = patch.and_then(|pa| pa.sweep(&focus.id)).and_then(|s| s.mean_rho());
        let acc = train.map(|t| t.accuracy);
        let met = acc.is_some_and(|a| a >= EMERGENCE_ACCURACY)
            && best.is_some_and(|b| b.1 >= EMERGENCE_R2)
            && rho.is_some_and(|r| r >= EMERGENCE_RHO);
        out["emergence"] = json!({
            "property": focus.id,
            "train_accuracy": acc,
            "best_test_r2_k_le_8": best.map(|b| b.1),
            "best_k": best.map(|b| b.0),
            "mean_rho": rho,
            "thresholds": {
                "train_accuracy": EMERGENCE_ACCURACY,
                "test_r2": EMERGENCE_R2,
                "max_k": EMERGENCE_MAX_K,
                "mean_rho": EMERGENCE_RHO,
            },
            "met": met,
        });
    }
    out
}

/// Fragments of earlier stages assembled for the report.
pub fn collect_results(
    cfg: &RunConfig,
    dir: &RunDir,
    world: &World,
) -> Result<RunResults, CliError> {
    fn opt<T: DeserializeOwned>(p: PathBuf) -> Result<Option<T>, CliError> {
        if p.is_file() {
            read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }
    let train: Option<TrainInfo> = opt(dir.train_info())?.filter(|_| !cfg.oracle);
    let probes: ProbeResults = opt(dir.result("probes"))?.unwrap_or_default();
    let patch: Option<PatchOutcome> = opt(dir.result("patch"))?;
    let side: Option<SideEffectResult> = opt(dir.result("side_effects"))?;
    let locus: Option<LocusSearch> = opt(dir.result("locus"))?;
    let summary = summarize(cfg, world, train.as_ref(), &probes, patch.as_ref(), side.as_ref(), locus.as_ref());
    Ok(RunResults {
        probes: probes.probes.iter().map(|p| p.report.clone()).collect(),
        sweeps: patch.as_ref().map(|p| p.sweeps.clone()).unwrap_or_default(),
        component_tables: patch.map(|p| p.component_tables).unwrap_or_default(),
        side_effects: side.map(|s| s.matrix),
        locus: locus.into_iter().collect(),
        summary,
    })
}

/// Entity ids of two splits never overlap.
pub fn disjoint(a: &[usize], b: &[usize]) -> bool {
    let s: HashSet<usize> = a.iter().copied().collect();
    b.iter().all(|x| !s.contains(x))
}
