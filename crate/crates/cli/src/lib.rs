//! `numrep` command line: subcommands for each pipeline stage plus
//! `full-run` and `self-test`.
//!
//! Exit codes: 0 success, 2 configuration or validation error (nothing is
//! written), 1 runtime failure.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use numrep::report::emit_report;
use numrep::synthworld::World;
use thiserror::Error;

use config::RunConfig;
use pipeline::*;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "numrep", version, about = "Probe and edit numeric-property directions in language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Run config (JSON); defaults apply to absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the analytic oracle model instead of a trained one.
    #[arg(long)]
    oracle: bool,
    /// Worker threads for entity fan-out; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic world and its facts.
    GenData(Common),
    /// Train the tiny model on every fact.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit probes for every property.
    Probe(Common),
    /// Intervention sweeps along the probe directions.
    Patch(Common),
    /// Search the edit locus on dev entities.
    LocusSearch(Common),
    /// Cross-property side-effect matrix.
    SideEffects(Common),
    /// Render tables, plots and the bundle from earlier stages.
    Report(Common),
    /// Every stage in order under one seed.
    FullRun {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Oracle end-to-end checks in a temporary directory.
    SelfTest {
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(common: &Common, epochs: Option<usize>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.oracle {
        cfg.oracle = true;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if common.threads == Some(0) {
        return Err(CliError::Config("invalid flag `--threads`: must be >= 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

struct Ctx {
    cfg: RunConfig,
    dir: RunDir,
}

impl Ctx {
    fn world(&self) -> Result<World, CliError> {
        read_json(&self.dir.world())
    }

    fn needs_world(&self) -> Result<(), CliError> {
        self.dir.require(&self.dir.world(), "world data")
    }

    fn needs_model(&self) -> Result<(), CliError> {
        self.needs_world()?;
        if !self.cfg.oracle {
            self.dir.require(&self.dir.checkpoint(), "model checkpoint")?;
        }
        Ok(())
    }

    fn write_config(&self) -> Result<(), CliError> {
        write_json(&self.dir.root.join("config.json"), &self.cfg)
    }
}

fn probe_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let vocab = world.vocab();
    let model = load_model(&ctx.cfg, &ctx.dir, &world, &vocab)?;
    let probes = run_probes(&ctx.cfg, &world, &vocab, model.lm())?;
    write_json(&ctx.dir.result("probes"), &probes)
}

fn patch_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let vocab = world.vocab();
    let model = load_model(&ctx.cfg, &ctx.dir, &world, &vocab)?;
    let probes: ProbeResults = read_json(&ctx.dir.result("probes"))?;
    let out = run_patch(&ctx.cfg, &world, &vocab, model.lm(), &probes)?;
    write_json(&ctx.dir.result("patch"), &out)
}

fn side_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let vocab = world.vocab();
    let model = load_model(&ctx.cfg, &ctx.dir, &world, &vocab)?;
    let patch: PatchOutcome = read_json(&ctx.dir.result("patch"))?;
    let out = run_side_effects(&ctx.cfg, &world, &vocab, model.lm(), &patch.plans)?;
    write_json(&ctx.dir.result("side_effects"), &out)
}

fn locus_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let vocab = world.vocab();
    let model = load_model(&ctx.cfg, &ctx.dir, &world, &vocab)?;
    let out = run_locus_search(&ctx.cfg, &world, &vocab, model.lm())?;
    write_json(&ctx.dir.result("locus"), &out)
}

fn report_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let results = collect_results(&ctx.cfg, &ctx.dir, &world)?;
    let cfg_json = serde_json::to_value(&ctx.cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    emit_report(&results, &ctx.dir.root, ctx.cfg.seed, &cfg_json).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(())
}

fn train_stage(ctx: &Ctx) -> Result<(), CliError> {
    let world = ctx.world()?;
    let vocab = world.vocab();
    let (model, info) = train_model(&ctx.cfg, &world, &vocab)?;
    save_model(&ctx.dir, &model, &vocab, &info)
}

fn full_run(ctx: &Ctx) -> Result<(), CliError> {
    let t = Instant::now();
    ctx.write_config()?;
    let world = gen_data(&ctx.cfg)?;
    save_world(&ctx.dir, &world)?;
    if !ctx.cfg.oracle {
        train_stage(ctx)?;
        eprintln!("trained in {:.0?}", t.elapsed());
    }
    probe_stage(ctx)?;
    patch_stage(ctx)?;
    // a weak model can leave these without usable data; the rest of the
    // report is still worth writing
    if let Err(e) = side_stage(ctx) {
        eprintln!("side effects skipped: {e}");
    }
    if ctx.cfg.locus_search {
        if let Err(e) = locus_stage(ctx) {
            eprintln!("locus search skipped: {e}");
        }
    }
    report_stage(ctx)?;
    eprintln!("full run finished in {:.0?}", t.elapsed());
    Ok(())
}

fn check(name: &str, ok: bool, detail: String) -> bool {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

/// Oracle run with the default config; checks causality, zero-patch
/// identity, side effects and controls.
pub fn self_test(seed: u64, threads: Option<usize>) -> Result<bool, CliError> {
    let tmp = tempfile::tempdir().map_err(|e| CliError::Runtime(e.to_string()))?;
    let cfg = RunConfig {
        seed,
        oracle: true,
        ..RunConfig::default()
    };
    let ctx = Ctx {
        cfg,
        dir: RunDir::new(tmp.path()),
    };
    in_pool(threads, || full_run(&ctx))??;
    let s: serde_json::Value = read_json(&tmp.path().join("summary.json"))?;
    let mut ok = true;
    for (id, p) in s["properties"].as_object().into_iter().flatten() {
        let rho = p["mean_rho"].as_f64().unwrap_or(f64::NAN);
        ok &= check(&format!("{id} intervention"), rho >= 0.95, format!("mean rho {rho:.3} (>= 0.95)"));
        let c = p["control_max_test_r2"].as_f64().unwrap_or(f64::NAN);
        ok &= check(&format!("{id} controls"), c <= 0.1, format!("max control R2 {c:.3} (<= 0.1)"));
    }
    let z = s["zero_patch_identical"].as_bool() == Some(true);
    ok &= check("zero patch", z, format!("identical to unedited outputs: {z}"));
    let off = s["side_effects"]["max_abs_off_diagonal"].as_f64().unwrap_or(f64::NAN);
    ok &= check("side effects", off <= 0.2, format!("max |off-diagonal| {off:.3} (<= 0.2)"));
    Ok(ok)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, epochs) = match &cli.command {
        Command::SelfTest { threads, seed } => {
            if *threads == Some(0) {
                return Err(CliError::Config("invalid flag `--threads`: must be >= 1".into()));
            }
            return if self_test(*seed, *threads)? {
                Ok(())
            } else {
                Err(CliError::Runtime("self-test failed".into()))
            };
        }
        Command::Train { common, epochs } | Command::FullRun { common, epochs } => (common, *epochs),
        Command::GenData(c)
        | Command::Probe(c)
        | Command::Patch(c)
        | Command::LocusSearch(c)
        | Command::SideEffects(c)
        | Command::Report(c) => (c, None),
    };
    let cfg = resolve(common, epochs)?;
    let ctx = Ctx {
        cfg,
        dir: RunDir::new(&common.out),
    };
    // inputs of the stage are checked before anything is written
    match &cli.command {
        Command::GenData(_) | Command::FullRun { .. } | Command::SelfTest { .. } => {}
        Command::Train { .. } => ctx.needs_world()?,
        Command::Probe(_) | Command::LocusSearch(_) => ctx.needs_model()?,
        Command::Patch(_) => {
            ctx.needs_model()?;
            ctx.dir.require(&ctx.dir.result("probes"), "probe results")?;
        }
        Command::SideEffects(_) => {
            ctx.needs_model()?;
            ctx.dir.require(&ctx.dir.result("patch"), "patch results")?;
        }
        Command::Report(_) => ctx.needs_world()?,
    }
    in_pool(common.threads, || match &cli.command {
        Command::GenData(_) => {
            let world = gen_data(&ctx.cfg)?;
            ctx.write_config()?;
            save_world(&ctx.dir, &world)
        }
        Command::Train { .. } => train_stage(&ctx),
        Command::Probe(_) => probe_stage(&ctx),
        Command::Patch(_) => patch_stage(&ctx),
        Command::LocusSearch(_) => locus_stage(&ctx),
        Command::SideEffects(_) => side_stage(&ctx),
        Command::Report(_) => report_stage(&ctx),
        Command::FullRun { .. } => full_run(&ctx),
        Command::SelfTest { .. } => unreachable!("handled above"),
    })?
}

/// Parses `args` (program name first) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Relative paths and contents of every file under `root`, sorted.
pub fn tree_contents(root: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&p)?));
            }
        }
    }
    out.sort();
    Ok(out)
}
