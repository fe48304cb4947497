//! Tables, plots and the run manifest.
//!
//! Output layout: `probe/`, `patch/`, `side_effects/` and `locus/`
//! subdirectories under the output root, plus `summary.json` and
//! `bundle.json`. Only the bundle carries a timestamp.

pub mod svg;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::patchkit::{ComponentTable, InterventionSweep, LocusSearch};
use crate::probe::{ProbeCurve, Projection};
use crate::stats::EffectMatrix;
use svg::LineSeries;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("artifact {0} is missing")]
    MissingArtifact(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub curve: ProbeCurve,
    pub projection: Vec<Projection>,
}

/// Everything a run hands to the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub probes: Vec<ProbeReport>,
    pub sweeps: Vec<InterventionSweep>,
    pub component_tables: Vec<ComponentTable>,
    pub side_effects: Option<EffectMatrix>,
    pub locus: Vec<LocusSearch>,
    /// Headline metrics, written verbatim to `summary.json`.
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub kind: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub created_unix_s: u64,
    pub artifacts: Vec<Artifact>,
}

/// SHA-256 of the compact JSON encoding.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

struct Writer<'a> {
    root: &'a Path,
    files: Vec<Artifact>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, source: &str, body: &str) -> Result<(), ReportError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| ReportError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
        fs::write(&path, body).map_err(|e| ReportError::Io { path, source: e })?;
        let kind = rel.rsplit('.').next().unwrap_or("").to_string();
        self.files.push(Artifact {
            path: rel.into(),
            kind,
            source: source.into(),
        });
        Ok(())
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Normalized edit weight of each raw alpha, looked up in the schedule.
fn normalized_of(sweep: &InterventionSweep, alpha: f64) -> f64 {
    sweep
        .alpha_schedule
        .iter()
        .position(|a| *a == alpha)
        .map(|i| sweep.normalized_alphas[i])
        .unwrap_or(f64::NAN)
}

fn sweep_name(s: &InterventionSweep) -> String {
    if s.prompted_property_id == s.property_id {
        s.property_id.clone()
    } else {
        format!("{}_on_{}", s.property_id, s.prompted_property_id)
    }
}

fn effects_csv(sweep: &InterventionSweep) -> String {
    let mut out = String::from("normalized_alpha,alpha,delta_mean,delta_std\n");
    if let Some(sum) = &sweep.summary {
        for ((a, m), s) in sum.alpha.iter().zip(&sum.delta_mean).zip(&sum.delta_std) {
            out.push_str(&format!("{:.6},{a:.9},{m:.6},{s:.6}\n", normalized_of(sweep, *a)));
        }
    }
    out
}

fn sweep_summary_csv(sweeps: &[InterventionSweep]) -> String {
    let mut out = String::from("property,prompted,component,n_entities,n_excluded,mean_rho,std_rho\n");
    for s in sweeps {
        let (n, m, sd) = match &s.summary {
            Some(x) => (x.n_entities, format!("{:.6}", x.mean_rho), format!("{:.6}", x.std_rho)),
            None => (0, String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{n},{},{m},{sd}\n",
            s.property_id, s.prompted_property_id, s.component, s.n_excluded
        ));
    }
    out
}

fn projection_csv(p: &[Projection]) -> String {
    let mut out = String::from("t1,t2,value\n");
    for q in p {
        out.push_str(&format!("{:.9},{:.9},{}\n", q.t1, q.t2, q.value));
    }
    out
}

/// CSV and JSON tables. File bodies depend only on `results`.
pub fn emit_tables(results: &RunResults, out_dir: &Path) -> Result<Vec<Artifact>, ReportError> {
    let mut w = Writer {
        root: out_dir,
        files: Vec::new(),
    };
    for p in &results.probes {
        let id = &p.curve.property_id;
        w.put(&format!("probe/{id}_curve.csv"), "probe", &p.curve.to_csv())?;
        w.put(&format!("probe/{id}_curve.json"), "probe", &json(&p.curve))?;
        if !p.projection.is_empty() {
            w.put(&format!("probe/{id}_projection.csv"), "probe", &projection_csv(&p.projection))?;
        }
    }
    for s in &results.sweeps {
        let name = sweep_name(s);
        w.put(&format!("patch/{name}_sweep.csv"), "patchkit", &s.to_csv())?;
        w.put(&format!("patch/{name}_sweep.json"), "patchkit", &json(s))?;
        w.put(&format!("patch/{name}_effects.csv"), "patchkit", &effects_csv(s))?;
    }
    if !results.sweeps.is_empty() {
        w.put("patch/summary.csv", "patchkit", &sweep_summary_csv(&results.sweeps))?;
    }
    for t in &results.component_tables {
        let stem = format!("patch/{}_{}_components", t.property_id, t.entity_id);
        w.put(&format!("{stem}.csv"), "patchkit", &t.to_csv())?;
        w.put(&format!("{stem}.json"), "patchkit", &json(t))?;
    }
    if let Some(m) = &results.side_effects {
        w.put("side_effects/matrix.csv", "stats", &m.to_csv())?;
        w.put("side_effects/matrix.json", "stats", &json(m))?;
    }
    for l in &results.locus {
        w.put(&format!("locus/{}_surface.csv", l.property_id), "patchkit", &l.to_csv())?;
        w.put(&format!("locus/{}_surface.json", l.property_id), "patchkit", &json(l))?;
    }
    w.put("summary.json", "cli", &json(&results.summary))?;
    Ok(w.files)
}

fn curve_series(name: &str, pts: &[crate::probe::CurvePoint]) -> Option<LineSeries> {
    (!pts.is_empty()).then(|| LineSeries {
        name: name.into(),
        points: pts.iter().map(|p| (p.k as f64, p.test_r2)).collect(),
        band: None,
    })
}

/// Mean change of the expressed quantity against the normalized edit
/// weight, with a one-standard-deviation band.
pub fn effect_plot(sweep: &InterventionSweep) -> String {
    let mut series = Vec::new();
    if let Some(sum) = &sweep.summary {
        let x: Vec<f64> = sum.alpha.iter().map(|a| normalized_of(sweep, *a)).collect();
        series.push(LineSeries {
            name: format!("mean rho {:.2}", sum.mean_rho),
            points: x.iter().zip(&sum.delta_mean).map(|(a, m)| (*a, *m)).collect(),
            band: Some(
                x.iter()
                    .zip(sum.delta_mean.iter().zip(&sum.delta_std))
                    .map(|(a, (m, s))| (*a, m - s, m + s))
                    .collect(),
            ),
        });
    }
    svg::line_chart(
        &format!("{} edits, prompted for {}", sweep.property_id, sweep.prompted_property_id),
        "normalized edit weight",
        "change in expressed quantity",
        &series,
    )
}

fn matrix_plot(m: &EffectMatrix) -> String {
    let values: Vec<Vec<f64>> = m.cells.iter().map(|r| r.iter().map(|c| c.mean).collect()).collect();
    let labels: Vec<Vec<String>> = m
        .cells
        .iter()
        .map(|r| r.iter().map(|c| if c.n == 0 { "n/a".into() } else { format!("{:.2}", c.mean) }).collect())
        .collect();
    svg::heatmap("mean rho: targeted (rows) x probed (columns)", &m.targeted, &m.probed, &values, &labels)
}

fn locus_plot(l: &LocusSearch) -> String {
    let rows: Vec<String> = l.grid.layer_fractions.iter().map(|f| format!("layer {f}")).collect();
    let cols: Vec<String> = l.grid.token_offsets.iter().map(|o| format!("offset {o:+}")).collect();
    let values = l.surface();
    let labels: Vec<Vec<String>> = values.iter().map(|r| r.iter().map(|v| format!("{v:.2}")).collect()).collect();
    svg::heatmap(&format!("{} edit locus, mean rho", l.property_id), &rows, &cols, &values, &labels)
}

/// Warm cells answer above the true value, cool cells below.
fn component_plot(t: &ComponentTable) -> String {
    let rows: Vec<String> = t.normalized_alphas.iter().map(|a| format!("{a:.2}")).collect();
    let cols: Vec<String> = t.components.iter().map(|k| format!("k={k}")).collect();
    let values: Vec<Vec<f64>> = t
        .values
        .iter()
        .map(|r| r.iter().map(|v| v.map_or(0.0, |v| v - t.gold)).collect())
        .collect();
    let labels: Vec<Vec<String>> = t
        .raw
        .iter()
        .map(|r| r.iter().map(|s| if s.is_empty() { "-".into() } else { s.clone() }).collect())
        .collect();
    svg::heatmap(
        &format!("{} of {} (true {})", t.property_id, t.entity_name, t.gold),
        &rows,
        &cols,
        &values,
        &labels,
    )
}

pub fn emit_plots(results: &RunResults, out_dir: &Path) -> Result<Vec<Artifact>, ReportError> {
    let mut w = Writer {
        root: out_dir,
        files: Vec::new(),
    };
    for p in &results.probes {
        let c = &p.curve;
        let series: Vec<LineSeries> = [
            curve_series("PLS", &c.pls),
            curve_series("PCA", &c.pca),
            curve_series("shuffled labels", &c.shuffled),
            curve_series("random representations", &c.random),
        ]
        .into_iter()
        .flatten()
        .collect();
        let chart = svg::line_chart(&format!("{} probe", c.property_id), "components k", "test R²", &series);
        w.put(&format!("probe/{}_r2.svg", c.property_id), "probe", &chart)?;
        if !p.projection.is_empty() {
            let pts: Vec<(f64, f64, f64)> = p.projection.iter().map(|q| (q.t1, q.t2, q.value)).collect();
            let chart = svg::scatter(&format!("{} projection", c.property_id), "component 1", "component 2", &pts);
            w.put(&format!("probe/{}_projection.svg", c.property_id), "probe", &chart)?;
        }
    }
    for s in &results.sweeps {
        w.put(&format!("patch/{}_effect.svg", sweep_name(s)), "patchkit", &effect_plot(s))?;
    }
    for t in &results.component_tables {
        w.put(
            &format!("patch/{}_{}_components.svg", t.property_id, t.entity_id),
            "patchkit",
            &component_plot(t),
        )?;
    }
    if let Some(m) = &results.side_effects {
        w.put("side_effects/matrix.svg", "stats", &matrix_plot(m))?;
    }
    for l in &results.locus {
        w.put(&format!("locus/{}_surface.svg", l.property_id), "patchkit", &locus_plot(l))?;
    }
    Ok(w.files)
}

/// Writes `bundle.json` after checking every artifact exists.
pub fn write_bundle(
    out_dir: &Path,
    seed: u64,
    config: &serde_json::Value,
    artifacts: Vec<Artifact>,
) -> Result<ReportBundle, ReportError> {
    for a in &artifacts {
        if !out_dir.join(&a.path).is_file() {
            return Err(ReportError::MissingArtifact(a.path.clone()));
        }
    }
    let created_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let bundle = ReportBundle {
        seed,
        config_hash: config_hash(config),
        config: config.clone(),
        created_unix_s,
        artifacts,
    };
    let path = out_dir.join("bundle.json");
    fs::write(&path, json(&bundle)).map_err(|e| ReportError::Io { path, source: e })?;
    Ok(bundle)
}

/// Tables, plots and the bundle in one call.
pub fn emit_report(
    results: &RunResults,
    out_dir: &Path,
    seed: u64,
    config: &serde_json::Value,
) -> Result<ReportBundle, ReportError> {
    let mut files = emit_tables(results, out_dir)?;
    files.extend(emit_plots(results, out_dir)?);
    write_bundle(out_dir, seed, config, files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::Locus;

    fn empty_sweep() -> InterventionSweep {
        InterventionSweep {
            property_id: "birthyear".into(),
            prompted_property_id: "birthyear".into(),
            component: 1,
            locus: Locus::default(),
            alpha_schedule: vec![-1.0, 0.0, 1.0],
            normalized_alphas: vec![-1.0, 0.0, 1.0],
            entities: vec![],
            n_excluded: 0,
            summary: None,
        }
    }

    fn table_fixture() -> ComponentTable {
        // rows descending, one column per k
        let alphas = [1.0, 0.5, 0.0, -0.5, -1.0];
        let k1 = [1950.0, 1930.0, 1902.0, 1890.0, 1875.0];
        let k5 = [2012.0, 1960.0, 1902.0, 1850.0, 1801.0];
        ComponentTable {
            property_id: "birthyear".into(),
            entity_id: "Q8".into(),
            entity_name: "ENT_7".into(),
            gold: 1902.0,
            normalized_alphas: alphas.to_vec(),
            components: vec![1, 5],
            values: (0..5).map(|i| vec![Some(k1[i]), Some(k5[i])]).collect(),
            raw: (0..5).map(|i| vec![k1[i].to_string(), k5[i].to_string()]).collect(),
            rho: vec![Some(0.95), Some(0.98)],
        }
    }

    #[test]
    fn empty_sweep_gives_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let r = RunResults {
            sweeps: vec![empty_sweep()],
            ..RunResults::default()
        };
        emit_tables(&r, dir.path()).unwrap();
        let body = fs::read_to_string(dir.path().join("patch/birthyear_sweep.csv")).unwrap();
        assert_eq!(body, "entity_id,s,alpha,normalized_alpha,raw_answer,parsed_value,dropped\n");
        emit_plots(&r, dir.path()).unwrap();
        roxmltree::Document::parse(&fs::read_to_string(dir.path().join("patch/birthyear_effect.svg")).unwrap()).unwrap();
    }

    #[test]
    fn component_table_layout() {
        let csv = table_fixture().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "normalized_alpha,k1,k5");
        assert_eq!(lines[1], "1.00,1950,2012");
        assert_eq!(lines[3], "0.00,1902,1902");
        assert_eq!(lines[5], "-1.00,1875,1801");
        assert_eq!(lines[6], "rho,0.95,0.98");
    }

    #[test]
    fn emission_is_deterministic_and_bundle_lists_files() {
        let r = RunResults {
            sweeps: vec![empty_sweep()],
            component_tables: vec![table_fixture()],
            summary: serde_json::json!({"x": 1}),
            ..RunResults::default()
        };
        let cfg = serde_json::json!({"seed": 3});
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ba = emit_report(&r, a.path(), 3, &cfg).unwrap();
        let bb = emit_report(&r, b.path(), 3, &cfg).unwrap();
        assert_eq!(ba.artifacts, bb.artifacts);
        assert_eq!(ba.config_hash, config_hash(&cfg));
        for art in &ba.artifacts {
            let x = fs::read(a.path().join(&art.path)).unwrap();
            let y = fs::read(b.path().join(&art.path)).unwrap();
            assert_eq!(x, y, "{}", art.path);
            if art.kind == "svg" {
                roxmltree::Document::parse(std::str::from_utf8(&x).unwrap()).unwrap();
            }
        }
        let svg = fs::read_to_string(a.path().join("patch/birthyear_Q8_components.svg")).unwrap();
        assert!(svg.contains("#b40426"));
    }

    #[test]
    fn missing_artifact_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let art = Artifact {
            path: "nope.csv".into(),
            kind: "csv".into(),
            source: "x".into(),
        };
        assert!(matches!(
            write_bundle(dir.path(), 0, &serde_json::json!({}), vec![art]),
            Err(ReportError::MissingArtifact(_))
        ));
    }
}
