//! Rank statistics and aggregation of intervention results.
//!
//! Spearman correlation uses mid-ranks for ties. A series whose `y` values
//! are all equal has correlation 0 by convention, so plateaued model outputs
//! never poison aggregates with NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 3 pairs, got {0}")]
    TooFewPoints(usize),
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("edit weights are all equal")]
    ConstantAlpha,
    #[error("no series to aggregate")]
    EmptyInput,
    #[error("series have different alpha grids")]
    GridMismatch,
    #[error("no series for cell ({targeted}, {probed})")]
    MissingCell { targeted: String, probed: String },
}

/// Paired `(alpha, y)` observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPairSeries {
    alpha: Vec<f64>,
    y: Vec<f64>,
}

impl RankedPairSeries {
    pub fn new(alpha: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if alpha.len() != y.len() || alpha.len() < 3 {
            return Err(StatsError::TooFewPoints(alpha.len().min(y.len())));
        }
        if alpha.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        if alpha.iter().all(|a| *a == alpha[0]) {
            return Err(StatsError::ConstantAlpha);
        }
        Ok(Self { alpha, y })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, StatsError> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Fractional (mid-) ranks, 1-based.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation of `alpha` against `y`.
pub fn spearman_rho(series: &RankedPairSeries) -> f64 {
    pearson(&mid_ranks(&series.alpha), &mid_ranks(&series.y))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Cross-entity summary of one targeted/probed combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub n_entities: usize,
    pub mean_rho: f64,
    pub std_rho: f64,
    pub per_entity_rho: Vec<f64>,
    /// Per-alpha statistics of `y - y(alpha = 0)`; empty when the series do
    /// not share one alpha grid containing 0.
    pub alpha: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
}

/// Averages per-entity Spearman correlations; when all series share the same
/// alpha grid and it contains 0, also aggregates output deltas per alpha.
pub fn aggregate_effects(per_entity: &[RankedPairSeries]) -> Result<EffectSummary, StatsError> {
    if per_entity.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let rhos: Vec<f64> = per_entity.iter().map(spearman_rho).collect();
    let (mean_rho, std_rho) = mean_std(&rhos);

    let grid = per_entity[0].alpha();
    let shared = per_entity.iter().all(|s| s.alpha() == grid);
    let zero = grid.iter().position(|a| *a == 0.0);
    let (alpha, delta_mean, delta_std) = match (shared, zero) {
        (true, Some(z)) => {
            let mut means = Vec::with_capacity(grid.len());
            let mut stds = Vec::with_capacity(grid.len());
            for s in 0..grid.len() {
                let deltas: Vec<f64> = per_entity.iter().map(|e| e.y[s] - e.y[z]).collect();
                let (m, sd) = mean_std(&deltas);
                means.push(m);
                stds.push(sd);
            }
            (grid.to_vec(), means, stds)
        }
        _ => (Vec::new(), Vec::new(), Vec::new()),
    };
    Ok(EffectSummary {
        n_entities: per_entity.len(),
        mean_rho,
        std_rho,
        per_entity_rho: rhos,
        alpha,
        delta_mean,
        delta_std,
    })
}

/// One cell of the targeted x probed matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectCell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectMatrix {
    pub targeted: Vec<String>,
    pub probed: Vec<String>,
    /// Row-major: `cells[i][j]` is targeted `i`, probed `j`.
    pub cells: Vec<Vec<EffectCell>>,
    pub diagonal_mean: f64,
    pub diagonal_std: f64,
    pub off_diagonal_mean: f64,
    pub off_diagonal_std: f64,
}

/// Per-entity series for one `(targeted, probed)` pair.
#[derive(Debug, Clone)]
pub struct CellSeries {
    pub targeted: String,
    pub probed: String,
    pub series: Vec<RankedPairSeries>,
}

pub fn effect_matrix(
    targeted: &[String],
    probed: &[String],
    results: &[CellSeries],
) -> Result<EffectMatrix, StatsError> {
    if targeted.is_empty() || probed.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut cells = Vec::with_capacity(targeted.len());
    let (mut diag, mut off) = (Vec::new(), Vec::new());
    for t in targeted {
        let mut row = Vec::with_capacity(probed.len());
        for p in probed {
            let entries: Vec<&CellSeries> = results
                .iter()
                .filter(|c| &c.targeted == t && &c.probed == p)
                .collect();
            if entries.is_empty() {
                return Err(StatsError::MissingCell {
                    targeted: t.clone(),
                    probed: p.clone(),
                });
            }
            let rhos: Vec<f64> = entries
                .iter()
                .flat_map(|c| c.series.iter().map(spearman_rho))
                .collect();
            if rhos.is_empty() {
                // every entity was dropped for this pair
                row.push(EffectCell { mean: 0.0, std: 0.0, n: 0 });
                continue;
            }
            let (mean, std) = mean_std(&rhos);
            if t == p {
                diag.push(mean);
            } else {
                off.push(mean);
            }
            row.push(EffectCell {
                mean,
                std,
                n: rhos.len(),
            });
        }
        cells.push(row);
    }
    for t in targeted {
        if !probed.contains(t) {
            return Err(StatsError::MissingCell {
                targeted: t.clone(),
                probed: t.clone(),
            });
        }
    }
    let (diagonal_mean, diagonal_std) = if diag.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&diag)
    };
    let (off_diagonal_mean, off_diagonal_std) = if off.is_empty() {
        (0.0, 0.0)
    } else {
        mean_std(&off)
    };
    Ok(EffectMatrix {
        targeted: targeted.to_vec(),
        probed: probed.to_vec(),
        cells,
        diagonal_mean,
        diagonal_std,
        off_diagonal_mean,
        off_diagonal_std,
    })
}

impl EffectMatrix {
    pub fn cell(&self, targeted: &str, probed: &str) -> Option<&EffectCell> {
        let i = self.targeted.iter().position(|t| t == targeted)?;
        let j = self.probed.iter().position(|p| p == probed)?;
        Some(&self.cells[i][j])
    }

    /// Largest `|mean rho|` over off-diagonal cells, optionally skipping
    /// listed unordered pairs.
    pub fn max_abs_off_diagonal(&self, skip: &[(&str, &str)]) -> f64 {
        let mut best = 0.0f64;
        for (i, t) in self.targeted.iter().enumerate() {
            for (j, p) in self.probed.iter().enumerate() {
                if t == p
                    || skip
                        .iter()
                        .any(|&(a, b)| (a == t && b == p) || (a == p && b == t))
                {
                    continue;
                }
                best = best.max(self.cells[i][j].mean.abs());
            }
        }
        best
    }

    /// CSV with targeted rows and probed columns, cells as `mean±std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("targeted");
        for p in &self.probed {
            out.push(',');
            out.push_str(p);
        }
        out.push('\n');
        for (t, row) in self.targeted.iter().zip(&self.cells) {
            out.push_str(t);
            for c in row {
                out.push_str(&format!(",{:.4}±{:.4}", c.mean, c.std));
            }
            out.push('\n');
        }
        out
    }
}
