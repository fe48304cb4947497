use serde::{Deserialize, Serialize};

use super::{run_intervention_sweep, PatchError, PatchPlan};
use crate::probe::{collect_representations, CollectOptions, Locus};
use crate::regress::{fit_pls, PlsOptions};
use crate::synthworld::{FactRecord, NumericProperty, Vocab};
use crate::tinylm::LanguageModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusGrid {
    pub layer_fractions: Vec<f64>,
    pub token_offsets: Vec<i64>,
    pub steps: usize,
    pub n_dev: usize,
}

impl Default for LocusGrid {
    fn default() -> Self {
        Self {
            layer_fractions: vec![0.0, 0.3, 0.5, 0.75, 1.0],
            token_offsets: vec![-2, -1, 0, 1],
            steps: 11,
            n_dev: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusCell {
    pub layer_fraction: f64,
    pub token_offset: i64,
    pub layer: usize,
    /// 0 when the probe or every entity's series failed.
    pub mean_rho: f64,
    pub n_entities: usize,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusSearch {
    pub property_id: String,
    pub grid: LocusGrid,
    /// Row-major over `layer_fractions` x `token_offsets`.
    pub cells: Vec<LocusCell>,
    pub best: Locus,
    pub best_rho: f64,
}

impl LocusSearch {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer_fraction,token_offset,layer,mean_rho,n_entities\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.6},{}\n",
                c.layer_fraction, c.token_offset, c.layer, c.mean_rho, c.n_entities
            ));
        }
        out
    }

    /// `rho[layer_fraction][token_offset]`.
    pub fn surface(&self) -> Vec<Vec<f64>> {
        self.cells
            .chunks(self.grid.token_offsets.len())
            .map(|r| r.iter().map(|c| c.mean_rho).collect())
            .collect()
    }
}

fn score_cell<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    train: &[FactRecord],
    dev: &[FactRecord],
    locus: Locus,
    steps: usize,
) -> Result<(f64, usize), PatchError> {
    let ds = collect_representations(model, vocab, property, train, locus, &CollectOptions::default())?;
    let probe = fit_pls(&ds.x, &ds.y, 1, PlsOptions::default())?;
    let mut plan = PatchPlan::from_probe(&property.id, &probe, 1, steps, locus)?;
    // the search edits exactly the probed cell
    plan.layer_window = 0;
    plan.token_window = (locus.token_offset, locus.token_offset);
    let sweep = run_intervention_sweep(model, vocab, property, dev, &plan, 2)?;
    Ok(match &sweep.summary {
        Some(s) => (s.mean_rho, s.n_entities),
        None => (0.0, 0),
    })
}

/// Fits a one-component probe on `train` at every grid cell, patches only
/// that cell for the first `n_dev` dev entities and scores the mean rho.
/// Ties keep the earliest cell in grid order.
pub fn search_edit_locus<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    property: &NumericProperty,
    train: &[FactRecord],
    dev: &[FactRecord],
    grid: &LocusGrid,
) -> Result<LocusSearch, PatchError> {
    if grid.layer_fractions.is_empty() || grid.token_offsets.is_empty() {
        return Err(PatchError::EmptyGrid);
    }
    if dev.is_empty() {
        return Err(PatchError::InvalidInput("no dev entities".into()));
    }
    let train_ids: std::collections::HashSet<&str> = train.iter().map(|f| f.entity_id.as_str()).collect();
    if dev.iter().any(|f| train_ids.contains(f.entity_id.as_str())) {
        return Err(PatchError::InvalidInput("dev entities overlap the probe's training entities".into()));
    }
    let dev = &dev[..grid.n_dev.min(dev.len())];
    let mut cells = Vec::new();
    let mut best: Option<(Locus, f64)> = None;
    for &layer_fraction in &grid.layer_fractions {
        for &token_offset in &grid.token_offsets {
            let locus = Locus {
                layer_fraction,
                token_offset,
            };
            let (mean_rho, n_entities, failed) =
                match score_cell(model, vocab, property, train, dev, locus, grid.steps) {
                    Ok((r, n)) => (r, n, None),
                    Err(e) => (0.0, 0, Some(e.to_string())),
                };
            if best.is_none_or(|(_, r)| mean_rho > r) {
                best = Some((locus, mean_rho));
            }
            cells.push(LocusCell {
                layer_fraction,
                token_offset,
                layer: locus.layer(model.n_layers()),
                mean_rho,
                n_entities,
                failed,
            });
        }
    }
    let (best, best_rho) = best.expect("non-empty grid");
    Ok(LocusSearch {
        property_id: property.id.clone(),
        grid: grid.clone(),
        cells,
        best,
        best_rho,
    })
}
