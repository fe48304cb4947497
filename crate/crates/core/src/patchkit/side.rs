use serde::{Deserialize, Serialize};

use super::{sweep_core, InterventionSweep, PatchError, PatchPlan};
use crate::stats::{effect_matrix, CellSeries, EffectMatrix};
use crate::synthworld::{FactRecord, NumericProperty, Vocab};
use crate::tinylm::LanguageModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideEffectResult {
    pub matrix: EffectMatrix,
    /// Row-major like the matrix.
    pub sweeps: Vec<InterventionSweep>,
}

/// For every ordered pair, patches along the targeted property's plan while
/// prompting for the probed property, on the first `n_entities` test
/// entities of each probed property. `steps` resamples every plan's schedule.
#[allow(clippy::too_many_arguments)]
pub fn run_side_effect_matrix<M: LanguageModel + ?Sized>(
    model: &M,
    vocab: &Vocab,
    properties: &[NumericProperty],
    plans: &[PatchPlan],
    facts_test: &[FactRecord],
    steps: Option<usize>,
    n_entities: usize,
    max_new: usize,
) -> Result<SideEffectResult, PatchError> {
    let mut chosen = Vec::with_capacity(properties.len());
    for p in properties {
        let plan = plans
            .iter()
            .find(|pl| pl.property_id == p.id)
            .ok_or_else(|| PatchError::MissingProbe(p.id.clone()))?;
        chosen.push(match steps {
            Some(s) => plan.with_steps(s)?,
            None => plan.clone(),
        });
    }
    let mut sweeps = Vec::new();
    let mut cells = Vec::new();
    for plan in &chosen {
        for probed in properties {
            let facts: Vec<FactRecord> = facts_test
                .iter()
                .filter(|f| f.property_id == probed.id)
                .take(n_entities)
                .cloned()
                .collect();
            let sweep = sweep_core(model, vocab, probed, &facts, plan, max_new)?;
            cells.push(CellSeries {
                targeted: plan.property_id.clone(),
                probed: probed.id.clone(),
                series: sweep.series(),
            });
            sweeps.push(sweep);
        }
    }
    let ids: Vec<String> = properties.iter().map(|p| p.id.clone()).collect();
    let matrix = effect_matrix(&ids, &ids, &cells)?;
    Ok(SideEffectResult { matrix, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchkit::run_intervention_sweep;
    use crate::patchkit::tests::{oracle_probe, oracle_world};
    use crate::probe::Locus;

    #[test]
    fn oracle_matrix_is_diagonal() {
        let (w, vocab, m) = oracle_world(100);
        let props = &w.config.properties;
        let plans: Vec<PatchPlan> = props
            .iter()
            .map(|p| PatchPlan::from_probe(&p.id, &oracle_probe(&w, &vocab, &m, &p.id), 1, 11, Locus::default()).unwrap())
            .collect();
        let test: Vec<FactRecord> = w
            .test_entities
            .iter()
            .flat_map(|&e| props.iter().map(move |p| (e, p)))
            .map(|(e, p)| w.fact(e, &p.id).unwrap().clone())
            .collect();
        let r = run_side_effect_matrix(&m, &vocab, props, &plans, &test, None, 10, 2).unwrap();
        assert_eq!(r.sweeps.len(), 36);
        for p in props {
            let c = r.matrix.cell(&p.id, &p.id).unwrap();
            assert!(c.mean > 0.9, "{} {c:?}", p.id);
        }
        assert!(r.matrix.max_abs_off_diagonal(&[]) <= 0.2, "{:?}", r.matrix);

        // diagonal equals the plain sweep on the same entities
        let p = &props[2];
        let facts: Vec<FactRecord> = test.iter().filter(|f| f.property_id == p.id).take(10).cloned().collect();
        let plain = run_intervention_sweep(&m, &vocab, p, &facts, &plans[2], 2).unwrap();
        assert_eq!(r.matrix.cell(&p.id, &p.id).unwrap().mean, plain.mean_rho().unwrap());
    }

    #[test]
    fn missing_probe_rejected() {
        let (w, vocab, m) = oracle_world(20);
        let props = &w.config.properties;
        let plan = PatchPlan::from_probe("birthyear", &oracle_probe(&w, &vocab, &m, "birthyear"), 1, 5, Locus::default())
            .unwrap();
        assert!(matches!(
            run_side_effect_matrix(&m, &vocab, props, &[plan], &[], None, 5, 2),
            Err(PatchError::MissingProbe(_))
        ));
    }
}
