use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, CellMetrics, MetricSet};
use super::{child_seed, regime_rng, PriorStrengths, Regime};
use crate::error::Result;
use crate::estimators::{
    fit_from_estimate, fit_with_sampler, ml_estimate, FitResult, GibbsSampler, McmcSettings, SIGMA2, TAU2,
};
use crate::model::{build_design, generate, solve_condition, ConditionSpec, ModelFormula, TrueParams};
use crate::parallel::{self, Execution};

/// Everything a cell needs besides its condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPlan {
    pub replications: usize,
    pub regimes: Vec<Regime>,
    pub mcmc: McmcSettings,
    pub seed: u64,
    pub strength: PriorStrengths,
}

/// All regime fits on one simulated dataset. Failures keep their message.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub fits: Vec<(String, std::result::Result<FitResult, String>)>,
}

/// Generating values keyed by parameter name, with whether the parameter
/// is a coefficient subject to a zero test.
pub(crate) fn truth_table(truth: &TrueParams, names: &[String]) -> Vec<(String, f64, bool)> {
    let mut out: Vec<(String, f64, bool)> = names
        .iter()
        .cloned()
        .zip(truth.coefficients())
        .map(|(n, v)| (n, v, true))
        .collect();
    out.push((TAU2.to_string(), truth.tau2, false));
    out.push((SIGMA2.to_string(), truth.sigma2, false));
    out
}

pub(crate) fn simulation_names() -> Vec<String> {
    let mut names = vec![crate::model::INTERCEPT.to_string()];
    names.extend(crate::model::L1_COLUMNS.iter().map(|s| s.to_string()));
    names.extend(crate::model::L2_COLUMNS.iter().map(|s| s.to_string()));
    names
}

pub fn run_replicate(spec: &ConditionSpec, truth: &TrueParams, plan: &CellPlan, replicate: usize) -> ReplicateRecord {
    let seed = child_seed(plan.seed, &spec.id(), replicate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate(spec, truth, &mut rng);
    let prepared = build_design(&data, &ModelFormula::simulation()).and_then(|design| {
        let ml = ml_estimate(&design)?;
        Ok((design, ml))
    });
    let fits = plan
        .regimes
        .iter()
        .map(|&regime| {
            let outcome = match &prepared {
                Err(e) => Err(e.to_string()),
                Ok((design, ml)) => {
                    if regime.is_bayesian() {
                        let mode_matched = plan.strength.mode_matched(truth);
                        run_bayes(design, ml, regime, &truth.coefficients(), mode_matched, &plan.mcmc, seed)
                            .map_err(|e| e.to_string())
                    } else {
                        Ok(fit_from_estimate(ml))
                    }
                }
            };
            (regime.label().to_string(), outcome)
        })
        .collect();
    ReplicateRecord { replicate, seed, fits }
}

fn run_bayes(
    design: &crate::model::Design,
    ml: &crate::estimators::MlEstimate,
    regime: Regime,
    anchor: &[f64],
    mode_matched: Result<(crate::distributions::InverseGammaPrior, crate::distributions::InverseGammaPrior)>,
    mcmc: &McmcSettings,
    seed: u64,
) -> Result<FitResult> {
    let needs_ab = matches!(regime, Regime::BiGab | Regime::BiNGab);
    let ab = if needs_ab { Some(mode_matched?) } else { None };
    let priors = regime.priors(anchor, ab)?.expect("Bayesian regime");
    let sampler = GibbsSampler::new(design, priors, mcmc.clone())?.with_start(ml.clone());
    fit_with_sampler(&sampler, regime.label(), &mut regime_rng(seed, regime))
}

/// Per-(regime, parameter) metrics. `fits[g]` lists one entry per attempted
/// replicate for group `g`; `None` marks a failed fit.
pub(crate) fn aggregate(
    spec: &ConditionSpec,
    truths: &[(String, f64, bool)],
    replications: usize,
    groups: &[(String, Vec<Option<&FitResult>>)],
) -> Result<CellMetrics> {
    let mut rows = Vec::new();
    for (label, fits) in groups {
        if fits.is_empty() {
            continue;
        }
        let ok: Vec<&FitResult> = fits.iter().flatten().copied().collect();
        let converged = ok.iter().filter(|f| f.converged).count() as f64 / fits.len() as f64;
        for (name, truth, tested) in truths {
            let params: Vec<_> = ok.iter().filter_map(|f| f.param(name)).collect();
            let estimates: Vec<f64> = params.iter().map(|p| p.estimate).collect();
            let intervals: Option<Vec<(f64, f64)>> =
                params.iter().map(|p| Some((p.lower?, p.upper?))).collect();
            let mut metrics = compute_metrics(&estimates, *truth, intervals.as_deref(), *tested)?;
            metrics.convergence_rate = converged;
            rows.push(MetricSet {
                regime: label.clone(),
                parameter: name.clone(),
                metrics,
            });
        }
    }
    Ok(CellMetrics {
        spec: *spec,
        replications,
        rows,
    })
}

/// Runs every replicate of one cell. Replicates execute under `exec` but
/// are merged in replicate order.
pub fn run_cell(spec: &ConditionSpec, plan: &CellPlan, exec: Execution) -> Result<(CellMetrics, Vec<ReplicateRecord>)> {
    spec.validate()?;
    let truth = solve_condition(spec);
    let reps: Vec<usize> = (0..plan.replications).collect();
    let records = parallel::map(exec, &reps, |&r| run_replicate(spec, &truth, plan, r));

    let groups: Vec<(String, Vec<Option<&FitResult>>)> = plan
        .regimes
        .iter()
        .enumerate()
        .map(|(k, regime)| {
            let fits = records.iter().map(|rec| rec.fits[k].1.as_ref().ok()).collect();
            (regime.label().to_string(), fits)
        })
        .collect();
    let metrics = aggregate(spec, &truth_table(&truth, &simulation_names()), plan.replications, &groups)?;
    Ok((metrics, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(reps: usize, regimes: Vec<Regime>) -> CellPlan {
        CellPlan {
            replications: reps,
            regimes,
            mcmc: McmcSettings {
                iterations: 600,
                burnin: 300,
                ..McmcSettings::default()
            },
            seed: 11,
            strength: PriorStrengths::default(),
        }
    }

    #[test]
    fn zero_replications_is_empty() {
        let spec = ConditionSpec::new(10, 5, 0.2, 0.0, 0.0);
        let (m, recs) = run_cell(&spec, &small_plan(0, Regime::ALL.to_vec()), Execution::Sequential).unwrap();
        assert!(m.rows.is_empty());
        assert!(recs.is_empty());
    }

    #[test]
    fn regimes_are_independent_of_each_other() {
        let spec = ConditionSpec::new(10, 5, 0.2, 0.2, 0.2);
        let truth = solve_condition(&spec);
        let all = run_replicate(&spec, &truth, &small_plan(1, Regime::ALL.to_vec()), 0);
        let alone = run_replicate(&spec, &truth, &small_plan(1, vec![Regime::BiGab]), 0);
        let joint = all.fits.iter().find(|(l, _)| l == "BI-Gab").unwrap();
        assert_eq!(joint.1, alone.fits[0].1);
    }

    #[test]
    fn cell_rows_cover_every_regime_and_parameter() {
        let spec = ConditionSpec::new(10, 5, 0.2, 0.0, 0.0);
        let (m, recs) = run_cell(&spec, &small_plan(3, Regime::ALL.to_vec()), Execution::Parallel).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(m.rows.len(), 7 * 7);
        let ml_tau = m.get("ML", TAU2).unwrap();
        assert!(ml_tau.coverage.is_none());
        let bui_int = m.get("BUI", "intercept").unwrap();
        assert!(bui_int.fpr.is_some() && bui_int.power.is_none());
        for row in &m.rows {
            assert!((0.0..=1.0).contains(&row.metrics.convergence_rate));
            assert!(row.metrics.rmse + 1e-12 >= row.metrics.bias.abs());
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let spec = ConditionSpec::new(10, 5, 0.4, 0.0, 0.0);
        let plan = small_plan(4, vec![Regime::Ml, Regime::Bui]);
        let a = run_cell(&spec, &plan, Execution::Sequential).unwrap();
        let b = run_cell(&spec, &plan, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
