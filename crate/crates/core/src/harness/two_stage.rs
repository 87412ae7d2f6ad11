use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::{aggregate, simulation_names, truth_table, CellPlan, ReplicateRecord};
use super::metrics::CellMetrics;
use super::output::{cell_row, metric_rows, MetricRow};
use super::{child_seed, regime_rng, Regime};
use crate::distributions::InverseGammaPrior;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_with_sampler, ml_estimate, CoefPrior, FitResult, GibbsSampler, PriorConfig, VariancePrior, SIGMA2, TAU2,
};
use crate::model::{build_design, generate, solve_condition, ConditionSpec, ModelFormula};
use crate::parallel::{self, Execution};
use crate::priorforge::{make_ig_from_mode, pipeline_prior, ModeTarget, PriorStrength};

pub const STAGE1: &str = "stage1";
pub const STAGE2: &str = "stage2";

/// Shapes of the stage-2 priors. Unset entries use the worksheet prior
/// `IG(m + 1, m (m + 2))` at the stage-1 median `m`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TwoStageRule {
    #[serde(default)]
    pub tau2_shape: Option<f64>,
    #[serde(default)]
    pub sigma2_shape: Option<f64>,
}

impl TwoStageRule {
    /// Stage-2 `(level-1, level-2)` priors with modes at the stage-1
    /// posterior medians.
    pub fn priors(&self, stage1: &FitResult) -> Result<(InverseGammaPrior, InverseGammaPrior)> {
        let build = |name: &str, shape: Option<f64>| {
            let median = stage1
                .param(name)
                .map(|p| p.estimate)
                .ok_or_else(|| Error::Config(format!("stage-1 fit lacks `{name}`")))?;
            match shape {
                Some(a) => make_ig_from_mode(&ModeTarget::from_posterior(median)?, PriorStrength::from_shape(a)?),
                None => pipeline_prior(ModeTarget::from_posterior(median)?.mode()),
            }
        };
        Ok((build(SIGMA2, self.sigma2_shape)?, build(TAU2, self.tau2_shape)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub spec: ConditionSpec,
    /// Flat-prior fits on every replicate.
    pub stage1: CellMetrics,
    /// Refits with sample-based mode-matched priors.
    pub stage2: CellMetrics,
    /// Mean stage-2 interval width over mean stage-1 width, per parameter,
    /// over replicates where both stages ran.
    pub width_ratio: Vec<(String, f64)>,
    /// Replicates whose stage-1 fit failed or did not converge.
    pub skipped: usize,
    pub records: Vec<ReplicateRecord>,
}

impl TwoStageResult {
    pub fn ratio(&self, parameter: &str) -> Option<f64> {
        self.width_ratio.iter().find(|(n, _)| n == parameter).map(|(_, r)| *r)
    }

    /// Both stages' metrics followed by `width_ratio` and `skipped` rows
    /// under the stage-2 label.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows = metric_rows(&self.stage1);
        rows.extend(metric_rows(&self.stage2));
        for (name, ratio) in &self.width_ratio {
            rows.push(cell_row(&self.spec, STAGE2, name, "width_ratio", *ratio));
        }
        rows.push(cell_row(&self.spec, STAGE2, "", "skipped", self.skipped as f64));
        rows
    }
}

fn run_two_stage_replicate(spec: &ConditionSpec, rule: &TwoStageRule, plan: &CellPlan, r: usize) -> ReplicateRecord {
    let seed = child_seed(plan.seed, &format!("two-stage:{}", spec.id()), r);
    let truth = solve_condition(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate(spec, &truth, &mut rng);

    let flat = PriorConfig::flat();
    let stage1 = build_design(&data, &ModelFormula::simulation()).and_then(|design| {
        let ml = ml_estimate(&design)?;
        let s = GibbsSampler::new(&design, flat.clone(), plan.mcmc.clone())?.with_start(ml.clone());
        let fit = fit_with_sampler(&s, STAGE1, &mut regime_rng(seed, Regime::Bui))?;
        Ok((design, ml, fit))
    });
    let (s1, s2) = match stage1 {
        Err(e) => (Err(e.to_string()), Err(format!("skipped: stage 1 failed: {e}"))),
        Ok((_, _, fit)) if !fit.converged => (Ok(fit), Err("skipped: stage 1 did not converge".to_string())),
        Ok((design, ml, fit)) => {
            let s2 = rule.priors(&fit).and_then(|(l1, l2)| {
                let priors = PriorConfig {
                    coef: CoefPrior::FlatDefault,
                    level1_variance: VariancePrior::ModeMatched(l1),
                    level2_variance: VariancePrior::ModeMatched(l2),
                };
                let s = GibbsSampler::new(&design, priors, plan.mcmc.clone())?.with_start(ml);
                fit_with_sampler(&s, STAGE2, &mut regime_rng(seed, Regime::BiGab))
            });
            (Ok(fit), s2.map_err(|e| e.to_string()))
        }
    };
    ReplicateRecord {
        replicate: r,
        seed,
        fits: vec![(STAGE1.into(), s1), (STAGE2.into(), s2)],
    }
}

/// Stage 1 fits flat priors; stage 2 refits each converged replicate with
/// mode-matched priors centered on the stage-1 variance medians.
pub fn two_stage_cell(spec: &ConditionSpec, rule: &TwoStageRule, plan: &CellPlan, exec: Execution) -> Result<TwoStageResult> {
    spec.validate()?;
    plan.mcmc.validate()?;
    let truth = solve_condition(spec);
    let reps: Vec<usize> = (0..plan.replications).collect();
    let records = parallel::map(exec, &reps, |&r| run_two_stage_replicate(spec, rule, plan, r));

    let skipped = records
        .iter()
        .filter(|r| !matches!(&r.fits[0].1, Ok(f) if f.converged))
        .count();
    let truths = truth_table(&truth, &simulation_names());
    let column = |k: usize| records.iter().map(|r| r.fits[k].1.as_ref().ok()).collect::<Vec<_>>();
    let stage1 = aggregate(spec, &truths, plan.replications, &[(STAGE1.into(), column(0))])?;
    let stage2 = aggregate(spec, &truths, plan.replications, &[(STAGE2.into(), column(1))])?;

    let mut width_ratio = Vec::new();
    for (name, _, _) in &truths {
        let (mut w1, mut w2, mut n) = (0.0, 0.0, 0usize);
        for rec in &records {
            if let (Ok(a), Ok(b)) = (&rec.fits[0].1, &rec.fits[1].1) {
                if let (Some(x), Some(y)) = (
                    a.param(name).and_then(|p| p.width),
                    b.param(name).and_then(|p| p.width),
                ) {
                    w1 += x;
                    w2 += y;
                    n += 1;
                }
            }
        }
        if n > 0 && w1 > 0.0 {
            width_ratio.push((name.clone(), w2 / w1));
        }
    }
    Ok(TwoStageResult {
        spec: *spec,
        stage1,
        stage2,
        width_ratio,
        skipped,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::McmcSettings;
    use crate::harness::PriorStrengths;

    fn plan(reps: usize) -> CellPlan {
        CellPlan {
            replications: reps,
            regimes: vec![],
            mcmc: McmcSettings {
                iterations: 1_500,
                burnin: 750,
                ..McmcSettings::default()
            },
            seed: 3,
            strength: PriorStrengths::default(),
        }
    }

    #[test]
    fn stage2_modes_follow_stage1_medians() {
        let spec = ConditionSpec::new(30, 5, 0.2, 0.0, 0.0);
        let res = two_stage_cell(&spec, &TwoStageRule::default(), &plan(1), Execution::Sequential).unwrap();
        let stage1 = res.records[0].fits[0].1.as_ref().unwrap();
        let (l1, l2) = TwoStageRule::default().priors(stage1).unwrap();
        let m = stage1.param(TAU2).unwrap().estimate;
        assert!((l2.mode() - m).abs() < 1e-12);
        assert!((l2.shape() - (m + 1.0)).abs() < 1e-12);
        assert!((l1.mode() - stage1.param(SIGMA2).unwrap().estimate).abs() < 1e-12);
        let fixed = TwoStageRule {
            tau2_shape: Some(14.5),
            sigma2_shape: None,
        };
        assert_eq!(fixed.priors(stage1).unwrap().1.shape(), 14.5);
    }

    #[test]
    fn informative_stage_narrows_intervals() {
        let spec = ConditionSpec::new(30, 5, 0.2, 0.0, 0.0);
        let res = two_stage_cell(&spec, &TwoStageRule::default(), &plan(6), Execution::Parallel).unwrap();
        assert_eq!(res.records.len(), 6);
        assert!(res.ratio(TAU2).unwrap() < 1.0);
    }

    #[test]
    fn vacuous_rule_leaves_widths_nearly_unchanged() {
        let spec = ConditionSpec::new(30, 5, 0.2, 0.0, 0.0);
        let rule = TwoStageRule {
            tau2_shape: Some(1e-3),
            sigma2_shape: Some(1e-3),
        };
        let res = two_stage_cell(&spec, &rule, &plan(6), Execution::Parallel).unwrap();
        let default = two_stage_cell(&spec, &TwoStageRule::default(), &plan(6), Execution::Parallel).unwrap();
        let weak = res.ratio(TAU2).unwrap();
        assert!((weak - 1.0).abs() < 0.2, "{weak}");
        assert!((weak - 1.0).abs() < (default.ratio(TAU2).unwrap() - 1.0).abs());
    }
}
