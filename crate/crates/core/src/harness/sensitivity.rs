use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cell::CellPlan;
use super::{child_seed, regime_seed, Regime};
use crate::error::Result;
use crate::estimators::{
    fit_with_sampler, ml_estimate, CoefPrior, GibbsSampler, McmcSettings, PriorConfig, VariancePrior,
};
use crate::model::{build_design, generate, solve_condition, ConditionSpec, Design, ModelFormula};
use crate::priorforge::perturb_strength;
use crate::report::sig6;

pub const SENSITIVITY_FACTORS: [f64; 3] = [0.75, 1.0, 1.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub factor: f64,
    pub parameter: String,
    pub median: f64,
    pub width: f64,
    /// `(median - baseline) / |baseline|`.
    pub median_shift: f64,
    pub width_shift: f64,
    pub rhat: Option<f64>,
    pub converged: bool,
}

fn perturb(prior: VariancePrior, factor: f64) -> Result<VariancePrior> {
    Ok(match prior {
        VariancePrior::ModeMatched(p) => VariancePrior::ModeMatched(perturb_strength(&p, p.mode(), factor)?),
        other => other,
    })
}

fn relative(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        if value == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (value - base) / base.abs()
    }
}

/// Refits `design` with each mode-matched variance prior's shape scaled by
/// every factor (mode held fixed) and reports shifts against factor 1.
///
/// Every refit uses the same seed, so the factor-1 rows are the baseline
/// exactly and differences reflect the prior, not Monte Carlo noise.
pub fn sensitivity_sweep(
    design: &Design,
    base: &PriorConfig,
    factors: &[f64],
    settings: &McmcSettings,
    seed: u64,
) -> Result<Vec<SensitivityRow>> {
    let ml = ml_estimate(design)?;
    let fit_at = |factor: f64| -> Result<_> {
        let priors = PriorConfig {
            coef: base.coef.clone(),
            level1_variance: perturb(base.level1_variance, factor)?,
            level2_variance: perturb(base.level2_variance, factor)?,
        };
        let sampler = GibbsSampler::new(design, priors, settings.clone())?.with_start(ml.clone());
        fit_with_sampler(&sampler, "sensitivity", &mut ChaCha8Rng::seed_from_u64(seed))
    };
    let baseline = fit_at(1.0)?;
    let mut rows = Vec::new();
    for &factor in factors {
        let fit = if factor == 1.0 { baseline.clone() } else { fit_at(factor)? };
        for (p, b) in fit.params.iter().zip(&baseline.params) {
            let width = p.width.unwrap_or(f64::NAN);
            rows.push(SensitivityRow {
                factor,
                parameter: p.name.clone(),
                median: p.estimate,
                width,
                median_shift: relative(p.estimate, b.estimate),
                width_shift: relative(width, b.width.unwrap_or(f64::NAN)),
                rhat: p.rhat,
                converged: fit.converged,
            });
        }
    }
    Ok(rows)
}

/// Sweeps one simulated dataset of `spec` with flat coefficient priors and
/// the plan's mode-matched variance priors at the generating values.
pub fn sensitivity_cell(spec: &ConditionSpec, plan: &CellPlan, factors: &[f64]) -> Result<Vec<SensitivityRow>> {
    spec.validate()?;
    let truth = solve_condition(spec);
    let seed = child_seed(plan.seed, &format!("sensitivity:{}", spec.id()), 0);
    let data = generate(spec, &truth, &mut ChaCha8Rng::seed_from_u64(seed));
    let design = build_design(&data, &ModelFormula::simulation())?;
    let (l1, l2) = plan.strength.mode_matched(&truth)?;
    let base = PriorConfig {
        coef: CoefPrior::FlatDefault,
        level1_variance: VariancePrior::ModeMatched(l1),
        level2_variance: VariancePrior::ModeMatched(l2),
    };
    sensitivity_sweep(&design, &base, factors, &plan.mcmc, regime_seed(seed, Regime::BiGab))
}

pub const SENSITIVITY_HEADER: [&str; 9] = [
    "cell_id", "factor", "parameter", "median", "width", "median_shift", "width_shift", "rhat", "converged",
];

/// Incremental `sensitivity.csv` writer, flushed after every cell.
pub struct SensitivityCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> SensitivityCsv<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(SENSITIVITY_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn write_rows(&mut self, cell_id: &str, rows: &[SensitivityRow]) -> Result<()> {
        for r in rows {
            self.writer.write_record([
                cell_id.to_string(),
                sig6(r.factor),
                r.parameter.clone(),
                sig6(r.median),
                sig6(r.width),
                sig6(r.median_shift),
                sig6(r.width_shift),
                r.rhat.map(sig6).unwrap_or_default(),
                r.converged.to_string(),
            ])?;
        }
        self.writer.flush()?;
        Ok(())
    }
}
