//! Monte Carlo study orchestration: condition grid, replicate loop, the
//! seven estimation regimes, metric aggregation, the two-stage workflow and
//! prior-strength sensitivity sweeps.

mod cell;
mod grid;
mod metrics;
mod output;
mod sensitivity;
mod two_stage;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::InverseGammaPrior;
use crate::error::{Error, Result};
use crate::estimators::{CoefPrior, McmcSettings, PriorConfig, VariancePrior};
use crate::model::{ConditionSpec, TrueParams};
use crate::priorforge::{make_ig_from_mode, pipeline_prior, ModeTarget, PriorStrength};

pub use cell::{run_cell, run_replicate, CellPlan, ReplicateRecord};
pub use grid::{marginals, run_grid, run_grid_with, GridResult};
pub use metrics::{compute_metrics, CellMetrics, MetricSet, Metrics};
pub use output::{metric_rows, read_metrics_csv, write_metrics_csv, write_replicates_csv, MetricRow, MetricsCsv, METRICS_HEADER};
pub use sensitivity::{
    sensitivity_cell, sensitivity_sweep, SensitivityCsv, SensitivityRow, SENSITIVITY_FACTORS, SENSITIVITY_HEADER,
};
pub use two_stage::{two_stage_cell, TwoStageResult, TwoStageRule};

/// The seven estimation approaches compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "ML")]
    Ml,
    /// Software-default flat priors.
    #[serde(rename = "BUI")]
    Bui,
    /// Coefficients centered on the generating values.
    #[serde(rename = "BI-N")]
    BiN,
    /// `IG(.01, .01)` on both variances.
    #[serde(rename = "BI-G01")]
    BiG01,
    /// Mode-matched `IG(a, b)` on both variances.
    #[serde(rename = "BI-Gab")]
    BiGab,
    #[serde(rename = "N+G01")]
    NG01,
    #[serde(rename = "BI-N+Gab")]
    BiNGab,
}

impl Regime {
    pub const ALL: [Regime; 7] = [
        Regime::Ml,
        Regime::Bui,
        Regime::BiN,
        Regime::BiG01,
        Regime::BiGab,
        Regime::NG01,
        Regime::BiNGab,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Regime::Ml => "ML",
            Regime::Bui => "BUI",
            Regime::BiN => "BI-N",
            Regime::BiG01 => "BI-G01",
            Regime::BiGab => "BI-Gab",
            Regime::NG01 => "N+G01",
            Regime::BiNGab => "BI-N+Gab",
        }
    }

    pub fn is_bayesian(self) -> bool {
        self != Regime::Ml
    }

    fn index(self) -> u64 {
        Regime::ALL.iter().position(|&r| r == self).unwrap_or(0) as u64
    }

    /// Prior configuration, or `None` for ML.
    ///
    /// `anchor` centers the coefficient priors; `mode_matched` supplies the
    /// `(level-1, level-2)` variance priors for the `Gab` regimes.
    pub fn priors(
        self,
        anchor: &[f64],
        mode_matched: Option<(InverseGammaPrior, InverseGammaPrior)>,
    ) -> Result<Option<PriorConfig>> {
        let centered = CoefPrior::CenteredWeak {
            anchor: anchor.to_vec(),
        };
        let matched = || {
            mode_matched
                .map(|(l1, l2)| (VariancePrior::ModeMatched(l1), VariancePrior::ModeMatched(l2)))
                .ok_or_else(|| Error::Config(format!("{} needs mode-matched priors", self.label())))
        };
        let (coef, (l1, l2)) = match self {
            Regime::Ml => return Ok(None),
            Regime::Bui => (CoefPrior::FlatDefault, (VariancePrior::ImproperFlat, VariancePrior::ImproperFlat)),
            Regime::BiN => (centered, (VariancePrior::ImproperFlat, VariancePrior::ImproperFlat)),
            Regime::BiG01 => (CoefPrior::FlatDefault, (VariancePrior::Weak, VariancePrior::Weak)),
            Regime::BiGab => (CoefPrior::FlatDefault, matched()?),
            Regime::NG01 => (centered, (VariancePrior::Weak, VariancePrior::Weak)),
            Regime::BiNGab => (centered, matched()?),
        };
        Ok(Some(PriorConfig {
            coef,
            level1_variance: l1,
            level2_variance: l2,
        }))
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }
}

/// Strength of the mode-matched priors in simulation cells.
///
/// Unset entries use the worksheet prior `IG(m + 1, m (m + 2))` at the
/// generating variance `m`. A df override gives shape `df / 2` at the same
/// mode; `J` and `N - J - p` are the usual choices.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorStrengths {
    #[serde(default)]
    pub tau2_df: Option<f64>,
    #[serde(default)]
    pub sigma2_df: Option<f64>,
}

impl PriorStrengths {
    /// `(level-1, level-2)` mode-matched priors centered on the generating
    /// variances.
    pub fn mode_matched(&self, truth: &TrueParams) -> Result<(InverseGammaPrior, InverseGammaPrior)> {
        let build = |mode: f64, df: Option<f64>| match df {
            Some(df) => make_ig_from_mode(&ModeTarget::from_variance(mode)?, PriorStrength::from_df(df)?),
            None => pipeline_prior(mode),
        };
        Ok((build(truth.sigma2, self.sigma2_df)?, build(truth.tau2, self.tau2_df)?))
    }
}

/// Factor levels of the condition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "J")]
    pub clusters: Vec<usize>,
    #[serde(rename = "M")]
    pub cluster_size: Vec<usize>,
    pub icc: Vec<f64>,
    pub r2w: Vec<f64>,
    pub r2b: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            clusters: vec![10, 30, 100],
            cluster_size: vec![5, 30],
            icc: vec![0.01, 0.20, 0.40],
            r2w: vec![0.0, 0.20, 0.50],
            r2b: vec![0.0, 0.20, 0.50],
        }
    }
}

impl Grid {
    pub fn single(spec: &ConditionSpec) -> Self {
        Self {
            clusters: vec![spec.clusters],
            cluster_size: vec![spec.cluster_size],
            icc: vec![spec.icc],
            r2w: vec![spec.r2_within],
            r2b: vec![spec.r2_between],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub grid: Grid,
    pub replications: usize,
    #[serde(default = "unit_variance")]
    pub v_tot: f64,
    #[serde(default = "all_regimes")]
    pub regimes: Vec<Regime>,
    #[serde(default)]
    pub mcmc: McmcSettings,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub strength: PriorStrengths,
}

fn unit_variance() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn all_regimes() -> Vec<Regime> {
    Regime::ALL.to_vec()
}

pub const DEFAULT_SEED: u64 = 20_250_101;

impl Default for StudyPlan {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            replications: 200,
            v_tot: 1.0,
            regimes: all_regimes(),
            mcmc: McmcSettings::default(),
            seed: DEFAULT_SEED,
            strength: PriorStrengths::default(),
        }
    }
}

impl StudyPlan {
    pub fn single_cell(spec: &ConditionSpec, replications: usize) -> Self {
        Self {
            grid: Grid::single(spec),
            replications,
            v_tot: spec.total_variance,
            ..Self::default()
        }
    }

    /// Cells in lexicographic factor order (J, M, ICC, R2w, R2b).
    pub fn cells(&self) -> Vec<ConditionSpec> {
        let g = &self.grid;
        let mut out = Vec::new();
        for &j in &g.clusters {
            for &m in &g.cluster_size {
                for &icc in &g.icc {
                    for &r2w in &g.r2w {
                        for &r2b in &g.r2b {
                            out.push(ConditionSpec::new(j, m, icc, r2w, r2b).with_total_variance(self.v_tot));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.cells();
        if cells.is_empty() {
            return Err(Error::Config("plan grid has no cells".into()));
        }
        for c in &cells {
            c.validate()?;
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("plan selects no regimes".into()));
        }
        if self.regimes.iter().any(|r| r.is_bayesian()) {
            self.mcmc.validate()?;
        }
        Ok(())
    }

    pub fn cell_plan(&self) -> CellPlan {
        CellPlan {
            replications: self.replications,
            regimes: self.regimes.clone(),
            mcmc: self.mcmc.clone(),
            seed: self.seed,
            strength: self.strength,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replicate `replicate` of the cell named `cell_id`.
pub fn child_seed(master: u64, cell_id: &str, replicate: usize) -> u64 {
    // FNV-1a keeps the cell hash stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in cell_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h) ^ replicate as u64)
}

/// Independent stream for one regime within a replicate, so a regime's
/// result does not depend on which other regimes ran.
pub fn regime_seed(replicate_seed: u64, regime: Regime) -> u64 {
    splitmix64(replicate_seed ^ splitmix64(regime.index() + 1))
}

/// Generator seeded with [`regime_seed`].
pub fn regime_rng(replicate_seed: u64, regime: Regime) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(regime_seed(replicate_seed, regime))
}
