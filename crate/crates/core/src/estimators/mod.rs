//! Maximum likelihood and Gibbs estimation of the random-intercept model,
//! plus convergence and fit diagnostics.

mod diagnostics;
mod fit_stats;
mod gibbs;
mod ml;
mod stats;

use serde::{Deserialize, Serialize};

use crate::distributions::InverseGammaPrior;
use crate::error::{Error, Result};

pub use diagnostics::{psrf, quantile_sorted, summarize, Summary};
pub use fit_stats::{dic_and_pd, fit_stats, FitStats};
pub use gibbs::{fit_with_sampler, gibbs_fit, ChainDraws, GibbsSampler, PosteriorDraws};
pub use ml::{fit_from_estimate, marginal_loglik, ml_estimate, ml_fit, MlEstimate, Z_975};

pub const TAU2: &str = "tau2";
pub const SIGMA2: &str = "sigma2";

/// Prior variance of every fixed effect.
pub const COEF_PRIOR_VARIANCE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefPrior {
    /// `N(0, 10^4)` on every coefficient.
    FlatDefault,
    /// `N(anchor_k, 10^4)`, one anchor per coefficient in design order.
    CenteredWeak { anchor: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VariancePrior {
    /// `p(v) ∝ 1`, i.e. `IG(-1, 0)`.
    ImproperFlat,
    /// `IG(0.01, 0.01)`.
    Weak,
    ModeMatched(InverseGammaPrior),
}

impl VariancePrior {
    /// Shape and scale as they enter the conjugate update.
    pub fn shape_scale(&self) -> (f64, f64) {
        match self {
            VariancePrior::ImproperFlat => (-1.0, 0.0),
            VariancePrior::Weak => (0.01, 0.01),
            VariancePrior::ModeMatched(p) => (p.shape(), p.scale()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub coef: CoefPrior,
    pub level1_variance: VariancePrior,
    pub level2_variance: VariancePrior,
}

impl PriorConfig {
    /// Software defaults: diffuse normal coefficients, flat variances.
    pub fn flat() -> Self {
        Self {
            coef: CoefPrior::FlatDefault,
            level1_variance: VariancePrior::ImproperFlat,
            level2_variance: VariancePrior::ImproperFlat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    #[serde(default = "default_psrf_threshold")]
    pub psrf_threshold: f64,
}

fn default_psrf_threshold() -> f64 {
    1.05
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 5_000,
            burnin: 2_500,
            thin: 1,
            psrf_threshold: default_psrf_threshold(),
        }
    }
}

impl McmcSettings {
    /// Long-run settings for publication-scale runs.
    pub fn long() -> Self {
        Self {
            iterations: 50_000,
            burnin: 25_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.thin == 0 {
            return Err(Error::Config("chains and thin must be at least 1".into()));
        }
        if self.burnin >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be below iterations {}",
                self.burnin, self.iterations
            )));
        }
        if !(self.psrf_threshold > 1.0) {
            return Err(Error::Config("PSRF threshold must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    /// ML point estimate or posterior median.
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub width: Option<f64>,
    pub rhat: Option<f64>,
    /// Wald standard error or posterior standard deviation.
    pub se: Option<f64>,
}

impl ParamEstimate {
    /// Whether the interval excludes zero.
    pub fn significant(&self) -> Option<bool> {
        Some(self.lower? > 0.0 || self.upper? < 0.0)
    }

    pub fn covers(&self, value: f64) -> Option<bool> {
        Some(self.lower? <= value && value <= self.upper?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    pub params: Vec<ParamEstimate>,
    pub fit: Option<FitStats>,
    pub converged: bool,
    pub degenerate: bool,
    pub loglik: Option<f64>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&ParamEstimate> {
        self.params.iter().find(|p| p.name == name)
    }
}
