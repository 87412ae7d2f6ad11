//! Blocked conjugate Gibbs sampler for the random-intercept model.
//!
//! One sweep draws, in order:
//!
//! 1. `beta | u, sigma2` from its normal full conditional;
//! 2. each `u_j | beta, sigma2, tau2` (normal);
//! 3. `sigma2 | beta, u ~ IG(a_s + N/2, b_s + SSE/2)`;
//! 4. `tau2 | u ~ IG(a_t + J/2, b_t + sum u_j^2 / 2)`.
//!
//! The improper flat variance prior enters only as `(a, b) = (-1, 0)` in
//! steps 3 and 4.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::diagnostics::{psrf, summarize};
use super::fit_stats::fit_stats;
use super::ml::{ml_estimate, MlEstimate};
use super::stats::SufficientStats;
use super::{
    CoefPrior, FitResult, McmcSettings, ParamEstimate, PriorConfig, COEF_PRIOR_VARIANCE, SIGMA2,
    TAU2,
};
use crate::distributions::sample_inverse_gamma;
use crate::error::{Error, Result};
use crate::model::Design;

/// Kept draws from one chain, stored column-wise.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    /// One column per fixed effect, then `tau2`, then `sigma2`.
    pub columns: Vec<Vec<f64>>,
    /// Conditional residual sum of squares at each kept state.
    pub sse: Vec<f64>,
    pub u_sum: Vec<f64>,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.sse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sse.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.chains.iter().flat_map(|c| c.columns[k].iter().copied()).collect())
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    /// Posterior means of the random intercepts.
    pub fn u_mean(&self) -> Vec<f64> {
        let total = self.n_draws() as f64;
        let j = self.chains[0].u_sum.len();
        (0..j)
            .map(|c| self.chains.iter().map(|ch| ch.u_sum[c]).sum::<f64>() / total)
            .collect()
    }

    fn summarize_into(&self, method: &str, settings: &McmcSettings) -> Result<FitResult> {
        let mut params = Vec::with_capacity(self.names.len());
        let mut converged = true;
        for (k, name) in self.names.iter().enumerate() {
            let pooled: Vec<f64> = self.chains.iter().flat_map(|c| c.columns[k].iter().copied()).collect();
            let s = summarize(&pooled, 0.95)?;
            let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let sd = if pooled.len() > 1 {
                (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let rhat = if self.chains.len() >= 2 && self.chains[0].len() >= 2 {
                let cols: Vec<&[f64]> = self.chains.iter().map(|c| c.columns[k].as_slice()).collect();
                let r = psrf(&cols)?;
                converged &= r.is_finite() && r < settings.psrf_threshold;
                Some(r)
            } else {
                None
            };
            params.push(ParamEstimate {
                name: name.clone(),
                estimate: s.median,
                lower: Some(s.lower),
                upper: Some(s.upper),
                width: Some(s.width),
                rhat,
                se: Some(sd),
            });
        }
        Ok(FitResult {
            method: method.to_string(),
            params,
            fit: None,
            converged,
            degenerate: false,
            loglik: None,
        })
    }
}

/// Configured sampler for one design and prior set.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    design: &'a Design,
    stats: SufficientStats,
    priors: PriorConfig,
    settings: McmcSettings,
    start: Option<MlEstimate>,
    fixed_beta: Option<DVector<f64>>,
    random_intercepts: bool,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(design: &'a Design, priors: PriorConfig, settings: McmcSettings) -> Result<Self> {
        settings.validate()?;
        if let CoefPrior::CenteredWeak { anchor } = &priors.coef {
            if anchor.len() != design.p() {
                return Err(Error::Config(format!(
                    "coefficient anchor has {} entries for {} fixed effects",
                    anchor.len(),
                    design.p()
                )));
            }
        }
        Ok(Self {
            stats: SufficientStats::new(design),
            design,
            priors,
            settings,
            start: None,
            fixed_beta: None,
            random_intercepts: true,
        })
    }

    /// Starts chains around an existing ML fit instead of refitting.
    pub fn with_start(mut self, start: MlEstimate) -> Self {
        self.start = Some(start);
        self
    }

    /// Holds `beta` at the given values; its block is skipped.
    pub fn fix_beta(mut self, beta: &[f64]) -> Self {
        self.fixed_beta = Some(DVector::from_column_slice(beta));
        self
    }

    /// Sets every `u_j = 0` and skips the `u` and `tau2` blocks.
    pub fn without_random_intercepts(mut self) -> Self {
        self.random_intercepts = false;
        self
    }

    fn conditional_shapes(&self) -> Result<(f64, f64)> {
        let (a_s, _) = self.priors.level1_variance.shape_scale();
        let (a_t, _) = self.priors.level2_variance.shape_scale();
        let shape_s = a_s + self.stats.n as f64 / 2.0;
        let shape_t = a_t + self.stats.j as f64 / 2.0;
        if shape_s <= 0.0 {
            return Err(Error::ImproperPosterior(format!(
                "sigma2 conditional shape {shape_s} <= 0 (N = {})",
                self.stats.n
            )));
        }
        if self.random_intercepts && shape_t <= 0.0 {
            return Err(Error::ImproperPosterior(format!(
                "tau2 conditional shape {shape_t} <= 0 (J = {})",
                self.stats.j
            )));
        }
        Ok((shape_s, shape_t))
    }

    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PosteriorDraws> {
        self.conditional_shapes()?;
        let start = match &self.start {
            Some(s) => s.clone(),
            None => ml_estimate(self.design)?,
        };
        let seeds: Vec<u64> = (0..self.settings.chains).map(|_| rng.next_u64()).collect();
        let chains = seeds
            .iter()
            .enumerate()
            .map(|(c, &seed)| self.run_chain(c, &start, &mut ChaCha8Rng::seed_from_u64(seed)))
            .collect::<Result<Vec<_>>>()?;
        let mut names = self.design.names.clone();
        names.push(TAU2.to_string());
        names.push(SIGMA2.to_string());
        Ok(PosteriorDraws { names, chains })
    }

    fn run_chain(&self, chain: usize, start: &MlEstimate, rng: &mut ChaCha8Rng) -> Result<ChainDraws> {
        let st = &self.stats;
        let (p, j) = (st.p, st.j);
        let (shape_s, shape_t) = self.conditional_shapes()?;
        let (_, b_s) = self.priors.level1_variance.shape_scale();
        let (_, b_t) = self.priors.level2_variance.shape_scale();

        let prior_prec = 1.0 / COEF_PRIOR_VARIANCE;
        let prior_mean = match &self.priors.coef {
            CoefPrior::FlatDefault => DVector::zeros(p),
            CoefPrior::CenteredWeak { anchor } => DVector::from_column_slice(anchor),
        };
        let prior_term = prior_prec * &prior_mean;

        // Overdispersed start around the ML fit.
        let sign = if chain % 2 == 0 { 1.0 } else { -1.0 };
        let mut beta = match &self.fixed_beta {
            Some(b) => b.clone(),
            None => DVector::from_iterator(
                p,
                start.beta.iter().zip(&start.se).map(|(b, se)| b + sign * 2.0 * se),
            ),
        };
        let scale_hint = (st.wyy / st.n as f64).max(f64::MIN_POSITIVE);
        let mut sigma2 = start.sigma2.max(1e-12 * scale_hint) * (0.2 * normal(rng)).exp();
        let mean_size = st.n as f64 / j as f64;
        let mut tau2 = start.tau2.max(0.1 * sigma2 / mean_size) * (0.2 * normal(rng)).exp();
        let mut u = DVector::zeros(j);
        if self.random_intercepts {
            let rbar = st.cluster_residual_means(&beta);
            for c in 0..j {
                let v = 1.0 / (st.sizes[c] / sigma2 + 1.0 / tau2);
                u[c] = v * st.sizes[c] * rbar[c] / sigma2;
            }
        }

        let s = &self.settings;
        let kept = (s.iterations - s.burnin).div_ceil(s.thin);
        let mut columns = vec![Vec::with_capacity(kept); p + 2];
        let mut sse_kept = Vec::with_capacity(kept);
        let mut u_sum = vec![0.0; j];
        let mut z = DVector::zeros(p);
        let mut nu = DVector::zeros(j);

        for it in 0..s.iterations {
            if self.fixed_beta.is_none() {
                for c in 0..j {
                    nu[c] = st.sizes[c] * u[c];
                }
                let mut prec: DMatrix<f64> = &st.xtx / sigma2;
                for k in 0..p {
                    prec[(k, k)] += prior_prec;
                }
                let rhs = (&st.xty - st.xbar.tr_mul(&nu)) / sigma2 + &prior_term;
                let chol = prec.cholesky().ok_or(Error::SingularDesign)?;
                let mean = chol.solve(&rhs);
                for k in 0..p {
                    z[k] = normal(rng);
                }
                let noise = chol
                    .l()
                    .tr_solve_lower_triangular(&z)
                    .ok_or(Error::SingularDesign)?;
                beta = mean + noise;
            }

            let rbar = st.cluster_residual_means(&beta);
            let mut between = 0.0;
            let mut u_ss = 0.0;
            for c in 0..j {
                if self.random_intercepts {
                    let v = 1.0 / (st.sizes[c] / sigma2 + 1.0 / tau2);
                    u[c] = v * st.sizes[c] * rbar[c] / sigma2 + v.sqrt() * normal(rng);
                }
                let d = rbar[c] - u[c];
                between += st.sizes[c] * d * d;
                u_ss += u[c] * u[c];
            }
            let sse = st.within_ss(&beta) + between;

            let scale_s = b_s + sse / 2.0;
            if !(scale_s > 0.0) {
                return Err(Error::ImproperPosterior("sigma2 conditional scale is zero".into()));
            }
            sigma2 = sample_inverse_gamma(shape_s, scale_s, rng);
            if self.random_intercepts {
                let scale_t = b_t + u_ss / 2.0;
                if !(scale_t > 0.0) {
                    return Err(Error::ImproperPosterior("tau2 conditional scale is zero".into()));
                }
                tau2 = sample_inverse_gamma(shape_t, scale_t, rng);
            }
            if !(sigma2.is_finite() && tau2.is_finite() && sigma2 > 0.0) {
                return Err(Error::NonFiniteLikelihood);
            }

            if it >= s.burnin && (it - s.burnin) % s.thin == 0 {
                for k in 0..p {
                    columns[k].push(beta[k]);
                }
                columns[p].push(tau2);
                columns[p + 1].push(sigma2);
                sse_kept.push(sse);
                for c in 0..j {
                    u_sum[c] += u[c];
                }
            }
        }
        Ok(ChainDraws {
            columns,
            sse: sse_kept,
            u_sum,
        })
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Runs the sampler and summarizes: posterior medians, equal-tailed 95%
/// intervals, per-parameter PSRF and posterior predictive fit statistics.
pub fn gibbs_fit<R: Rng + ?Sized>(
    design: &Design,
    priors: &PriorConfig,
    settings: &McmcSettings,
    rng: &mut R,
) -> Result<FitResult> {
    let sampler = GibbsSampler::new(design, priors.clone(), settings.clone())?;
    fit_with_sampler(&sampler, "Bayes", rng)
}

pub fn fit_with_sampler<R: Rng + ?Sized>(
    sampler: &GibbsSampler<'_>,
    method: &str,
    rng: &mut R,
) -> Result<FitResult> {
    let draws = sampler.run(rng)?;
    let mut fit = draws.summarize_into(method, &sampler.settings)?;
    fit.fit = Some(fit_stats(&draws, sampler.design, rng));
    Ok(fit)
}
