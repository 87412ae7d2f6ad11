//! Maximum likelihood for the random-intercept model.
//!
//! With `rho = tau2 / sigma2`, both `beta` (GLS) and `sigma2` have closed
//! forms, leaving a one-dimensional profile likelihood in `rho >= 0`. Its
//! derivative is available analytically, so interior optima are located by
//! bisection on the score rather than on the likelihood itself.

use nalgebra::{DMatrix, DVector};

use super::stats::SufficientStats;
use super::{FitResult, ParamEstimate, SIGMA2, TAU2};
use crate::error::{Error, Result};
use crate::model::Design;

/// Two-sided 95% normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

const LOG_RHO_MIN: f64 = -20.0;
const LOG_RHO_MAX: f64 = 18.0;
const GRID: usize = 120;

#[derive(Debug, Clone, PartialEq)]
pub struct MlEstimate {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub loglik: f64,
    /// `sigma2` collapsed to zero (constant or perfectly fitted outcome).
    pub degenerate: bool,
}

struct Profile {
    beta: DVector<f64>,
    info: DMatrix<f64>,
    q: f64,
    score: f64,
    loglik: f64,
}

fn profile(stats: &SufficientStats, rho: f64) -> Result<Profile> {
    let weights: Vec<f64> = stats.sizes.iter().map(|&n| n / (1.0 + n * rho)).collect();
    let mut info = stats.wxx.clone();
    let mut rhs = stats.wxy.clone();
    for (c, &w) in weights.iter().enumerate() {
        let xb = stats.xbar.row(c).transpose();
        info += (w * &xb) * xb.transpose();
        rhs += (w * stats.ybar[c]) * &xb;
    }
    let chol = info.clone().cholesky().ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&rhs);
    let rbar = stats.cluster_residual_means(&beta);
    let between: f64 = weights.iter().zip(rbar.iter()).map(|(w, r)| w * r * r).sum();
    let q = stats.within_ss(&beta) + between;

    let n = stats.n as f64;
    let ln_det: f64 = stats.sizes.iter().map(|&nj| (1.0 + nj * rho).ln()).sum();
    let curvature: f64 = stats
        .sizes
        .iter()
        .zip(rbar.iter())
        .map(|(&nj, r)| {
            let d = 1.0 + nj * rho;
            nj * nj * r * r / (d * d)
        })
        .sum();
    let trace: f64 = stats.sizes.iter().map(|&nj| nj / (1.0 + nj * rho)).sum();
    let score = 0.5 * (n * curvature / q - trace);
    let loglik = -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + n * (q / n).ln() + n + ln_det);
    Ok(Profile {
        beta,
        info,
        q,
        score,
        loglik,
    })
}

/// Maximizes the marginal likelihood over `(beta, sigma2, tau2 >= 0)`.
pub fn ml_estimate(design: &Design) -> Result<MlEstimate> {
    if design.n_clusters < 2 {
        return Err(Error::Config("ML needs at least two clusters".into()));
    }
    if design.n() <= design.p() {
        return Err(Error::SingularDesign);
    }
    let stats = SufficientStats::new(design);
    stats.xtx.clone().cholesky().ok_or(Error::SingularDesign)?;

    let at_zero = profile(&stats, 0.0)?;
    if at_zero.q <= f64::EPSILON * (stats.wyy + stats.ybar.norm_squared()).max(f64::MIN_POSITIVE) {
        // Residuals are rounding noise; report an exact zero.
        let prof = Profile { q: 0.0, ..at_zero };
        return Ok(degenerate(design, &stats, prof, 0.0));
    }

    // Scan the score on a log grid; every + to - crossing brackets a local
    // maximum. The boundary rho = 0 is always a candidate.
    let mut best = (0.0, at_zero);
    let mut prev: Option<(f64, f64)> = None;
    let mut last_score = 0.0;
    for g in 0..=GRID {
        let lr = LOG_RHO_MIN + (LOG_RHO_MAX - LOG_RHO_MIN) * g as f64 / GRID as f64;
        let s = profile(&stats, lr.exp())?.score;
        if let Some((plr, ps)) = prev {
            if ps > 0.0 && s <= 0.0 {
                let root = bisect_score(&stats, plr, lr)?;
                let cand = profile(&stats, root)?;
                if cand.loglik > best.1.loglik {
                    best = (root, cand);
                }
            }
        }
        prev = Some((lr, s));
        last_score = s;
    }
    if !best.1.loglik.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    if last_score > 0.0 && best.0 == 0.0 && best.1.score > 0.0 {
        // Likelihood still rising at the top of the grid: sigma2 -> 0.
        let rho = LOG_RHO_MAX.exp();
        let prof = profile(&stats, rho)?;
        return Ok(degenerate(design, &stats, prof, rho));
    }

    let (rho, prof) = best;
    let n = stats.n as f64;
    let sigma2 = prof.q / n;
    let cov = prof
        .info
        .clone()
        .try_inverse()
        .ok_or(Error::SingularDesign)?
        * sigma2;
    Ok(MlEstimate {
        names: design.names.clone(),
        beta: prof.beta.iter().copied().collect(),
        se: (0..stats.p).map(|k| cov[(k, k)].sqrt()).collect(),
        sigma2,
        tau2: rho * sigma2,
        loglik: prof.loglik,
        degenerate: false,
    })
}

fn degenerate(design: &Design, stats: &SufficientStats, prof: Profile, rho: f64) -> MlEstimate {
    let sigma2 = prof.q / stats.n as f64;
    MlEstimate {
        names: design.names.clone(),
        beta: prof.beta.iter().copied().collect(),
        se: vec![0.0; stats.p],
        sigma2,
        tau2: rho * sigma2,
        loglik: f64::INFINITY,
        degenerate: true,
    }
}

fn bisect_score(stats: &SufficientStats, mut lo: f64, mut hi: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if profile(stats, mid.exp())?.score > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// ML fit with 95% Wald intervals on the fixed effects. Variance components
/// carry point estimates only.
pub fn ml_fit(design: &Design) -> Result<FitResult> {
    let est = ml_estimate(design)?;
    Ok(fit_from_estimate(&est))
}

pub fn fit_from_estimate(est: &MlEstimate) -> FitResult {
    let mut params: Vec<ParamEstimate> = est
        .names
        .iter()
        .zip(est.beta.iter().zip(&est.se))
        .map(|(name, (&b, &se))| {
            let lower = b - Z_975 * se;
            let upper = b + Z_975 * se;
            ParamEstimate {
                name: name.clone(),
                estimate: b,
                lower: Some(lower),
                upper: Some(upper),
                width: Some(upper - lower),
                rhat: None,
                se: Some(se),
            }
        })
        .collect();
    for (name, value) in [(TAU2, est.tau2), (SIGMA2, est.sigma2)] {
        params.push(ParamEstimate {
            name: name.to_string(),
            estimate: value,
            lower: None,
            upper: None,
            width: None,
            rhat: None,
            se: None,
        });
    }
    FitResult {
        method: "ML".to_string(),
        params,
        fit: None,
        converged: !est.degenerate,
        degenerate: est.degenerate,
        loglik: Some(est.loglik),
    }
}

/// Marginal log-likelihood of the random-intercept model, evaluated
/// directly from the data rows.
pub fn marginal_loglik(design: &Design, beta: &[f64], sigma2: f64, tau2: f64) -> f64 {
    let j = design.n_clusters;
    let mut sizes = vec![0.0; j];
    let mut sum_r = vec![0.0; j];
    let mut sum_r2 = vec![0.0; j];
    for i in 0..design.n() {
        let c = design.cluster[i];
        let fitted: f64 = design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum();
        let r = design.y[i] - fitted;
        sizes[c] += 1.0;
        sum_r[c] += r;
        sum_r2[c] += r * r;
    }
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    (0..j)
        .map(|c| {
            let n = sizes[c];
            let d = sigma2 + n * tau2;
            // V^-1 = (I - tau2/d * 11') / sigma2
            let quad = (sum_r2[c] - tau2 / d * sum_r[c] * sum_r[c]) / sigma2;
            -0.5 * (n * ln2pi + (n - 1.0) * sigma2.ln() + d.ln() + quad)
        })
        .sum()
}
