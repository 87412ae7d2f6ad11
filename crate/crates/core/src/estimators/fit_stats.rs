//! Posterior predictive checks and DIC on the conditional deviance
//! `D = N ln(2 pi sigma2) + SSE / sigma2`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gibbs::PosteriorDraws;
use super::stats::SufficientStats;
use super::{SIGMA2, TAU2};
use crate::distributions::standard_gamma;
use crate::model::Design;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    /// Posterior predictive p-value.
    pub ppp: f64,
    /// 95% interval of `D_obs - D_rep`.
    pub ppc_lower: f64,
    pub ppc_upper: f64,
    pub dic: f64,
    pub pd: f64,
}

/// `(DIC, pD)` from the mean deviance and the deviance at the posterior mean.
pub fn dic_and_pd(mean_deviance: f64, deviance_at_mean: f64) -> (f64, f64) {
    let pd = mean_deviance - deviance_at_mean;
    (mean_deviance + pd, pd)
}

fn deviance(n: f64, sigma2: f64, sse: f64) -> f64 {
    n * (2.0 * std::f64::consts::PI * sigma2).ln() + sse / sigma2
}

pub fn fit_stats<R: Rng + ?Sized>(draws: &PosteriorDraws, design: &Design, rng: &mut R) -> FitStats {
    let n = design.n() as f64;
    let p = design.p();
    let k_sigma = draws.names.iter().position(|s| s == SIGMA2).expect("sigma2 column");
    let _ = TAU2;

    let mut d_obs = Vec::with_capacity(draws.n_draws());
    let mut diffs = Vec::with_capacity(draws.n_draws());
    let mut exceed = 0usize;
    for chain in &draws.chains {
        for (t, &sse) in chain.sse.iter().enumerate() {
            let s2 = chain.columns[k_sigma][t];
            let obs = deviance(n, s2, sse);
            // Replicated data share sigma2, so SSE_rep / sigma2 ~ chi-square(N).
            let chi = 2.0 * standard_gamma(n / 2.0, rng);
            let rep = n * (2.0 * std::f64::consts::PI * s2).ln() + chi;
            if rep >= obs {
                exceed += 1;
            }
            d_obs.push(obs);
            diffs.push(obs - rep);
        }
    }
    let total = d_obs.len() as f64;
    let dbar = d_obs.iter().sum::<f64>() / total;

    let mean_of = |k: usize| {
        draws.chains.iter().flat_map(|c| c.columns[k].iter()).sum::<f64>() / total
    };
    let beta_bar = DVector::from_iterator(p, (0..p).map(mean_of));
    let sigma2_bar = mean_of(k_sigma);
    let u_bar = draws.u_mean();
    let stats = SufficientStats::new(design);
    let rbar = stats.cluster_residual_means(&beta_bar);
    let between: f64 = (0..stats.j)
        .map(|c| stats.sizes[c] * (rbar[c] - u_bar[c]).powi(2))
        .sum();
    let dhat = deviance(n, sigma2_bar, stats.within_ss(&beta_bar) + between);
    let (dic, pd) = dic_and_pd(dbar, dhat);

    let s = super::diagnostics::summarize(&diffs, 0.95).expect("non-empty draws");
    FitStats {
        ppp: exceed as f64 / total,
        ppc_lower: s.lower,
        ppc_upper: s.upper,
        dic,
        pd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::InverseGammaPrior;
    use crate::estimators::{gibbs_fit, McmcSettings, PriorConfig, VariancePrior};
    use crate::model::{build_design, generate, solve_condition, ConditionSpec, ModelFormula};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dic_identity() {
        let (dic, pd) = dic_and_pd(120.0, 110.0);
        assert_eq!(pd, 10.0);
        assert_eq!(dic, 130.0);
    }

    fn settings() -> McmcSettings {
        McmcSettings {
            chains: 2,
            iterations: 4_000,
            burnin: 2_000,
            thin: 1,
            psrf_threshold: 1.05,
        }
    }

    #[test]
    fn well_specified_ppp_is_central() {
        let spec = ConditionSpec::new(30, 10, 0.2, 0.2, 0.2);
        let data = generate(&spec, &solve_condition(&spec), &mut ChaCha8Rng::seed_from_u64(8));
        let design = build_design(&data, &ModelFormula::simulation()).unwrap();
        let fit = gibbs_fit(&design, &PriorConfig::flat(), &settings(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let f = fit.fit.unwrap();
        assert!((0.3..=0.7).contains(&f.ppp), "ppp {}", f.ppp);
        assert!(f.ppc_lower < 0.0 && f.ppc_upper > 0.0);
    }

    #[test]
    fn informative_prior_lowers_effective_parameters() {
        let spec = ConditionSpec::new(10, 5, 0.3, 0.0, 0.0);
        let params = solve_condition(&spec);
        let data = generate(&spec, &params, &mut ChaCha8Rng::seed_from_u64(11));
        let design = build_design(&data, &ModelFormula::intercept_only()).unwrap();
        let weak = PriorConfig {
            level2_variance: VariancePrior::Weak,
            ..PriorConfig::flat()
        };
        let strong = PriorConfig {
            level2_variance: VariancePrior::ModeMatched(
                InverseGammaPrior::new(200.0, params.tau2 * 201.0).unwrap(),
            ),
            ..PriorConfig::flat()
        };
        let pd_weak = gibbs_fit(&design, &weak, &settings(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .fit
            .unwrap()
            .pd;
        let pd_strong = gibbs_fit(&design, &strong, &settings(), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .fit
            .unwrap()
            .pd;
        assert!(pd_strong < pd_weak, "strong {pd_strong} weak {pd_weak}");
    }
}
