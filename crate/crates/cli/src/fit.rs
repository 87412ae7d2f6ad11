use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use serde::Serialize;

use modematch::distributions::InverseGammaPrior;
use modematch::estimators::{
    fit_from_estimate, fit_with_sampler, ml_estimate, FitResult, GibbsSampler, McmcSettings, MlEstimate,
};
use modematch::harness::{regime_rng, Regime, DEFAULT_SEED};
use modematch::model::{build_design, ColumnSplit, Design, ModelFormula, TwoLevelDataset};
use modematch::priorforge::pipeline_prior;
use modematch::report::write_fit_csv;

use crate::prior::PriorDocument;

const ALL_REGIMES: &str = "ML,BUI,BI-N,BI-G01,BI-Gab,N+G01,BI-N+Gab";

#[derive(Args)]
pub struct FitArgs {
    /// Dataset CSV whose header starts with `cluster,y`.
    #[arg(long)]
    data: PathBuf,
    /// Level-1 predictor columns. Without --level1 or --level2, columns are
    /// split by whether they vary within clusters.
    #[arg(long, value_delimiter = ',')]
    level1: Vec<String>,
    /// Level-2 predictor columns.
    #[arg(long, value_delimiter = ',')]
    level2: Vec<String>,
    /// Product term `left:right`; repeatable.
    #[arg(long = "interaction", value_parser = parse_pair)]
    interactions: Vec<(String, String)>,
    /// Subtract cluster means from the level-1 columns first.
    #[arg(long)]
    center: bool,
    /// Comma-separated regime labels.
    #[arg(long, value_delimiter = ',', default_value = ALL_REGIMES)]
    regimes: Vec<Regime>,
    /// Level-2 variance prior JSON from `prior`. Defaults to the worksheet
    /// prior at the ML estimate.
    #[arg(long)]
    tau2_prior: Option<PathBuf>,
    /// Level-1 variance prior JSON from `prior`.
    #[arg(long)]
    sigma2_prior: Option<PathBuf>,
    /// Coefficient anchors in design order; defaults to the ML estimates.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    anchor: Option<Vec<f64>>,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 5_000)]
    iterations: usize,
    #[arg(long, default_value_t = 2_500)]
    burnin: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once(':')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(|| format!("expected `left:right`, got `{s}`"))
}

#[derive(Serialize)]
struct RegimeOutcome<'a> {
    regime: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    seed: u64,
    mcmc: &'a McmcSettings,
    parameters: &'a [String],
    regimes: Vec<RegimeOutcome<'a>>,
}

fn load_design(args: &FitArgs) -> Result<Design> {
    let file = std::fs::File::open(&args.data).with_context(|| format!("cannot open {}", args.data.display()))?;
    let split = if args.level1.is_empty() && args.level2.is_empty() {
        ColumnSplit::Auto
    } else {
        ColumnSplit::Explicit {
            level1: args.level1.clone(),
            level2: args.level2.clone(),
        }
    };
    let mut data = TwoLevelDataset::from_csv(file, &split).with_context(|| format!("reading {}", args.data.display()))?;
    if args.center {
        data = data.center_level1();
    }
    let formula = ModelFormula {
        level1: data.level1().iter().map(|c| c.name.clone()).collect(),
        level2: data.level2().iter().map(|c| c.name.clone()).collect(),
        interactions: args.interactions.clone(),
    };
    Ok(build_design(&data, &formula)?)
}

fn variance_prior(path: Option<&Path>, ml_value: f64, label: &str) -> Result<InverseGammaPrior> {
    match path {
        Some(p) => PriorDocument::load(p)?.prior(),
        None => pipeline_prior(ml_value)
            .with_context(|| format!("no --{label}-prior given and the ML {label} estimate cannot center one")),
    }
}

fn fit_regime(
    design: &Design,
    ml: &MlEstimate,
    regime: Regime,
    args: &FitArgs,
    mcmc: &McmcSettings,
    seed: u64,
) -> Result<FitResult> {
    if !regime.is_bayesian() {
        return Ok(fit_from_estimate(ml));
    }
    let anchor = args.anchor.clone().unwrap_or_else(|| ml.beta.clone());
    let mode_matched = if matches!(regime, Regime::BiGab | Regime::BiNGab) {
        Some((
            variance_prior(args.sigma2_prior.as_deref(), ml.sigma2, "sigma2")?,
            variance_prior(args.tau2_prior.as_deref(), ml.tau2, "tau2")?,
        ))
    } else {
        None
    };
    let priors = regime.priors(&anchor, mode_matched)?.ok_or_else(|| anyhow!("{regime} has no priors"))?;
    let sampler = GibbsSampler::new(design, priors, mcmc.clone())?.with_start(ml.clone());
    Ok(fit_with_sampler(&sampler, regime.label(), &mut regime_rng(seed, regime))?)
}

pub fn run(args: &FitArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let mcmc = McmcSettings {
        chains: args.chains,
        iterations: args.iterations,
        burnin: args.burnin,
        thin: args.thin,
        ..McmcSettings::default()
    };
    mcmc.validate()?;
    let design = load_design(args)?;
    let ml = ml_estimate(&design).context("ML fit failed")?;

    let outcomes: Vec<(Regime, Result<FitResult>)> = args
        .regimes
        .iter()
        .map(|&r| (r, fit_regime(&design, &ml, r, args, &mcmc, seed)))
        .collect();

    let fits: Vec<FitResult> = outcomes.iter().filter_map(|(_, o)| o.as_ref().ok().cloned()).collect();
    write_fit_csv(&fits, crate::create_file(&out.join("fit.csv"))?)?;
    let report = FitReport {
        seed,
        mcmc: &mcmc,
        parameters: &design.names,
        regimes: outcomes
            .iter()
            .map(|(r, o)| RegimeOutcome {
                regime: r.label(),
                result: o.as_ref().ok(),
                error: o.as_ref().err().map(|e| format!("{e:#}")),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    crate::write_file(&out.join("fit.json"), json)?;

    for fit in &fits {
        if !fit.converged {
            let worst = fit.params.iter().filter_map(|p| p.rhat).fold(f64::NAN, f64::max);
            eprintln!("warning: {} did not converge (max R-hat {worst:.3})", fit.method);
        }
    }
    match outcomes.into_iter().find_map(|(r, o)| o.err().map(|e| (r, e))) {
        Some((regime, err)) => Err(err.context(format!("regime {regime} failed"))),
        None => Ok(()),
    }
}
