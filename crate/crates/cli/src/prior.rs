use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args};
use serde::{Deserialize, Serialize};

use modematch::distributions::InverseGammaPrior;
use modematch::priorforge::{
    emit_prior_syntax, make_ig_from_mode, scale_for_subsample, table3_pipeline, DerivationTrace, ModeTarget,
    PriorStrength, SubsampleRule, SyntaxDialect,
};
use modematch::report::sig6;

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["mode", "sd", "scale_from"])))]
pub struct PriorArgs {
    /// Target mode of the variance.
    #[arg(long, requires = "shape", allow_negative_numbers = true)]
    mode: Option<f64>,
    /// Shape used with --mode.
    #[arg(long, requires = "mode", allow_negative_numbers = true)]
    shape: Option<f64>,
    /// Target SD; its square is the mode.
    #[arg(long, requires = "df", allow_negative_numbers = true)]
    sd: Option<f64>,
    /// Chi-square df used with --sd.
    #[arg(long, requires = "sd", allow_negative_numbers = true)]
    df: Option<f64>,
    /// Prior JSON from an earlier run, rescaled for a subsample.
    #[arg(long, requires = "ratio")]
    scale_from: Option<PathBuf>,
    /// Subsample ratio in (0, 1] used with --scale-from.
    #[arg(long, requires = "scale_from", allow_negative_numbers = true)]
    ratio: Option<f64>,
    /// Parameter name for the syntax snippets and output file names.
    #[arg(long, default_value = "tau2")]
    name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Derivation {
    ModeShape { mode: f64, shape: f64 },
    Pipeline(DerivationTrace),
    Subsample { mode: f64, source_shape: f64, ratio: f64 },
}

/// The JSON written by `prior` and read back by `--scale-from` and `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorDocument {
    pub name: String,
    pub derivation: Derivation,
    pub shape: f64,
    pub scale: f64,
}

impl PriorDocument {
    fn new(name: &str, derivation: Derivation, prior: &InverseGammaPrior) -> Self {
        Self {
            name: name.to_string(),
            derivation,
            shape: prior.shape(),
            scale: prior.scale(),
        }
    }

    pub fn prior(&self) -> Result<InverseGammaPrior> {
        Ok(InverseGammaPrior::new(self.shape, self.scale)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::read_file(path)?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a prior document", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("prior documents serialize");
        s.push('\n');
        s
    }
}

fn build(args: &PriorArgs) -> Result<PriorDocument> {
    if let (Some(mode), Some(shape)) = (args.mode, args.shape) {
        let prior = make_ig_from_mode(&ModeTarget::from_variance(mode)?, PriorStrength::from_shape(shape)?)?;
        return Ok(PriorDocument::new(&args.name, Derivation::ModeShape { mode, shape }, &prior));
    }
    if let (Some(sd), Some(df)) = (args.sd, args.df) {
        let trace = table3_pipeline(sd, df)?;
        return Ok(PriorDocument::new(&args.name, Derivation::Pipeline(trace), &trace.prior()));
    }
    let (path, ratio) = match (&args.scale_from, args.ratio) {
        (Some(p), Some(r)) => (p, r),
        _ => unreachable!("clap requires one prior source"),
    };
    let source = PriorDocument::load(path)?.prior()?;
    let mode = source.mode();
    let prior = scale_for_subsample(&source, mode, &SubsampleRule::Ratio { ratio })?;
    let derivation = Derivation::Subsample {
        mode,
        source_shape: source.shape(),
        ratio,
    };
    Ok(PriorDocument::new(&args.name, derivation, &prior))
}

fn summary(doc: &PriorDocument, prior: &InverseGammaPrior) -> Result<String> {
    let (lo, hi) = prior.interval(0.90)?;
    let mut s = String::new();
    writeln!(s, "{} ~ IG({}, {})", doc.name, sig6(prior.shape()), sig6(prior.scale()))?;
    writeln!(s, "mode      {}", sig6(prior.mode()))?;
    match prior.mean() {
        Some(m) => writeln!(s, "mean      {}", sig6(m))?,
        None => writeln!(s, "mean      undefined (shape <= 1)")?,
    }
    match prior.variance() {
        Some(v) => writeln!(s, "variance  {}", sig6(v))?,
        None => writeln!(s, "variance  undefined (shape <= 2)")?,
    }
    writeln!(s, "90% interval  [{}, {}]", sig6(lo), sig6(hi))?;
    Ok(s)
}

fn syntax(doc: &PriorDocument, prior: &InverseGammaPrior) -> String {
    format!(
        "! Mplus\n{};\n# BUGS / JAGS\n{}\n",
        emit_prior_syntax(prior, &doc.name, SyntaxDialect::MplusIg),
        emit_prior_syntax(prior, &doc.name, SyntaxDialect::BugsPrecisionGamma),
    )
}

pub fn run(args: &PriorArgs, out: &Path) -> Result<()> {
    let doc = build(args)?;
    let prior = doc.prior()?;
    let summary = summary(&doc, &prior)?;
    crate::write_file(&out.join(format!("{}_prior.json", doc.name)), doc.to_json())?;
    crate::write_file(&out.join(format!("{}_summary.txt", doc.name)), &summary)?;
    crate::write_file(&out.join(format!("{}_syntax.txt", doc.name)), syntax(&doc, &prior))?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(mode: Option<f64>, shape: Option<f64>, sd: Option<f64>, df: Option<f64>) -> PriorArgs {
        PriorArgs {
            mode,
            shape,
            sd,
            df,
            scale_from: None,
            ratio: None,
            name: "tau2".into(),
        }
    }

    #[test]
    fn json_reemits_byte_identical() {
        for a in [
            args(None, None, Some(12.38), Some(272.0)),
            args(Some(25.0), Some(15.0), None, None),
            args(Some(0.1), Some(1.0 / 3.0), None, None),
        ] {
            let json = build(&a).unwrap().to_json();
            let back: PriorDocument = serde_json::from_str(&json).unwrap();
            assert_eq!(back.to_json(), json);
        }
    }

    #[test]
    fn mode_and_shape_give_mode_matched_scale() {
        let doc = build(&args(Some(25.0), Some(15.0), None, None)).unwrap();
        assert_eq!((doc.shape, doc.scale), (15.0, 400.0));
    }

    #[test]
    fn undefined_mean_is_flagged() {
        let doc = build(&args(Some(1.0), Some(1.0), None, None)).unwrap();
        let text = summary(&doc, &doc.prior().unwrap()).unwrap();
        assert!(text.contains("mean      undefined"));
        assert!(text.starts_with("tau2 ~ IG(1, 2)"));
    }
}
