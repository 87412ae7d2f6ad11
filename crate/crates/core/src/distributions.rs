//! Chi-square, gamma and inverse-gamma kernels.
//!
//! The three families are linked by two identities that the prior
//! construction relies on:
//!
//! * `c * chi2(v)` is `Gamma(v / 2, 2c)` (shape, scale);
//! * if `P ~ Gamma(alpha, theta)` then `1 / P ~ IG(alpha, 1 / theta)`.
//!
//! Inverse-gamma quantiles and draws are computed through the gamma side of
//! the reciprocal identity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::special::{gamma_p, gamma_q, ln_gamma};

/// Gamma distribution in the shape/scale parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeScale", into = "ShapeScale")]
pub struct GammaDist {
    shape: f64,
    scale: f64,
}

/// Inverse-gamma distribution `IG(a, b)` with shape `a` and scale `b`.
///
/// Density `b^a / Gamma(a) * x^-(a+1) * exp(-b / x)` on `x > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeScale", into = "ShapeScale")]
pub struct InverseGammaPrior {
    shape: f64,
    scale: f64,
}

/// `c * chi2(df)`; `df` may be fractional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledChiSquare {
    df: f64,
    scale: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ShapeScale {
    shape: f64,
    scale: f64,
}

impl TryFrom<ShapeScale> for GammaDist {
    type Error = Error;
    fn try_from(raw: ShapeScale) -> Result<Self> {
        GammaDist::new(raw.shape, raw.scale)
    }
}

impl From<GammaDist> for ShapeScale {
    fn from(g: GammaDist) -> Self {
        ShapeScale {
            shape: g.shape,
            scale: g.scale,
        }
    }
}

impl TryFrom<ShapeScale> for InverseGammaPrior {
    type Error = Error;
    fn try_from(raw: ShapeScale) -> Result<Self> {
        InverseGammaPrior::new(raw.shape, raw.scale)
    }
}

impl From<InverseGammaPrior> for ShapeScale {
    fn from(g: InverseGammaPrior) -> Self {
        ShapeScale {
            shape: g.shape,
            scale: g.scale,
        }
    }
}

/// Moments of an inverse-gamma; absent entries do not exist for the shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgStats {
    pub mode: f64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

impl GammaDist {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self {
            shape: ensure_positive("shape", shape)?,
            scale: ensure_positive("scale", scale)?,
        })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    /// `(shape - 1) * scale`, only defined for `shape > 1`.
    pub fn mode(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| (self.shape - 1.0) * self.scale)
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        -ln_gamma(self.shape) - self.shape * self.scale.ln() + (self.shape - 1.0) * x.ln()
            - x / self.scale
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        gamma_p(self.shape, x / self.scale)
    }

    pub fn sf(&self, x: f64) -> f64 {
        gamma_q(self.shape, x / self.scale)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(self.scale * standard_gamma_quantile(self.shape, p, false))
    }
}

impl InverseGammaPrior {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        Ok(Self {
            shape: ensure_positive("shape", shape)?,
            scale: ensure_positive("scale", scale)?,
        })
    }

    /// The weak `IG(.01, .01)` prior common as a software default.
    pub fn weak() -> Self {
        Self {
            shape: 0.01,
            scale: 0.01,
        }
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `b / (a + 1)`; exists for every `a > 0`.
    pub fn mode(&self) -> f64 {
        self.scale / (self.shape + 1.0)
    }

    pub fn mean(&self) -> Option<f64> {
        (self.shape > 1.0).then(|| self.scale / (self.shape - 1.0))
    }

    pub fn variance(&self) -> Option<f64> {
        (self.shape > 2.0).then(|| {
            let am1 = self.shape - 1.0;
            self.scale * self.scale / (am1 * am1 * (self.shape - 2.0))
        })
    }

    pub fn stats(&self) -> IgStats {
        IgStats {
            mode: self.mode(),
            mean: self.mean(),
            variance: self.variance(),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        gamma_q(self.shape, self.scale / x)
    }

    /// `q_IG(p) = 1 / q_Gamma(1 - p)` on the reciprocal gamma.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let standard = standard_gamma_quantile(self.shape, p, true);
        Ok(self.scale / standard)
    }

    /// Equal-tailed interval holding `level` of the mass.
    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        check_probability(level)?;
        let tail = (1.0 - level) / 2.0;
        Ok((self.quantile(tail)?, self.quantile(1.0 - tail)?))
    }

    /// The gamma distribution of the reciprocal (precision).
    pub fn reciprocal(&self) -> GammaDist {
        GammaDist {
            shape: self.shape,
            scale: 1.0 / self.scale,
        }
    }
}

impl ScaledChiSquare {
    pub fn new(df: f64, scale: f64) -> Result<Self> {
        Ok(Self {
            df: ensure_positive("df", df)?,
            scale: ensure_positive("scale", scale)?,
        })
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.scale * self.df
    }

    pub fn mode(&self) -> f64 {
        self.scale * (self.df - 2.0).max(0.0)
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale * self.df
    }

    pub fn to_gamma(&self) -> GammaDist {
        GammaDist {
            shape: self.df / 2.0,
            scale: 2.0 * self.scale,
        }
    }
}

pub fn ig_stats(prior: &InverseGammaPrior) -> IgStats {
    prior.stats()
}

/// `c * chi2(df)` as `Gamma(df / 2, 2c)`.
pub fn chisq_to_gamma(df: f64, scale: f64) -> Result<GammaDist> {
    Ok(ScaledChiSquare::new(df, scale)?.to_gamma())
}

/// Distribution of `1 / P` for `P ~ Gamma(alpha, theta)`: `IG(alpha, 1 / theta)`.
pub fn gamma_reciprocal_to_ig(g: &GammaDist) -> InverseGammaPrior {
    InverseGammaPrior {
        shape: g.shape,
        scale: 1.0 / g.scale,
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Quantile of `Gamma(shape, 1)` by bracketed bisection on the CDF.
///
/// With `upper` set, solves `Q(shape, x) = p` instead of `P(shape, x) = p`,
/// which keeps full precision for upper-tail probabilities.
fn standard_gamma_quantile(shape: f64, p: f64, upper: bool) -> f64 {
    // below(x) is true while x lies left of the quantile.
    let below = |x: f64| {
        if upper {
            gamma_q(shape, x) > p
        } else {
            gamma_p(shape, x) < p
        }
    };
    let mut hi = shape.max(1.0);
    while below(hi) {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while lo > f64::MIN_POSITIVE && !below(lo) {
        hi = lo;
        lo /= 2.0;
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || (hi - lo) <= 1e-15 * hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One `Gamma(shape, 1)` draw (Marsaglia-Tsang squeeze for `shape >= 1`).
fn standard_gamma_ge_one<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Natural log of a `Gamma(shape, 1)` draw.
///
/// For `shape < 1` the draw is `G(shape + 1) * U^(1/shape)`, kept in log
/// space because `U^(1/shape)` underflows for shapes like 0.01.
pub fn ln_standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        standard_gamma_ge_one(shape, rng).ln()
    } else {
        let g = standard_gamma_ge_one(shape + 1.0, rng);
        g.ln() + open_unit(rng).ln() / shape
    }
}

pub(crate) fn standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        standard_gamma_ge_one(shape, rng)
    } else {
        ln_standard_gamma(shape, rng).exp()
    }
}

/// Uniform on (0, 1].
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Draw from `IG(shape, scale)` for raw parameters, used by the Gibbs
/// updates where the conditional shape may come from an improper prior.
pub(crate) fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        scale / standard_gamma_ge_one(shape, rng)
    } else {
        scale * (-ln_standard_gamma(shape, rng)).exp()
    }
}

impl Distribution<f64> for GammaDist {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.scale * standard_gamma(self.shape, rng)
    }
}

impl Distribution<f64> for InverseGammaPrior {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_inverse_gamma(self.shape, self.scale, rng)
    }
}

impl Distribution<f64> for ScaledChiSquare {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.to_gamma().sample(rng)
    }
}
