use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gelman-Rubin potential scale reduction factor.
///
/// `W` is the mean within-chain variance, `B/n` the variance of the chain
/// means, and `R = sqrt(((n-1)/n W + B/n) / W)`. Identical draws everywhere
/// give 1; zero within-chain variance with distinct chain means gives +inf.
pub fn psrf<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::Config(format!("PSRF needs at least 2 chains, got {m}")));
    }
    let n = chains[0].as_ref().len();
    if n < 2 {
        return Err(Error::Config("PSRF needs at least 2 draws per chain".into()));
    }
    if let Some(bad) = chains.iter().find(|c| c.as_ref().len() != n) {
        return Err(Error::LengthMismatch {
            left: bad.as_ref().len(),
            right: n,
        });
    }

    let mut means = Vec::with_capacity(m);
    let mut within = 0.0;
    for chain in chains {
        let c = chain.as_ref();
        let mean = c.iter().sum::<f64>() / n as f64;
        within += c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        means.push(mean);
    }
    let w = within / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1) as f64;

    if w == 0.0 {
        return Ok(if b_over_n == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

/// Linear interpolation between order statistics at position `p (n - 1)`
/// (0-based) of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior median and equal-tailed interval at `level`.
pub fn summarize(draws: &[f64], level: f64) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::Config("cannot summarize zero draws".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidProbability(level));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lower = quantile_sorted(&sorted, tail);
    let upper = quantile_sorted(&sorted, 1.0 - tail);
    Ok(Summary {
        median: quantile_sorted(&sorted, 0.5),
        lower,
        upper,
        width: upper - lower,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn summarize_one_to_hundred() {
        let draws: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&draws, 0.95).unwrap();
        assert!((s.median - 50.5).abs() < 1e-12);
        assert!((s.lower - 3.475).abs() < 1e-12);
        assert!((s.upper - 97.525).abs() < 1e-12);
    }

    #[test]
    fn summarize_constant_has_zero_width() {
        let s = summarize(&[2.5; 17], 0.95).unwrap();
        assert_eq!(s.width, 0.0);
        assert_eq!(s.median, 2.5);
    }

    #[test]
    fn summarize_rejects_empty() {
        assert!(summarize(&[], 0.95).is_err());
    }

    #[test]
    fn psrf_iid_chains_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let chains: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..10_000).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let r = psrf(&chains).unwrap();
        assert!((0.999..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn psrf_separated_chains_inflate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..10_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| Normal::new(5.0, 1.0).unwrap().sample(&mut rng)).collect();
        assert!(psrf(&[a, b]).unwrap() > 2.0);
    }

    #[test]
    fn psrf_degenerate_cases() {
        assert_eq!(psrf(&[vec![1.0; 5], vec![1.0; 5]]).unwrap(), 1.0);
        assert_eq!(psrf(&[vec![1.0; 5], vec![2.0; 5]]).unwrap(), f64::INFINITY);
        assert!(psrf(&[vec![1.0, 2.0]]).is_err());
        assert!(psrf(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }
}
