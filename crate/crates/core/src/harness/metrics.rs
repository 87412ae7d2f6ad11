use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ConditionSpec;

/// Performance of one estimator for one parameter across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Successful fits contributing to the estimates.
    pub n: usize,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    /// Share of intervals excluding 0 when the true value is 0.
    pub fpr: Option<f64>,
    /// Share of intervals excluding 0 when the true value is not 0.
    pub power: Option<f64>,
    pub mean_width: Option<f64>,
    /// Converged fits over attempted replicates.
    pub convergence_rate: f64,
}

impl Metrics {
    /// `(name, value)` pairs in output order, skipping undefined metrics.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![("n", self.n as f64), ("bias", self.bias), ("rmse", self.rmse)];
        for (name, v) in [
            ("coverage", self.coverage),
            ("fpr", self.fpr),
            ("power", self.power),
            ("mean_width", self.mean_width),
        ] {
            if let Some(v) = v {
                out.push((name, v));
            }
        }
        out.push(("convergence_rate", self.convergence_rate));
        out
    }
}

/// Bias, RMSE and interval-based rates against a single true value.
///
/// `intervals`, when given, must align with `estimates`. FPR and power are
/// reported only when `tested` is set; which one depends on whether `truth`
/// is zero. `convergence_rate` is left at 1 for the caller to fill in.
pub fn compute_metrics(
    estimates: &[f64],
    truth: f64,
    intervals: Option<&[(f64, f64)]>,
    tested: bool,
) -> Result<Metrics> {
    if let Some(iv) = intervals {
        if iv.len() != estimates.len() {
            return Err(Error::LengthMismatch {
                left: estimates.len(),
                right: iv.len(),
            });
        }
    }
    let n = estimates.len();
    if n == 0 {
        return Ok(Metrics {
            n: 0,
            bias: f64::NAN,
            rmse: f64::NAN,
            coverage: None,
            fpr: None,
            power: None,
            mean_width: None,
            convergence_rate: 1.0,
        });
    }
    let nf = n as f64;
    let bias = estimates.iter().map(|e| e - truth).sum::<f64>() / nf;
    let rmse = (estimates.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / nf).sqrt();

    let (mut coverage, mut fpr, mut power, mut mean_width) = (None, None, None, None);
    if let Some(iv) = intervals {
        let rate = |f: &dyn Fn(&(f64, f64)) -> bool| iv.iter().filter(|i| f(i)).count() as f64 / nf;
        coverage = Some(rate(&|&(lo, hi)| lo <= truth && truth <= hi));
        mean_width = Some(iv.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / nf);
        if tested {
            let reject = rate(&|&(lo, hi)| lo > 0.0 || hi < 0.0);
            if truth == 0.0 {
                fpr = Some(reject);
            } else {
                power = Some(reject);
            }
        }
    }
    Ok(Metrics {
        n,
        bias,
        rmse,
        coverage,
        fpr,
        power,
        mean_width,
        convergence_rate: 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub regime: String,
    pub parameter: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub spec: ConditionSpec,
    pub replications: usize,
    pub rows: Vec<MetricSet>,
}

impl CellMetrics {
    pub fn get(&self, regime: &str, parameter: &str) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.regime == regime && r.parameter == parameter)
            .map(|r| &r.metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bias_and_rmse() {
        let m = compute_metrics(&[1.1, 0.9], 1.0, None, false).unwrap();
        assert!(m.bias.abs() < 1e-15);
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!(m.coverage.is_none());
    }

    #[test]
    fn coverage_half() {
        let m = compute_metrics(&[1.0, 2.5], 1.0, Some(&[(0.0, 2.0), (2.0, 3.0)]), true).unwrap();
        assert_eq!(m.coverage, Some(0.5));
        assert_eq!(m.mean_width, Some(1.5));
        assert_eq!(m.power, Some(0.5));
        assert_eq!(m.fpr, None);
    }

    #[test]
    fn false_positive_rate_for_null_truth() {
        let iv = [(-1.0, 1.0), (0.5, 1.0), (-2.0, -0.1), (-0.1, 0.1)];
        let m = compute_metrics(&[0.0; 4], 0.0, Some(&iv), true).unwrap();
        assert_eq!(m.fpr, Some(0.5));
        assert_eq!(m.power, None);
    }

    #[test]
    fn empty_and_mismatched() {
        let m = compute_metrics(&[], 1.0, Some(&[]), true).unwrap();
        assert_eq!(m.n, 0);
        assert!(compute_metrics(&[1.0], 1.0, Some(&[]), true).is_err());
    }

    proptest! {
        #[test]
        fn rmse_decomposes(est in proptest::collection::vec(-100.0f64..100.0, 1..60), truth in -50.0f64..50.0) {
            let m = compute_metrics(&est, truth, None, false).unwrap();
            let n = est.len() as f64;
            let mean = est.iter().sum::<f64>() / n;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
            let lhs = m.rmse * m.rmse;
            let rhs = m.bias * m.bias + var;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            prop_assert!(m.rmse + 1e-12 >= m.bias.abs());
        }

        #[test]
        fn rates_in_unit_interval(
            iv in proptest::collection::vec((-5.0f64..5.0, 0.0f64..5.0), 1..40),
            truth in -2.0f64..2.0,
        ) {
            let intervals: Vec<(f64, f64)> = iv.iter().map(|&(lo, w)| (lo, lo + w)).collect();
            let est: Vec<f64> = intervals.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
            let m = compute_metrics(&est, truth, Some(&intervals), true).unwrap();
            for r in [m.coverage, m.fpr, m.power].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
