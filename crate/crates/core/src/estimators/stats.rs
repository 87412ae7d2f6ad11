use nalgebra::{DMatrix, DVector};

use crate::model::Design;

/// Between/within decomposition of a design.
///
/// Every quantity the random-intercept likelihood and the Gibbs conditionals
/// need reduces to cluster means of `X` and `y` plus within-cluster cross
/// products, so per-iteration cost does not grow with `N`.
#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub n: usize,
    pub p: usize,
    pub j: usize,
    pub sizes: Vec<f64>,
    /// `J x p`, cluster means of the design columns.
    pub xbar: DMatrix<f64>,
    pub ybar: DVector<f64>,
    pub wxx: DMatrix<f64>,
    pub wxy: DVector<f64>,
    pub wyy: f64,
    /// Full `X'X` and `X'y`.
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
}

impl SufficientStats {
    pub fn new(design: &Design) -> Self {
        let (n, p, j) = (design.n(), design.p(), design.n_clusters);
        let mut sizes = vec![0.0; j];
        let mut xbar = DMatrix::zeros(j, p);
        let mut ybar = DVector::zeros(j);
        for i in 0..n {
            let c = design.cluster[i];
            sizes[c] += 1.0;
            ybar[c] += design.y[i];
            for (k, &v) in design.row(i).iter().enumerate() {
                xbar[(c, k)] += v;
            }
        }
        for c in 0..j {
            ybar[c] /= sizes[c];
            for k in 0..p {
                xbar[(c, k)] /= sizes[c];
            }
        }

        let mut wxx = DMatrix::zeros(p, p);
        let mut wxy = DVector::zeros(p);
        let mut wyy = 0.0;
        let mut xc = vec![0.0; p];
        for i in 0..n {
            let c = design.cluster[i];
            let yc = design.y[i] - ybar[c];
            for (k, &v) in design.row(i).iter().enumerate() {
                xc[k] = v - xbar[(c, k)];
            }
            wyy += yc * yc;
            for a in 0..p {
                wxy[a] += xc[a] * yc;
                for b in a..p {
                    wxx[(a, b)] += xc[a] * xc[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                wxx[(a, b)] = wxx[(b, a)];
            }
        }

        let mut xtx = wxx.clone();
        let mut xty = wxy.clone();
        for c in 0..j {
            let xb = xbar.row(c).transpose();
            xtx += (sizes[c] * &xb) * xb.transpose();
            xty += (sizes[c] * ybar[c]) * &xb;
        }

        Self {
            n,
            p,
            j,
            sizes,
            xbar,
            ybar,
            wxx,
            wxy,
            wyy,
            xtx,
            xty,
        }
    }

    /// Within-cluster residual sum of squares at `beta`.
    pub fn within_ss(&self, beta: &DVector<f64>) -> f64 {
        let v = self.wyy - 2.0 * beta.dot(&self.wxy) + beta.dot(&(&self.wxx * beta));
        v.max(0.0)
    }

    /// `ybar_j - xbar_j' beta` for every cluster.
    pub fn cluster_residual_means(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.ybar - &self.xbar * beta
    }
}
