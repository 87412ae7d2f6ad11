//! Two-level random-intercept model: design factors, generating parameters,
//! synthetic data and fixed-effect design matrices.
//!
//! Data follow a latent decomposition. Each predictor has a cluster-level
//! part `mu_j` and a within-cluster deviation; the outcome is
//!
//! ```text
//! y_ij = g00 + g10 (x1_ij - mu1_j) + g01 mu1_j
//!            + g20 (x2_ij - mu2_j) + g02 mu2_j + u_j + e_ij
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const L1_COLUMNS: [&str; 2] = ["x1_cmc", "x2_cmc"];
pub const L2_COLUMNS: [&str; 2] = ["x1_mean", "x2_mean"];
pub const INTERCEPT: &str = "intercept";

/// One cell of the simulation design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    /// Number of clusters `J`.
    pub clusters: usize,
    /// Units per cluster `M` (balanced).
    pub cluster_size: usize,
    pub icc: f64,
    pub r2_within: f64,
    pub r2_between: f64,
    #[serde(default = "default_total_variance")]
    pub total_variance: f64,
}

fn default_total_variance() -> f64 {
    1.0
}

impl ConditionSpec {
    pub fn new(clusters: usize, cluster_size: usize, icc: f64, r2_within: f64, r2_between: f64) -> Self {
        Self {
            clusters,
            cluster_size,
            icc,
            r2_within,
            r2_between,
            total_variance: 1.0,
        }
    }

    pub fn with_total_variance(mut self, total_variance: f64) -> Self {
        self.total_variance = total_variance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::Config(format!("J = {} must be at least 2", self.clusters)));
        }
        if self.cluster_size < 2 {
            return Err(Error::Config(format!(
                "M = {} must be at least 2",
                self.cluster_size
            )));
        }
        for (name, v) in [
            ("icc", self.icc),
            ("r2_within", self.r2_within),
            ("r2_between", self.r2_between),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if !(self.total_variance.is_finite() && self.total_variance > 0.0) {
            return Err(Error::Config(format!(
                "total variance {} must be positive",
                self.total_variance
            )));
        }
        Ok(())
    }

    pub fn total_n(&self) -> usize {
        self.clusters * self.cluster_size
    }

    /// Stable identifier, also used as a directory name.
    pub fn id(&self) -> String {
        let mut id = format!(
            "J{}_M{}_icc{:.2}_r2w{:.2}_r2b{:.2}",
            self.clusters, self.cluster_size, self.icc, self.r2_within, self.r2_between
        );
        if self.total_variance != 1.0 {
            id.push_str(&format!("_v{}", self.total_variance));
        }
        id
    }
}

/// Generating parameters implied by a [`ConditionSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub gamma00: f64,
    /// `(g10, g20)`: slopes on the cluster-mean-centered predictors.
    pub gamma_within: [f64; 2],
    /// `(g01, g02)`: slopes on the cluster means.
    pub gamma_between: [f64; 2],
    pub tau2: f64,
    pub sigma2: f64,
}

impl TrueParams {
    /// Coefficients in design-column order: intercept, level-1, level-2.
    pub fn coefficients(&self) -> Vec<f64> {
        vec![
            self.gamma00,
            self.gamma_within[0],
            self.gamma_within[1],
            self.gamma_between[0],
            self.gamma_between[1],
        ]
    }
}

/// Splits total variance by ICC, then each level by its R^2, with the
/// explained part shared equally by two independent unit-variance predictors.
pub fn solve_condition(spec: &ConditionSpec) -> TrueParams {
    let between = spec.icc * spec.total_variance;
    let within = (1.0 - spec.icc) * spec.total_variance;
    let slope_b = (spec.r2_between * between / 2.0).sqrt();
    let slope_w = (spec.r2_within * within / 2.0).sqrt();
    TrueParams {
        gamma00: 0.0,
        gamma_within: [slope_w; 2],
        gamma_between: [slope_b; 2],
        tau2: (1.0 - spec.r2_between) * between,
        sigma2: (1.0 - spec.r2_within) * within,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Clustered observations. Cluster indices are contiguous `0..J` and every
/// level-2 column is exactly constant within each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelDataset {
    cluster: Vec<usize>,
    n_clusters: usize,
    y: Vec<f64>,
    level1: Vec<Column>,
    level2: Vec<Column>,
    level1_centered: bool,
}

impl TwoLevelDataset {
    pub fn new(
        cluster: Vec<usize>,
        y: Vec<f64>,
        level1: Vec<Column>,
        level2: Vec<Column>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        if cluster.len() != n {
            return Err(Error::LengthMismatch {
                left: cluster.len(),
                right: n,
            });
        }
        for col in level1.iter().chain(&level2) {
            if col.values.len() != n {
                return Err(Error::LengthMismatch {
                    left: col.values.len(),
                    right: n,
                });
            }
            if col.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("column `{}` has non-finite values", col.name)));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("outcome has non-finite values".into()));
        }
        let n_clusters = cluster.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_clusters];
        for &c in &cluster {
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Schema(format!(
                "cluster indices are not contiguous: {missing} has no rows"
            )));
        }
        let mut names: Vec<&str> = level1.iter().chain(&level2).map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Schema("duplicate column names".into()));
        }
        for col in &level2 {
            check_constant(col, &cluster, n_clusters)?;
        }
        Ok(Self {
            cluster,
            n_clusters,
            y,
            level1,
            level2,
            level1_centered: false,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster(&self) -> &[usize] {
        &self.cluster
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn level1(&self) -> &[Column] {
        &self.level1
    }

    pub fn level2(&self) -> &[Column] {
        &self.level2
    }

    pub fn level1_centered(&self) -> bool {
        self.level1_centered
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &c in &self.cluster {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.level1.iter().chain(&self.level2).find(|c| c.name == name)
    }

    fn is_level2(&self, name: &str) -> bool {
        self.level2.iter().any(|c| c.name == name)
    }

    /// Subtracts cluster means from every level-1 column.
    pub fn center_level1(mut self) -> Self {
        let sizes = self.cluster_sizes();
        for col in &mut self.level1 {
            let mut sums = vec![0.0; self.n_clusters];
            for (&c, &v) in self.cluster.iter().zip(&col.values) {
                sums[c] += v;
            }
            for (v, &c) in col.values.iter_mut().zip(&self.cluster) {
                *v -= sums[c] / sizes[c] as f64;
            }
        }
        self.level1_centered = true;
        self
    }

    /// Reads `cluster,y,<columns...>`. Cluster labels are arbitrary strings,
    /// renumbered by first appearance. Without an explicit split, columns
    /// constant within every cluster are treated as level 2.
    pub fn from_csv<R: Read>(reader: R, split: &ColumnSplit) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "cluster" || &headers[1] != "y" {
            return Err(Error::Schema(
                "header must begin with `cluster,y`".into(),
            ));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut labels: HashMap<String, usize> = HashMap::new();
        let mut cluster = Vec::new();
        let mut y = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let next = labels.len();
            let idx = *labels.entry(record[0].to_string()).or_insert(next);
            cluster.push(idx);
            y.push(parse_cell(&record[1], row, "y")?);
            for (k, col) in cols.iter_mut().enumerate() {
                col.push(parse_cell(&record[k + 2], row, &names[k])?);
            }
        }
        if y.is_empty() {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        let n_clusters = labels.len();
        let columns: Vec<Column> = names.into_iter().zip(cols).map(|(n, v)| Column::new(n, v)).collect();

        let (level1, level2) = match split {
            ColumnSplit::Auto => columns
                .into_iter()
                .partition(|c| check_constant(c, &cluster, n_clusters).is_err()),
            ColumnSplit::Explicit { level1, level2 } => {
                let mut by_name: HashMap<String, Column> =
                    columns.into_iter().map(|c| (c.name.clone(), c)).collect();
                let mut take = |names: &[String]| -> Result<Vec<Column>> {
                    names
                        .iter()
                        .map(|n| by_name.remove(n).ok_or_else(|| Error::UnknownColumn(n.clone())))
                        .collect()
                };
                (take(level1)?, take(level2)?)
            }
        };
        Self::new(cluster, y, level1, level2)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string(), "y".to_string()];
        header.extend(self.level1.iter().chain(&self.level2).map(|c| c.name.clone()));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.cluster[i].to_string(), format!("{}", self.y[i])];
            rec.extend(
                self.level1
                    .iter()
                    .chain(&self.level2)
                    .map(|c| format!("{}", c.values[i])),
            );
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn parse_cell(s: &str, row: usize, col: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("row {}: `{col}` value `{s}` is not a number", row + 1)))
}

fn check_constant(col: &Column, cluster: &[usize], n_clusters: usize) -> Result<()> {
    let mut first: Vec<Option<f64>> = vec![None; n_clusters];
    for (&c, &v) in cluster.iter().zip(&col.values) {
        match first[c] {
            None => first[c] = Some(v),
            Some(f) if f != v => {
                return Err(Error::NonConstantLevel2 {
                    column: col.name.clone(),
                    cluster: c,
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// How CSV columns are assigned to levels.
#[derive(Debug, Clone, Default)]
pub enum ColumnSplit {
    #[default]
    Auto,
    Explicit {
        level1: Vec<String>,
        level2: Vec<String>,
    },
}

/// Draws one dataset. Within-cluster predictor parts are centered exactly
/// within each cluster and rescaled by `sqrt(M / (M - 1))` so that their
/// expected variance stays 1.
pub fn generate<R: Rng + ?Sized>(
    spec: &ConditionSpec,
    params: &TrueParams,
    rng: &mut R,
) -> TwoLevelDataset {
    let (j, m) = (spec.clusters, spec.cluster_size);
    let n = j * m;
    let tau = params.tau2.sqrt();
    let sigma = params.sigma2.sqrt();
    let inflate = (m as f64 / (m as f64 - 1.0)).sqrt();

    let mut cluster = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut b = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut raw = [vec![0.0; m], vec![0.0; m]];
    let mut eps = vec![0.0; m];

    for c in 0..j {
        let mu: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let u: f64 = tau * rng.sample::<f64, _>(StandardNormal);
        for i in 0..m {
            raw[0][i] = rng.sample(StandardNormal);
            raw[1][i] = rng.sample(StandardNormal);
            eps[i] = sigma * rng.sample::<f64, _>(StandardNormal);
        }
        for r in &mut raw {
            let mean = r.iter().sum::<f64>() / m as f64;
            for v in r.iter_mut() {
                *v = (*v - mean) * inflate;
            }
        }
        let level2_part = params.gamma00
            + params.gamma_between[0] * mu[0]
            + params.gamma_between[1] * mu[1]
            + u;
        for i in 0..m {
            cluster.push(c);
            y.push(
                level2_part
                    + params.gamma_within[0] * raw[0][i]
                    + params.gamma_within[1] * raw[1][i]
                    + eps[i],
            );
            for k in 0..2 {
                w[k].push(raw[k][i]);
                b[k].push(mu[k]);
            }
        }
    }
    let [w1, w2] = w;
    let [b1, b2] = b;
    TwoLevelDataset {
        cluster,
        n_clusters: j,
        y,
        level1: vec![Column::new(L1_COLUMNS[0], w1), Column::new(L1_COLUMNS[1], w2)],
        level2: vec![Column::new(L2_COLUMNS[0], b1), Column::new(L2_COLUMNS[1], b2)],
        level1_centered: true,
    }
}

/// Fixed-effects specification: intercept, level-1 columns, level-2
/// columns and pairwise products, in that order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelFormula {
    pub level1: Vec<String>,
    pub level2: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<(String, String)>,
}

impl ModelFormula {
    /// Two level-1 and two level-2 predictors, no interaction.
    pub fn simulation() -> Self {
        Self {
            level1: L1_COLUMNS.iter().map(|s| s.to_string()).collect(),
            level2: L2_COLUMNS.iter().map(|s| s.to_string()).collect(),
            interactions: Vec::new(),
        }
    }

    pub fn intercept_only() -> Self {
        Self::default()
    }

    pub fn n_fixed(&self) -> usize {
        1 + self.level1.len() + self.level2.len() + self.interactions.len()
    }
}

/// Fixed-effect design, row-major, plus the grouping needed by the
/// estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    /// `n x p`, row-major.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub cluster: Vec<usize>,
    pub n_clusters: usize,
    /// Number of level-1 predictors (for residual df).
    pub n_level1: usize,
}

impl Design {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        let p = self.p();
        self.x.iter().skip(k).step_by(p).copied()
    }
}

pub fn build_design(data: &TwoLevelDataset, formula: &ModelFormula) -> Result<Design> {
    let lookup = |name: &str| -> Result<&Column> {
        data.column(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let mut names = vec![INTERCEPT.to_string()];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; data.len()]];
    for name in &formula.level1 {
        columns.push(lookup(name)?.values.clone());
        names.push(name.clone());
    }
    for name in &formula.level2 {
        let col = lookup(name)?;
        if !data.is_level2(name) {
            check_constant(col, data.cluster(), data.n_clusters())?;
        }
        columns.push(col.values.clone());
        names.push(name.clone());
    }
    for (left, right) in &formula.interactions {
        let l = lookup(left)?;
        let r = lookup(right)?;
        columns.push(l.values.iter().zip(&r.values).map(|(a, b)| a * b).collect());
        names.push(format!("{left}:{right}"));
    }
    let n = data.len();
    let p = names.len();
    let mut x = vec![0.0; n * p];
    for (k, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[i * p + k] = v;
        }
    }
    Ok(Design {
        names,
        x,
        y: data.y().to_vec(),
        cluster: data.cluster().to_vec(),
        n_clusters: data.n_clusters(),
        n_level1: formula.level1.len(),
    })
}
