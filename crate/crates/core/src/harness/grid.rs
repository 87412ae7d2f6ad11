use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::cell::{run_cell, ReplicateRecord};
use super::metrics::CellMetrics;
use super::output::{fmt_level, MetricRow};
use super::StudyPlan;
use crate::error::Result;
use crate::parallel::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<CellMetrics>,
    /// Unweighted averages over collapsed factors.
    pub marginals: Vec<MetricRow>,
}

pub fn run_grid(plan: &StudyPlan, exec: Execution) -> Result<GridResult> {
    run_grid_with(plan, exec, |_, _| Ok(()))
}

/// Like [`run_grid`], calling `on_cell` after each cell completes.
pub fn run_grid_with<F>(plan: &StudyPlan, exec: Execution, mut on_cell: F) -> Result<GridResult>
where
    F: FnMut(&CellMetrics, &[ReplicateRecord]) -> Result<()>,
{
    plan.validate()?;
    let cell_plan = plan.cell_plan();
    let mut cells = Vec::new();
    for spec in plan.cells() {
        let (metrics, records) = run_cell(&spec, &cell_plan, exec)?;
        on_cell(&metrics, &records)?;
        cells.push(metrics);
    }
    let marginals = marginals(&cells);
    Ok(GridResult { cells, marginals })
}

const ALL: &str = "all";

#[derive(Default)]
struct Accumulator {
    keys: Vec<(String, String, String)>,
    index: HashMap<(String, String, String), usize>,
    sums: Vec<(f64, usize)>,
}

impl Accumulator {
    fn add(&mut self, regime: &str, parameter: &str, metric: &str, value: f64) {
        if !value.is_finite() {
            return;
        }
        let key = (regime.to_string(), parameter.to_string(), metric.to_string());
        let i = *self.index.entry(key.clone()).or_insert_with(|| {
            self.keys.push(key);
            self.sums.push((0.0, 0));
            self.keys.len() - 1
        });
        self.sums[i].0 += value;
        self.sums[i].1 += 1;
    }
}

/// Marginal rows, in order: per (J, M, ICC) collapsing both R² factors,
/// per J, then the grand total. Each metric is averaged over the cells in
/// which it is defined. Empty for grids with fewer than two cells.
pub fn marginals(cells: &[CellMetrics]) -> Vec<MetricRow> {
    if cells.len() < 2 {
        return Vec::new();
    }
    type GroupKey = (String, String, String, String);
    let mut groups: Vec<(GroupKey, Accumulator)> = Vec::new();
    let mut push = |key: GroupKey, cell: &CellMetrics| {
        let pos = match groups.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                groups.push((key, Accumulator::default()));
                groups.len() - 1
            }
        };
        let acc = &mut groups[pos].1;
        for set in &cell.rows {
            for (metric, value) in set.metrics.named() {
                acc.add(&set.regime, &set.parameter, metric, value);
            }
        }
    };
    for cell in cells {
        let s = &cell.spec;
        push(
            (
                format!("J{}_M{}_icc{}", s.clusters, s.cluster_size, fmt_level(s.icc)),
                s.clusters.to_string(),
                s.cluster_size.to_string(),
                fmt_level(s.icc),
            ),
            cell,
        );
    }
    for cell in cells {
        let j = cell.spec.clusters.to_string();
        push((format!("J{j}"), j, ALL.into(), ALL.into()), cell);
    }
    for cell in cells {
        push(("total".into(), ALL.into(), ALL.into(), ALL.into()), cell);
    }

    let mut out = Vec::new();
    for ((id, j, m, icc), acc) in groups {
        for (k, (regime, parameter, metric)) in acc.keys.iter().enumerate() {
            let (sum, n) = acc.sums[k];
            out.push(MetricRow {
                cell_id: format!("marginal:{id}"),
                j: j.clone(),
                m: m.clone(),
                icc: icc.clone(),
                r2w: ALL.into(),
                r2b: ALL.into(),
                regime: regime.clone(),
                parameter: parameter.clone(),
                metric: metric.clone(),
                value: sum / n as f64,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::McmcSettings;
    use crate::harness::{Grid, Regime};

    fn plan(grid: Grid) -> StudyPlan {
        StudyPlan {
            grid,
            replications: 2,
            regimes: vec![Regime::Ml, Regime::BiG01],
            mcmc: McmcSettings {
                iterations: 400,
                burnin: 200,
                ..McmcSettings::default()
            },
            ..StudyPlan::default()
        }
    }

    #[test]
    fn single_cell_grid_has_one_row_and_no_marginals() {
        let spec = crate::model::ConditionSpec::new(10, 5, 0.2, 0.0, 0.0);
        let res = run_grid(&plan(Grid::single(&spec)), Execution::Parallel).unwrap();
        assert_eq!(res.cells.len(), 1);
        assert!(res.marginals.is_empty());
    }

    #[test]
    fn marginals_are_unweighted_means() {
        let grid = Grid {
            clusters: vec![10, 30],
            cluster_size: vec![5],
            icc: vec![0.2],
            r2w: vec![0.0],
            r2b: vec![0.0, 0.2],
        };
        let res = run_grid(&plan(grid), Execution::Sequential).unwrap();
        assert_eq!(res.cells.len(), 4);
        let total = res
            .marginals
            .iter()
            .find(|r| r.cell_id == "marginal:total" && r.regime == "ML" && r.parameter == "tau2" && r.metric == "bias")
            .unwrap();
        let mean = res.cells.iter().map(|c| c.get("ML", "tau2").unwrap().bias).sum::<f64>() / 4.0;
        assert!((total.value - mean).abs() < 1e-12);
        // L2 slopes are null in only half the cells; FPR averages over those.
        let fpr = res
            .marginals
            .iter()
            .find(|r| r.cell_id == "marginal:J10" && r.regime == "ML" && r.parameter == "x1_mean" && r.metric == "fpr")
            .unwrap();
        assert_eq!(fpr.value, res.cells[0].get("ML", "x1_mean").unwrap().fpr.unwrap());
    }
}
