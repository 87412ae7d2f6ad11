use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

use modematch::harness::{
    metric_rows, run_grid_with, sensitivity_cell, two_stage_cell, write_replicates_csv, MetricsCsv, ReplicateRecord,
    SensitivityCsv, StudyPlan, TwoStageRule, SENSITIVITY_FACTORS,
};
use modematch::parallel::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Every regime on every cell.
    Grid,
    /// Flat-prior fit, then a refit centered on its variance medians.
    TwoStage,
    /// Prior-shape sweep on one dataset per cell.
    Sensitivity,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Study plan JSON; the full default design when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Grid)]
    mode: Mode,
    /// Restrict the plan to these cluster counts.
    #[arg(long = "J", value_delimiter = ',')]
    clusters: Vec<usize>,
    /// Override the plan's replication count.
    #[arg(long)]
    replications: Option<usize>,
    /// Worker threads. Defaults to every core, capped by MODEMATCH_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve_plan(args: &SimulateArgs, seed: Option<u64>) -> Result<StudyPlan> {
    let mut plan = match &args.plan {
        Some(path) => {
            let text = crate::read_file(path)?;
            StudyPlan::from_json(&text).with_context(|| format!("invalid plan {}", path.display()))?
        }
        None => StudyPlan::default(),
    };
    if !args.clusters.is_empty() {
        plan.grid.clusters = args.clusters.clone();
    }
    if let Some(r) = args.replications {
        plan.replications = r;
    }
    if let Some(s) = seed {
        plan.seed = s;
    }
    plan.validate()?;
    Ok(plan)
}

fn write_replicates(out: &Path, cell_id: &str, records: &[ReplicateRecord]) -> modematch::Result<()> {
    let dir = out.join("cells").join(cell_id);
    std::fs::create_dir_all(&dir)?;
    write_replicates_csv(records, std::fs::File::create(dir.join("replicates.csv"))?)
}

pub fn run(args: &SimulateArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let plan = resolve_plan(args, seed)?;
    let exec = args.workers.map_or(Execution::Parallel, Execution::Threads);
    let mut json = serde_json::to_string_pretty(&plan)?;
    json.push('\n');
    crate::write_file(&out.join("plan.json"), json)?;

    let cells = plan.cells();
    let total = cells.len();
    let progress = |k: usize, id: &str| eprintln!("[{}/{total}] {id}", k + 1);

    match args.mode {
        Mode::Grid => {
            let mut csv = MetricsCsv::new(crate::create_file(&out.join("metrics.csv"))?)?;
            let mut k = 0;
            let result = run_grid_with(&plan, exec, |cell, records| {
                let id = cell.spec.id();
                csv.write_rows(&metric_rows(cell))?;
                write_replicates(out, &id, records)?;
                progress(k, &id);
                k += 1;
                Ok(())
            })?;
            csv.write_rows(&result.marginals)?;
        }
        Mode::TwoStage => {
            let mut csv = MetricsCsv::new(crate::create_file(&out.join("metrics.csv"))?)?;
            let cell_plan = plan.cell_plan();
            for (k, spec) in cells.iter().enumerate() {
                let res = two_stage_cell(spec, &TwoStageRule::default(), &cell_plan, exec)?;
                csv.write_rows(&res.metric_rows())?;
                write_replicates(out, &spec.id(), &res.records)?;
                progress(k, &spec.id());
            }
        }
        Mode::Sensitivity => {
            let mut csv = SensitivityCsv::new(crate::create_file(&out.join("sensitivity.csv"))?)?;
            let cell_plan = plan.cell_plan();
            for (k, spec) in cells.iter().enumerate() {
                let rows = sensitivity_cell(spec, &cell_plan, &SENSITIVITY_FACTORS)?;
                csv.write_rows(&spec.id(), &rows)?;
                progress(k, &spec.id());
            }
        }
    }
    Ok(())
}
