use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use modematch::harness::{read_metrics_csv, MetricRow};

#[derive(Args)]
pub struct ReportArgs {
    /// metrics.csv written by `simulate`.
    #[arg(long)]
    metrics: PathBuf,
    /// Parameter shown in the false-positive figure.
    #[arg(long, default_value = "intercept")]
    fpr_parameter: String,
    /// Parameter shown in the bias and width figures.
    #[arg(long, default_value = "tau2")]
    parameter: String,
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f",
];
const BAR: f64 = 6.0;
const GROUP_GAP: f64 = 10.0;
const PLOT_H: f64 = 140.0;
const AXIS_W: f64 = 48.0;
const LABEL_H: f64 = 56.0;
const TITLE_H: f64 = 22.0;
const LEGEND_H: f64 = 40.0;
const MARGIN: f64 = 16.0;

struct Figure<'a> {
    file: &'static str,
    title: String,
    metric: &'static str,
    parameter: &'a str,
    reference: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Distinct values in first-seen order.
fn distinct<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn sorted_numeric<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut v = distinct(items);
    v.sort_by(|a, b| num(a).total_cmp(&num(b)));
    v
}

fn render(rows: &[&MetricRow], fig: &Figure) -> String {
    let sel: Vec<&MetricRow> = rows
        .iter()
        .copied()
        .filter(|r| r.metric == fig.metric && r.parameter == fig.parameter && r.value.is_finite())
        .collect();
    let regimes = distinct(sel.iter().map(|r| r.regime.as_str()));
    let iccs = sorted_numeric(sel.iter().map(|r| r.icc.as_str()));
    let js = sorted_numeric(sel.iter().map(|r| r.j.as_str()));
    let mut groups: Vec<(&str, &str, &str)> = Vec::new();
    for r in &sel {
        let g = (r.m.as_str(), r.r2w.as_str(), r.r2b.as_str());
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    groups.sort_by(|a, b| {
        num(a.0)
            .total_cmp(&num(b.0))
            .then(num(a.1).total_cmp(&num(b.1)))
            .then(num(a.2).total_cmp(&num(b.2)))
    });

    let mut lo = sel.iter().map(|r| r.value).fold(0.0_f64, f64::min);
    let mut hi = sel.iter().map(|r| r.value).fold(0.0_f64, f64::max);
    if let Some(rf) = fig.reference {
        lo = lo.min(rf);
        hi = hi.max(rf);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (if lo < 0.0 { lo - pad } else { lo }, hi + pad);

    let group_w = regimes.len().max(1) as f64 * BAR + GROUP_GAP;
    let panel_w = AXIS_W + groups.len().max(1) as f64 * group_w + GROUP_GAP;
    let panel_h = TITLE_H + PLOT_H + LABEL_H;
    let width = 2.0 * MARGIN + js.len().max(1) as f64 * panel_w;
    let height = 2.0 * MARGIN + LEGEND_H + iccs.len().max(1) as f64 * panel_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN:.1}" y="{:.1}" font-size="13" font-weight="bold">{}</text>"#,
        MARGIN + 4.0,
        escape(&fig.title)
    );
    let mut lx = MARGIN;
    for (k, regime) in regimes.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let y = MARGIN + 18.0;
        let _ = writeln!(s, r#"<rect x="{lx:.1}" y="{y:.1}" width="10" height="10" fill="{color}"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#, lx + 14.0, y + 9.0, escape(regime));
        lx += 24.0 + 6.5 * regime.len() as f64;
    }
    if sel.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN:.1}" y="{:.1}" font-size="11">no {} rows for {}</text>"#,
            MARGIN + LEGEND_H + 20.0,
            fig.metric,
            escape(fig.parameter)
        );
    }

    for (pi, icc) in iccs.iter().enumerate() {
        for (pj, j) in js.iter().enumerate() {
            let x0 = MARGIN + pj as f64 * panel_w;
            let y0 = MARGIN + LEGEND_H + pi as f64 * panel_h;
            let top = y0 + TITLE_H;
            let plot_x = x0 + AXIS_W;
            let y_of = |v: f64| top + PLOT_H * (hi - v) / (hi - lo);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11">ICC {icc}, J = {j}</text>"#,
                plot_x,
                y0 + 14.0
            );
            for t in 0..=4 {
                let v = lo + (hi - lo) * t as f64 / 4.0;
                let y = y_of(v);
                let _ = writeln!(
                    s,
                    r##"<line x1="{plot_x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e0e0e0"/>"##,
                    x0 + panel_w - GROUP_GAP
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{v:.3}</text>"#,
                    plot_x - 4.0,
                    y + 3.0
                );
            }
            let zero = y_of(0.0);
            let _ = writeln!(
                s,
                r#"<line x1="{plot_x:.1}" y1="{zero:.1}" x2="{:.1}" y2="{zero:.1}" stroke="black"/>"#,
                x0 + panel_w - GROUP_GAP
            );
            if let Some(rf) = fig.reference {
                let y = y_of(rf);
                let _ = writeln!(
                    s,
                    r#"<line x1="{plot_x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="red" stroke-dasharray="4 3"/>"#,
                    x0 + panel_w - GROUP_GAP
                );
            }
            for (gi, (m, r2w, r2b)) in groups.iter().enumerate() {
                let gx = plot_x + GROUP_GAP / 2.0 + gi as f64 * group_w;
                for (k, regime) in regimes.iter().enumerate() {
                    let hit = sel.iter().find(|r| {
                        r.icc == *icc && r.j == *j && r.m == *m && r.r2w == *r2w && r.r2b == *r2b && r.regime == *regime
                    });
                    if let Some(r) = hit {
                        let (a, b) = (y_of(r.value), zero);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{:.1}" y="{:.1}" width="{BAR:.1}" height="{:.1}" fill="{}"><title>{} {}: {}</title></rect>"#,
                            gx + k as f64 * BAR,
                            a.min(b),
                            (a - b).abs(),
                            PALETTE[k % PALETTE.len()],
                            escape(regime),
                            escape(&r.cell_id),
                            r.value
                        );
                    }
                }
                let lx = gx + group_w / 2.0 - GROUP_GAP / 2.0;
                let ly = top + PLOT_H + 8.0;
                let _ = writeln!(
                    s,
                    r#"<text x="{lx:.1}" y="{ly:.1}" font-size="8" text-anchor="end" transform="rotate(-50 {lx:.1} {ly:.1})">M{m} {r2w}/{r2b}</text>"#
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn run(args: &ReportArgs, out: &Path) -> Result<()> {
    let file = std::fs::File::open(&args.metrics).with_context(|| format!("cannot open {}", args.metrics.display()))?;
    let rows = read_metrics_csv(file).with_context(|| format!("reading {}", args.metrics.display()))?;
    let cells: Vec<&MetricRow> = rows.iter().filter(|r| !r.cell_id.starts_with("marginal:")).collect();
    if cells.is_empty() {
        bail!("{} has no per-cell rows", args.metrics.display());
    }
    let figures = [
        Figure {
            file: "fpr.svg",
            title: format!("False-positive rate, {} (dashed: .05)", args.fpr_parameter),
            metric: "fpr",
            parameter: &args.fpr_parameter,
            reference: Some(0.05),
        },
        Figure {
            file: "bias.svg",
            title: format!("Raw bias, {}", args.parameter),
            metric: "bias",
            parameter: &args.parameter,
            reference: None,
        },
        Figure {
            file: "width.svg",
            title: format!("Mean 95% interval width, {}", args.parameter),
            metric: "mean_width",
            parameter: &args.parameter,
            reference: None,
        },
    ];
    for fig in &figures {
        crate::write_file(&out.join(fig.file), render(&cells, fig))?;
    }
    Ok(())
}
