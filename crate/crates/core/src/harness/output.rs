use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::cell::ReplicateRecord;
use super::metrics::CellMetrics;
use crate::error::{Error, Result};
use crate::model::ConditionSpec;
use crate::report::sig6;

pub const METRICS_HEADER: [&str; 10] = [
    "cell_id", "J", "M", "icc", "r2w", "r2b", "regime", "parameter", "metric", "value",
];

/// One line of the long-format metrics table. Factor columns are text so
/// marginal rows can mark collapsed factors as `all`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub cell_id: String,
    pub j: String,
    pub m: String,
    pub icc: String,
    pub r2w: String,
    pub r2b: String,
    pub regime: String,
    pub parameter: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn record(&self) -> [String; 10] {
        [
            self.cell_id.clone(),
            self.j.clone(),
            self.m.clone(),
            self.icc.clone(),
            self.r2w.clone(),
            self.r2b.clone(),
            self.regime.clone(),
            self.parameter.clone(),
            self.metric.clone(),
            sig6(self.value),
        ]
    }
}

pub(crate) fn fmt_level(v: f64) -> String {
    format!("{v:.2}")
}

/// A row for one condition cell.
pub(crate) fn cell_row(spec: &ConditionSpec, regime: &str, parameter: &str, metric: &str, value: f64) -> MetricRow {
    MetricRow {
        cell_id: spec.id(),
        j: spec.clusters.to_string(),
        m: spec.cluster_size.to_string(),
        icc: fmt_level(spec.icc),
        r2w: fmt_level(spec.r2_within),
        r2b: fmt_level(spec.r2_between),
        regime: regime.to_string(),
        parameter: parameter.to_string(),
        metric: metric.to_string(),
        value,
    }
}

pub fn metric_rows(cell: &CellMetrics) -> Vec<MetricRow> {
    cell.rows
        .iter()
        .flat_map(|set| {
            set.metrics
                .named()
                .into_iter()
                .map(|(metric, value)| cell_row(&cell.spec, &set.regime, &set.parameter, metric, value))
        })
        .collect()
}

/// Incremental `metrics.csv` writer; each batch is flushed so a partial
/// run leaves every finished cell on disk.
pub struct MetricsCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> MetricsCsv<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(METRICS_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn write_rows(&mut self, rows: &[MetricRow]) -> Result<()> {
        for r in rows {
            self.writer.write_record(r.record())?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], writer: W) -> Result<()> {
    MetricsCsv::new(writer)?.write_rows(rows)
}

/// Raw per-replicate estimates for audit.
pub fn write_replicates_csv<W: Write>(records: &[ReplicateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "replicate", "seed", "regime", "parameter", "estimate", "lower", "upper", "rhat", "converged", "error",
    ])?;
    let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
    for rec in records {
        for (regime, outcome) in &rec.fits {
            match outcome {
                Ok(fit) => {
                    for p in &fit.params {
                        w.write_record([
                            rec.replicate.to_string(),
                            rec.seed.to_string(),
                            regime.clone(),
                            p.name.clone(),
                            sig6(p.estimate),
                            opt(p.lower),
                            opt(p.upper),
                            opt(p.rhat),
                            fit.converged.to_string(),
                            String::new(),
                        ])?;
                    }
                }
                Err(msg) => {
                    w.write_record([
                        rec.replicate.to_string(),
                        rec.seed.to_string(),
                        regime.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "false".into(),
                        msg.clone(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_metrics_csv`], marginal rows included.
pub fn read_metrics_csv<R: Read>(reader: R) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if !rdr.headers()?.iter().eq(METRICS_HEADER) {
        return Err(Error::Schema(format!("metrics header must be `{}`", METRICS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let value = rec[9]
            .parse::<f64>()
            .map_err(|_| Error::Schema(format!("row {}: value `{}` is not a number", i + 1, &rec[9])))?;
        rows.push(MetricRow {
            cell_id: rec[0].to_string(),
            j: rec[1].to_string(),
            m: rec[2].to_string(),
            icc: rec[3].to_string(),
            r2w: rec[4].to_string(),
            r2b: rec[5].to_string(),
            regime: rec[6].to_string(),
            parameter: rec[7].to_string(),
            metric: rec[8].to_string(),
            value,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_table_reads_back() {
        let row = MetricRow {
            cell_id: "J10_M5_icc0.20_r2w0.00_r2b0.00".into(),
            j: "10".into(),
            m: "5".into(),
            icc: "0.20".into(),
            r2w: "0.00".into(),
            r2b: "0.00".into(),
            regime: "BI-Gab".into(),
            parameter: "tau2".into(),
            metric: "bias".into(),
            value: -0.03125,
        };
        let mut buf = Vec::new();
        write_metrics_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), vec![row]);
        assert!(read_metrics_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
