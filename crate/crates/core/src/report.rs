//! Tabular output: fit summaries and long-format metrics as CSV.

use std::io::Write;

use crate::error::Result;
use crate::estimators::FitResult;

/// Six significant digits; empty for missing values.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{:.5e}", v);
    let parsed: f64 = s.parse().unwrap_or(v);
    let mag = parsed.abs().log10().floor() as i32;
    if (-4..15).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let mut out = format!("{:.*}", decimals, parsed);
        if out.contains('.') {
            out = out.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        out
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

pub const FIT_CSV_HEADER: [&str; 9] = [
    "method", "parameter", "estimate", "lower", "upper", "width", "rhat", "se", "converged",
];

/// One row per parameter.
pub fn write_fit_csv<W: Write>(results: &[FitResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FIT_CSV_HEADER)?;
    for fit in results {
        for p in &fit.params {
            w.write_record([
                fit.method.clone(),
                p.name.clone(),
                sig6(p.estimate),
                opt(p.lower),
                opt(p.upper),
                opt(p.width),
                opt(p.rhat),
                opt(p.se),
                fit.converged.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(3.14159265), "3.14159");
        assert_eq!(sig6(23798.5412), "23798.5");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(2.0), "2");
        assert_eq!(sig6(-0.5), "-0.5");
        assert_eq!(sig6(1.0e20), "1.00000e20");
        assert_eq!(sig6(999999.7), "1000000");
    }
}
