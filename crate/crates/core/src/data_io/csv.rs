//! Training metrics as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::training::TrainReport;

pub const METRICS_HEADER: &str = "epoch,split,mse,sampling_efficiency,seconds";

/// `v` with 6 significant digits in plain decimal notation.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if v == 0.0 {
        return "0".into();
    }
    // The exponent after rounding to 6 digits, so 9.9999996 counts as 10.
    let sci = format!("{v:.5e}");
    let exponent: i32 = sci.split('e').nth(1).unwrap().parse().unwrap();
    let decimals = (5 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn metrics_csv(report: &TrainReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for rec in &report.epochs {
        for (split, ev) in [("train", &rec.train), ("test", &rec.test)] {
            let _ = writeln!(
                out,
                "{},{split},{},{},{}",
                rec.epoch,
                format_sig(ev.mse),
                format_sig(ev.sampling_efficiency),
                format_sig(rec.seconds)
            );
        }
    }
    out
}

pub fn write_metrics_csv(report: &TrainReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, metrics_csv(report))?;
    Ok(())
}
