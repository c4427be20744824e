//! CSV and JSON writers for study results.
//!
//! CSV floats carry 17 significant digits, enough to round-trip any `f64`.

use std::fmt::Write;

use super::study::StudySummary;

/// `{:.16e}`: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(";")
}

/// Pretty-printed summary JSON (without per-replication data).
pub fn summary_json(summary: &StudySummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary is serializable");
    s.push('\n');
    s
}

/// `rep_index,seed,family,theta_hat,status`, one row per family per attempt.
/// Multi-dimensional θ̂ are `;`-separated; failed estimates are empty.
pub fn replications_csv(summary: &StudySummary) -> String {
    let mut out = String::from("rep_index,seed,family,theta_hat,status\n");
    for rec in &summary.records {
        for (k, fam) in summary.config.families.iter().enumerate() {
            let theta = rec.theta_hat[k].as_deref().map(join).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", rec.rep_index, rec.seed, fam, theta, rec.statuses[k]).unwrap();
        }
    }
    out
}

/// `family,theta` with each family's valid estimates in ascending order.
pub fn ecdf_csv(summary: &StudySummary) -> String {
    let mut out = String::from("family,theta\n");
    for f in &summary.families {
        for t in &f.ecdf {
            writeln!(out, "{},{}", f.family, fmt_f64(*t)).unwrap();
        }
    }
    out
}

/// `x,nw` pairs from [`super::weights_dump`].
pub fn weights_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("x,nw\n");
    for (x, w) in rows {
        writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*w)).unwrap();
    }
    out
}
