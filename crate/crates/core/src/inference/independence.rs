//! Whether implied probabilities preserve independence between two blocks of
//! moment conditions.
//!
//! ET weights factor as `exp(λ_a'g_a)·exp(λ_b'g_b)`, so reweighting keeps
//! independent blocks independent; EL weights `1/(1 − λ'g)` do not factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::Carrier;
use crate::model::MomentMatrix;
use crate::tilt::{solve_carrier, weights_for, TiltOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceReport {
    /// `max |Q̂_ab − Q̂_a·Q̂_b|` under ET weights `∝ exp(λ'g_i)`.
    pub et_gap: f64,
    /// Same under EL weights at the EL multiplier of the stacked moments;
    /// `None` when that inner problem has no solution.
    pub el_gap: Option<f64>,
}

/// Linear-interpolation empirical quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indicators `1{g_ij ≤ q}` at the empirical quartiles of every column.
fn quartile_indicators(m: &MomentMatrix) -> Vec<Vec<bool>> {
    let mut out = Vec::new();
    for j in 0..m.ng() {
        let mut col: Vec<f64> = m.rows().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        for p in [0.25, 0.5, 0.75] {
            let q = quantile(&col, p);
            out.push(m.rows().map(|r| r[j] <= q).collect());
        }
    }
    out
}

/// `max |Σw·1_a1_b − (Σw·1_a)(Σw·1_b)|` over quartile-indicator test
/// functions of the two blocks, for weights summing to one.
pub fn factorization_gap(a: &MomentMatrix, b: &MomentMatrix, weights: &[f64]) -> Result<f64> {
    if a.n() != b.n() || weights.len() != a.n() {
        return Err(Error::Dimension("blocks and weights must have the same number of rows".into()));
    }
    if a.n() == 0 {
        return Err(Error::BadData("empty moment matrix".into()));
    }
    let fa = quartile_indicators(a);
    let fb = quartile_indicators(b);
    let weighted = |f: &[bool]| f.iter().zip(weights).filter(|(x, _)| **x).map(|(_, w)| w).sum::<f64>();
    let qa: Vec<f64> = fa.iter().map(|f| weighted(f)).collect();
    let qb: Vec<f64> = fb.iter().map(|f| weighted(f)).collect();
    let mut gap = 0.0f64;
    for (ia, f) in fa.iter().enumerate() {
        for (ib, h) in fb.iter().enumerate() {
            let joint: f64 = f
                .iter()
                .zip(h)
                .zip(weights)
                .filter(|((x, y), _)| **x && **y)
                .map(|(_, w)| w)
                .sum();
            gap = gap.max((joint - qa[ia] * qb[ib]).abs());
        }
    }
    Ok(gap)
}

/// Factorization gaps of the blocks `(a, b)` under ET weights built from
/// `lambda` (partitioned as `(λ_a, λ_b)`) and, for contrast, under EL weights.
pub fn independence_diagnostic(a: &MomentMatrix, b: &MomentMatrix, lambda: &[f64]) -> Result<IndependenceReport> {
    let stacked = a.hstack(b)?;
    if lambda.len() != stacked.ng() {
        return Err(Error::Dimension(format!(
            "lambda has length {}, blocks have {} columns",
            lambda.len(),
            stacked.ng()
        )));
    }
    let et_weights = weights_for(Carrier::Et, lambda, &stacked)?;
    let et_gap = factorization_gap(a, b, &et_weights)?;
    let el = solve_carrier(Carrier::El, &stacked, None, &TiltOptions::default());
    let el_gap = if el.is_converged() { Some(factorization_gap(a, b, &el.weights)?) } else { None };
    Ok(IndependenceReport { et_gap, el_gap })
}
