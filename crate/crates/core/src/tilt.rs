//! Inner problem: the tilting multiplier `λ̂(θ)` and implied probabilities.
//!
//! For a fixed moment matrix the multiplier maximizes the concave dual
//! `n⁻¹ Σ ρ(λ'g_i)`. We minimize `F(λ) = −n⁻¹ Σ ρ(λ'g_i)` with damped Newton
//! steps (Armijo backtracking, `c = 1e-4`, shrink `0.5`). CU has the closed
//! form `λ̂ = −(Σ g_i g_i')⁻¹ Σ g_i`.
//!
//! EL replaces `ln z` (with `z = 1 − ξ`) below `z = 1/n` by its second-order
//! Taylor expansion, which makes the dual smooth on all of `ℝ^Ng`. The
//! minimizer is unchanged whenever the EL solution exists, because every
//! EL weight `1/(n z_i)` is then at most one; a minimizer with some
//! `z_i < 1/n` certifies that the origin is outside the convex hull.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Carrier, Family};
use crate::linalg;
use crate::model::MomentMatrix;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Newton decrements below this (relative to `|F|`) are rounding noise.
const NOISE_DECREMENT: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltStatus {
    Converged,
    /// The origin is not interior to the convex hull of the moment vectors.
    ConvexHullFailure,
    /// No step keeps every observation inside the carrier's domain.
    DomainFailure,
    SingularHessian,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltSolution {
    pub lambda_hat: Vec<f64>,
    /// Implied probabilities; empty unless the solve converged.
    pub weights: Vec<f64>,
    /// `n⁻¹ Σ ρ(λ̂'g_i)`.
    pub inner_value: f64,
    pub iterations: usize,
    pub status: TiltStatus,
}

impl TiltSolution {
    pub fn is_converged(&self) -> bool {
        self.status == TiltStatus::Converged
    }

    /// Maps every non-converged status onto the matching error.
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            TiltStatus::Converged => Ok(self),
            TiltStatus::ConvexHullFailure => Err(Error::ConvexHullFailure),
            TiltStatus::DomainFailure => Err(Error::DomainFailure),
            TiltStatus::SingularHessian => Err(Error::SingularHessian("inner Newton system")),
            TiltStatus::MaxIter => Err(Error::MaxIter),
        }
    }

    fn failed(ng: usize, status: TiltStatus, iterations: usize, lambda: Option<Vec<f64>>) -> Self {
        Self {
            lambda_hat: lambda.unwrap_or_else(|| vec![f64::NAN; ng]),
            weights: Vec::new(),
            inner_value: f64::NAN,
            iterations,
            status,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltOptions {
    /// Stationarity tolerance, scaled by `1 + max‖g_i‖`.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖λ‖` beyond which the dual is declared unbounded.
    pub lambda_bound: f64,
}

impl Default for TiltOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, lambda_bound: 1e6 }
    }
}

/// Solves for `λ̂` with default options, starting from `λ = 0`.
pub fn solve_lambda(family: Family, gmat: &MomentMatrix) -> TiltSolution {
    solve_carrier(family.carrier(), gmat, None, &TiltOptions::default())
}

/// Solves the inner problem for `carrier`, optionally from a warm start.
///
/// A warm start outside the carrier's domain is ignored.
pub fn solve_carrier(
    carrier: Carrier,
    gmat: &MomentMatrix,
    start: Option<&[f64]>,
    opts: &TiltOptions,
) -> TiltSolution {
    match carrier {
        Carrier::Cu => solve_cu(gmat),
        _ => Newton::new(carrier, gmat, opts).run(start),
    }
}

fn solve_cu(gmat: &MomentMatrix) -> TiltSolution {
    let ng = gmat.ng();
    let n = gmat.n() as f64;
    let mut omega = DMatrix::<f64>::zeros(ng, ng);
    let mut sum = DVector::<f64>::zeros(ng);
    for row in gmat.rows() {
        for a in 0..ng {
            sum[a] += row[a];
            for b in 0..=a {
                omega[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..ng {
        for b in 0..a {
            omega[(b, a)] = omega[(a, b)];
        }
    }
    let Some(inv) = linalg::pivoted_inverse(&omega) else {
        return TiltSolution::failed(ng, TiltStatus::SingularHessian, 0, None);
    };
    let lambda = -(inv * sum);
    let lambda: Vec<f64> = lambda.iter().copied().collect();
    let value = gmat.rows().map(|r| Carrier::Cu.rho(dot(&lambda, r))).sum::<f64>() / n;
    match weights_for(Carrier::Cu, &lambda, gmat) {
        Ok(weights) => TiltSolution {
            lambda_hat: lambda,
            weights,
            inner_value: value,
            iterations: 1,
            status: TiltStatus::Converged,
        },
        Err(_) => TiltSolution::failed(ng, TiltStatus::DomainFailure, 1, Some(lambda)),
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// `(ρ, ρ', ρ'')` in `ξ` of the EL carrier `ln z`, `z = 1 − ξ`, continued
/// below `z = eps` by its quadratic expansion.
#[inline]
fn pseudo_log(z: f64, eps: f64) -> (f64, f64, f64) {
    if z >= eps {
        (z.ln(), -1.0 / z, -1.0 / (z * z))
    } else {
        let r = z / eps;
        (eps.ln() - 1.5 + 2.0 * r - 0.5 * r * r, -(2.0 - r) / eps, -1.0 / (eps * eps))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Value, gradient and Hessian of `F` at one point.
struct Eval {
    value: f64,
    grad: Vec<f64>,
    /// Packed lower triangle.
    hess: Vec<f64>,
    mean_tau: f64,
}

struct Newton<'a> {
    carrier: Carrier,
    gmat: &'a MomentMatrix,
    opts: &'a TiltOptions,
    ng: usize,
    /// EL threshold `1/n` below which the logarithm is extended quadratically.
    el_margin: f64,
    scale: f64,
}

impl<'a> Newton<'a> {
    fn new(carrier: Carrier, gmat: &'a MomentMatrix, opts: &'a TiltOptions) -> Self {
        Self {
            carrier,
            gmat,
            opts,
            ng: gmat.ng(),
            el_margin: 1.0 / gmat.n() as f64,
            scale: 1.0 + gmat.max_row_norm(),
        }
    }

    fn feasible(&self, xi: f64) -> bool {
        match self.carrier {
            Carrier::El => xi.is_finite(),
            c => c.in_domain(xi),
        }
    }

    /// Returns `None` outside the domain or on overflow.
    fn eval(&self, lambda: &[f64]) -> Option<Eval> {
        let ng = self.ng;
        let mut value = 0.0;
        let mut grad = vec![0.0; ng];
        let mut hess = vec![0.0; ng * (ng + 1) / 2];
        let mut sum_tau = 0.0;
        for row in self.gmat.rows() {
            let xi = dot(lambda, row);
            if !self.feasible(xi) {
                return None;
            }
            let (rho, tau, tau_p) = match self.carrier {
                Carrier::Et => {
                    let e = xi.exp();
                    (-e, -e, -e)
                }
                Carrier::El => pseudo_log(1.0 - xi, self.el_margin),
                c => (c.rho(xi), c.tau(xi), c.tau_prime(xi)),
            };
            value -= rho;
            sum_tau += tau;
            let mut k = 0;
            for a in 0..ng {
                grad[a] -= tau * row[a];
                let ta = tau_p * row[a];
                for b in 0..=a {
                    hess[k] -= ta * row[b];
                    k += 1;
                }
            }
        }
        let n = self.gmat.n() as f64;
        value /= n;
        if !value.is_finite() {
            return None;
        }
        grad.iter_mut().for_each(|g| *g /= n);
        hess.iter_mut().for_each(|h| *h /= n);
        Some(Eval { value, grad, hess, mean_tau: sum_tau / n })
    }

    fn converged(&self, e: &Eval) -> bool {
        let gnorm = e.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let bound = self.opts.tol * self.scale;
        // ‖Σ w_i g_i‖ = ‖grad‖ / |mean τ|
        gnorm <= bound && gnorm <= bound * e.mean_tau.abs()
    }

    /// Certificate that the ET dual has no minimizer: at an interior
    /// solution `n⁻¹ Σ exp(λ̂'g_i) > 1/n`, and every other λ is larger.
    fn et_unbounded(&self, value: f64) -> bool {
        self.carrier == Carrier::Et && value < (1.0 - 1e-12) / self.gmat.n() as f64
    }

    fn newton_direction(&self, e: &Eval) -> Option<Vec<f64>> {
        let ng = self.ng;
        let mut h = DMatrix::<f64>::zeros(ng, ng);
        let mut k = 0;
        for a in 0..ng {
            for b in 0..=a {
                h[(a, b)] = e.hess[k];
                h[(b, a)] = e.hess[k];
                k += 1;
            }
        }
        let rhs = DVector::from_iterator(ng, e.grad.iter().map(|g| -g));
        let d = linalg::solve_spd(&h, &rhs)?;
        d.iter().all(|v| v.is_finite()).then(|| d.iter().copied().collect())
    }

    fn run(&self, start: Option<&[f64]>) -> TiltSolution {
        let ng = self.ng;
        let zero = vec![0.0; ng];
        let (mut lambda, mut cur) = match start
            .filter(|s| s.len() == ng)
            .and_then(|s| self.eval(s).map(|e| (s.to_vec(), e)))
        {
            Some(pair) => pair,
            None => match self.eval(&zero) {
                Some(e) => (zero, e),
                None => return TiltSolution::failed(ng, TiltStatus::DomainFailure, 0, None),
            },
        };

        for iter in 0..=self.opts.max_iter {
            if self.et_unbounded(cur.value) {
                return TiltSolution::failed(ng, TiltStatus::ConvexHullFailure, iter, Some(lambda));
            }
            if self.converged(&cur) {
                return self.finish(lambda, cur, iter);
            }
            if iter == self.opts.max_iter {
                break;
            }
            let Some(dir) = self.newton_direction(&cur) else {
                return TiltSolution::failed(ng, TiltStatus::SingularHessian, iter, Some(lambda));
            };
            let slope = dot(&cur.grad, &dir);
            let (trial, e) = if -slope <= NOISE_DECREMENT * (1.0 + cur.value.abs()) {
                // The predicted decrease is below rounding, so the value
                // cannot guide the step; take the full Newton step when it
                // reduces the gradient.
                let full: Vec<f64> = lambda.iter().zip(&dir).map(|(l, d)| l + d).collect();
                match self.eval(&full) {
                    Some(e) if sup(&e.grad) < sup(&cur.grad) => (full, e),
                    _ => break,
                }
            } else {
                match self.line_search(&lambda, &dir, &cur, slope) {
                    Ok(pair) => pair,
                    Err(true) => {
                        return TiltSolution::failed(ng, TiltStatus::DomainFailure, iter, Some(lambda))
                    }
                    Err(false) => break,
                }
            };
            if trial.iter().map(|v| v * v).sum::<f64>().sqrt() > self.opts.lambda_bound {
                return TiltSolution::failed(ng, TiltStatus::ConvexHullFailure, iter + 1, Some(trial));
            }
            lambda = trial;
            cur = e;
        }
        if self.et_unbounded(cur.value) {
            return TiltSolution::failed(ng, TiltStatus::ConvexHullFailure, self.opts.max_iter, Some(lambda));
        }
        TiltSolution::failed(ng, TiltStatus::MaxIter, self.opts.max_iter, Some(lambda))
    }

    /// Armijo backtracking along `dir`. `Err(true)` means no trial point was
    /// inside the domain.
    fn line_search(&self, lambda: &[f64], dir: &[f64], cur: &Eval, slope: f64) -> Result<(Vec<f64>, Eval), bool> {
        let mut alpha = 1.0;
        let mut any_feasible = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = lambda.iter().zip(dir).map(|(l, d)| l + alpha * d).collect();
            if let Some(e) = self.eval(&trial) {
                any_feasible = true;
                if e.value <= cur.value + ARMIJO_C * alpha * slope && e.value < cur.value {
                    return Ok((trial, e));
                }
            }
            alpha *= 0.5;
        }
        Err(!any_feasible)
    }

    fn finish(&self, lambda: Vec<f64>, cur: Eval, iterations: usize) -> TiltSolution {
        if self.carrier == Carrier::El && self.gmat.rows().any(|r| 1.0 - dot(&lambda, r) < self.el_margin) {
            return TiltSolution::failed(self.ng, TiltStatus::ConvexHullFailure, iterations, Some(lambda));
        }
        match weights_for(self.carrier, &lambda, self.gmat) {
            Ok(weights) => TiltSolution {
                lambda_hat: lambda,
                weights,
                inner_value: -cur.value,
                iterations,
                status: TiltStatus::Converged,
            },
            Err(_) => TiltSolution::failed(self.ng, TiltStatus::DomainFailure, iterations, Some(lambda)),
        }
    }
}

/// Implied probabilities `ŵ_i = τ(λ'g_i) / Σ_j τ(λ'g_j)` for `family`.
///
/// Negative weights (possible for `γ > 0`) are returned unchanged.
pub fn implied_weights(family: Family, lambda: &[f64], gmat: &MomentMatrix) -> Result<Vec<f64>> {
    if lambda.len() != gmat.ng() {
        return Err(Error::Dimension(format!(
            "lambda has length {}, moments have {} columns",
            lambda.len(),
            gmat.ng()
        )));
    }
    weights_for(family.carrier(), lambda, gmat)
}

pub(crate) fn weights_for(carrier: Carrier, lambda: &[f64], gmat: &MomentMatrix) -> Result<Vec<f64>> {
    let xi: Vec<f64> = gmat.rows().map(|r| dot(lambda, r)).collect();
    if xi.iter().any(|&x| !carrier.in_domain(x)) {
        return Err(Error::DomainFailure);
    }
    let tau: Vec<f64> = match carrier {
        Carrier::Et => {
            // shift before exponentiating; the common factor cancels
            let top = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            xi.iter().map(|x| -(x - top).exp()).collect()
        }
        c => xi.iter().map(|&x| c.tau(x)).collect(),
    };
    let total: f64 = tau.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::DomainFailure);
    }
    Ok(tau.iter().map(|t| t / total).collect())
}

/// `Σ_i w_i g_i`.
pub fn weighted_moment(weights: &[f64], gmat: &MomentMatrix) -> Vec<f64> {
    let mut out = vec![0.0; gmat.ng()];
    for (w, row) in weights.iter().zip(gmat.rows()) {
        for (o, g) in out.iter_mut().zip(row) {
            *o += w * g;
        }
    }
    out
}
