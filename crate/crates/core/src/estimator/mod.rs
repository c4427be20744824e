//! Profile objectives over θ and the multistart point estimator.
//!
//! ETEL maximizes `ln L̂(θ) = −ln(n⁻¹ Σ exp(λ̂'(g_i − ĝ)))` with `λ̂` from the ET
//! inner problem, using the exact gradient. The GEL members (EL, ET, CU,
//! ECR) minimize the profiled dual `n⁻¹ Σ ρ(λ̂(θ)'g_i)` with a derivative-free
//! simplex search.

pub mod optimize;

use std::cell::RefCell;
use std::cmp::Ordering;
use std::rc::Rc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Carrier, Family};
use crate::linalg;
use crate::model::{eval_jacobians, eval_moments, Dataset, MomentMatrix, MomentModel};
use crate::tilt::{solve_carrier, TiltOptions, TiltSolution};

use optimize::{bfgs_maximize, nelder_mead_minimize, LocalOptions};

/// Inner solution cached at one θ.
#[derive(Debug, Clone)]
pub struct InnerAt {
    pub theta: Vec<f64>,
    pub gmat: MomentMatrix,
    pub solution: TiltSolution,
}

/// Evaluates profile objectives for one `(family, model, data)` triple.
///
/// Successive inner solves warm-start from the last converged multiplier, and
/// the most recent θ is cached so a gradient at an accepted point reuses its
/// inner solution.
pub struct Profile<'a, M: MomentModel + ?Sized> {
    model: &'a M,
    data: &'a Dataset,
    carrier: Carrier,
    tilt: TiltOptions,
    warm: RefCell<Option<Vec<f64>>>,
    last: RefCell<Option<Rc<InnerAt>>>,
}

impl<'a, M: MomentModel + ?Sized> Profile<'a, M> {
    pub fn new(family: Family, model: &'a M, data: &'a Dataset) -> Self {
        Self {
            model,
            data,
            carrier: family.carrier(),
            tilt: TiltOptions::default(),
            warm: RefCell::new(None),
            last: RefCell::new(None),
        }
    }

    /// Disables warm starts; every inner solve begins at `λ = 0`.
    pub fn cold(self) -> Self {
        Self { warm: RefCell::new(None), ..self }
    }

    pub fn inner(&self, theta: &[f64]) -> Result<Rc<InnerAt>> {
        if let Some(hit) = self.last.borrow().as_ref().filter(|c| c.theta == theta) {
            return Ok(Rc::clone(hit));
        }
        let gmat = eval_moments(self.model, self.data, theta)?;
        let warm = self.warm.borrow().clone();
        let solution = solve_carrier(self.carrier, &gmat, warm.as_deref(), &self.tilt).into_result()?;
        *self.warm.borrow_mut() = Some(solution.lambda_hat.clone());
        let at = Rc::new(InnerAt { theta: theta.to_vec(), gmat, solution });
        *self.last.borrow_mut() = Some(Rc::clone(&at));
        Ok(at)
    }

    /// `ln L̂(θ)`; requires an ET carrier.
    pub fn etel_value(&self, theta: &[f64]) -> Result<f64> {
        debug_assert_eq!(self.carrier, Carrier::Et);
        let at = self.inner(theta)?;
        Ok(etel_log_likelihood(&at))
    }

    pub fn etel_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let at = self.inner(theta)?;
        let jac = eval_jacobians(self.model, self.data, theta)?;
        etel_gradient_parts(&at, &jac, self.model.n_theta()).map(|p| p.gradient)
    }

    /// `n⁻¹ Σ ρ(λ̂(θ)'g_i)`.
    pub fn gel_value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.inner(theta)?.solution.inner_value)
    }
}

/// `−ln(n⁻¹ Σ exp(λ̂'g_i)) + λ̂'ĝ` from an ET inner solution.
pub fn etel_log_likelihood(at: &InnerAt) -> f64 {
    // inner_value = −n⁻¹ Σ exp(λ̂'g_i)
    let mean_exp = -at.solution.inner_value;
    let ghat = at.gmat.mean();
    let lg: f64 = at.solution.lambda_hat.iter().zip(&ghat).map(|(l, g)| l * g).sum();
    -mean_exp.ln() + lg
}

/// Pieces of the exact ETEL gradient at one θ.
pub(crate) struct GradientParts {
    pub gradient: Vec<f64>,
    /// `∂λ̂/∂θ'`, row-major `Ng × Nθ`.
    pub dlambda: DMatrix<f64>,
}

pub(crate) fn etel_gradient_parts(at: &InnerAt, jac: &[f64], nt: usize) -> Result<GradientParts> {
    let gmat = &at.gmat;
    let ng = gmat.ng();
    let n = gmat.n() as f64;
    let w = &at.solution.weights;
    let lambda = &at.solution.lambda_hat;

    let mut ghat = DVector::<f64>::zeros(ng);
    let mut g_hat = DMatrix::<f64>::zeros(ng, nt);
    let mut g_til = DMatrix::<f64>::zeros(ng, nt);
    let mut omega_til = DMatrix::<f64>::zeros(ng, ng);
    // Σ w_i g_i (λ'G_i)
    let mut cross = DMatrix::<f64>::zeros(ng, nt);
    let mut lg = vec![0.0; nt];
    for (i, (row, wi)) in gmat.rows().zip(w).enumerate() {
        let gi = &jac[i * ng * nt..(i + 1) * ng * nt];
        for l in lg.iter_mut() {
            *l = 0.0;
        }
        for a in 0..ng {
            ghat[a] += row[a] / n;
            for b in 0..nt {
                let v = gi[a * nt + b];
                g_hat[(a, b)] += v / n;
                g_til[(a, b)] += wi * v;
                lg[b] += lambda[a] * v;
            }
            for b in 0..=a {
                omega_til[(a, b)] += wi * row[a] * row[b];
            }
        }
        for a in 0..ng {
            for b in 0..nt {
                cross[(a, b)] += wi * row[a] * lg[b];
            }
        }
    }
    for a in 0..ng {
        for b in 0..a {
            omega_til[(b, a)] = omega_til[(a, b)];
        }
    }
    let m = &g_til + &cross;
    let omega_inv = linalg::pivoted_inverse(&omega_til)
        .ok_or(Error::SingularHessian("weighted moment covariance"))?;
    let dlambda = -(&omega_inv * &m);
    let lam = DVector::from_column_slice(lambda);
    let grad = dlambda.transpose() * &ghat + g_hat.transpose() * &lam - g_til.transpose() * &lam;
    Ok(GradientParts { gradient: grad.iter().copied().collect(), dlambda })
}

/// ETEL objective `ln L̂(θ)`.
pub fn etel_objective<M: MomentModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<f64> {
    Profile::new(Family::Etel, model, data).cold().etel_value(theta)
}

/// Exact gradient of [`etel_objective`].
pub fn etel_gradient<M: MomentModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<Vec<f64>> {
    Profile::new(Family::Etel, model, data).cold().etel_gradient(theta)
}

/// The ETEL gradient through the first-order-condition form
/// `n⁻¹ Σ (1 − n ŵ_i) d(λ̂'g_i)/dθ'`, where `λ̂` moves with θ.
pub fn etel_gradient_total_derivative<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let profile = Profile::new(Family::Etel, model, data).cold();
    let at = profile.inner(theta)?;
    let nt = model.n_theta();
    let ng = model.n_moments();
    let jac = eval_jacobians(model, data, theta)?;
    let parts = etel_gradient_parts(&at, &jac, nt)?;
    let n = at.gmat.n() as f64;
    let lambda = &at.solution.lambda_hat;
    let mut grad = vec![0.0; nt];
    for (i, (row, wi)) in at.gmat.rows().zip(&at.solution.weights).enumerate() {
        let gi = &jac[i * ng * nt..(i + 1) * ng * nt];
        let factor = (1.0 - n * wi) / n;
        for (b, out) in grad.iter_mut().enumerate() {
            let mut d = 0.0;
            for a in 0..ng {
                d += row[a] * parts.dlambda[(a, b)] + lambda[a] * gi[a * nt + b];
            }
            *out += factor * d;
        }
    }
    Ok(grad)
}

/// Profiled GEL dual `n⁻¹ Σ ρ(λ̂(θ)'g_i)` for `family`.
pub fn gel_profile<M: MomentModel + ?Sized>(
    family: Family,
    model: &M,
    data: &Dataset,
    theta: &[f64],
) -> Result<f64> {
    Profile::new(family, model, data).cold().gel_value(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateStatus {
    Converged,
    NoConvexHull,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub family: Family,
    pub theta_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub weights: Vec<f64>,
    /// `ln L̂(θ̂)` for ETEL, the profile value for the GEL members.
    pub log_like: f64,
    pub status: EstimateStatus,
    pub starts_tried: usize,
}

impl EstimateResult {
    pub fn is_converged(&self) -> bool {
        self.status == EstimateStatus::Converged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// Points placed along the diagonal of the model's θ box.
    pub n_starts: usize,
    /// Additional start points tried after the grid.
    pub extra_starts: Vec<Vec<f64>>,
    /// Gradient sup-norm (ETEL) or simplex diameter (others).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self { n_starts: 5, extra_starts: Vec::new(), tol: 1e-8, max_iter: 500 }
    }
}

struct Candidate {
    theta: Vec<f64>,
    /// Larger is better for every family.
    score: f64,
    at: Rc<InnerAt>,
    converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    let tie = 1e-10 * (1.0 + a.score.abs().max(b.score.abs()));
    if (a.score - b.score).abs() > tie {
        return a.score > b.score;
    }
    let (la, lb) = (norm(&a.at.solution.lambda_hat), norm(&b.at.solution.lambda_hat));
    if la != lb {
        return la < lb;
    }
    a.theta.iter().zip(&b.theta).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(Ordering::Less)
}

/// Multistart point estimate of θ.
///
/// Starts are the diagonal grid of the model's θ box followed by
/// `extra_starts`. Points farther than one box width outside the box are
/// treated as infeasible. The best converged start wins; ties go to the
/// larger objective, then the smaller `‖λ̂‖`, then the lexicographically
/// smaller θ.
pub fn estimate<M: MomentModel + ?Sized>(
    family: Family,
    model: &M,
    data: &Dataset,
    opts: &EstimateOptions,
) -> Result<EstimateResult> {
    if data.n() == 0 {
        return Err(Error::BadData("empty dataset".into()));
    }
    let bx = model.theta_box();
    let nt = model.n_theta();
    if bx.dim() != nt {
        return Err(Error::Dimension("theta box does not match the parameter dimension".into()));
    }
    let mut starts = bx.diagonal_grid(opts.n_starts);
    for s in &opts.extra_starts {
        if s.len() != nt {
            return Err(Error::Dimension("start point has the wrong dimension".into()));
        }
        if !starts.contains(s) {
            starts.push(s.clone());
        }
    }
    let in_region = |theta: &[f64]| {
        theta.iter().enumerate().all(|(j, &t)| {
            let w = bx.width(j);
            t.is_finite() && t >= bx.lower[j] - w && t <= bx.upper[j] + w
        })
    };
    let mean_width = (0..nt).map(|j| bx.width(j)).sum::<f64>() / nt as f64;
    let local = LocalOptions { tol: opts.tol, max_iter: opts.max_iter, initial_step: 0.05 * mean_width };

    let profile = Profile::new(family, model, data);
    let mut best: Option<Candidate> = None;
    for start in &starts {
        let outcome = if family == Family::Etel {
            bfgs_maximize(
                |t| in_region(t).then(|| profile.etel_value(t).ok()).flatten(),
                |t| profile.etel_gradient(t).ok(),
                start,
                &local,
            )
        } else {
            nelder_mead_minimize(
                |t| {
                    if !in_region(t) {
                        return f64::INFINITY;
                    }
                    profile.gel_value(t).unwrap_or(f64::INFINITY)
                },
                start,
                &local,
            )
        };
        let Some(out) = outcome else { continue };
        let Ok(at) = profile.inner(&out.x) else { continue };
        let score = if family == Family::Etel { out.value } else { -out.value };
        let cand = Candidate { theta: out.x, score, at, converged: out.converged };
        best = match best {
            None => Some(cand),
            Some(cur) => {
                let replace = match (cand.converged, cur.converged) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => better(&cand, &cur),
                };
                Some(if replace { cand } else { cur })
            }
        };
    }

    let best = best.ok_or(Error::NoConvexHull)?;
    let log_like = if family == Family::Etel { best.score } else { -best.score };
    Ok(EstimateResult {
        family,
        theta_hat: best.theta,
        lambda_hat: best.at.solution.lambda_hat.clone(),
        weights: best.at.solution.weights.clone(),
        log_like,
        status: if best.converged { EstimateStatus::Converged } else { EstimateStatus::MaxIter },
        starts_tried: starts.len(),
    })
}
