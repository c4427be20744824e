//! Misspecification-robust sandwich covariance for ETEL.
//!
//! ETEL is recast as a just-identified estimating-equation system in
//! `β = (τ, κ', λ', θ')'` with per-observation function
//!
//! ```text
//! φ_i = [ τ_i − τ
//!         τ_i g_i
//!         (τ − τ_i) g_i + τ_i g_i g_i'κ
//!         τ_i G_i'κ + τ_i G_i'λ g_i'κ − τ_i G_i'λ + τ G_i'λ ]
//! ```
//!
//! where `τ_i = exp(λ'g_i)`, and the covariance of `β̂` is `Γ̂⁻¹Φ̂Γ̂'⁻¹/n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{eval_jacobians, eval_moments, fd_step, Dataset, MomentModel};

/// Largest acceptable `‖n⁻¹Σφ(x_i, β̂)‖`.
pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RobustBeta {
    /// `(τ̂, κ̂', λ̂', θ̂')'`.
    pub beta_hat: Vec<f64>,
    pub gamma_hat: DMatrix<f64>,
    pub phi_hat: DMatrix<f64>,
    /// Symmetrized `Γ̂⁻¹Φ̂Γ̂'⁻¹/n`.
    pub cov: DMatrix<f64>,
    /// Trailing `Nθ × Nθ` block of `cov`.
    pub theta_block: DMatrix<f64>,
    /// `‖n⁻¹Σφ(x_i, β̂)‖`.
    pub residual: f64,
}

impl RobustBeta {
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.theta_block.nrows()).map(|j| self.theta_block[(j, j)].max(0.0).sqrt()).collect()
    }
}

struct Layout {
    ng: usize,
    nt: usize,
}

impl Layout {
    fn dim(&self) -> usize {
        1 + 2 * self.ng + self.nt
    }
    fn kappa(&self) -> std::ops::Range<usize> {
        1..1 + self.ng
    }
    fn lambda(&self) -> std::ops::Range<usize> {
        1 + self.ng..1 + 2 * self.ng
    }
    fn theta(&self) -> std::ops::Range<usize> {
        1 + 2 * self.ng..self.dim()
    }
}

/// Stacked `φ_i(β)` as an `n × dim` row-major buffer.
fn phi_rows<M: MomentModel + ?Sized>(model: &M, data: &Dataset, lay: &Layout, beta: &[f64]) -> Result<Vec<f64>> {
    let (ng, nt, dim) = (lay.ng, lay.nt, lay.dim());
    let tau = beta[0];
    let kappa = &beta[lay.kappa()];
    let lambda = &beta[lay.lambda()];
    let theta = &beta[lay.theta()];
    let gmat = eval_moments(model, data, theta)?;
    let jac = eval_jacobians(model, data, theta)?;
    let mut out = vec![0.0; data.n() * dim];
    for ((phi, g), gi) in out.chunks_exact_mut(dim).zip(gmat.rows()).zip(jac.chunks_exact(ng * nt)) {
        let lg: f64 = lambda.iter().zip(g).map(|(a, b)| a * b).sum();
        let gk: f64 = kappa.iter().zip(g).map(|(a, b)| a * b).sum();
        let ti = lg.exp();
        phi[0] = ti - tau;
        for a in 0..ng {
            phi[1 + a] = ti * g[a];
            phi[1 + ng + a] = (tau - ti) * g[a] + ti * g[a] * gk;
        }
        for b in 0..nt {
            let (mut gtk, mut gtl) = (0.0, 0.0);
            for a in 0..ng {
                gtk += gi[a * nt + b] * kappa[a];
                gtl += gi[a * nt + b] * lambda[a];
            }
            phi[1 + 2 * ng + b] = ti * gtk + ti * gtl * gk - ti * gtl + tau * gtl;
        }
    }
    Ok(out)
}

fn column_means(rows: &[f64], dim: usize) -> Vec<f64> {
    let n = (rows.len() / dim) as f64;
    let mut m = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// Sandwich covariance of `β̂` at an ETEL estimate `(θ̂, λ̂)`.
pub fn robust_covariance<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &[f64],
    lambda_hat: &[f64],
) -> Result<RobustBeta> {
    let lay = Layout { ng: model.n_moments(), nt: model.n_theta() };
    if lambda_hat.len() != lay.ng || theta_hat.len() != lay.nt {
        return Err(Error::Dimension("lambda or theta has the wrong length".into()));
    }
    let n = data.n() as f64;
    let gmat = eval_moments(model, data, theta_hat)?;

    // τ̂ and κ̂ in closed form
    let tau_i: Vec<f64> = gmat
        .rows()
        .map(|g| lambda_hat.iter().zip(g).map(|(a, b)| a * b).sum::<f64>().exp())
        .collect();
    let tau = tau_i.iter().sum::<f64>() / n;
    let mut s = DMatrix::<f64>::zeros(lay.ng, lay.ng);
    for (g, t) in gmat.rows().zip(&tau_i) {
        let gv = DVector::from_column_slice(g);
        s += (t / tau) * &gv * gv.transpose();
    }
    s /= n;
    let s_inv = linalg::pivoted_inverse(&s).ok_or(Error::SingularOmega)?;
    let kappa = -(s_inv * DVector::from_vec(gmat.mean()));

    let mut beta = Vec::with_capacity(lay.dim());
    beta.push(tau);
    beta.extend(kappa.iter());
    beta.extend_from_slice(lambda_hat);
    beta.extend_from_slice(theta_hat);

    let dim = lay.dim();
    let rows = phi_rows(model, data, &lay, &beta)?;
    let resid_vec = column_means(&rows, dim);
    let residual = resid_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::MomentResidualTooLarge(residual));
    }

    let mut phi_hat = DMatrix::<f64>::zeros(dim, dim);
    for r in rows.chunks_exact(dim) {
        let v = DVector::from_column_slice(r);
        phi_hat += &v * v.transpose();
    }
    phi_hat /= n;

    let mut gamma_hat = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..dim {
        let h = fd_step(beta[j]);
        let mut up = beta.clone();
        let mut down = beta.clone();
        up[j] += h;
        down[j] -= h;
        let fu = column_means(&phi_rows(model, data, &lay, &up)?, dim);
        let fd = column_means(&phi_rows(model, data, &lay, &down)?, dim);
        for i in 0..dim {
            gamma_hat[(i, j)] = (fu[i] - fd[i]) / (up[j] - down[j]);
        }
    }

    let g_inv = linalg::pivoted_inverse(&gamma_hat).ok_or(Error::SingularGamma)?;
    let cov = linalg::symmetrize(&(&g_inv * &phi_hat * g_inv.transpose() / n));
    let t = lay.theta();
    let theta_block = cov.view((t.start, t.start), (lay.nt, lay.nt)).into_owned();
    Ok(RobustBeta { beta_hat: beta, gamma_hat, phi_hat, cov, theta_block, residual })
}
