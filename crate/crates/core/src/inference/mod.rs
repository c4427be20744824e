//! Classical and misspecification-robust inference, χ² tests, the O(n⁻¹)
//! bias correction, and the independence diagnostic.

pub mod chi2;
mod independence;
mod robust;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{etel_log_likelihood, EstimateResult, Profile};
use crate::family::Family;
use crate::linalg;
use crate::model::{eval_jacobians, eval_moments, mean_second_derivatives, Dataset, MomentModel};

pub use chi2::{chi2_isf, chi2_sf};
pub use independence::{factorization_gap, independence_diagnostic, IndependenceReport};
pub use robust::{robust_covariance, RobustBeta};

/// Large-sample covariance under correct specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalInference {
    /// `Σ̂ = (Ĝ'Ω̂⁻¹Ĝ)⁻¹`.
    pub sigma_hat: DMatrix<f64>,
    /// `sqrt(diag(Σ̂)/n)`.
    pub std_errors: Vec<f64>,
    /// `Ĥ = Σ̂Ĝ'Ω̂⁻¹`, `Nθ × Ng`.
    pub h_matrix: DMatrix<f64>,
    /// ETEL overidentification statistic; zero when just identified.
    pub lr_overid: f64,
    pub p_overid: f64,
}

/// A χ² test outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub stat: f64,
    pub p_value: f64,
    pub df: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasEstimate {
    pub bias: Vec<f64>,
    /// `a_j = tr(Σ̂ · n⁻¹Σ ∂²g_j/∂θ∂θ') / 2`.
    pub a_vec: Vec<f64>,
    pub theta_bc: Vec<f64>,
}

/// Sample averages at one θ.
struct Moments {
    n: usize,
    g_bar: DMatrix<f64>,
    omega: DMatrix<f64>,
}

fn sample_moments<M: MomentModel + ?Sized>(model: &M, data: &Dataset, theta: &[f64]) -> Result<Moments> {
    let gmat = eval_moments(model, data, theta)?;
    let jac = eval_jacobians(model, data, theta)?;
    let (ng, nt, n) = (model.n_moments(), model.n_theta(), data.n());
    let mut g_bar = DMatrix::zeros(ng, nt);
    for block in jac.chunks_exact(ng * nt) {
        g_bar += linalg::from_row_major(ng, nt, block);
    }
    g_bar /= n as f64;
    let mut omega = DMatrix::zeros(ng, ng);
    for row in gmat.rows() {
        for a in 0..ng {
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
    omega /= n as f64;
    Ok(Moments { n, g_bar, omega })
}

/// `(Σ̂, Ĥ)` from sample averages.
fn sigma_and_h(m: &Moments) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let omega_inv = linalg::pivoted_inverse(&m.omega).ok_or(Error::SingularOmega)?;
    let gt_oi = m.g_bar.transpose() * &omega_inv;
    let info = linalg::symmetrize(&(&gt_oi * &m.g_bar));
    let sigma = linalg::pivoted_inverse(&info).ok_or(Error::RankDeficientJacobian)?;
    let sigma = linalg::symmetrize(&sigma);
    let h = &sigma * gt_oi;
    Ok((sigma, h))
}

/// `Σ̂ = (Ĝ'Ω̂⁻¹Ĝ)⁻¹` with unweighted sample averages at `theta_hat`, plus the
/// ETEL overidentification test.
pub fn classical_covariance<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &[f64],
) -> Result<ClassicalInference> {
    let m = sample_moments(model, data, theta_hat)?;
    let (sigma_hat, h_matrix) = sigma_and_h(&m)?;
    let std_errors = (0..sigma_hat.nrows())
        .map(|j| (sigma_hat[(j, j)] / m.n as f64).max(0.0).sqrt())
        .collect();
    let (lr_overid, p_overid) = match overid_statistic(model, data, theta_hat) {
        Ok(t) => (t.stat, t.p_value),
        Err(Error::DegenerateDf) => (0.0, 1.0),
        Err(e) => return Err(e),
    };
    Ok(ClassicalInference { sigma_hat, std_errors, h_matrix, lr_overid, p_overid })
}

/// Likelihood-ratio test of `θ = θ₀`: `−2n(ln L̂(θ₀) − ln L̂(θ̂))` against
/// `χ²_{Nθ}`. An infeasible inner problem at `θ₀` gives `stat = ∞`, `p = 0`.
pub fn lr_statistic<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta0: &[f64],
    theta_hat: &[f64],
) -> Result<ChiSquareTest> {
    let df = model.n_theta() as u32;
    let profile = Profile::new(Family::Etel, model, data).cold();
    let at_hat = profile.etel_value(theta_hat)?;
    let at_null = match profile.etel_value(theta0) {
        Ok(v) => v,
        Err(Error::ConvexHullFailure | Error::DomainFailure | Error::MaxIter | Error::SingularHessian(_)) => {
            return Ok(ChiSquareTest { stat: f64::INFINITY, p_value: 0.0, df })
        }
        Err(e) => return Err(e),
    };
    let n = data.n() as f64;
    let stat = clamp_rounding(-2.0 * n * (at_null - at_hat));
    Ok(ChiSquareTest { stat, p_value: chi2_sf(stat, df)?, df })
}

/// Negative values within rounding of zero are reported as zero.
fn clamp_rounding(stat: f64) -> f64 {
    if stat < 0.0 && stat > -1e-8 {
        0.0
    } else {
        stat
    }
}

/// ETEL overidentification test `−2n ln L̂(θ̂)` against `χ²_{Ng−Nθ}`.
pub fn overid_statistic<M: MomentModel + ?Sized>(
    model: &M,
    data: &Dataset,
    theta_hat: &[f64],
) -> Result<ChiSquareTest> {
    let df = overid_df(model)?;
    let profile = Profile::new(Family::Etel, model, data).cold();
    let at = profile.inner(theta_hat)?;
    let stat = clamp_rounding(-2.0 * data.n() as f64 * etel_log_likelihood(&at));
    Ok(ChiSquareTest { stat, p_value: chi2_sf(stat, df)?, df })
}

/// GEL overidentification test `2n(P̂(θ̂) − ρ(0))` for `family`; ETEL is
/// delegated to [`overid_statistic`].
pub fn gel_overid_statistic<M: MomentModel + ?Sized>(
    family: Family,
    model: &M,
    data: &Dataset,
    theta_hat: &[f64],
) -> Result<ChiSquareTest> {
    if family == Family::Etel {
        return overid_statistic(model, data, theta_hat);
    }
    let df = overid_df(model)?;
    let profile = Profile::new(family, model, data).cold();
    let value = profile.gel_value(theta_hat)?;
    let stat = clamp_rounding(2.0 * data.n() as f64 * (value - family.carrier().rho0()));
    Ok(ChiSquareTest { stat, p_value: chi2_sf(stat, df)?, df })
}

fn overid_df<M: MomentModel + ?Sized>(model: &M) -> Result<u32> {
    let (ng, nt) = (model.n_moments(), model.n_theta());
    if ng <= nt {
        return Err(Error::DegenerateDf);
    }
    Ok((ng - nt) as u32)
}

/// Plug-in estimate of the O(n⁻¹) bias `n⁻¹Ĥ(−a + n⁻¹Σ G_i Ĥ g_i)` and the
/// corrected estimate `θ̂ − bias`.
pub fn bias_o1<M: MomentModel + ?Sized>(model: &M, data: &Dataset, theta_hat: &[f64]) -> Result<BiasEstimate> {
    let m = sample_moments(model, data, theta_hat)?;
    let (sigma, h) = sigma_and_h(&m)?;
    let (ng, nt, n) = (model.n_moments(), model.n_theta(), data.n() as f64);

    let second = mean_second_derivatives(model, data, theta_hat)?;
    let a_vec: Vec<f64> = second
        .iter()
        .map(|d2| {
            let d2 = linalg::from_row_major(nt, nt, d2);
            0.5 * (&sigma * d2).trace()
        })
        .collect();

    let gmat = eval_moments(model, data, theta_hat)?;
    let jac = eval_jacobians(model, data, theta_hat)?;
    let mut ghg = DVector::<f64>::zeros(ng);
    for (row, block) in gmat.rows().zip(jac.chunks_exact(ng * nt)) {
        let hg = &h * DVector::from_column_slice(row);
        ghg += linalg::from_row_major(ng, nt, block) * hg;
    }
    ghg /= n;

    let inner = ghg - DVector::from_column_slice(&a_vec);
    let bias: Vec<f64> = (&h * inner / n).iter().copied().collect();
    let theta_bc = theta_hat.iter().zip(&bias).map(|(t, b)| t - b).collect();
    Ok(BiasEstimate { bias, a_vec, theta_bc })
}

/// Serialized summary of an estimate and its inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub family: Family,
    pub n: usize,
    pub theta_hat: Vec<f64>,
    pub std_classical: Vec<f64>,
    /// Sandwich standard errors; ETEL only.
    pub std_robust: Option<Vec<f64>>,
    pub lr_overid: f64,
    pub p_overid: f64,
    pub overid_df: u32,
    /// O(n⁻¹) bias estimate; ETEL and EL only.
    pub bias: Option<Vec<f64>>,
    pub theta_bc: Option<Vec<f64>>,
}

/// Classical and robust standard errors, the family's overidentification
/// test and (for ETEL and EL) the bias correction at a converged estimate.
pub fn infer<M: MomentModel + ?Sized>(model: &M, data: &Dataset, est: &EstimateResult) -> Result<InferenceReport> {
    let theta = &est.theta_hat;
    let classical = classical_covariance(model, data, theta)?;
    let (lr_overid, p_overid, overid_df) = match gel_overid_statistic(est.family, model, data, theta) {
        Ok(t) => (t.stat, t.p_value, t.df),
        Err(Error::DegenerateDf) => (0.0, 1.0, 0),
        Err(e) => return Err(e),
    };
    let std_robust = if est.family == Family::Etel {
        let rb = robust_covariance(model, data, theta, &est.lambda_hat)?;
        Some(rb.std_errors())
    } else {
        None
    };
    let (bias, theta_bc) = match est.family {
        Family::Etel | Family::El => {
            let b = bias_o1(model, data, theta)?;
            (Some(b.bias), Some(b.theta_bc))
        }
        _ => (None, None),
    };
    Ok(InferenceReport {
        family: est.family,
        n: data.n(),
        theta_hat: theta.clone(),
        std_classical: classical.std_errors,
        std_robust,
        lr_overid,
        p_overid,
        overid_df,
        bias,
        theta_bc,
    })
}
