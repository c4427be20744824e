//! Built-in simulation designs and the string-addressed model registry.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MomentModel, ThetaBox};

/// Intercept inside the Hall–Horowitz residual.
const HH_INTERCEPT: f64 = -0.72;
/// Coefficient on `x₂` inside the Hall–Horowitz residual.
const HH_X2_COEF: f64 = 3.0;

/// Hall–Horowitz design with `K` moment conditions and one parameter.
///
/// `g = (r, r·x₂, r·(x₃−1), …, r·(x_K−1))` with
/// `r = exp(−0.72 − (x₁+x₂)θ + 3x₂) − 1`, satisfied at `θ* = 3` when
/// `(x₁, x₂) ~ N(0, 0.16·I)` and `x_k ~ χ²₁` for `k ≥ 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HallHorowitz {
    k: usize,
}

impl HallHorowitz {
    pub const THETA_STAR: f64 = 3.0;

    pub fn new(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::BadDesign(format!(
                "Hall-Horowitz needs K >= 2 moment conditions, got {k}"
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn exponent(x: &[f64], theta: f64) -> f64 {
        HH_INTERCEPT - (x[0] + x[1]) * theta + HH_X2_COEF * x[1]
    }

    /// Multiplier `c_k` such that `g_k = r · c_k`.
    #[inline]
    fn multiplier(x: &[f64], k: usize) -> f64 {
        match k {
            0 => 1.0,
            1 => x[1],
            _ => x[k] - 1.0,
        }
    }
}

impl MomentModel for HallHorowitz {
    fn n_theta(&self) -> usize {
        1
    }

    fn n_moments(&self) -> usize {
        self.k
    }

    fn n_x(&self) -> usize {
        self.k
    }

    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let r = Self::exponent(x, theta[0]).exp() - 1.0;
        for (k, o) in out.iter_mut().enumerate() {
            *o = r * Self::multiplier(x, k);
        }
    }

    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let dr = -(x[0] + x[1]) * Self::exponent(x, theta[0]).exp();
        for (k, o) in out.iter_mut().enumerate() {
            *o = dr * Self::multiplier(x, k);
        }
    }

    fn second_derivative(&self, x: &[f64], theta: &[f64], j: usize, out: &mut [f64]) {
        let s = x[0] + x[1];
        out[0] = s * s * Self::exponent(x, theta[0]).exp() * Self::multiplier(x, j);
    }

    fn theta_box(&self) -> ThetaBox {
        ThetaBox::new(vec![0.0], vec![6.0])
    }
}

/// Estimate a mean while imposing unit variance: `g = (x−θ, (x−θ)²−1)`.
///
/// With `x ~ N(0, σ²)` the model is correctly specified for `σ = 1` and
/// misspecified otherwise; the pseudo-true value is `0` in both cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanKnownVariance {
    sigma: f64,
}

impl MeanKnownVariance {
    pub const THETA_STAR: f64 = 0.0;

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::BadDesign(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl MomentModel for MeanKnownVariance {
    fn n_theta(&self) -> usize {
        1
    }

    fn n_moments(&self) -> usize {
        2
    }

    fn n_x(&self) -> usize {
        1
    }

    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let e = x[0] - theta[0];
        out[0] = e;
        out[1] = e * e - 1.0;
    }

    fn jacobian(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
        out[1] = -2.0 * (x[0] - theta[0]);
    }

    fn second_derivative(&self, _x: &[f64], _theta: &[f64], j: usize, out: &mut [f64]) {
        out[0] = if j == 1 { 2.0 } else { 0.0 };
    }

    fn theta_box(&self) -> ThetaBox {
        ThetaBox::new(vec![-2.0], vec![2.0])
    }
}

/// The just-identified location model `g = x − θ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Location;

impl MomentModel for Location {
    fn n_theta(&self) -> usize {
        1
    }

    fn n_moments(&self) -> usize {
        1
    }

    fn n_x(&self) -> usize {
        1
    }

    fn moments(&self, x: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = x[0] - theta[0];
    }

    fn jacobian(&self, _x: &[f64], _theta: &[f64], out: &mut [f64]) {
        out[0] = -1.0;
    }

    fn second_derivative(&self, _x: &[f64], _theta: &[f64], _j: usize, out: &mut [f64]) {
        out[0] = 0.0;
    }
}

/// Looks up a moment model by id: a [`Design`] id or `location`.
pub fn model_from_id(id: &str) -> Result<Box<dyn MomentModel>> {
    if id.trim() == "location" {
        return Ok(Box::new(Location));
    }
    id.parse::<Design>()?.model()
}

/// A built-in design: moment model plus data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    HallHorowitz { k: usize },
    MeanKnownVariance { sigma: f64 },
}

impl Design {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Design::HallHorowitz { k } => HallHorowitz::new(k).map(|_| ()),
            Design::MeanKnownVariance { sigma } => MeanKnownVariance::new(sigma).map(|_| ()),
        }
    }

    pub fn model(&self) -> Result<Box<dyn MomentModel>> {
        Ok(match *self {
            Design::HallHorowitz { k } => Box::new(HallHorowitz::new(k)?),
            Design::MeanKnownVariance { sigma } => Box::new(MeanKnownVariance::new(sigma)?),
        })
    }

    /// True (or pseudo-true) parameter value.
    pub fn theta_star(&self) -> Vec<f64> {
        match self {
            Design::HallHorowitz { .. } => vec![HallHorowitz::THETA_STAR],
            Design::MeanKnownVariance { .. } => vec![MeanKnownVariance::THETA_STAR],
        }
    }

    /// Overidentification degrees of freedom `Ng − Nθ`.
    pub fn overid_df(&self) -> usize {
        match *self {
            Design::HallHorowitz { k } => k - 1,
            Design::MeanKnownVariance { .. } => 1,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::HallHorowitz { k } => write!(f, "hall_horowitz:{k}"),
            Design::MeanKnownVariance { sigma } => write!(f, "mean_known_variance:{sigma}"),
        }
    }
}

impl FromStr for Design {
    type Err = Error;

    /// Parses `"hall_horowitz:K"` or `"mean_known_variance:sigma"`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::UnknownId(format!("{s} (expected name:parameter)")))?;
        let design = match name.trim() {
            "hall_horowitz" => Design::HallHorowitz {
                k: arg
                    .trim()
                    .parse()
                    .map_err(|_| Error::UnknownId(format!("{s} (K must be an integer)")))?,
            },
            "mean_known_variance" => Design::MeanKnownVariance {
                sigma: arg
                    .trim()
                    .parse()
                    .map_err(|_| Error::UnknownId(format!("{s} (sigma must be a real)")))?,
            },
            _ => return Err(Error::UnknownId(s.to_string())),
        };
        design.validate()?;
        Ok(design)
    }
}
