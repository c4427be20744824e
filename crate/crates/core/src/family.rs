//! The empirical discrepancy families and their carrier functions.
//!
//! | family | γ  | ρ(ξ)                          | τ(ξ) = ρ'(ξ)            |
//! |--------|----|-------------------------------|-------------------------|
//! | EL     | −1 | ln(1−ξ)                       | −(1−ξ)⁻¹                |
//! | ET     | 0  | −exp(ξ)                       | −exp(ξ)                 |
//! | CU     | 1  | −(1+ξ)²/2                     | −(1+ξ)                  |
//! | ECR(γ) | γ  | −(1+γξ)^((γ+1)/γ) / (γ+1)     | −(1+γξ)^(1/γ)           |
//!
//! Only the ratio of tilting values matters for implied probabilities, so the
//! sign convention of τ is immaterial there.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Which estimator to compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    El,
    Et,
    Cu,
    /// Empirical Cressie–Read with index γ.
    Ecr(f64),
    /// Exponential tilting for the weights, empirical likelihood for θ.
    Etel,
}

impl Family {
    /// Carrier used by the inner (λ) problem.
    pub fn carrier(&self) -> Carrier {
        match *self {
            Family::El => Carrier::El,
            Family::Et | Family::Etel => Carrier::Et,
            Family::Cu => Carrier::Cu,
            Family::Ecr(g) if g == -1.0 => Carrier::El,
            Family::Ecr(g) if g == 0.0 => Carrier::Et,
            Family::Ecr(g) => Carrier::Power(g),
        }
    }

    /// Whether implied probabilities are positive by construction.
    pub fn positive_weights(&self) -> bool {
        match *self {
            Family::El | Family::Et | Family::Etel => true,
            Family::Cu => false,
            Family::Ecr(g) => g <= 0.0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::El => f.write_str("el"),
            Family::Et => f.write_str("et"),
            Family::Cu => f.write_str("cu"),
            Family::Ecr(g) => write!(f, "ecr:{g}"),
            Family::Etel => f.write_str("etel"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    /// Accepts `el`, `et`, `cu`, `etel`, `ecr:γ` (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "el" => Ok(Family::El),
            "et" => Ok(Family::Et),
            "cu" => Ok(Family::Cu),
            "etel" => Ok(Family::Etel),
            other => {
                let gamma = other
                    .strip_prefix("ecr:")
                    .or_else(|| other.strip_prefix("ecr(").and_then(|r| r.strip_suffix(')')))
                    .and_then(|g| g.trim().parse::<f64>().ok())
                    .filter(|g| g.is_finite())
                    .ok_or_else(|| Error::UnknownId(s.to_string()))?;
                Ok(Family::Ecr(gamma))
            }
        }
    }
}

impl Serialize for Family {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Carrier function `ρ` of a GEL dual, with derivatives.
///
/// `Power(γ)` never holds `γ ∈ {−1, 0}`; those limits are `El` and `Et`. For
/// `γ > 0` the power is extended oddly below `1 + γξ = 0`, which keeps `ρ`
/// concave, agrees with the CU polynomial at `γ = 1`, and lets weights turn
/// negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Carrier {
    El,
    Et,
    Cu,
    Power(f64),
}

impl Carrier {
    /// `ρ(0)`.
    pub fn rho0(&self) -> f64 {
        match *self {
            Carrier::El => 0.0,
            Carrier::Et => -1.0,
            Carrier::Cu => -0.5,
            Carrier::Power(g) => -1.0 / (g + 1.0),
        }
    }

    /// Whether `ξ` lies in the open domain of `ρ`.
    #[inline]
    pub fn in_domain(&self, xi: f64) -> bool {
        match *self {
            Carrier::El => 1.0 - xi > 0.0,
            Carrier::Power(g) if g < 0.0 => 1.0 + g * xi > 0.0,
            _ => xi.is_finite(),
        }
    }

    #[inline]
    pub fn rho(&self, xi: f64) -> f64 {
        match *self {
            Carrier::El => (1.0 - xi).ln(),
            Carrier::Et => -xi.exp(),
            Carrier::Cu => -0.5 * (1.0 + xi) * (1.0 + xi),
            Carrier::Power(g) => {
                let b = 1.0 + g * xi;
                -b.abs().powf((g + 1.0) / g) / (g + 1.0)
            }
        }
    }

    /// `τ(ξ) = ρ'(ξ)`.
    #[inline]
    pub fn tau(&self, xi: f64) -> f64 {
        match *self {
            Carrier::El => -1.0 / (1.0 - xi),
            Carrier::Et => -xi.exp(),
            Carrier::Cu => -(1.0 + xi),
            Carrier::Power(g) => {
                let b = 1.0 + g * xi;
                -b.signum() * b.abs().powf(1.0 / g)
            }
        }
    }

    /// `ρ''(ξ)`, never positive.
    #[inline]
    pub fn tau_prime(&self, xi: f64) -> f64 {
        match *self {
            Carrier::El => {
                let d = 1.0 - xi;
                -1.0 / (d * d)
            }
            Carrier::Et => -xi.exp(),
            Carrier::Cu => -1.0,
            Carrier::Power(g) => {
                let b = 1.0 + g * xi;
                -b.abs().powf(1.0 / g - 1.0)
            }
        }
    }
}
