//! Pointwise losses `L(u, y)` with their unimodality point and the Lipschitz
//! and smoothness constants used by the rate analysis, plus the loss-based
//! dissimilarity `d(theta, theta_ref)^2 = P0 L(theta) - P0 L(theta_ref)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossFamily {
    #[serde(rename = "square")]
    SquareBounded,
    #[serde(rename = "logistic")]
    Logistic,
    #[serde(rename = "square-subexp")]
    SquareSubexp,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::SquareBounded => "square",
            LossFamily::Logistic => "logistic",
            LossFamily::SquareSubexp => "square-subexp",
        }
    }

    pub fn is_square(self) -> bool {
        matches!(self, LossFamily::SquareBounded | LossFamily::SquareSubexp)
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" | "square_bounded" | "square-bounded" => Ok(LossFamily::SquareBounded),
            "logistic" => Ok(LossFamily::Logistic),
            "square-subexp" | "square_subexp" => Ok(LossFamily::SquareSubexp),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// `log(1 + e^u)` without overflow.
#[inline]
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(q: f64) -> f64 {
    if q >= 0.0 {
        1.0 / (1.0 + (-q).exp())
    } else {
        let e = q.exp();
        e / (1.0 + e)
    }
}

/// `sigma(q) (1 - sigma(q))`, the second derivative of the logistic loss in `u`.
pub fn logistic_curvature(q: f64) -> f64 {
    let s = sigmoid(q);
    s * (1.0 - s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub a_tilde: f64,
    /// Lipschitz constant in `u` on the admissible range; infinite when the
    /// constant is not available from the loss alone.
    pub lipschitz: f64,
    pub smoothness: f64,
}

impl LossSpec {
    #[inline]
    pub fn value(&self, u: f64, y: f64) -> f64 {
        match self.family {
            LossFamily::SquareBounded | LossFamily::SquareSubexp => (y - u) * (y - u),
            LossFamily::Logistic => y * softplus(-u) + (1.0 - y) * softplus(u),
        }
    }

    /// Derivative of `value` in `u`.
    #[inline]
    pub fn subgradient_u(&self, u: f64, y: f64) -> f64 {
        match self.family {
            LossFamily::SquareBounded | LossFamily::SquareSubexp => 2.0 * (u - y),
            LossFamily::Logistic => sigmoid(u) - y,
        }
    }

    /// Second derivative of `value` in `u`.
    #[inline]
    pub fn curvature(&self, u: f64, _y: f64) -> f64 {
        match self.family {
            LossFamily::SquareBounded | LossFamily::SquareSubexp => 2.0,
            LossFamily::Logistic => logistic_curvature(u),
        }
    }

    /// Upper bound on the second derivative in `u` over all of R.
    pub fn curvature_bound(&self) -> f64 {
        match self.family {
            LossFamily::SquareBounded | LossFamily::SquareSubexp => 2.0,
            LossFamily::Logistic => 0.25,
        }
    }

    /// The point `u_y` where `value(., y)` switches from nonincreasing to
    /// nondecreasing; `+-inf` for logistic responses 1 and 0.
    pub fn unimodal_point(&self, y: f64) -> f64 {
        match self.family {
            LossFamily::SquareBounded | LossFamily::SquareSubexp => y,
            LossFamily::Logistic => {
                if y >= 1.0 {
                    f64::INFINITY
                } else if y <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    y.ln() - (-y).ln_1p()
                }
            }
        }
    }
}

/// Builds a loss by family name.
pub fn make_loss(family: &str, a_tilde: f64) -> Result<LossSpec> {
    make_loss_family(family.parse()?, a_tilde)
}

pub fn make_loss_family(family: LossFamily, a_tilde: f64) -> Result<LossSpec> {
    if !(a_tilde >= 0.0) || !a_tilde.is_finite() {
        return Err(Error::InvalidInput(format!("a_tilde must be finite and nonnegative, got {a_tilde}")));
    }
    let (lipschitz, smoothness) = match family {
        LossFamily::SquareBounded => (4.0 * a_tilde, 4.0 * a_tilde),
        LossFamily::Logistic => (1.0, 2.0 * (1.0 + a_tilde.exp()).sqrt()),
        LossFamily::SquareSubexp => (f64::INFINITY, f64::INFINITY),
    };
    Ok(LossSpec { family, a_tilde, lipschitz, smoothness })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Monte Carlo sample count; 0 for exact quadrature.
    pub n_mc: usize,
}

/// Population risk `P0 L(theta)` under a known data distribution.
pub trait RiskOracle {
    fn risk(&self, loss: &LossSpec, theta: &GridFunction) -> Result<RiskEstimate>;

    /// `P0 L(theta) - P0 L(reference)`; Monte Carlo oracles should use common
    /// random numbers here.
    fn excess_risk(&self, loss: &LossSpec, theta: &GridFunction, reference: &GridFunction) -> Result<RiskEstimate> {
        let a = self.risk(loss, theta)?;
        let b = self.risk(loss, reference)?;
        Ok(RiskEstimate {
            value: a.value - b.value,
            std_error: a.std_error.hypot(b.std_error),
            n_mc: a.n_mc.max(b.n_mc),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityEstimate {
    pub value: f64,
    pub std_error: f64,
    pub excess_risk: f64,
    pub reference: GridFunction,
    pub n_mc: usize,
}

/// `d = sqrt(max(0, P0 L(theta) - P0 L(reference)))`.
pub fn dissimilarity(
    theta: &GridFunction,
    reference: &GridFunction,
    loss: &LossSpec,
    oracle: &dyn RiskOracle,
) -> Result<DissimilarityEstimate> {
    let est = oracle.excess_risk(loss, theta, reference)?;
    let floor = 3.0 * est.std_error + 1e-12;
    if est.value < -floor {
        let reference_risk = oracle.risk(loss, reference)?.value;
        return Err(Error::NotAMinimizer {
            risk: reference_risk + est.value,
            reference_risk,
            std_error: est.std_error,
        });
    }
    let value = est.value.max(0.0).sqrt();
    let std_error = if value > 0.0 { est.std_error / (2.0 * value) } else { est.std_error.sqrt() };
    Ok(DissimilarityEstimate { value, std_error, excess_risk: est.value, reference: reference.clone(), n_mc: est.n_mc })
}
