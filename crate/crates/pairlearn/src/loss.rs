//! Pairwise margin losses and their shifted versions.
//!
//! All supported losses act on (y, y', t) where t is the model value on the
//! input pair; the input points themselves never enter. The phi family
//! composes a convex link phi with a label slope s:
//!
//!   phi_rank           L = phi(sign(y - y') t)
//!   phi_rank_smoothed  L = phi(tanh((y - y') / sigma) t)
//!   ls_rank            L = (y - y' - t)^2
//!
//! The shifted loss L*(t) = L(t) - L(0) is what training minimizes; it is
//! integrable against heavy-tailed label distributions even when L itself
//! is not. Shifting changes no derivative: d/dt L* = d/dt L by the same
//! code path, so the `d5` family is shared.
//!
//! Metadata carried per loss:
//!   lip1  global Lipschitz constant in t (infinite for ls_rank and the
//!         exponential link),
//!   c1    sup |d5 L|, c2 = sup |d5d5 L| where defined,
//!   flags convexity / differentiability used to gate solvers and bounds.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// Convex link applied to the slope-scaled model value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiKind {
    /// log2(1 + e^v): differentiable surrogate with slope bound 1/ln 2.
    Logistic2,
    /// max(0, 1 + v): piecewise linear, subdifferentiable only.
    Hinge,
    /// e^v: smooth but only locally Lipschitz.
    Exponential,
}

impl PhiKind {
    fn eval(self, v: f64) -> f64 {
        match self {
            PhiKind::Logistic2 => softplus(v) / LN2,
            PhiKind::Hinge => (1.0 + v).max(0.0),
            PhiKind::Exponential => v.exp(),
        }
    }

    fn deriv(self, v: f64) -> f64 {
        match self {
            PhiKind::Logistic2 => sigmoid(v) / LN2,
            // Right derivative at the kink v = -1.
            PhiKind::Hinge => {
                if v >= -1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PhiKind::Exponential => v.exp(),
        }
    }

    fn second_deriv(self, v: f64) -> f64 {
        match self {
            PhiKind::Logistic2 => {
                let s = sigmoid(v);
                s * (1.0 - s) / LN2
            }
            PhiKind::Hinge => 0.0,
            PhiKind::Exponential => v.exp(),
        }
    }

    fn tag(self) -> &'static str {
        match self {
            PhiKind::Logistic2 => "logistic2",
            PhiKind::Hinge => "hinge",
            PhiKind::Exponential => "exponential",
        }
    }
}

/// Serializable loss description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    PhiRank { phi: PhiKind },
    PhiRankSmoothed { phi: PhiKind, sigma: f64 },
    LsRank,
}

/// A loss plus its certified metadata. Construct through `PairwiseLoss::new`
/// (or the shorthand constructors) so the metadata is always consistent
/// with the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseLoss {
    spec: LossSpec,
    lip1: f64,
    c1: f64,
    c2: Option<f64>,
    convex: bool,
    differentiable: bool,
    twice_differentiable: bool,
    locally_lipschitz: bool,
}

impl PairwiseLoss {
    pub fn new(spec: LossSpec) -> Result<Self> {
        if let LossSpec::PhiRankSmoothed { sigma, .. } = &spec {
            if !(sigma.is_finite() && *sigma > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "sigma",
                    value: *sigma,
                });
            }
        }
        let (lip1, c1, c2, differentiable, twice, locally) = match &spec {
            LossSpec::PhiRank { phi } | LossSpec::PhiRankSmoothed { phi, .. } => match phi {
                PhiKind::Logistic2 => {
                    let c2 = logistic2_curvature_certificate();
                    (1.0 / LN2, 1.0 / LN2, Some(c2), true, true, true)
                }
                PhiKind::Hinge => (1.0, 1.0, None, false, false, true),
                PhiKind::Exponential => {
                    (f64::INFINITY, f64::INFINITY, Some(f64::INFINITY), true, true, true)
                }
            },
            LossSpec::LsRank => (f64::INFINITY, f64::INFINITY, Some(2.0), true, true, true),
        };
        Ok(PairwiseLoss {
            spec,
            lip1,
            c1,
            c2,
            convex: true,
            differentiable,
            twice_differentiable: twice,
            locally_lipschitz: locally,
        })
    }

    pub fn phi_rank(phi: PhiKind) -> Self {
        PairwiseLoss::new(LossSpec::PhiRank { phi }).expect("no parameters to validate")
    }

    pub fn phi_rank_smoothed(phi: PhiKind, sigma: f64) -> Result<Self> {
        PairwiseLoss::new(LossSpec::PhiRankSmoothed { phi, sigma })
    }

    pub fn ls_rank() -> Self {
        PairwiseLoss::new(LossSpec::LsRank).expect("no parameters to validate")
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    /// Slope multiplying t inside the link; zero for tied labels.
    fn slope(&self, y: f64, y_prime: f64) -> f64 {
        match &self.spec {
            LossSpec::PhiRank { .. } => {
                if y > y_prime {
                    1.0
                } else if y < y_prime {
                    -1.0
                } else {
                    0.0
                }
            }
            LossSpec::PhiRankSmoothed { sigma, .. } => ((y - y_prime) / sigma).tanh(),
            LossSpec::LsRank => unreachable!("ls_rank has no slope"),
        }
    }

    /// For hinge-link losses, the per-pair slopes multiplying t inside the
    /// kink max(0, 1 + s t); None for every other loss shape.
    pub(crate) fn hinge_slopes(&self, labels: &[(f64, f64)]) -> Option<Vec<f64>> {
        match &self.spec {
            LossSpec::PhiRank { phi: PhiKind::Hinge }
            | LossSpec::PhiRankSmoothed { phi: PhiKind::Hinge, .. } => Some(
                labels
                    .iter()
                    .map(|&(y, y2)| self.slope(y, y2))
                    .collect(),
            ),
            _ => None,
        }
    }

    pub fn eval(&self, y: f64, y_prime: f64, t: f64) -> f64 {
        match &self.spec {
            LossSpec::PhiRank { phi } | LossSpec::PhiRankSmoothed { phi, .. } => {
                phi.eval(self.slope(y, y_prime) * t)
            }
            LossSpec::LsRank => {
                let r = y - y_prime - t;
                r * r
            }
        }
    }

    /// L*(t) = L(t) - L(0), computed literally so t = 0 gives exactly 0.
    pub fn shifted(&self, y: f64, y_prime: f64, t: f64) -> f64 {
        self.eval(y, y_prime, t) - self.eval(y, y_prime, 0.0)
    }

    /// Partial derivative in t. Shifting does not change it.
    pub fn d5(&self, y: f64, y_prime: f64, t: f64) -> Result<f64> {
        if !self.differentiable {
            return Err(Error::UnsupportedLoss {
                loss: self.tag(),
                operation: "d5 (loss is not differentiable)",
            });
        }
        Ok(match &self.spec {
            LossSpec::PhiRank { phi } | LossSpec::PhiRankSmoothed { phi, .. } => {
                let s = self.slope(y, y_prime);
                s * phi.deriv(s * t)
            }
            LossSpec::LsRank => -2.0 * (y - y_prime - t),
        })
    }

    /// Second partial derivative in t.
    pub fn d5d5(&self, y: f64, y_prime: f64, t: f64) -> Result<f64> {
        if !self.twice_differentiable {
            return Err(Error::UnsupportedLoss {
                loss: self.tag(),
                operation: "d5d5 (loss is not twice differentiable)",
            });
        }
        Ok(match &self.spec {
            LossSpec::PhiRank { phi } | LossSpec::PhiRankSmoothed { phi, .. } => {
                let s = self.slope(y, y_prime);
                s * s * phi.second_deriv(s * t)
            }
            LossSpec::LsRank => 2.0,
        })
    }

    /// Subgradient selection in t: equals d5 where the loss is
    /// differentiable; at the hinge kink the right derivative is chosen.
    pub fn subgradient5(&self, y: f64, y_prime: f64, t: f64) -> f64 {
        match &self.spec {
            LossSpec::PhiRank { phi } | LossSpec::PhiRankSmoothed { phi, .. } => {
                let s = self.slope(y, y_prime);
                s * phi.deriv(s * t)
            }
            LossSpec::LsRank => -2.0 * (y - y_prime - t),
        }
    }

    /// The finite global Lipschitz constant in t, or an error for losses
    /// that have none (ls_rank, exponential link).
    pub fn lipschitz_constant(&self) -> Result<f64> {
        if self.lip1.is_finite() {
            Ok(self.lip1)
        } else {
            Err(Error::UnsupportedLoss {
                loss: self.tag(),
                operation: "global Lipschitz constant (only locally Lipschitz)",
            })
        }
    }

    pub fn lip1(&self) -> f64 {
        self.lip1
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> Option<f64> {
        self.c2
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn is_differentiable(&self) -> bool {
        self.differentiable
    }

    pub fn is_twice_differentiable(&self) -> bool {
        self.twice_differentiable
    }

    pub fn is_locally_lipschitz(&self) -> bool {
        self.locally_lipschitz
    }

    /// Short display tag for reports and model files.
    pub fn tag(&self) -> String {
        match &self.spec {
            LossSpec::PhiRank { phi } => format!("phi_rank({})", phi.tag()),
            LossSpec::PhiRankSmoothed { phi, sigma } => {
                format!("phi_rank_smoothed({}, sigma={})", phi.tag(), sigma)
            }
            LossSpec::LsRank => "ls_rank".to_string(),
        }
    }
}

/// sup over slopes |s| <= 1 and t of |s^2 phi''(s t)| for the logistic2
/// link, certified once by a dense grid search and stored with a 1% safety
/// factor. The grid contains the analytic maximizer (s = 1, t = 0), so the
/// certificate is never below the true sup. Shared by the smoothed and
/// sign-slope variants: both have |s| <= 1.
fn logistic2_curvature_certificate() -> f64 {
    static CERT: OnceLock<f64> = OnceLock::new();
    *CERT.get_or_init(|| {
        let mut max = 0.0f64;
        let (ns, nt) = (401, 2001);
        for i in 0..=ns {
            let s = -1.0 + 2.0 * i as f64 / ns as f64;
            for j in 0..=nt {
                let t = -40.0 + 80.0 * j as f64 / nt as f64;
                let v = (s * s * PhiKind::Logistic2.second_deriv(s * t)).abs();
                max = max.max(v);
            }
        }
        max * 1.01
    })
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
