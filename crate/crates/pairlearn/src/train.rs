//! Trainers for the regularized shifted pairwise risk
//!
//!   J(f) = sum_ij omega_ij L*(y_i, y_j, f(z_ij)) + lambda ||f||_H^2.
//!
//! Every minimizer lies in the span of the training pair sections
//! k(z_ij, .), so optimization happens over the coefficient vector alpha
//! with f = sum alpha_k Phi(z_k). In that parametrization the H-gradient of
//! J is the element with coefficients v = u + 2 lambda alpha, where
//! u_k = omega_k d5 L(., f(z_k)), and its H-norm is sqrt(v^T G v);
//! convergence is always declared on that basis-independent quantity.
//!
//! The damped Newton step solves (2 lambda I + C G) delta = -v with
//! C = diag(omega d5d5) >= 0, which is the coefficient form of the H-space
//! Newton system. It is rewritten through S = C^(1/2) as the symmetric
//! positive definite system (2 lambda I + S G S) r = -S G v,
//! delta = -(v + S r) / (2 lambda), so a Cholesky factorization applies.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::kernel::PairKernel;
use crate::linalg::cholesky_solve;
use crate::loss::PairwiseLoss;
use crate::model::RplModel;
use crate::risk::{coefficient_norm, PairScheme, PairSet};

/// Backtracking line-search parameters (sufficient-decrease rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LineSearch {
    Armijo {
        #[serde(default = "default_armijo_c1")]
        c1: f64,
        #[serde(default = "default_backtrack")]
        backtrack: f64,
        #[serde(default = "default_ls_steps")]
        max_steps: usize,
    },
}

fn default_armijo_c1() -> f64 {
    1e-4
}

fn default_backtrack() -> f64 {
    0.5
}

fn default_ls_steps() -> usize {
    60
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::Armijo {
            c1: default_armijo_c1(),
            backtrack: default_backtrack(),
            max_steps: default_ls_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Iteration cap; Newton stops much earlier on the gradient tolerance,
    /// the subgradient trainer runs exactly this many steps.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Target H-norm of the objective gradient element. Iteration stops
    /// early once reached; if floating point stalls progress first,
    /// training still succeeds provided the residual meets the contract
    /// 1e-8 (1 + ||f||_H).
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default)]
    pub line_search: LineSearch,
    #[serde(default)]
    pub pair_scheme: PairScheme,
    /// Optional cap on the number of ordered pairs (uniform subsample
    /// without replacement, seeded); the objective then uses the
    /// renormalized subsampled pair measure.
    #[serde(default)]
    pub pair_subsample: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Scale factor of the subgradient step c / sqrt(t).
    #[serde(default = "default_subgradient_step")]
    pub subgradient_step: f64,
}

fn default_max_iters() -> usize {
    20_000
}

fn default_grad_tol() -> f64 {
    1e-10
}

/// Residual level (scaled by 1 + ||f||_H) above which a differentiable
/// solve counts as failed even after stagnation.
const GRAD_RESIDUAL_CONTRACT: f64 = 1e-8;

fn default_subgradient_step() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn new(lambda: f64) -> Self {
        TrainConfig {
            lambda,
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            line_search: LineSearch::default(),
            pair_scheme: PairScheme::default(),
            pair_subsample: None,
            seed: 0,
            subgradient_step: default_subgradient_step(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: self.lambda,
            });
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "grad_tol",
                value: self.grad_tol,
            });
        }
        if !(self.subgradient_step.is_finite() && self.subgradient_step > 0.0) {
            return Err(Error::InvalidParameter {
                name: "subgradient_step",
                value: self.subgradient_step,
            });
        }
        Ok(())
    }
}

/// A trained model plus the diagnostics callers embed in reports.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RplModel,
    /// H-norm of the objective (sub)gradient element at the returned
    /// coefficients.
    pub grad_residual: f64,
    pub iterations: usize,
    /// Final value of the regularized shifted objective.
    pub regularized_risk: f64,
}

/// Exact minimizer for ls_rank: the stationarity condition reduces to the
/// dense symmetric positive definite system
/// (lambda diag(1/omega) + G) alpha = (y_i - y_j).
pub fn train_ls_closed_form(
    data: &WeightedDataset,
    kernel: &PairKernel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kernel.validate()?;
    let loss = PairwiseLoss::ls_rank();
    let pairs = PairSet::from_config(data, cfg)?;
    let gram = kernel.gram(pairs.points())?;
    let p = pairs.len();
    let mut a = gram.clone();
    for k in 0..p {
        a[(k, k)] += cfg.lambda / pairs.weights()[k];
    }
    let b = DVector::from_vec(pairs.deltas());
    let alpha = cholesky_solve(&a, &b)?;

    let model = RplModel::new(
        kernel.clone(),
        pairs.points().to_vec(),
        alpha.iter().cloned().collect(),
        cfg.lambda,
        loss.tag(),
    )?;
    let preds = &gram * &alpha;
    let mut v = DVector::zeros(p);
    for k in 0..p {
        let (y, y2) = pairs.labels()[k];
        v[k] = pairs.weights()[k] * loss.d5(y, y2, preds[k])? + 2.0 * cfg.lambda * alpha[k];
    }
    let grad_residual = coefficient_norm(&gram, &v);
    let shifted = pairs.risk(&loss, preds.as_slice(), true)?;
    let regularized_risk = shifted + cfg.lambda * alpha.dot(&preds);
    Ok(TrainOutcome {
        model,
        grad_residual,
        iterations: 1,
        regularized_risk,
    })
}

/// Damped Newton (twice-differentiable losses) or gradient descent with
/// Armijo backtracking (differentiable losses), starting from zero
/// coefficients.
pub fn train_convex(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_convex_from(data, kernel, loss, cfg, None)
}

/// Same with an optional initial coefficient vector over the pair basis.
pub fn train_convex_from(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    init: Option<&[f64]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kernel.validate()?;
    if !loss.is_differentiable() {
        return Err(Error::UnsupportedLoss {
            loss: loss.tag(),
            operation: "train_convex (use the subgradient trainer)",
        });
    }
    let pairs = PairSet::from_config(data, cfg)?;
    let gram = kernel.gram(pairs.points())?;
    let value = |k: usize, t: f64| {
        let (y, y2) = pairs.labels()[k];
        loss.shifted(y, y2, t)
    };
    let deriv = |k: usize, t: f64| {
        let (y, y2) = pairs.labels()[k];
        loss.d5(y, y2, t).expect("differentiability checked above")
    };
    let curvature_holder;
    let curvature: Option<&dyn Fn(usize, f64) -> f64> = if loss.is_twice_differentiable() {
        curvature_holder = |k: usize, t: f64| {
            let (y, y2) = pairs.labels()[k];
            loss.d5d5(y, y2, t).expect("twice differentiable")
        };
        Some(&curvature_holder)
    } else {
        None
    };
    let state = newton_minimize(&pairs, &gram, cfg, &value, &deriv, curvature, init)?;
    finish(&pairs, kernel, loss, cfg, state)
}

/// Projected subgradient with uniform iterate averaging and step
/// c / sqrt(t), for convex losses without a derivative (the hinge link).
/// Iterates are projected onto the certified ball
/// ||f||_H <= sqrt(R(0) / lambda) that must contain the minimizer.
///
/// Without an explicit `init`, hinge-family losses are warm-started at the
/// minimizer of a softplus-smoothed surrogate of the kink (solved by the
/// same Newton engine), which the averaged subgradient phase then polishes
/// against the true objective.
pub fn train_subgradient(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_subgradient_from(data, kernel, loss, cfg, None)
}

pub fn train_subgradient_from(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    init: Option<&[f64]>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kernel.validate()?;
    if !loss.is_convex() {
        return Err(Error::UnsupportedLoss {
            loss: loss.tag(),
            operation: "train_subgradient (requires convexity)",
        });
    }
    let pairs = PairSet::from_config(data, cfg)?;
    let gram = kernel.gram(pairs.points())?;
    let p = pairs.len();
    let lambda = cfg.lambda;

    let risk0 = pairs.risk_at_zero(loss)?;
    let radius = (risk0 / lambda).max(0.0).sqrt();
    // Scale-aware default step: ball radius over a bound on the
    // subgradient norms inside the ball.
    let k_sup = kernel.sup_bound();
    let grad_scale = if loss.lip1().is_finite() {
        loss.lip1() * k_sup + 2.0 * lambda * radius
    } else {
        1.0 + 2.0 * lambda * radius
    };
    let step0 = cfg.subgradient_step * radius.max(1e-12) / grad_scale.max(1e-12);

    let mut alpha: DVector<f64> = match init {
        Some(a0) => {
            if a0.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: a0.len(),
                });
            }
            DVector::from_column_slice(a0)
        }
        None => match hinge_surrogate_init(&pairs, &gram, loss, cfg)? {
            Some(a0) => a0,
            None => DVector::zeros(p),
        },
    };
    let mut preds = &gram * &alpha;
    let mut avg = DVector::<f64>::zeros(p);

    for t in 1..=cfg.max_iters.max(1) {
        let mut u = DVector::zeros(p);
        for k in 0..p {
            let (y, y2) = pairs.labels()[k];
            u[k] = pairs.weights()[k] * loss.subgradient5(y, y2, preds[k]);
        }
        let eta = step0 / (t as f64).sqrt();
        let shrink = 1.0 - 2.0 * lambda * eta;
        let gu = &gram * &u;
        alpha = shrink * &alpha - eta * &u;
        preds = shrink * &preds - eta * &gu;
        let norm_sq = alpha.dot(&preds).max(0.0);
        if norm_sq.sqrt() > radius {
            let scale = radius / norm_sq.sqrt();
            alpha *= scale;
            preds *= scale;
        }
        avg += &alpha;
    }
    avg /= cfg.max_iters.max(1) as f64;

    let preds_avg = &gram * &avg;
    let mut v = DVector::zeros(p);
    for k in 0..p {
        let (y, y2) = pairs.labels()[k];
        v[k] = pairs.weights()[k] * loss.subgradient5(y, y2, preds_avg[k]) + 2.0 * lambda * avg[k];
    }
    let state = SolveState {
        alpha: avg,
        preds: preds_avg,
        grad_residual: coefficient_norm(&gram, &v),
        iterations: cfg.max_iters.max(1),
    };
    finish(&pairs, kernel, loss, cfg, state)
}

/// Dispatch on differentiability: Newton family for differentiable losses,
/// projected subgradient otherwise.
pub fn train(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if loss.is_differentiable() {
        train_convex(data, kernel, loss, cfg)
    } else {
        train_subgradient(data, kernel, loss, cfg)
    }
}

struct SolveState {
    alpha: DVector<f64>,
    preds: DVector<f64>,
    grad_residual: f64,
    iterations: usize,
}

fn finish(
    pairs: &PairSet,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    state: SolveState,
) -> Result<TrainOutcome> {
    let shifted = pairs.risk(loss, state.preds.as_slice(), true)?;
    let regularized_risk = shifted + cfg.lambda * state.alpha.dot(&state.preds);
    let model = RplModel::new(
        kernel.clone(),
        pairs.points().to_vec(),
        state.alpha.iter().cloned().collect(),
        cfg.lambda,
        loss.tag(),
    )?;
    Ok(TrainOutcome {
        model,
        grad_residual: state.grad_residual,
        iterations: state.iterations,
        regularized_risk,
    })
}

/// Newton / gradient-descent core over the pair-span coefficients.
#[allow(clippy::too_many_arguments)]
fn newton_minimize(
    pairs: &PairSet,
    gram: &DMatrix<f64>,
    cfg: &TrainConfig,
    value: &dyn Fn(usize, f64) -> f64,
    deriv: &dyn Fn(usize, f64) -> f64,
    curvature: Option<&dyn Fn(usize, f64) -> f64>,
    init: Option<&[f64]>,
) -> Result<SolveState> {
    let p = pairs.len();
    let lambda = cfg.lambda;
    let LineSearch::Armijo {
        c1,
        backtrack,
        max_steps,
    } = cfg.line_search;

    let mut alpha: DVector<f64> = match init {
        Some(a0) => {
            if a0.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: a0.len(),
                });
            }
            DVector::from_column_slice(a0)
        }
        None => DVector::zeros(p),
    };
    let mut preds = gram * &alpha;

    let objective = |alpha: &DVector<f64>, preds: &DVector<f64>| -> f64 {
        let mut acc = 0.0;
        for k in 0..p {
            acc += pairs.weights()[k] * value(k, preds[k]);
        }
        acc + lambda * alpha.dot(preds)
    };

    let mut iterations = 0;
    for iter in 0..cfg.max_iters {
        iterations = iter;
        let mut v = DVector::zeros(p);
        for k in 0..p {
            v[k] = pairs.weights()[k] * deriv(k, preds[k]) + 2.0 * lambda * alpha[k];
        }
        let gv = gram * &v;
        let grad_residual = v.dot(&gv).max(0.0).sqrt();
        if grad_residual <= cfg.grad_tol {
            return Ok(SolveState {
                alpha,
                preds,
                grad_residual,
                iterations,
            });
        }

        let delta = match curvature {
            Some(curv) => {
                let mut s = DVector::zeros(p);
                for k in 0..p {
                    s[k] = (pairs.weights()[k] * curv(k, preds[k])).max(0.0).sqrt();
                }
                let mut m = DMatrix::zeros(p, p);
                for i in 0..p {
                    for j in 0..p {
                        m[(i, j)] = s[i] * gram[(i, j)] * s[j];
                    }
                    m[(i, i)] += 2.0 * lambda;
                }
                let rhs = DVector::from_fn(p, |k, _| -s[k] * gv[k]);
                let r = newton_system_solve(&m, &rhs)?;
                DVector::from_fn(p, |k, _| -(v[k] + s[k] * r[k]) / (2.0 * lambda))
            }
            None => -&v,
        };
        let gdelta = gram * &delta;
        let mut dd = delta.dot(&gv);
        let (delta, gdelta) = if dd < 0.0 {
            (delta, gdelta)
        } else {
            // Fall back to steepest descent when rounding spoils the
            // Newton direction near the optimum.
            dd = -v.dot(&gv);
            if dd >= 0.0 {
                break;
            }
            (-v.clone(), -gv.clone())
        };

        let j0 = objective(&alpha, &preds);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=max_steps {
            let trial_alpha = &alpha + t * &delta;
            let trial_preds = &preds + t * &gdelta;
            let jt = objective(&trial_alpha, &trial_preds);
            if jt.is_finite() && jt <= j0 + c1 * t * dd {
                // A bitwise no-op step means the floating-point floor is
                // reached; the post-loop contract check decides the result.
                if trial_alpha == alpha {
                    accepted = false;
                } else {
                    alpha = trial_alpha;
                    preds = trial_preds;
                    accepted = true;
                }
                break;
            }
            t *= backtrack;
        }
        if !accepted {
            break;
        }
    }

    // Final residual decides between convergence and failure: the target
    // tolerance when reachable, the scaled contract otherwise.
    let mut v = DVector::zeros(p);
    for k in 0..p {
        v[k] = pairs.weights()[k] * deriv(k, preds[k]) + 2.0 * lambda * alpha[k];
    }
    let grad_residual = coefficient_norm(gram, &v);
    let h_norm = alpha.dot(&preds).max(0.0).sqrt();
    if grad_residual <= cfg.grad_tol.max(GRAD_RESIDUAL_CONTRACT * (1.0 + h_norm)) {
        Ok(SolveState {
            alpha,
            preds,
            grad_residual,
            iterations,
        })
    } else {
        Err(Error::NoConvergence {
            tol: cfg.grad_tol,
            iters: iterations + 1,
            residual: grad_residual,
        })
    }
}

/// Cholesky solve for the Newton system with the documented recovery: if
/// the factorization fails through rounding, a ridge of 1e-10 trace is
/// added once.
fn newton_system_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let ridge = 1e-10 * m.trace();
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += ridge;
    }
    shifted
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::LinearSolve("Newton system not positive definite".into()))
}

/// For hinge-link losses, minimizes the softplus-smoothed surrogate
/// phi_mu(v) = mu log(1 + exp((1 + v) / mu)) along a decreasing mu
/// homotopy; the result initializes the subgradient phase. Returns None
/// for losses that are not hinge-shaped (zero init applies).
fn hinge_surrogate_init(
    pairs: &PairSet,
    gram: &DMatrix<f64>,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<Option<DVector<f64>>> {
    let slopes: Vec<f64> = match loss.hinge_slopes(pairs.labels()) {
        Some(s) => s,
        None => return Ok(None),
    };
    let mut alpha: Option<DVector<f64>> = None;
    for mu in [1e-2, 1e-4, 1e-6] {
        let value = |k: usize, t: f64| {
            let s = slopes[k];
            // Shifted surrogate value: phi_mu(s t) - phi_mu(0).
            softplus_mu(mu, s * t) - softplus_mu(mu, 0.0)
        };
        let deriv = |k: usize, t: f64| {
            let s = slopes[k];
            s * sigmoid_arg((1.0 + s * t) / mu)
        };
        let curv = |k: usize, t: f64| {
            let s = slopes[k];
            let sg = sigmoid_arg((1.0 + s * t) / mu);
            s * s * sg * (1.0 - sg) / mu
        };
        let relaxed = TrainConfig {
            grad_tol: (cfg.grad_tol * 1e2).max(1e-9),
            max_iters: 200,
            ..cfg.clone()
        };
        match newton_minimize(
            pairs,
            gram,
            &relaxed,
            &value,
            &deriv,
            Some(&curv),
            alpha.as_ref().map(|a| a.as_slice()),
        ) {
            Ok(state) => alpha = Some(state.alpha),
            // The surrogate is only a warm start; keep the best level
            // reached if a tighter mu fails to polish.
            Err(Error::NoConvergence { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(alpha)
}

fn softplus_mu(mu: f64, v: f64) -> f64 {
    let z = (1.0 + v) / mu;
    mu * if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid_arg(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
