//! Contaminated pair measures, the maxbias bound, and empirical influence
//! functions.
//!
//! The influence function solves the operator equation M IF = -T where
//!
//!   M g = 2 lambda g + sum_k omega_k c_k <Phi_k, g>_H Phi_k,
//!   T   = -2 sum_k omega_k a_k Phi_k + (contamination blocks),
//!
//! with a_k, c_k the first and second partial derivatives of the loss in
//! its score argument, evaluated at the trained model's predictions. M is
//! positive definite (it dominates 2 lambda id because the loss is convex),
//! so the equation has a unique solution. The contamination blocks never
//! enter M's non-identity range, which is spanned by training pairs; their
//! coefficients therefore come from the 2 lambda id part alone, and the
//! remaining pair-block system (2 lambda I + diag(omega c) G) beta = rhs
//! has all eigenvalues >= 2 lambda. Correctness is asserted through the
//! basis-independent H-norm residual ||M IF + T||_H, never through the
//! coefficients themselves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{InputPoint, PairPoint, WeightedDataset};
use crate::error::{Error, Result};
use crate::kernel::PairKernel;
use crate::linalg::lu_solve_or_least_squares;
use crate::loss::PairwiseLoss;
use crate::model::RplModel;
use crate::par::parallel_map;
use crate::risk::PairSet;
use crate::train::{train, train_convex, TrainConfig};

/// Finite-difference contamination levels used by default; halving steps so
/// the first-order convergence of the secants is visible as error ratios
/// near 2.
pub const FD_EPSILONS: [f64; 3] = [0.04, 0.02, 0.01];

/// Contaminated and base models are trained to this gradient tolerance so
/// finite-difference error dominates solver error.
pub const FD_GRAD_TOL: f64 = 1e-12;

/// The contaminating measure Q: a Dirac point mass or a weighted dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Contaminant {
    Point { x: InputPoint, y: f64 },
    Dataset(WeightedDataset),
}

impl Contaminant {
    fn to_dataset(&self) -> Result<WeightedDataset> {
        match self {
            Contaminant::Point { x, y } => {
                WeightedDataset::new(vec![x.clone()], vec![*y], vec![1.0])
            }
            Contaminant::Dataset(q) => Ok(q.clone()),
        }
    }
}

/// The mixture (1 - epsilon) P + epsilon Q.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub base: WeightedDataset,
    pub contaminant: Contaminant,
    pub epsilon: f64,
}

impl ContaminationSpec {
    pub fn new(base: WeightedDataset, contaminant: Contaminant, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && (0.0..1.0).contains(&epsilon)) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: epsilon,
            });
        }
        Ok(ContaminationSpec {
            base,
            contaminant,
            epsilon,
        })
    }
}

/// Materializes the mixture as one weighted dataset: base weights scaled by
/// (1 - epsilon), contaminant weights by epsilon. With epsilon = 0 the base
/// is returned unchanged (no zero-weight padding points).
pub fn contaminate(spec: &ContaminationSpec) -> Result<WeightedDataset> {
    if spec.epsilon == 0.0 {
        return Ok(spec.base.clone());
    }
    let q = spec.contaminant.to_dataset()?;
    if q.dim() != spec.base.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.base.dim(),
            got: q.dim(),
        });
    }
    let mut points = spec.base.points().to_vec();
    points.extend(q.points().iter().cloned());
    let mut labels = spec.base.labels().to_vec();
    labels.extend_from_slice(q.labels());
    let mut weights: Vec<f64> = spec
        .base
        .weights()
        .iter()
        .map(|w| (1.0 - spec.epsilon) * w)
        .collect();
    weights.extend(q.weights().iter().map(|v| spec.epsilon * v));
    WeightedDataset::new(points, labels, weights)
}

/// One contamination level of a maxbias sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub epsilon: f64,
    /// ||f_P - f_{P_eps}||_H, measured through the Gram algebra.
    pub bias: f64,
    /// (8 / lambda) ||k||_inf |L|_1 epsilon.
    pub bound: f64,
    /// bias <= bound + 1e-8.
    pub holds: bool,
}

/// Trains on P and on each mixture (1 - eps) P + eps Q and reports the
/// H-norm bias against the linear bound (8 / lambda) ||k||_inf |L|_1 eps.
/// Rows are independent trainings and run on the configured thread pool.
pub fn bias_sweep(
    data: &WeightedDataset,
    contaminant: &Contaminant,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    epsilons: &[f64],
) -> Result<Vec<BiasRow>> {
    cfg.validate()?;
    kernel.validate()?;
    let lip = loss.lipschitz_constant()?;
    let slope = 8.0 / cfg.lambda * kernel.sup_bound() * lip;
    let base = train(data, kernel, loss, cfg)?.model;
    let rows = parallel_map(epsilons.to_vec(), |eps| -> Result<BiasRow> {
        let spec = ContaminationSpec::new(data.clone(), contaminant.clone(), eps)?;
        let mixed = contaminate(&spec)?;
        let shifted_model = train(&mixed, kernel, loss, cfg)?.model;
        let bias = base.h_distance(&shifted_model)?;
        let bound = slope * eps;
        Ok(BiasRow {
            epsilon: eps,
            bias,
            bound,
            holds: bias <= bound + 1e-8,
        })
    });
    rows.into_iter().collect()
}

/// One finite-difference validation row: the H-distance between the
/// contamination secant (f_{P_eps} - f_P) / eps and the influence element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdRow {
    pub epsilon: f64,
    pub error: f64,
}

/// Influence element with its certification numbers.
#[derive(Debug, Clone)]
pub struct InfluenceResult {
    /// The H-element solving M IF = -T, compacted over the extended basis
    /// (training pairs plus contamination blocks).
    pub if_element: RplModel,
    pub if_norm: f64,
    /// ||M IF + T||_H via Gram inner products; independent of how the
    /// coefficients were produced.
    pub operator_residual: f64,
    /// ||T||_H, for the bound chain if_norm <= ||T||_H / (2 lambda).
    pub t_norm: f64,
    pub fd_table: Vec<FdRow>,
}

/// Influence function of the learning map at the Dirac contamination
/// delta_{(x0, y0)}, finite-difference-validated on the default schedule.
pub fn influence_function(
    data: &WeightedDataset,
    x0: &InputPoint,
    y0: f64,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<InfluenceResult> {
    influence_function_at(data, x0, y0, kernel, loss, cfg, &FD_EPSILONS)
}

/// Same with an explicit finite-difference schedule; pass an empty slice to
/// skip the retraining-based validation (grid scans).
pub fn influence_function_at(
    data: &WeightedDataset,
    x0: &InputPoint,
    y0: f64,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    fd_epsilons: &[f64],
) -> Result<InfluenceResult> {
    require_influence_loss(loss)?;
    if x0.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: x0.dim(),
        });
    }
    if !y0.is_finite() {
        return Err(Error::NonFinite {
            context: "contamination label y0",
        });
    }
    let tight = tight_config(cfg);
    let base = train_convex(data, kernel, loss, &tight)?.model;
    let pairs = PairSet::full(data, tight.pair_scheme)?;

    let n = data.n();
    let mut q_points = Vec::with_capacity(2 * n);
    let mut q_coefs = Vec::with_capacity(2 * n);
    for i in 0..n {
        let xi = data.point(i).clone();
        let yi = data.label(i);
        let wi = data.weight(i);
        let zi0 = PairPoint::new(xi.clone(), x0.clone())?;
        let z0i = PairPoint::new(x0.clone(), xi)?;
        q_coefs.push(wi * loss.d5(yi, y0, base.evaluate_pair(&zi0))?);
        q_points.push(zi0);
        q_coefs.push(wi * loss.d5(y0, yi, base.evaluate_pair(&z0i))?);
        q_points.push(z0i);
    }

    let mut result = solve_influence(&pairs, &base, kernel, loss, tight.lambda, q_points, q_coefs)?;
    let contaminant = Contaminant::Point {
        x: x0.clone(),
        y: y0,
    };
    result.fd_table = fd_validate(
        data,
        &contaminant,
        kernel,
        loss,
        &tight,
        &base,
        &result.if_element,
        fd_epsilons,
    )?;
    Ok(result)
}

/// Gateaux derivative of the learning map in direction Q: the same operator
/// solve with T built from the general two-sided contamination form.
pub fn gateaux_derivative(
    data: &WeightedDataset,
    q: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
) -> Result<InfluenceResult> {
    gateaux_derivative_at(data, q, kernel, loss, cfg, &FD_EPSILONS)
}

pub fn gateaux_derivative_at(
    data: &WeightedDataset,
    q: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    fd_epsilons: &[f64],
) -> Result<InfluenceResult> {
    require_influence_loss(loss)?;
    if q.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: q.dim(),
        });
    }
    let tight = tight_config(cfg);
    let base = train_convex(data, kernel, loss, &tight)?.model;
    let pairs = PairSet::full(data, tight.pair_scheme)?;

    let n = data.n();
    let m = q.n();
    let mut q_points = Vec::with_capacity(2 * n * m);
    let mut q_coefs = Vec::with_capacity(2 * n * m);
    for i in 0..n {
        for j in 0..m {
            let (xi, yi, wi) = (data.point(i), data.label(i), data.weight(i));
            let (uj, vj, qj) = (q.point(j), q.label(j), q.weight(j));
            let ziu = PairPoint::new(xi.clone(), uj.clone())?;
            let zui = PairPoint::new(uj.clone(), xi.clone())?;
            q_coefs.push(wi * qj * loss.d5(yi, vj, base.evaluate_pair(&ziu))?);
            q_points.push(ziu);
            q_coefs.push(qj * wi * loss.d5(vj, yi, base.evaluate_pair(&zui))?);
            q_points.push(zui);
        }
    }

    let mut result = solve_influence(&pairs, &base, kernel, loss, tight.lambda, q_points, q_coefs)?;
    let contaminant = Contaminant::Dataset(q.clone());
    result.fd_table = fd_validate(
        data,
        &contaminant,
        kernel,
        loss,
        &tight,
        &base,
        &result.if_element,
        fd_epsilons,
    )?;
    Ok(result)
}

/// Probes <M g, g>_H >= 2 lambda ||g||_H^2 on random elements g of the
/// training-pair span. Returns (quadratic form, lower bound) rows.
pub fn m_positivity_probe(
    data: &WeightedDataset,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    cfg: &TrainConfig,
    n_probes: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    use rand::{Rng, SeedableRng};
    require_influence_loss(loss)?;
    let tight = tight_config(cfg);
    let base = train_convex(data, kernel, loss, &tight)?.model;
    let pairs = PairSet::full(data, tight.pair_scheme)?;
    let gram = kernel.gram(pairs.points())?;
    let preds = pairs.predictions(&base);
    let p = pairs.len();
    let mut curvatures = DVector::zeros(p);
    for k in 0..p {
        let (y, y2) = pairs.labels()[k];
        curvatures[k] = pairs.weights()[k] * loss.d5d5(y, y2, preds[k])?;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let g = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let gg = &gram * &g;
        let norm_sq = g.dot(&gg).max(0.0);
        let mut quad = 2.0 * tight.lambda * norm_sq;
        for k in 0..p {
            quad += curvatures[k] * gg[k] * gg[k];
        }
        rows.push((quad, 2.0 * tight.lambda * norm_sq));
    }
    Ok(rows)
}

fn require_influence_loss(loss: &PairwiseLoss) -> Result<()> {
    let certified = loss.lip1().is_finite() && loss.c2().is_some_and(f64::is_finite);
    if !loss.is_twice_differentiable() || !certified {
        return Err(Error::UnsupportedLoss {
            loss: loss.tag(),
            operation: "influence analysis (needs twice differentiability and finite certified derivative bounds)",
        });
    }
    Ok(())
}

/// Influence solves always use the full pair grid at a tightened gradient
/// tolerance; subsampling would change the empirical operator.
fn tight_config(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        grad_tol: cfg.grad_tol.min(FD_GRAD_TOL),
        pair_subsample: None,
        ..cfg.clone()
    }
}

fn solve_influence(
    pairs: &PairSet,
    base: &RplModel,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    lambda: f64,
    q_points: Vec<PairPoint>,
    q_coefs: Vec<f64>,
) -> Result<InfluenceResult> {
    let p = pairs.len();
    let preds = pairs.predictions(base);
    let mut pair_t = DVector::zeros(p);
    let mut curvature = DVector::zeros(p);
    for k in 0..p {
        let (y, y2) = pairs.labels()[k];
        let w = pairs.weights()[k];
        pair_t[k] = -2.0 * w * loss.d5(y, y2, preds[k])?;
        curvature[k] = w * loss.d5d5(y, y2, preds[k])?;
    }

    let gram_pp = kernel.gram(pairs.points())?;
    let gram_pq = kernel.gram_cross(pairs.points(), &q_points)?;
    let gamma = DVector::from_iterator(q_coefs.len(), q_coefs.iter().map(|t| -t / (2.0 * lambda)));

    // (2 lambda I + diag(omega c) G) beta = -pair_t - (omega c) o (G_pq gamma)
    let cross = &gram_pq * &gamma;
    let rhs = DVector::from_fn(p, |k, _| -pair_t[k] - curvature[k] * cross[k]);
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            a[(i, j)] = curvature[i] * gram_pp[(i, j)];
        }
        a[(i, i)] += 2.0 * lambda;
    }
    let beta = lu_solve_or_least_squares(&a, &rhs)?;

    let mut expansion = pairs.points().to_vec();
    expansion.extend(q_points.iter().cloned());
    let mut coefficients: Vec<f64> = beta.iter().cloned().collect();
    coefficients.extend(gamma.iter().cloned());
    let if_raw = RplModel::new(
        kernel.clone(),
        expansion.clone(),
        coefficients,
        lambda,
        base.loss_tag.clone(),
    )?;
    let if_element = if_raw.compact();
    let if_norm = if_element.h_norm();

    let mut t_coefs: Vec<f64> = pair_t.iter().cloned().collect();
    t_coefs.extend_from_slice(&q_coefs);
    let t_raw = RplModel::new(
        kernel.clone(),
        expansion,
        t_coefs,
        lambda,
        base.loss_tag.clone(),
    )?;
    let t_norm = t_raw.compact().h_norm();

    // Residual M IF + T assembled as a function: the inner products
    // <Phi_k, IF> use the raw coefficient blocks and the Gram rows.
    let inner = &gram_pp * &beta + &gram_pq * &gamma;
    let m_range = RplModel::new(
        kernel.clone(),
        pairs.points().to_vec(),
        (0..p).map(|k| curvature[k] * inner[k]).collect(),
        lambda,
        base.loss_tag.clone(),
    )?;
    let residual_model =
        RplModel::combine(&[(2.0 * lambda, &if_raw), (1.0, &m_range), (1.0, &t_raw)])?;
    let operator_residual = residual_model.compact().h_norm();

    Ok(InfluenceResult {
        if_element,
        if_norm,
        operator_residual,
        t_norm,
        fd_table: Vec::new(),
    })
}

#[allow(clippy::too_many_arguments)]
fn fd_validate(
    data: &WeightedDataset,
    contaminant: &Contaminant,
    kernel: &PairKernel,
    loss: &PairwiseLoss,
    tight: &TrainConfig,
    base: &RplModel,
    if_element: &RplModel,
    fd_epsilons: &[f64],
) -> Result<Vec<FdRow>> {
    let rows = parallel_map(fd_epsilons.to_vec(), |eps| -> Result<FdRow> {
        if !(eps.is_finite() && eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter {
                name: "fd_epsilon",
                value: eps,
            });
        }
        let spec = ContaminationSpec::new(data.clone(), contaminant.clone(), eps)?;
        let mixed = contaminate(&spec)?;
        let shifted_model = train_convex(&mixed, kernel, loss, tight)?.model;
        let secant = RplModel::combine(&[(1.0 / eps, &shifted_model), (-1.0 / eps, base)])?;
        let error = secant.h_distance(if_element)?;
        Ok(FdRow {
            epsilon: eps,
            error,
        })
    });
    rows.into_iter().collect()
}
