//! Empirical pairwise risk, its RKHS gradient, and the diagnostic checks
//! that certify a trained model.
//!
//! The empirical risk of f on a weighted sample D is the V-statistic
//!
//!   R(f) = sum_i sum_j w_i w_j L(y_i, y_j, f(x_i, x_j)),
//!
//! a double sum over ordered pairs including the diagonal, i.e. the risk
//! under the product measure D (x) D. A `PairSet` materializes that pair
//! measure once (optionally excluding the diagonal or subsampling pairs)
//! and everything downstream — risk, gradient, training, influence — is
//! expressed against it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{PairPoint, WeightedDataset};
use crate::error::{Error, Result};
use crate::loss::PairwiseLoss;
use crate::model::RplModel;

/// Largest supported training sample size; the pair Gram is O(n^4) memory.
pub const TRAIN_SIZE_CAP: usize = 100;

/// Absolute-plus-relative slack used by the trained-model inequality
/// checks: a bound passes when achieved <= bound + slack * (1 + scale).
/// The relative part absorbs f64 rounding when risks reach the O(1e12)
/// scale of squared heavy-tailed labels.
pub const NORM_BOUND_SLACK: f64 = 1e-9;

/// Whether the pair measure includes the diagonal (i = j). The diagonal
/// belongs to the product measure; excluding it gives the U-statistic
/// variant, renormalized to total mass one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScheme {
    IncludeDiagonal,
    ExcludeDiagonal,
}

impl Default for PairScheme {
    fn default() -> Self {
        PairScheme::IncludeDiagonal
    }
}

/// The discrete pair measure derived from a weighted sample: ordered index
/// pairs, their pair points, labels, and normalized weights. Zero-weight
/// pairs are dropped; they carry no mass.
#[derive(Debug, Clone)]
pub struct PairSet {
    indices: Vec<(usize, usize)>,
    points: Vec<PairPoint>,
    labels: Vec<(f64, f64)>,
    weights: Vec<f64>,
}

impl PairSet {
    /// All ordered pairs of the sample under `scheme`, row-major order.
    pub fn full(data: &WeightedDataset, scheme: PairScheme) -> Result<Self> {
        if data.n() > TRAIN_SIZE_CAP {
            return Err(Error::SizeCap {
                n: data.n(),
                cap: TRAIN_SIZE_CAP,
            });
        }
        let n = data.n();
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if scheme == PairScheme::ExcludeDiagonal && i == j {
                    continue;
                }
                let w = data.weight(i) * data.weight(j);
                if w > 0.0 {
                    indices.push((i, j));
                    weights.push(w);
                }
            }
        }
        if indices.is_empty() {
            return Err(Error::Empty("pair with positive weight"));
        }
        if scheme == PairScheme::ExcludeDiagonal {
            normalize(&mut weights);
        }
        Ok(PairSet::assemble(data, indices, weights))
    }

    /// Uniform subsample without replacement of at most `cap` pairs,
    /// renormalized to a probability measure on the kept pairs. The result
    /// is itself a valid weighted pair measure; theorem checks for models
    /// trained on it must use the same set.
    pub fn subsampled(
        data: &WeightedDataset,
        scheme: PairScheme,
        cap: usize,
        seed: u64,
    ) -> Result<Self> {
        use rand::SeedableRng;
        if cap == 0 {
            return Err(Error::InvalidParameter {
                name: "pair_subsample",
                value: 0.0,
            });
        }
        let full = PairSet::full(data, scheme)?;
        if full.len() <= cap {
            return Ok(full);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, full.len(), cap).into_vec();
        picked.sort_unstable();
        let indices: Vec<_> = picked.iter().map(|&k| full.indices[k]).collect();
        let mut weights: Vec<_> = picked.iter().map(|&k| full.weights[k]).collect();
        normalize(&mut weights);
        Ok(PairSet::assemble(data, indices, weights))
    }

    /// Builds the pair set requested by a train configuration.
    pub fn from_config(data: &WeightedDataset, cfg: &crate::train::TrainConfig) -> Result<Self> {
        match cfg.pair_subsample {
            Some(cap) => PairSet::subsampled(data, cfg.pair_scheme, cap, cfg.seed),
            None => PairSet::full(data, cfg.pair_scheme),
        }
    }

    fn assemble(data: &WeightedDataset, indices: Vec<(usize, usize)>, weights: Vec<f64>) -> Self {
        let points = indices
            .iter()
            .map(|&(i, j)| PairPoint {
                first: data.point(i).clone(),
                second: data.point(j).clone(),
            })
            .collect();
        let labels = indices
            .iter()
            .map(|&(i, j)| (data.label(i), data.label(j)))
            .collect();
        PairSet {
            indices,
            points,
            labels,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    pub fn points(&self) -> &[PairPoint] {
        &self.points
    }

    pub fn labels(&self) -> &[(f64, f64)] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Label differences y_i - y_j, the regression targets of ls_rank.
    pub fn deltas(&self) -> Vec<f64> {
        self.labels.iter().map(|&(a, b)| a - b).collect()
    }

    /// Model values at every pair point.
    pub fn predictions(&self, model: &RplModel) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| model.evaluate_pair(p))
            .collect()
    }

    /// Weighted loss sum over the pair measure at the given predictions.
    /// Reports the offending sample indices on overflow, which happens for
    /// the exponential link at large margins.
    pub fn risk(&self, loss: &PairwiseLoss, predictions: &[f64], shifted: bool) -> Result<f64> {
        debug_assert_eq!(predictions.len(), self.len());
        let mut acc = 0.0;
        for k in 0..self.len() {
            let (y, y2) = self.labels[k];
            let v = if shifted {
                loss.shifted(y, y2, predictions[k])
            } else {
                loss.eval(y, y2, predictions[k])
            };
            if !v.is_finite() {
                let (i, j) = self.indices[k];
                return Err(Error::NumericOverflow { i, j });
            }
            acc += self.weights[k] * v;
        }
        Ok(acc)
    }

    /// Risk of the zero function, R(0) = sum omega_ij L(y_i, y_j, 0).
    pub fn risk_at_zero(&self, loss: &PairwiseLoss) -> Result<f64> {
        let zeros = vec![0.0; self.len()];
        self.risk(loss, &zeros, false)
    }
}

fn normalize(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
}

/// Empirical (shifted or raw) risk of `model` on the full pair measure of
/// `data`, diagonal included.
pub fn empirical_risk(
    model: &RplModel,
    data: &WeightedDataset,
    loss: &PairwiseLoss,
    shifted: bool,
) -> Result<f64> {
    let pairs = PairSet::full(data, PairScheme::IncludeDiagonal)?;
    let preds = pairs.predictions(model);
    pairs.risk(loss, &preds, shifted)
}

/// H-gradient of the regularized shifted risk at `model`:
/// 2 lambda f + sum_ij omega_ij d5 L(y_i, y_j, f(z_ij)) k(z_ij, .).
pub fn risk_gradient(
    model: &RplModel,
    data: &WeightedDataset,
    loss: &PairwiseLoss,
    lambda: f64,
) -> Result<RplModel> {
    let pairs = PairSet::full(data, PairScheme::IncludeDiagonal)?;
    risk_gradient_on(&pairs, model, loss, lambda)
}

/// Gradient against an explicit pair measure.
pub fn risk_gradient_on(
    pairs: &PairSet,
    model: &RplModel,
    loss: &PairwiseLoss,
    lambda: f64,
) -> Result<RplModel> {
    let preds = pairs.predictions(model);
    let mut coefs = Vec::with_capacity(pairs.len());
    for k in 0..pairs.len() {
        let (y, y2) = pairs.labels()[k];
        coefs.push(pairs.weights()[k] * loss.d5(y, y2, preds[k])?);
    }
    let data_part = RplModel::new(
        model.kernel.clone(),
        pairs.points().to_vec(),
        coefs,
        model.lambda,
        model.loss_tag.clone(),
    )?;
    RplModel::combine(&[(2.0 * lambda, model), (1.0, &data_part)])
}

/// Risk summary for a model; `regularized_risk` is the training objective
/// value shifted_risk + lambda ||f||^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub shifted_risk: f64,
    pub regularized_risk: f64,
    pub h_norm: f64,
}

pub fn risk_report(
    model: &RplModel,
    data: &WeightedDataset,
    loss: &PairwiseLoss,
) -> Result<RiskReport> {
    let shifted = empirical_risk(model, data, loss, true)?;
    let h_norm = model.h_norm();
    Ok(RiskReport {
        shifted_risk: shifted,
        regularized_risk: shifted + model.lambda * h_norm * h_norm,
        h_norm,
    })
}

/// Representer check: a minimizer must satisfy
/// f = -(2 lambda)^-1 sum_ij omega_ij h_ij k(z_ij, .) with h_ij the loss
/// derivative at the model's own predictions, and |h_ij| <= |L|_1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresenterReport {
    /// ||f - (-(2 lambda)^-1 sum omega h Phi)||_H.
    pub residual: f64,
    /// max_ij |h_ij|.
    pub h_sup: f64,
}

pub fn representer_residual(
    model: &RplModel,
    data: &WeightedDataset,
    loss: &PairwiseLoss,
) -> Result<RepresenterReport> {
    let pairs = PairSet::full(data, PairScheme::IncludeDiagonal)?;
    representer_residual_on(&pairs, model, loss)
}

pub fn representer_residual_on(
    pairs: &PairSet,
    model: &RplModel,
    loss: &PairwiseLoss,
) -> Result<RepresenterReport> {
    let preds = pairs.predictions(model);
    let scale = -1.0 / (2.0 * model.lambda);
    let mut coefs = Vec::with_capacity(pairs.len());
    let mut h_sup = 0.0f64;
    for k in 0..pairs.len() {
        let (y, y2) = pairs.labels()[k];
        let h = loss.d5(y, y2, preds[k])?;
        h_sup = h_sup.max(h.abs());
        coefs.push(scale * pairs.weights()[k] * h);
    }
    let g = RplModel::new(
        model.kernel.clone(),
        pairs.points().to_vec(),
        coefs,
        model.lambda,
        model.loss_tag.clone(),
    )?;
    Ok(RepresenterReport {
        residual: model.h_distance(&g)?,
        h_sup,
    })
}

/// One inequality of the trained-model certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    /// Left-hand side actually achieved by the model.
    pub achieved: f64,
    /// Right-hand side the inequality promises.
    pub bound: f64,
    pub holds: bool,
    /// False when the loss lacks the constant the bound needs (ls_rank and
    /// the exponential link have no global Lipschitz constant).
    pub applicable: bool,
}

/// Certificate that a trained model sits where a regularized minimizer
/// must: nonpositive shifted risk dominated by lambda ||f||^2, risk at zero
/// as a ceiling, and the Lipschitz norm caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBoundReport {
    pub h_norm: f64,
    pub shifted_risk: f64,
    pub risk_at_zero: f64,
    pub checks: Vec<BoundCheck>,
    pub all_hold: bool,
}

pub fn check_norm_bounds(
    model: &RplModel,
    data: &WeightedDataset,
    loss: &PairwiseLoss,
) -> Result<NormBoundReport> {
    let pairs = PairSet::full(data, PairScheme::IncludeDiagonal)?;
    check_norm_bounds_on(&pairs, model, loss)
}

pub fn check_norm_bounds_on(
    pairs: &PairSet,
    model: &RplModel,
    loss: &PairwiseLoss,
) -> Result<NormBoundReport> {
    let preds = pairs.predictions(model);
    let shifted = pairs.risk(loss, &preds, true)?;
    let risk0 = pairs.risk_at_zero(loss)?;
    let h_norm = model.h_norm();
    let lambda = model.lambda;
    let k_sup = model.kernel.sup_bound();
    let lip = loss.lip1();

    let mut checks = Vec::new();
    let mut push = |name: &str, achieved: f64, bound: f64, applicable: bool| {
        let slack = NORM_BOUND_SLACK * (1.0 + achieved.abs().max(bound.abs()));
        let holds = !applicable || achieved <= bound + slack;
        checks.push(BoundCheck {
            name: name.to_owned(),
            achieved,
            bound,
            holds,
            applicable,
        });
    };

    push(
        "lambda_norm_sq_le_neg_shifted_risk",
        lambda * h_norm * h_norm,
        -shifted,
        true,
    );
    push("neg_shifted_risk_le_risk_at_zero", -shifted, risk0, true);
    push(
        "h_norm_le_lip_k_over_lambda",
        h_norm,
        lip * k_sup / lambda,
        lip.is_finite(),
    );
    push(
        "abs_shifted_risk_le_lip_sq_k_sq_over_lambda",
        shifted.abs(),
        lip * lip * k_sup * k_sup / lambda,
        lip.is_finite(),
    );

    let all_hold = checks.iter().all(|c| c.holds);
    Ok(NormBoundReport {
        h_norm,
        shifted_risk: shifted,
        risk_at_zero: risk0,
        checks,
        all_hold,
    })
}

/// Shared helper for gradient norms: ||sum_k v_k Phi(z_k)||_H given the
/// Gram matrix of the z_k.
pub(crate) fn coefficient_norm(gram: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.dot(&(gram * v))).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputPoint;
    use crate::kernel::PairKernel;
    use crate::loss::PhiKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(xs: &[f64], ys: &[f64]) -> WeightedDataset {
        let pts = xs
            .iter()
            .map(|&x| InputPoint::new(vec![x]).unwrap())
            .collect();
        WeightedDataset::uniform(pts, ys.to_vec()).unwrap()
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> WeightedDataset {
        let pts = (0..n)
            .map(|_| {
                InputPoint::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect();
        let ys = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        WeightedDataset::uniform(pts, ys).unwrap()
    }

    #[test]
    fn pair_set_covers_all_ordered_pairs_including_diagonal() {
        let data = dataset(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        let pairs = PairSet::full(&data, PairScheme::IncludeDiagonal).unwrap();
        assert_eq!(pairs.len(), 9);
        let w: f64 = pairs.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
        let off = PairSet::full(&data, PairScheme::ExcludeDiagonal).unwrap();
        assert_eq!(off.len(), 6);
        let w_off: f64 = off.weights().iter().sum();
        assert!((w_off - 1.0).abs() < 1e-12);
    }

    #[test]
    fn size_cap_is_enforced() {
        let xs: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let data = dataset(&xs, &xs);
        assert!(matches!(
            PairSet::full(&data, PairScheme::IncludeDiagonal),
            Err(Error::SizeCap { n: 101, cap: 100 })
        ));
    }

    #[test]
    fn zero_model_has_zero_shifted_risk() {
        let data = dataset(&[0.0, 0.5, 1.0], &[1.0, -1.0, 2.0]);
        let k = PairKernel::rbf_concat(1.0).unwrap();
        for loss in [
            PairwiseLoss::phi_rank(PhiKind::Logistic2),
            PairwiseLoss::phi_rank(PhiKind::Hinge),
            PairwiseLoss::ls_rank(),
        ] {
            let zero = RplModel::zero(k.clone(), 0.5, loss.tag()).unwrap();
            assert_eq!(empirical_risk(&zero, &data, &loss, true).unwrap(), 0.0);
        }
    }

    #[test]
    fn perfect_predictor_has_zero_ls_risk() {
        // A model is not needed: feed predictions equal to the deltas.
        let data = dataset(&[0.0, 1.0, -1.0], &[0.5, 1.5, -0.5]);
        let pairs = PairSet::full(&data, PairScheme::IncludeDiagonal).unwrap();
        let loss = PairwiseLoss::ls_rank();
        let preds = pairs.deltas();
        assert_eq!(pairs.risk(&loss, &preds, false).unwrap(), 0.0);
    }

    // Independent oracle: a literal double loop over (i, j) with no PairSet
    // in sight.
    #[test]
    fn risk_matches_brute_force_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_dataset(&mut rng, 8, 2);
        let k = PairKernel::rbf_concat(0.7).unwrap();
        let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.1).unwrap();
        let mut expansion = Vec::new();
        for i in 0..4 {
            expansion.push(PairPoint::new(data.point(i).clone(), data.point(i + 1).clone()).unwrap());
        }
        let model = RplModel::new(
            k,
            expansion,
            vec![0.3, -0.2, 0.5, 0.1],
            0.5,
            loss.tag(),
        )
        .unwrap();

        let mut brute = 0.0;
        for i in 0..data.n() {
            for j in 0..data.n() {
                let t = model
                    .evaluate(data.point(i), data.point(j))
                    .unwrap();
                brute += data.weight(i)
                    * data.weight(j)
                    * loss.shifted(data.label(i), data.label(j), t);
            }
        }
        let got = empirical_risk(&model, &data, &loss, true).unwrap();
        assert!((brute - got).abs() <= 1e-12 * brute.abs().max(1.0));
    }

    #[test]
    fn exponential_overflow_reports_the_offending_pair() {
        let data = dataset(&[0.0, 1.0], &[0.0, 1.0]);
        let k = PairKernel::linear_concat(2.0).unwrap();
        let loss = PairwiseLoss::phi_rank(PhiKind::Exponential);
        let pair = PairPoint::new(data.point(0).clone(), data.point(1).clone()).unwrap();
        let model = RplModel::new(k, vec![pair], vec![-2000.0], 0.5, loss.tag()).unwrap();
        match empirical_risk(&model, &data, &loss, false) {
            Err(Error::NumericOverflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn gradient_of_zero_model_on_single_point_is_zero_for_ls() {
        let data = dataset(&[0.3], &[0.7]);
        let k = PairKernel::rbf_concat(1.0).unwrap();
        let loss = PairwiseLoss::ls_rank();
        let zero = RplModel::zero(k, 0.5, loss.tag()).unwrap();
        let g = risk_gradient(&zero, &data, &loss, 0.5).unwrap();
        assert!(g.h_norm() <= 1e-15);
    }

    #[test]
    fn subsampled_pairs_renormalize_and_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random_dataset(&mut rng, 10, 1);
        let a = PairSet::subsampled(&data, PairScheme::IncludeDiagonal, 40, 123).unwrap();
        let b = PairSet::subsampled(&data, PairScheme::IncludeDiagonal, 40, 123).unwrap();
        assert_eq!(a.indices(), b.indices());
        assert_eq!(a.len(), 40);
        let w: f64 = a.weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
        let c = PairSet::subsampled(&data, PairScheme::IncludeDiagonal, 40, 124).unwrap();
        assert_ne!(a.indices(), c.indices());
    }

    #[test]
    fn risk_report_ties_regularized_to_shifted_plus_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_dataset(&mut rng, 6, 1);
        let k = PairKernel::rbf_concat(1.0).unwrap();
        let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.1).unwrap();
        let pair = PairPoint::new(data.point(0).clone(), data.point(1).clone()).unwrap();
        let model = RplModel::new(k, vec![pair], vec![0.4], 0.25, loss.tag()).unwrap();
        let r = risk_report(&model, &data, &loss).unwrap();
        let recomputed = r.shifted_risk + 0.25 * r.h_norm * r.h_norm;
        assert!((r.regularized_risk - recomputed).abs() <= 1e-12 * recomputed.abs().max(1.0));
    }
}
