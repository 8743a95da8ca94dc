//! Kernel expansion models: elements of the pair-space RKHS of the form
//! f = sum_p alpha_p k(z_p, .), together with the Gram-based inner-product
//! algebra that all norm computations go through.
//!
//! Inner products never leave the span of the expansion points:
//! <f, g> = alpha^T K beta with K the cross-Gram of the two expansions.
//! Summation order is fixed (row-major over the expansions) so repeated
//! evaluation is deterministic.

use serde::{Deserialize, Serialize};

use crate::data::{InputPoint, PairPoint};
use crate::error::{Error, Result};
use crate::kernel::PairKernel;

/// A prediction function on ordered input pairs plus the training metadata
/// needed to interpret it (regularization strength and loss tag).
///
/// Derived elements of the same space (gradients, differences, influence
/// functions) reuse this type; their `lambda` and `loss_tag` are inherited
/// from the first operand of the combination that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RplModel {
    pub kernel: PairKernel,
    pub expansion: Vec<PairPoint>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub loss_tag: String,
}

impl RplModel {
    pub fn new(
        kernel: PairKernel,
        expansion: Vec<PairPoint>,
        coefficients: Vec<f64>,
        lambda: f64,
        loss_tag: String,
    ) -> Result<Self> {
        if expansion.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: expansion.len(),
                got: coefficients.len(),
            });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
            });
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "model coefficient",
            });
        }
        if let Some(first) = expansion.first() {
            for p in &expansion {
                if p.dim() != first.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: first.dim(),
                        got: p.dim(),
                    });
                }
            }
        }
        Ok(RplModel {
            kernel,
            expansion,
            coefficients,
            lambda,
            loss_tag,
        })
    }

    /// The zero function, an empty expansion.
    pub fn zero(kernel: PairKernel, lambda: f64, loss_tag: String) -> Result<Self> {
        RplModel::new(kernel, Vec::new(), Vec::new(), lambda, loss_tag)
    }

    pub fn len(&self) -> usize {
        self.expansion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expansion.is_empty()
    }

    /// f(x, x') = sum_p alpha_p k(z_p, (x, x')).
    pub fn evaluate(&self, x: &InputPoint, x_prime: &InputPoint) -> Result<f64> {
        let query = PairPoint::new(x.clone(), x_prime.clone())?;
        Ok(self.evaluate_pair(&query))
    }

    /// Evaluation at a prepared pair point. Precondition: dimension matches
    /// the expansion (checked in debug builds).
    pub fn evaluate_pair(&self, query: &PairPoint) -> f64 {
        let mut acc = 0.0;
        for (p, a) in self.expansion.iter().zip(&self.coefficients) {
            acc += a * self.kernel.eval(p, query);
        }
        acc
    }

    /// RKHS inner product <self, other> = alpha^T K beta. Both models must
    /// use the same kernel; the norm would be meaningless otherwise.
    pub fn h_inner(&self, other: &RplModel) -> Result<f64> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        let mut acc = 0.0;
        for (p, a) in self.expansion.iter().zip(&self.coefficients) {
            let mut row = 0.0;
            for (q, b) in other.expansion.iter().zip(&other.coefficients) {
                row += b * self.kernel.eval(p, q);
            }
            acc += a * row;
        }
        Ok(acc)
    }

    /// ||f||_H = sqrt(max(0, <f, f>)); the clamp absorbs rounding on
    /// numerically rank-deficient expansions.
    pub fn h_norm(&self) -> f64 {
        let sq = self.h_inner(self).expect("same kernel by construction");
        sq.max(0.0).sqrt()
    }

    /// Linear combination sum_i c_i f_i as one expansion (concatenated
    /// points, scaled coefficients, order preserved). Metadata comes from
    /// the first operand.
    pub fn combine(terms: &[(f64, &RplModel)]) -> Result<RplModel> {
        let (_, first) = terms.first().ok_or(Error::Empty("model term"))?;
        let mut expansion = Vec::new();
        let mut coefficients = Vec::new();
        for (c, m) in terms {
            if m.kernel != first.kernel {
                return Err(Error::KernelMismatch);
            }
            expansion.extend(m.expansion.iter().cloned());
            coefficients.extend(m.coefficients.iter().map(|a| c * a));
        }
        RplModel::new(
            first.kernel.clone(),
            expansion,
            coefficients,
            first.lambda,
            first.loss_tag.clone(),
        )
    }

    /// Difference self - other in H.
    pub fn minus(&self, other: &RplModel) -> Result<RplModel> {
        RplModel::combine(&[(1.0, self), (-1.0, other)])
    }

    /// ||self - other||_H. The difference is compacted first: when the two
    /// expansions share points (solvers over the same pair set), the
    /// coefficients subtract exactly and the norm avoids the cancellation
    /// of the three-term expansion ||f||^2 - 2<f,g> + ||g||^2, whose noise
    /// floor would otherwise sit near sqrt(eps) ||f||.
    pub fn h_distance(&self, other: &RplModel) -> Result<f64> {
        Ok(self.minus(other)?.compact().h_norm())
    }

    /// Merges bitwise-equal expansion points by adding their coefficients.
    /// First-occurrence order is kept and additions happen in index order,
    /// so the result is deterministic and represents the same function
    /// exactly up to the rounding of the coefficient sums.
    pub fn compact(&self) -> RplModel {
        let mut expansion: Vec<PairPoint> = Vec::new();
        let mut coefficients: Vec<f64> = Vec::new();
        for (p, a) in self.expansion.iter().zip(&self.coefficients) {
            if let Some(idx) = expansion.iter().position(|q| bits_equal(q, p)) {
                coefficients[idx] += a;
            } else {
                expansion.push(p.clone());
                coefficients.push(*a);
            }
        }
        RplModel {
            kernel: self.kernel.clone(),
            expansion,
            coefficients,
            lambda: self.lambda,
            loss_tag: self.loss_tag.clone(),
        }
    }
}

fn bits_equal(a: &PairPoint, b: &PairPoint) -> bool {
    let eq = |x: &[f64], y: &[f64]| {
        x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits())
    };
    eq(a.first.coords(), b.first.coords()) && eq(a.second.coords(), b.second.coords())
}

/// Largest |f| over `n_probes` pairs drawn uniformly from the box certified
/// by the kernel's domain declaration. A spot check for the chain
/// |f(z)| <= ||k||_inf ||f||_H; never a substitute for the analytic bound.
pub fn sup_norm_probe(model: &RplModel, dim: usize, n_probes: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let half = model.kernel.probe_box_halfwidth(dim);
    let mut sup = 0.0f64;
    for _ in 0..n_probes {
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            InputPoint::new((0..dim).map(|_| rng.random_range(-half..half)).collect())
                .expect("finite draw")
        };
        let q = PairPoint::new(draw(&mut rng), draw(&mut rng)).expect("same dim");
        sup = sup.max(model.evaluate_pair(&q).abs());
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::BaseKernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(a: &[f64], b: &[f64]) -> PairPoint {
        PairPoint::new(
            InputPoint::new(a.to_vec()).unwrap(),
            InputPoint::new(b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn random_model(seed: u64, m: usize, kernel: PairKernel) -> RplModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = kernel.probe_box_halfwidth(2);
        let pts: Vec<_> = (0..m)
            .map(|_| {
                pair(
                    &[rng.random_range(-half..half), rng.random_range(-half..half)],
                    &[rng.random_range(-half..half), rng.random_range(-half..half)],
                )
            })
            .collect();
        let coefs: Vec<_> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        RplModel::new(kernel, pts, coefs, 0.5, "test".into()).unwrap()
    }

    #[test]
    fn zero_model_evaluates_to_zero_with_zero_norm() {
        let k = PairKernel::rbf_concat(1.0).unwrap();
        let f = RplModel::zero(k, 1.0, "test".into()).unwrap();
        assert_eq!(f.evaluate_pair(&pair(&[0.1, 0.2], &[0.3, 0.4])), 0.0);
        assert_eq!(f.h_norm(), 0.0);
    }

    #[test]
    fn evaluate_is_the_coefficient_weighted_kernel_sum() {
        let k = PairKernel::linear_concat(10.0).unwrap();
        let f = RplModel::new(
            k.clone(),
            vec![pair(&[1.0], &[2.0]), pair(&[0.0], &[1.0])],
            vec![2.0, -1.0],
            0.5,
            "test".into(),
        )
        .unwrap();
        // 2 k((1,2),(3,4)) - k((0,1),(3,4)) = 2*11 - 4 = 18.
        assert_eq!(f.evaluate_pair(&pair(&[3.0], &[4.0])), 18.0);
    }

    #[test]
    fn h_inner_satisfies_parallelogram_and_polarization() {
        let k = PairKernel::rbf_concat(0.8).unwrap();
        for seed in 0..10u64 {
            let f = random_model(seed, 6, k.clone());
            let g = random_model(seed + 100, 4, k.clone());
            let sum = RplModel::combine(&[(1.0, &f), (1.0, &g)]).unwrap();
            let diff = f.minus(&g).unwrap();
            let lhs = sum.h_inner(&sum).unwrap() + diff.h_inner(&diff).unwrap();
            let rhs = 2.0 * (f.h_inner(&f).unwrap() + g.h_inner(&g).unwrap());
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale,
                "parallelogram: {lhs} vs {rhs}"
            );
            let polar = 0.25 * (sum.h_inner(&sum).unwrap() - diff.h_inner(&diff).unwrap());
            let inner = f.h_inner(&g).unwrap();
            assert!(
                (polar - inner).abs() <= 1e-9 * inner.abs().max(1.0),
                "polarization: {polar} vs {inner}"
            );
        }
    }

    #[test]
    fn h_inner_rejects_kernel_mismatch() {
        let f = random_model(1, 3, PairKernel::rbf_concat(1.0).unwrap());
        let g = random_model(2, 3, PairKernel::rbf_concat(2.0).unwrap());
        assert!(matches!(f.h_inner(&g), Err(Error::KernelMismatch)));
    }

    #[test]
    fn reproducing_property_on_expansion_points() {
        // <f, k(z, .)> must equal f(z).
        let k = PairKernel::rbf_concat(1.2).unwrap();
        let f = random_model(3, 5, k.clone());
        let z = pair(&[0.2, -0.3], &[0.5, 0.1]);
        let unit = RplModel::new(k, vec![z.clone()], vec![1.0], 0.5, "test".into()).unwrap();
        let lhs = f.h_inner(&unit).unwrap();
        let rhs = f.evaluate_pair(&z);
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn combine_evaluates_pointwise_linearly() {
        let k = PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 1.0 }, None).unwrap();
        let f = random_model(4, 5, k.clone());
        let g = random_model(5, 7, k.clone());
        let h = RplModel::combine(&[(2.0, &f), (-0.5, &g)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let q = pair(
                &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                &[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            );
            let want = 2.0 * f.evaluate_pair(&q) - 0.5 * g.evaluate_pair(&q);
            let got = h.evaluate_pair(&q);
            assert!((want - got).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn compact_preserves_the_function_and_merges_duplicates() {
        let k = PairKernel::rbf_concat(1.0).unwrap();
        let z = pair(&[0.1, 0.2], &[0.3, 0.4]);
        let w = pair(&[-0.5, 0.0], &[0.2, 0.2]);
        let f = RplModel::new(
            k,
            vec![z.clone(), w.clone(), z.clone()],
            vec![1.0, 2.0, 3.0],
            0.5,
            "test".into(),
        )
        .unwrap();
        let c = f.compact();
        assert_eq!(c.len(), 2);
        assert_eq!(c.coefficients, vec![4.0, 2.0]);
        let q = pair(&[0.0, 0.0], &[0.1, -0.1]);
        let a = f.evaluate_pair(&q);
        let b = c.evaluate_pair(&q);
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }

    #[test]
    fn sup_norm_probe_is_dominated_by_norm_bound() {
        let kernels = [
            PairKernel::rbf_concat(1.0).unwrap(),
            PairKernel::linear_concat(2.0).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 2.0 }, None).unwrap(),
        ];
        for (i, k) in kernels.iter().enumerate() {
            let f = random_model(10 + i as u64, 8, k.clone());
            let sup = sup_norm_probe(&f, 2, 10_000, 99);
            let bound = k.sup_bound() * f.h_norm();
            assert!(sup <= bound + 1e-9, "{}: probe {sup} > bound {bound}", k.tag());
        }
    }

    #[test]
    fn model_serde_round_trip() {
        let f = random_model(20, 4, PairKernel::rbf_concat(1.0).unwrap());
        let s = serde_json::to_string(&f).unwrap();
        let back: RplModel = serde_json::from_str(&s).unwrap();
        assert_eq!(f, back);
    }
}
