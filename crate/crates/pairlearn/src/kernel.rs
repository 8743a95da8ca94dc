//! Kernels on the pair space (X x X) with certified sup-norm bounds.
//!
//! Every kernel here is symmetric and positive semidefinite on pairs of
//! input points, and carries an analytic certificate for
//! ||k||_inf = sup_z sqrt(k(z, z)) over the declared input domain. The
//! bound is what links RKHS norms to sup norms: |f(z)| <= ||k||_inf ||f||_H,
//! so downstream robustness bounds only ever need `sup_bound`.
//!
//! Evaluation paths are written so that k(z, w) and k(w, z) are bit
//! identical: coordinate loops run in index order and the ranking-difference
//! combination groups terms as (t1 + t4) - (t2 + t3), which is invariant
//! under the argument swap t2 <-> t3 because IEEE addition is commutative.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::PairPoint;
use crate::error::{Error, Result};

/// Base kernel on the input space X, used by `RankingDifference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseKernel {
    Linear,
    Rbf { gamma: f64 },
}

impl BaseKernel {
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            BaseKernel::Linear => dot(x, u),
            BaseKernel::Rbf { gamma } => (-gamma * sqdist(x, u)).exp(),
        }
    }
}

/// Kernel on ordered pairs of input points.
///
/// `domain_bound` is the declared radius R with sup_x ||x||_2 <= R over the
/// compact input domain; it is required exactly where the sup-norm
/// certificate depends on it (linear kernels). Gaussian kernels are bounded
/// globally and ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairKernel {
    /// exp(-gamma (||x - u||^2 + ||x' - u'||^2)), values in (0, 1].
    RbfConcat { gamma: f64 },
    /// <x, u> + <x', u'> on the concatenated pair.
    LinearConcat { domain_bound: f64 },
    /// b(x, u) - b(x, u') - b(x', u) + b(x', u') for a base kernel b; its
    /// RKHS consists of antisymmetric functions f(x, x') = g(x) - g(x').
    RankingDifference {
        base: BaseKernel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain_bound: Option<f64>,
    },
}

impl PairKernel {
    pub fn rbf_concat(gamma: f64) -> Result<Self> {
        let k = PairKernel::RbfConcat { gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn linear_concat(domain_bound: f64) -> Result<Self> {
        let k = PairKernel::LinearConcat { domain_bound };
        k.validate()?;
        Ok(k)
    }

    pub fn ranking_difference(base: BaseKernel, domain_bound: Option<f64>) -> Result<Self> {
        let k = PairKernel::RankingDifference { base, domain_bound };
        k.validate()?;
        Ok(k)
    }

    /// Checks parameter ranges; used by constructors and after deserializing.
    pub fn validate(&self) -> Result<()> {
        match self {
            PairKernel::RbfConcat { gamma } => {
                if !(gamma.is_finite() && *gamma > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "gamma",
                        value: *gamma,
                    });
                }
            }
            PairKernel::LinearConcat { domain_bound } => {
                if !(domain_bound.is_finite() && *domain_bound > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "domain_bound",
                        value: *domain_bound,
                    });
                }
            }
            PairKernel::RankingDifference { base, domain_bound } => {
                if let BaseKernel::Rbf { gamma } = base {
                    if !(gamma.is_finite() && *gamma > 0.0) {
                        return Err(Error::InvalidParameter {
                            name: "gamma",
                            value: *gamma,
                        });
                    }
                }
                match (base, domain_bound) {
                    (BaseKernel::Linear, None) => {
                        return Err(Error::InvalidParameter {
                            name: "domain_bound",
                            value: f64::NAN,
                        })
                    }
                    (BaseKernel::Linear, Some(r)) if !(r.is_finite() && *r > 0.0) => {
                        return Err(Error::InvalidParameter {
                            name: "domain_bound",
                            value: *r,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Certified ||k||_inf = sup_z sqrt(k(z, z)) over the declared domain.
    ///
    /// rbf_concat: k(z, z) = 1 everywhere, so the bound is 1.
    /// linear_concat: k(z, z) = ||x||^2 + ||x'||^2 <= 2 R^2.
    /// ranking_difference: k(z, z) = ||phi(x) - phi(x')||^2 in the base
    /// RKHS; <= (2R)^2 for the linear base and <= 2 for any Gaussian base.
    pub fn sup_bound(&self) -> f64 {
        match self {
            PairKernel::RbfConcat { .. } => 1.0,
            PairKernel::LinearConcat { domain_bound } => domain_bound * std::f64::consts::SQRT_2,
            PairKernel::RankingDifference { base, domain_bound } => match base {
                BaseKernel::Linear => 2.0 * domain_bound.expect("validated"),
                BaseKernel::Rbf { .. } => std::f64::consts::SQRT_2,
            },
        }
    }

    /// Radius of the box [-r, r]^d guaranteed inside the declared domain,
    /// used to draw probe points for sup-norm spot checks. Gaussian kernels
    /// are certified globally; 1 is a convenient default probe box.
    pub fn probe_box_halfwidth(&self, dim: usize) -> f64 {
        match self {
            PairKernel::RbfConcat { .. } => 1.0,
            PairKernel::LinearConcat { domain_bound } => domain_bound / (dim as f64).sqrt(),
            PairKernel::RankingDifference { base, domain_bound } => match base {
                BaseKernel::Linear => domain_bound.expect("validated") / (dim as f64).sqrt(),
                BaseKernel::Rbf { .. } => 1.0,
            },
        }
    }

    /// Evaluates k(a, b). Precondition: dimensions agree (checked in debug
    /// builds; boundary APIs validate once before entering hot loops).
    pub fn eval(&self, a: &PairPoint, b: &PairPoint) -> f64 {
        debug_assert_eq!(a.dim(), b.dim(), "kernel arguments must share dimension");
        let (a1, a2) = (a.first.coords(), a.second.coords());
        let (b1, b2) = (b.first.coords(), b.second.coords());
        match self {
            PairKernel::RbfConcat { gamma } => (-gamma * (sqdist(a1, b1) + sqdist(a2, b2))).exp(),
            PairKernel::LinearConcat { .. } => dot(a1, b1) + dot(a2, b2),
            PairKernel::RankingDifference { base, .. } => {
                let t1 = base.eval(a1, b1);
                let t2 = base.eval(a1, b2);
                let t3 = base.eval(a2, b1);
                let t4 = base.eval(a2, b2);
                (t1 + t4) - (t2 + t3)
            }
        }
    }

    /// Symmetric Gram matrix over one point list; the upper triangle is
    /// computed and mirrored so symmetry is exact.
    pub fn gram(&self, pts: &[PairPoint]) -> Result<DMatrix<f64>> {
        self.check_dims(pts)?;
        let m = pts.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.eval(&pts[i], &pts[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }

    /// Rectangular Gram matrix rows x cols.
    pub fn gram_cross(&self, rows: &[PairPoint], cols: &[PairPoint]) -> Result<DMatrix<f64>> {
        self.check_dims(rows)?;
        self.check_dims(cols)?;
        if let (Some(r), Some(c)) = (rows.first(), cols.first()) {
            if r.dim() != c.dim() {
                return Err(Error::DimensionMismatch {
                    expected: r.dim(),
                    got: c.dim(),
                });
            }
        }
        let mut g = DMatrix::zeros(rows.len(), cols.len());
        for i in 0..rows.len() {
            for j in 0..cols.len() {
                g[(i, j)] = self.eval(&rows[i], &cols[j]);
            }
        }
        Ok(g)
    }

    fn check_dims(&self, pts: &[PairPoint]) -> Result<()> {
        if let Some(first) = pts.first() {
            for p in pts {
                if p.dim() != first.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: first.dim(),
                        got: p.dim(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Short display tag, e.g. for reports.
    pub fn tag(&self) -> String {
        match self {
            PairKernel::RbfConcat { gamma } => format!("rbf_concat(gamma={gamma})"),
            PairKernel::LinearConcat { .. } => "linear_concat".to_string(),
            PairKernel::RankingDifference { base, .. } => match base {
                BaseKernel::Linear => "ranking_difference(linear)".to_string(),
                BaseKernel::Rbf { gamma } => format!("ranking_difference(rbf gamma={gamma})"),
            },
        }
    }
}

fn dot(x: &[f64], u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i] * u[i];
    }
    acc
}

fn sqdist(x: &[f64], u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - u[i];
        acc += d * d;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InputPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(a: &[f64], b: &[f64]) -> PairPoint {
        PairPoint::new(
            InputPoint::new(a.to_vec()).unwrap(),
            InputPoint::new(b.to_vec()).unwrap(),
        )
        .unwrap()
    }

    fn random_pair(rng: &mut ChaCha8Rng, d: usize, half: f64) -> PairPoint {
        let coords = |rng: &mut ChaCha8Rng| {
            (0..d)
                .map(|_| rng.random_range(-half..half))
                .collect::<Vec<_>>()
        };
        pair(&coords(rng), &coords(rng))
    }

    #[test]
    fn linear_concat_matches_hand_computation() {
        let k = PairKernel::linear_concat(10.0).unwrap();
        let z = pair(&[1.0], &[2.0]);
        let w = pair(&[3.0], &[4.0]);
        assert_eq!(k.eval(&z, &w), 11.0);
    }

    #[test]
    fn rbf_concat_is_one_on_the_diagonal() {
        for gamma in [0.1, 1.0, 7.5] {
            let k = PairKernel::rbf_concat(gamma).unwrap();
            let z = pair(&[0.3, -0.7], &[0.1, 0.9]);
            assert_eq!(k.eval(&z, &z), 1.0);
            let w = pair(&[-0.2, 0.4], &[0.5, -0.5]);
            let v = k.eval(&z, &w);
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn ranking_difference_linear_base_hand_value() {
        // k(z, w) = (x - x') . (u - u'); here (1-0)(0-1) = -1.
        let k = PairKernel::ranking_difference(BaseKernel::Linear, Some(5.0)).unwrap();
        let z = pair(&[1.0], &[0.0]);
        let w = pair(&[0.0], &[1.0]);
        assert_eq!(k.eval(&z, &w), -1.0);
    }

    #[test]
    fn symmetry_is_bit_identical() {
        let kernels = [
            PairKernel::rbf_concat(0.7).unwrap(),
            PairKernel::linear_concat(4.0).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 1.3 }, None).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Linear, Some(4.0)).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in &kernels {
            for _ in 0..200 {
                let z = random_pair(&mut rng, 3, 2.0);
                let w = random_pair(&mut rng, 3, 2.0);
                let a = k.eval(&z, &w);
                let b = k.eval(&w, &z);
                assert_eq!(a.to_bits(), b.to_bits(), "kernel {:?}", k.tag());
            }
        }
    }

    #[test]
    fn ranking_difference_models_are_antisymmetric_in_arguments() {
        let k = PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 0.9 }, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let z = random_pair(&mut rng, 2, 1.0);
            let w = random_pair(&mut rng, 2, 1.0);
            let direct = k.eval(&z, &w);
            let flipped = k.eval(&z.swapped(), &w);
            assert!(
                (direct + flipped).abs() <= 1e-10,
                "k(z,w) = {direct}, k(swap z, w) = {flipped}"
            );
        }
    }

    // Gram matrices must be PSD up to rounding; checked against a dense
    // symmetric eigensolve, which is an independent route to the spectrum.
    #[test]
    fn gram_is_psd_on_random_point_sets() {
        let kernels = [
            PairKernel::rbf_concat(1.0).unwrap(),
            PairKernel::linear_concat(3.0).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 0.5 }, None).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Linear, Some(3.0)).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for round in 0..50 {
            let k = &kernels[round % kernels.len()];
            let m = rng.random_range(2..=30);
            let pts: Vec<_> = (0..m).map(|_| random_pair(&mut rng, 2, 1.5)).collect();
            let g = k.gram(&pts).unwrap();
            let trace = g.trace();
            let eig = g.clone().symmetric_eigen();
            let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                min_eig >= -1e-8 * trace.max(1.0),
                "round {round}: min eigenvalue {min_eig} for trace {trace}"
            );
        }
    }

    #[test]
    fn gram_with_duplicate_point_has_near_zero_smallest_eigenvalue() {
        let k = PairKernel::rbf_concat(1.0).unwrap();
        let p = pair(&[0.2, 0.3], &[0.4, -0.1]);
        let pts = vec![p.clone(), pair(&[1.0, 0.0], &[0.0, 1.0]), p];
        let g = k.gram(&pts).unwrap();
        let eig = g.symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_eig.abs() <= 1e-12, "min eigenvalue {min_eig}");
    }

    #[test]
    fn linear_gram_eigenvalues_stay_above_minus_1e10() {
        let k = PairKernel::linear_concat(2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..5).map(|_| random_pair(&mut rng, 2, 1.0)).collect();
        let g = k.gram(&pts).unwrap();
        let eig = g.symmetric_eigen();
        for ev in eig.eigenvalues.iter() {
            assert!(*ev >= -1e-10);
        }
    }

    #[test]
    fn sup_bound_dominates_diagonal_on_sampled_domain_points() {
        let kernels = [
            PairKernel::rbf_concat(2.0).unwrap(),
            PairKernel::linear_concat(3.0).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 1.0 }, None).unwrap(),
            PairKernel::ranking_difference(BaseKernel::Linear, Some(3.0)).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in &kernels {
            let bound = k.sup_bound();
            let half = k.probe_box_halfwidth(3);
            for _ in 0..500 {
                let z = random_pair(&mut rng, 3, half);
                let kzz = k.eval(&z, &z);
                assert!(
                    kzz.sqrt() <= bound + 1e-12,
                    "{}: sqrt k(z,z) = {} > {}",
                    k.tag(),
                    kzz.sqrt(),
                    bound
                );
            }
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(PairKernel::rbf_concat(0.0).is_err());
        assert!(PairKernel::rbf_concat(f64::NAN).is_err());
        assert!(PairKernel::linear_concat(-1.0).is_err());
        assert!(PairKernel::ranking_difference(BaseKernel::Linear, None).is_err());
        assert!(PairKernel::ranking_difference(BaseKernel::Rbf { gamma: -2.0 }, None).is_err());
    }

    #[test]
    fn kernel_serde_round_trip_and_unknown_field_rejection() {
        let k = PairKernel::ranking_difference(BaseKernel::Rbf { gamma: 1.5 }, None).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        let back: PairKernel = serde_json::from_str(&s).unwrap();
        assert_eq!(k, back);
        let bad = r#"{"kind":"rbf_concat","gamma":1.0,"extra":2}"#;
        assert!(serde_json::from_str::<PairKernel>(bad).is_err());
    }
}
