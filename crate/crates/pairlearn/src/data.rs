//! Data containers: input points, ordered pairs of inputs, and weighted
//! samples.
//!
//! A weighted dataset represents the discrete measure sum_i w_i delta_{(x_i,
//! y_i)} with nonnegative weights summing to one. All pairwise operations
//! downstream consume the product of this measure with itself, so the
//! containers here only validate the single-sample invariants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for the weight-sum-equals-one invariant.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A point in Euclidean input space, at least one coordinate, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: "input point coordinate",
            });
        }
        Ok(InputPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for InputPoint {
    type Error = Error;

    fn try_from(coords: Vec<f64>) -> Result<Self> {
        InputPoint::new(coords)
    }
}

impl From<InputPoint> for Vec<f64> {
    fn from(p: InputPoint) -> Vec<f64> {
        p.0
    }
}

/// An ordered pair of input points with matching dimension. Kernels and
/// models operate on this product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPoint {
    pub first: InputPoint,
    pub second: InputPoint,
}

impl PairPoint {
    pub fn new(first: InputPoint, second: InputPoint) -> Result<Self> {
        if first.dim() != second.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                got: second.dim(),
            });
        }
        Ok(PairPoint { first, second })
    }

    pub fn dim(&self) -> usize {
        self.first.dim()
    }

    /// The pair with its components exchanged.
    pub fn swapped(&self) -> PairPoint {
        PairPoint {
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }
}

/// Weighted sample: points with real labels and probability weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    points: Vec<InputPoint>,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedDataset {
    /// Validates lengths, label finiteness, weight nonnegativity, and the
    /// weight sum. Weights are kept as given; no renormalization happens.
    pub fn new(points: Vec<InputPoint>, labels: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("sample"));
        }
        if labels.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: labels.len(),
            });
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: weights.len(),
            });
        }
        let d = points[0].dim();
        for p in &points {
            if p.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.dim(),
                });
            }
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite { context: "label" });
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::BadWeights {
                deviation: f64::NAN,
            });
        }
        let sum: f64 = weights.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > WEIGHT_SUM_TOL {
            return Err(Error::BadWeights { deviation });
        }
        Ok(WeightedDataset {
            points,
            labels,
            weights,
        })
    }

    /// Uniform weights 1/n.
    pub fn uniform(points: Vec<InputPoint>, labels: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Empty("sample"));
        }
        let w = 1.0 / n as f64;
        WeightedDataset::new(points, labels, vec![w; n])
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn point(&self, i: usize) -> &InputPoint {
        &self.points[i]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn points(&self) -> &[InputPoint] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}
