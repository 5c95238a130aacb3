use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the observed space, instantiated as a finite vector in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Empty("point coordinates"));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "point",
                format!("non-finite coordinate {c}"),
            ));
        }
        Ok(Point(coords))
    }

    /// One-dimensional point. Panics on a non-finite coordinate.
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite coordinate {x}");
        Point(vec![x])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Squared Euclidean distance. Dimensions are assumed to agree.
    #[inline]
    pub fn dist_sq(&self, other: &Point) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::scalar(x)
    }
}

/// Checks that every point has dimension `dim`.
pub(crate) fn check_dims(points: &[Point], dim: usize) -> Result<()> {
    match points.iter().find(|p| p.dim() != dim) {
        Some(p) => Err(Error::DimensionMismatch {
            expected: dim,
            found: p.dim(),
        }),
        None => Ok(()),
    }
}

/// Common dimension of a non-empty point list.
pub(crate) fn common_dim(points: &[Point], what: &'static str) -> Result<usize> {
    let first = points.first().ok_or(Error::Empty(what))?;
    check_dims(points, first.dim())?;
    Ok(first.dim())
}

/// A finitely supported probability measure: point masses with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    const WEIGHT_SUM_TOL: f64 = 1e-12;

    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        common_dim(&points, "measure support")?;
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(
                "measure weight",
                format!("{w} is not strictly positive"),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::WEIGHT_SUM_TOL {
            return Err(Error::invalid(
                "measure weights",
                format!("sum to {total}, not 1"),
            ));
        }
        Ok(EmpiricalMeasure { points, weights })
    }

    /// The sampling measure placing mass 1/N on each point.
    pub fn uniform(points: Vec<Point>) -> Result<Self> {
        common_dim(&points, "measure support")?;
        let w = 1.0 / points.len() as f64;
        let weights = vec![w; points.len()];
        Ok(EmpiricalMeasure { points, weights })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }
}
