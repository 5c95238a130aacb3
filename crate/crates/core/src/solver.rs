//! Regularized least squares through the singular value decomposition.
//!
//! With `M = sum_n s_n u_n v_n^T`, the regularized pseudo-inverse is
//! `B_eps = sum_n s_n / (s_n^2 + eps) v_n u_n^T`, so that
//! `B_eps M = sum_n s_n^2 / (s_n^2 + eps) v_n v_n^T`, which tends to the identity on
//! the row space as `eps -> 0`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are exact zeros.
pub const ZERO_SINGULAR_REL: f64 = 1e-15;

/// Default relative rank cutoff for unregularized solves.
pub const DEFAULT_RANK_CUTOFF: f64 = 1e-12;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD with singular values sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub singular_values: DVector<f64>,
    /// Columns are the left singular vectors `u_n`.
    pub left_vectors: DMatrix<f64>,
    /// Columns are the right singular vectors `v_n`.
    pub right_vectors: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub epsilon: f64,
    /// Drop singular values below `cutoff * s_1`.
    pub rank_cutoff: Option<f64>,
}

impl SolverConfig {
    /// Tikhonov-regularized solve with parameter `epsilon`; a zero `epsilon` gets the
    /// default rank cutoff.
    pub fn regularized(epsilon: f64) -> Self {
        SolverConfig {
            epsilon,
            rank_cutoff: (epsilon == 0.0).then_some(DEFAULT_RANK_CUTOFF),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("{} is not a nonnegative number", self.epsilon),
            ));
        }
        if let Some(c) = self.rank_cutoff {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(
                    "rank cutoff",
                    format!("{c} is not positive"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig::regularized(0.0)
    }
}

pub fn svd(matrix: &DMatrix<f64>) -> Result<SvdFactors> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix", "entries must be finite"));
    }
    if matrix.is_empty() {
        return Err(Error::Empty("matrix"));
    }
    let dec = SVD::try_new(matrix.clone(), true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or(Error::SvdNotConverged)?;
    let u = dec.u.ok_or(Error::SvdNotConverged)?;
    let v_t = dec.v_t.ok_or(Error::SvdNotConverged)?;
    let s = dec.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let singular_values = DVector::from_iterator(s.len(), order.iter().map(|&i| s[i]));
    let left_vectors = u.select_columns(order.iter());
    let right_vectors = v_t.transpose().select_columns(order.iter());
    Ok(SvdFactors {
        singular_values,
        left_vectors,
        right_vectors,
    })
}

impl SvdFactors {
    pub fn largest(&self) -> f64 {
        self.singular_values.get(0).copied().unwrap_or(0.0)
    }

    fn zero_threshold(&self) -> f64 {
        ZERO_SINGULAR_REL * self.largest()
    }

    /// Spectral filter applied to `<u_n, b>` for each retained singular value.
    fn filter(&self, config: &SolverConfig) -> Result<Vec<f64>> {
        config.validate()?;
        let s1 = self.largest();
        let zero = self.zero_threshold();
        let floor = match (config.epsilon, config.rank_cutoff) {
            (eps, _) if eps > 0.0 => zero,
            (_, Some(c)) => (c * s1).max(zero),
            (_, None) => {
                let s_min = self.singular_values.min();
                if s_min <= zero {
                    return Err(Error::IllPosed {
                        sigma_min: s_min,
                        threshold: zero,
                    });
                }
                zero
            }
        };
        Ok(self
            .singular_values
            .iter()
            .map(|&s| {
                if s <= floor || s == 0.0 {
                    0.0
                } else {
                    s / (s * s + config.epsilon)
                }
            })
            .collect())
    }

    /// `sum_n s_n / (s_n^2 + eps) <u_n, b> v_n`.
    pub fn solve(&self, rhs: &DVector<f64>, config: &SolverConfig) -> Result<DVector<f64>> {
        if rhs.len() != self.left_vectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.left_vectors.nrows(),
                found: rhs.len(),
            });
        }
        let f = self.filter(config)?;
        let mut proj = self.left_vectors.tr_mul(rhs);
        for (p, f) in proj.iter_mut().zip(&f) {
            *p *= f;
        }
        Ok(&self.right_vectors * proj)
    }

    /// Number of singular values that pass the filter of `config`; for `eps > 0`,
    /// those with `s_n^2 >= eps` (filter factor at least one half).
    pub fn effective_rank(&self, config: &SolverConfig) -> usize {
        let zero = self.zero_threshold();
        self.singular_values
            .iter()
            .filter(|&&s| {
                if config.epsilon > 0.0 {
                    s > zero && s * s >= config.epsilon
                } else {
                    let c = config.rank_cutoff.unwrap_or(0.0) * self.largest();
                    s > zero.max(c)
                }
            })
            .count()
    }

    /// `B_eps A v = sum_n s_n^2 / (s_n^2 + eps) <v_n, v> v_n`.
    pub fn apply_ba(&self, v: &DVector<f64>, epsilon: f64) -> Result<DVector<f64>> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("{epsilon} is not a nonnegative number"),
            ));
        }
        if v.len() != self.right_vectors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.right_vectors.nrows(),
                found: v.len(),
            });
        }
        let zero = self.zero_threshold();
        let mut coef = self.right_vectors.tr_mul(v);
        for (c, &s) in coef.iter_mut().zip(self.singular_values.iter()) {
            *c *= if s <= zero || s == 0.0 {
                0.0
            } else {
                s * s / (s * s + epsilon)
            };
        }
        Ok(&self.right_vectors * coef)
    }
}

/// Regularized least-squares solution of `lhs a = rhs`, algebraically
/// `(lhs^T lhs + eps I)^{-1} lhs^T rhs`.
pub fn solve_regularized(
    lhs: &DMatrix<f64>,
    rhs: &DVector<f64>,
    config: &SolverConfig,
) -> Result<DVector<f64>> {
    if rhs.len() != lhs.nrows() {
        return Err(Error::DimensionMismatch {
            expected: lhs.nrows(),
            found: rhs.len(),
        });
    }
    config.validate()?;
    svd(lhs)?.solve(rhs, config)
}

/// `B_eps A v`, the regularized inverse applied after the forward operator.
pub fn apply_ba(lhs: &DMatrix<f64>, v: &DVector<f64>, epsilon: f64) -> Result<DVector<f64>> {
    if v.len() != lhs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: lhs.ncols(),
            found: v.len(),
        });
    }
    svd(lhs)?.apply_ba(v, epsilon)
}
