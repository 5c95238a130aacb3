//! Kernels on R^d and their matrix discretizations over empirical measures.
//!
//! Matrix convention: an [`OperatorMatrix`] stores raw kernel values
//! `k(row_i, col_j)` together with quadrature weights for its columns, so the
//! discretized integral operator acts as `(K v)_i = sum_j k(row_i, col_j) w_j v_j`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{check_dims, common_dim, EmpiricalMeasure, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `exp(-|x - y|^2 / h)`.
    Gaussian,
    /// Gaussian divided by its integral against the reference measure in the second argument.
    MarkovGaussian,
    /// Gaussian divided by left and right degree functions of the reference measure.
    Diffusion,
    /// The diffusion kernel conjugated by `sqrt(deg_l / deg_r)`; symmetric and positive definite.
    SymmetrizedDiffusion,
}

impl KernelFamily {
    pub fn is_symmetric(self) -> bool {
        matches!(
            self,
            KernelFamily::Gaussian | KernelFamily::SymmetrizedDiffusion
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::MarkovGaussian => "markov-gaussian",
            KernelFamily::Diffusion => "diffusion",
            KernelFamily::SymmetrizedDiffusion => "symmetrized-diffusion",
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(KernelFamily::Gaussian),
            "markov-gaussian" => Ok(KernelFamily::MarkovGaussian),
            "diffusion" => Ok(KernelFamily::Diffusion),
            "symmetrized-diffusion" => Ok(KernelFamily::SymmetrizedDiffusion),
            other => Err(Error::invalid(
                "kernel family",
                format!("unknown family `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(KernelSpec { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }
}

pub(crate) fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if bandwidth.is_finite() && bandwidth > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "bandwidth",
            format!("{bandwidth} is not a positive finite number"),
        ))
    }
}

/// Exponents beyond this are flushed to zero (`exp(-300)` is about `5e-131`), so
/// products of a few kernel values never reach the subnormal range.
const EXP_CUTOFF: f64 = 300.0;

#[inline]
pub(crate) fn gauss(dist_sq: f64, bandwidth: f64) -> f64 {
    let t = dist_sq / bandwidth;
    if t > EXP_CUTOFF {
        0.0
    } else {
        (-t).exp()
    }
}

/// `exp(-|x - x2|^2 / delta)`.
pub fn gaussian_kernel(x: &Point, x2: &Point, delta: f64) -> Result<f64> {
    check_bandwidth(delta)?;
    if x.dim() != x2.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: x2.dim(),
        });
    }
    Ok(gauss(x.dist_sq(x2), delta))
}

/// Dense matrix with entries `f(i, j)`, filled column by column in parallel.
pub(crate) fn par_matrix<F>(nrows: usize, ncols: usize, f: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let mut data = vec![0.0; nrows * ncols];
    if nrows > 0 {
        data.par_chunks_mut(nrows).enumerate().for_each(|(j, col)| {
            for (i, e) in col.iter_mut().enumerate() {
                *e = f(i, j);
            }
        });
    }
    DMatrix::from_vec(nrows, ncols, data)
}

pub(crate) fn gaussian_entries(rows: &[Point], cols: &[Point], bandwidth: f64) -> DMatrix<f64> {
    par_matrix(rows.len(), cols.len(), |i, j| {
        gauss(rows[i].dist_sq(&cols[j]), bandwidth)
    })
}

/// A kernel integral operator discretized on finite point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    entries: DMatrix<f64>,
    row_points: Vec<Point>,
    col_points: Vec<Point>,
    col_weights: Vec<f64>,
}

impl OperatorMatrix {
    pub fn new(
        entries: DMatrix<f64>,
        row_points: Vec<Point>,
        col_points: Vec<Point>,
        col_weights: Vec<f64>,
    ) -> Result<Self> {
        if entries.nrows() != row_points.len() {
            return Err(Error::DimensionMismatch {
                expected: row_points.len(),
                found: entries.nrows(),
            });
        }
        if entries.ncols() != col_points.len() {
            return Err(Error::DimensionMismatch {
                expected: col_points.len(),
                found: entries.ncols(),
            });
        }
        if col_weights.len() != col_points.len() {
            return Err(Error::DimensionMismatch {
                expected: col_points.len(),
                found: col_weights.len(),
            });
        }
        if let Some(w) = col_weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(
                "column weight",
                format!("{w} is not strictly positive"),
            ));
        }
        Ok(OperatorMatrix {
            entries,
            row_points,
            col_points,
            col_weights,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn row_points(&self) -> &[Point] {
        &self.row_points
    }

    pub fn col_points(&self) -> &[Point] {
        &self.col_points
    }

    pub fn col_weights(&self) -> &[f64] {
        &self.col_weights
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// Applies the discretized operator: `sum_j entries[i][j] * w_j * v_j`.
    pub fn apply(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: v.len(),
            });
        }
        let weighted =
            DVector::from_iterator(v.len(), v.iter().zip(&self.col_weights).map(|(x, w)| x * w));
        Ok(&self.entries * weighted)
    }

    /// `sum_j w_j * entries[i][j]` for every row.
    pub fn weighted_row_sums(&self) -> DVector<f64> {
        let w = DVector::from_column_slice(&self.col_weights);
        &self.entries * w
    }
}

/// Degree functions of a diffusion kernel evaluated on its support.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeData {
    pub deg_r: Vec<f64>,
    pub deg_l: Vec<f64>,
    /// `sqrt(deg_l / deg_r)`, the conjugating factor that symmetrizes the diffusion kernel.
    pub symmetrizer: Vec<f64>,
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Gaussian kernel matrix `K[i][j] = exp(-|rows_i - cols_j|^2 / h)`.
///
/// Only the Gaussian family is accepted here; the normalized families depend on a
/// reference measure and are built through [`Kernel`] or [`diffusion_kernel`].
pub fn kernel_matrix(spec: &KernelSpec, rows: &[Point], cols: &[Point]) -> Result<OperatorMatrix> {
    if spec.family != KernelFamily::Gaussian {
        return Err(Error::invalid(
            "kernel family",
            format!("kernel_matrix needs a gaussian spec, got {}", spec.family),
        ));
    }
    check_bandwidth(spec.bandwidth)?;
    let d = common_dim(rows, "row points")?;
    common_dim(cols, "column points")?;
    check_dims(cols, d)?;
    let entries = gaussian_entries(rows, cols, spec.bandwidth);
    OperatorMatrix::new(
        entries,
        rows.to_vec(),
        cols.to_vec(),
        uniform_weights(cols.len()),
    )
}

fn same_points(a: &[Point], b: &[Point], what: &'static str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::PointMismatch(what))
    }
}

/// Divides each row by its weighted mass so that `sum_j w_j p[i][j] = 1`.
pub fn markov_normalize(
    raw: &OperatorMatrix,
    measure: &EmpiricalMeasure,
) -> Result<OperatorMatrix> {
    same_points(
        raw.col_points(),
        measure.points(),
        "matrix columns vs measure support",
    )?;
    if let Some(e) = raw
        .entries()
        .iter()
        .find(|e| !(e.is_finite() && **e >= 0.0))
    {
        return Err(Error::invalid(
            "kernel entry",
            format!("{e} is negative or non-finite"),
        ));
    }
    let w = DVector::from_column_slice(measure.weights());
    let mass = raw.entries() * &w;
    let mut entries = raw.entries().clone();
    for (i, m) in mass.iter().enumerate() {
        if !(*m > 0.0 && m.is_normal()) {
            return Err(Error::DegenerateRow {
                row: i,
                bandwidth_hint: String::new(),
            });
        }
        entries.row_mut(i).unscale_mut(*m);
    }
    OperatorMatrix::new(
        entries,
        raw.row_points().to_vec(),
        measure.points().to_vec(),
        measure.weights().to_vec(),
    )
}

/// Kernel of the composite operator `K1 K2` under the quadrature measure `beta`:
/// `(k1 * k2)(x, z) = sum_y w_y k1(x, y) k2(y, z)`.
pub fn convolve(
    k1: &OperatorMatrix,
    k2: &OperatorMatrix,
    measure: &EmpiricalMeasure,
) -> Result<OperatorMatrix> {
    same_points(
        k1.col_points(),
        measure.points(),
        "first kernel columns vs measure support",
    )?;
    same_points(
        k2.row_points(),
        measure.points(),
        "second kernel rows vs measure support",
    )?;
    let mut left = k1.entries().clone();
    for (j, w) in measure.weights().iter().enumerate() {
        left.column_mut(j).scale_mut(*w);
    }
    OperatorMatrix::new(
        left * k2.entries(),
        k1.row_points().to_vec(),
        k2.col_points().to_vec(),
        k2.col_weights().to_vec(),
    )
}

fn degree_error(row: usize, bandwidth: f64) -> Error {
    Error::DegenerateRow {
        row,
        bandwidth_hint: format!("(currently {bandwidth})"),
    }
}

fn check_degree(value: f64, row: usize, bandwidth: f64) -> Result<f64> {
    if value > 0.0 && value.is_normal() {
        Ok(value)
    } else {
        Err(degree_error(row, bandwidth))
    }
}

/// Diffusion kernel on the support of `measure`.
///
/// `deg_r(x) = sum_y w_y g(x, y)`, `deg_l(x) = sum_y w_y g(x, y) / deg_r(y)`, and
/// `k(x, y) = g(x, y) / (deg_l(x) deg_r(y))`, where `g` is the Gaussian with bandwidth `eps`.
pub fn diffusion_kernel(
    points: &[Point],
    measure: &EmpiricalMeasure,
    eps: f64,
) -> Result<(OperatorMatrix, DegreeData)> {
    check_bandwidth(eps)?;
    same_points(points, measure.points(), "points vs measure support")?;
    let g = gaussian_entries(points, points, eps);
    let w = measure.weights();

    let deg_r = (0..points.len())
        .map(|i| {
            let s: f64 = g.row(i).iter().zip(w).map(|(k, w)| k * w).sum();
            check_degree(s, i, eps)
        })
        .collect::<Result<Vec<_>>>()?;
    let deg_l = (0..points.len())
        .map(|i| {
            let s: f64 = g
                .row(i)
                .iter()
                .zip(w)
                .zip(&deg_r)
                .map(|((k, w), d)| k * w / d)
                .sum();
            check_degree(s, i, eps)
        })
        .collect::<Result<Vec<_>>>()?;

    let entries = DMatrix::from_fn(points.len(), points.len(), |i, j| {
        g[(i, j)] / (deg_l[i] * deg_r[j])
    });
    let symmetrizer = deg_l
        .iter()
        .zip(&deg_r)
        .map(|(l, r)| (l / r).sqrt())
        .collect();
    let op = OperatorMatrix::new(entries, points.to_vec(), points.to_vec(), w.to_vec())?;
    Ok((
        op,
        DegreeData {
            deg_r,
            deg_l,
            symmetrizer,
        },
    ))
}

/// Conjugates a diffusion matrix by its symmetrizer: `s_i * diff[i][j] / s_j`.
pub fn symmetrize_diffusion(diff: &OperatorMatrix, deg: &DegreeData) -> Result<OperatorMatrix> {
    let n = diff.nrows();
    if diff.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: diff.ncols(),
        });
    }
    if deg.symmetrizer.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: deg.symmetrizer.len(),
        });
    }
    let s = &deg.symmetrizer;
    let entries = DMatrix::from_fn(n, n, |i, j| s[i] * diff.entries()[(i, j)] / s[j]);
    OperatorMatrix::new(
        entries,
        diff.row_points().to_vec(),
        diff.col_points().to_vec(),
        diff.col_weights().to_vec(),
    )
}

#[derive(Debug, Clone, PartialEq)]
struct Reference {
    points: Vec<Point>,
    weights: Vec<f64>,
    deg_r: Vec<f64>,
}

/// A kernel that can be evaluated at arbitrary points of R^d.
///
/// The normalized families are defined relative to a reference measure; their
/// degree functions extend off the support by the same quadrature sums, which is
/// what makes out-of-sample evaluation possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    spec: KernelSpec,
    dim: Option<usize>,
    reference: Option<Reference>,
}

impl Kernel {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Ok(Kernel {
            spec: KernelSpec::gaussian(bandwidth)?,
            dim: None,
            reference: None,
        })
    }

    /// Builds a kernel of any family over `reference`. For the Gaussian family the
    /// reference only pins the dimension.
    pub fn new(spec: KernelSpec, reference: &EmpiricalMeasure) -> Result<Self> {
        check_bandwidth(spec.bandwidth)?;
        let dim = Some(reference.dim());
        if spec.family == KernelFamily::Gaussian {
            return Ok(Kernel {
                spec,
                dim,
                reference: None,
            });
        }
        let pts = reference.points();
        let w = reference.weights();
        let deg_r = pts
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let s: f64 = pts
                    .iter()
                    .zip(w)
                    .map(|(q, w)| w * gauss(p.dist_sq(q), spec.bandwidth))
                    .sum();
                check_degree(s, i, spec.bandwidth)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Kernel {
            spec,
            dim,
            reference: Some(Reference {
                points: pts.to_vec(),
                weights: w.to_vec(),
                deg_r,
            }),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    fn check(&self, pts: &[Point]) -> Result<()> {
        match self.dim {
            Some(d) => check_dims(pts, d),
            None => match pts.first() {
                Some(p) => check_dims(pts, p.dim()),
                None => Ok(()),
            },
        }
    }

    fn right_degree(&self, x: &Point) -> f64 {
        let r = self
            .reference
            .as_ref()
            .expect("normalized family has a reference");
        r.points
            .iter()
            .zip(&r.weights)
            .map(|(q, w)| w * gauss(x.dist_sq(q), self.spec.bandwidth))
            .sum()
    }

    fn left_degree(&self, x: &Point) -> f64 {
        let r = self
            .reference
            .as_ref()
            .expect("normalized family has a reference");
        r.points
            .iter()
            .zip(&r.weights)
            .zip(&r.deg_r)
            .map(|((q, w), d)| w * gauss(x.dist_sq(q), self.spec.bandwidth) / d)
            .sum()
    }

    fn factor(&self, x: &Point, row: usize, is_row: bool) -> Result<f64> {
        let bw = self.spec.bandwidth;
        let f = match (self.spec.family, is_row) {
            (KernelFamily::Gaussian, _) | (KernelFamily::MarkovGaussian, false) => 1.0,
            (KernelFamily::MarkovGaussian, true) => {
                1.0 / check_degree(self.right_degree(x), row, bw)?
            }
            (KernelFamily::Diffusion, true) => 1.0 / check_degree(self.left_degree(x), row, bw)?,
            (KernelFamily::Diffusion, false) => 1.0 / check_degree(self.right_degree(x), row, bw)?,
            (KernelFamily::SymmetrizedDiffusion, _) => {
                let r = check_degree(self.right_degree(x), row, bw)?;
                let l = check_degree(self.left_degree(x), row, bw)?;
                1.0 / (r * l).sqrt()
            }
        };
        Ok(f)
    }

    fn factors(&self, pts: &[Point], is_row: bool) -> Result<Vec<f64>> {
        pts.par_iter()
            .enumerate()
            .map(|(i, p)| self.factor(p, i, is_row))
            .collect()
    }

    /// Multipliers `r(x)` such that `k(x, y) = r(x) g(x, y) c(y)`.
    pub(crate) fn row_factors(&self, pts: &[Point]) -> Result<Vec<f64>> {
        self.factors(pts, true)
    }

    pub(crate) fn col_factors(&self, pts: &[Point]) -> Result<Vec<f64>> {
        self.factors(pts, false)
    }

    pub fn eval(&self, x: &Point, y: &Point) -> Result<f64> {
        let m = self.matrix(std::slice::from_ref(x), std::slice::from_ref(y))?;
        Ok(m[(0, 0)])
    }

    /// `K[i][j] = k(rows_i, cols_j)`.
    pub fn matrix(&self, rows: &[Point], cols: &[Point]) -> Result<DMatrix<f64>> {
        self.check(rows)?;
        self.check(cols)?;
        if let (Some(r), Some(c)) = (rows.first(), cols.first()) {
            if r.dim() != c.dim() {
                return Err(Error::DimensionMismatch {
                    expected: r.dim(),
                    found: c.dim(),
                });
            }
        }
        let rf = self.row_factors(rows)?;
        let cf = self.col_factors(cols)?;
        let bw = self.spec.bandwidth;
        Ok(par_matrix(rows.len(), cols.len(), |i, j| {
            rf[i] * gauss(rows[i].dist_sq(&cols[j]), bw) * cf[j]
        }))
    }
}

/// RKHS inner product of `sum_n a_n k(., x_n)` and `sum_m b_m k(., y_m)`.
pub fn rkhs_inner(
    a_coeffs: &[f64],
    a_centers: &[Point],
    b_coeffs: &[f64],
    b_centers: &[Point],
    kernel: &Kernel,
) -> Result<f64> {
    if !kernel.spec().family.is_symmetric() {
        return Err(Error::invalid(
            "kernel family",
            format!(
                "{} is not symmetric positive definite",
                kernel.spec().family
            ),
        ));
    }
    if a_coeffs.len() != a_centers.len() {
        return Err(Error::DimensionMismatch {
            expected: a_centers.len(),
            found: a_coeffs.len(),
        });
    }
    if b_coeffs.len() != b_centers.len() {
        return Err(Error::DimensionMismatch {
            expected: b_centers.len(),
            found: b_coeffs.len(),
        });
    }
    let cross = kernel.matrix(a_centers, b_centers)?;
    let a = DVector::from_column_slice(a_coeffs);
    let b = DVector::from_column_slice(b_coeffs);
    Ok(a.dot(&(cross * b)))
}

/// `0.05 * median(|x - x'|^2)` over distinct pairs; a starting point for bandwidths,
/// not a tuned value. At most 1000 points (evenly strided) enter the median.
pub fn heuristic_bandwidth(points: &[Point]) -> Result<f64> {
    common_dim(points, "points")?;
    if points.len() < 2 {
        return Err(Error::invalid(
            "points",
            "need at least two points for a pairwise median",
        ));
    }
    let stride = points.len().div_ceil(1000);
    let sample: Vec<&Point> = points.iter().step_by(stride).collect();
    let mut d2: Vec<f64> = Vec::with_capacity(sample.len() * (sample.len() - 1) / 2);
    for (i, p) in sample.iter().enumerate() {
        for q in &sample[i + 1..] {
            d2.push(p.dist_sq(q));
        }
    }
    let mid = d2.len() / 2;
    let (_, median, _) = d2.select_nth_unstable_by(mid, f64::total_cmp);
    let h = 0.05 * *median;
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::invalid("points", "median pairwise distance is zero"))
    }
}
