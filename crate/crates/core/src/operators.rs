//! Discretized operators of the inverse problem `P K a = P G y`.
//!
//! `G` is the Markov-normalized Gaussian smoother with bandwidth `delta`, `P` a
//! Markov-normalized Gaussian with its own bandwidth, and `K` the kernel sections
//! at the centers. On a sample cloud with distinct inputs every fiber holds a single
//! observation, so the conditional expectation operator of the empirical measure is
//! the identity on `ys` and the right-hand side needs no fiber averaging.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{
    check_bandwidth, gauss, kernel_matrix, markov_normalize, Kernel, KernelSpec, OperatorMatrix,
};
use crate::point::{check_dims, common_dim, EmpiricalMeasure, Point};

/// Sampled pairs `(x_n, y_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<Point>,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Point>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::invalid(
                "dataset",
                format!("need at least 2 samples, got {}", xs.len()),
            ));
        }
        common_dim(&xs, "dataset inputs")?;
        if let Some(y) = ys.iter().find(|y| !y.is_finite()) {
            return Err(Error::invalid(
                "dataset",
                format!("non-finite response {y}"),
            ));
        }
        Ok(Dataset { xs, ys })
    }

    pub fn xs(&self) -> &[Point] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs[0].dim()
    }

    /// Same inputs, new responses.
    pub fn with_responses(&self, ys: Vec<f64>) -> Result<Self> {
        Dataset::new(self.xs.clone(), ys)
    }

    /// The sampling measure with mass 1/N at every input.
    pub fn sampling_measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.xs.clone()).expect("validated dataset")
    }
}

/// How the M kernel centers are drawn from the N samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CenterSelection {
    /// Indices `floor(i N / M)` for `i = 0..M`.
    #[default]
    Stride,
    /// M distinct indices drawn uniformly with a seeded generator, kept in sample order.
    Random { seed: u64 },
}

pub fn select_centers(xs: &[Point], m: usize, how: CenterSelection) -> Result<Vec<Point>> {
    let n = xs.len();
    if m == 0 || m > n {
        return Err(Error::invalid(
            "M",
            format!("need 1 <= M <= N = {n}, got {m}"),
        ));
    }
    let idx: Vec<usize> = match how {
        CenterSelection::Stride => (0..m).map(|i| i * n / m).collect(),
        CenterSelection::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = index::sample(&mut rng, n, m).into_vec();
            v.sort_unstable();
            v
        }
    };
    Ok(idx.into_iter().map(|i| xs[i].clone()).collect())
}

/// `P K a = rhs`, with `lhs = P K` stored as an N x M matrix acting directly on coefficients.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub lhs: OperatorMatrix,
    pub rhs: DVector<f64>,
    pub centers: Vec<Point>,
    pub smoother_bandwidth: f64,
    pub markov_bandwidth: f64,
}

/// Discretization of the smoothed conditional expectation at the sample points.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget {
    pub values: Vec<f64>,
}

fn markov_gaussian(
    rows: &[Point],
    measure: &EmpiricalMeasure,
    bandwidth: f64,
) -> Result<OperatorMatrix> {
    check_bandwidth(bandwidth)?;
    check_dims(rows, measure.dim())?;
    let raw = kernel_matrix(&KernelSpec::gaussian(bandwidth)?, rows, measure.points())?;
    markov_normalize(&raw, measure).map_err(|e| with_bandwidth(e, bandwidth))
}

fn with_bandwidth(e: Error, bandwidth: f64) -> Error {
    match e {
        Error::DegenerateRow { row, .. } => Error::DegenerateRow {
            row,
            bandwidth_hint: format!("(currently {bandwidth})"),
        },
        other => other,
    }
}

/// The Markov kernel `P` over the samples.
pub fn build_markov(
    data_xs: &[Point],
    measure: &EmpiricalMeasure,
    markov_bandwidth: f64,
) -> Result<OperatorMatrix> {
    if data_xs != measure.points() {
        return Err(Error::PointMismatch("samples vs measure support"));
    }
    markov_gaussian(data_xs, measure, markov_bandwidth)
}

/// The smoothing matrix `G_delta` over the samples.
pub fn build_smoother(
    data_xs: &[Point],
    measure: &EmpiricalMeasure,
    delta: f64,
) -> Result<OperatorMatrix> {
    build_markov(data_xs, measure, delta)
}

/// Smoother rows at arbitrary evaluation points, normalized against `measure`.
pub fn build_smoother_at(
    rows: &[Point],
    measure: &EmpiricalMeasure,
    delta: f64,
) -> Result<OperatorMatrix> {
    markov_gaussian(rows, measure, delta)
}

/// Weighted application of the smoother to analytic truth values at the samples.
pub fn smoothed_truth(
    truth_values: &[f64],
    smoother: &OperatorMatrix,
    measure: &EmpiricalMeasure,
) -> Result<SmoothedTarget> {
    if smoother.col_points() != measure.points() {
        return Err(Error::PointMismatch("smoother columns vs measure support"));
    }
    if truth_values.len() != measure.len() {
        return Err(Error::DimensionMismatch {
            expected: measure.len(),
            found: truth_values.len(),
        });
    }
    let weighted = DVector::from_iterator(
        truth_values.len(),
        truth_values
            .iter()
            .zip(measure.weights())
            .map(|(t, w)| t * w),
    );
    let values = smoother.entries() * weighted;
    Ok(SmoothedTarget {
        values: values.iter().copied().collect(),
    })
}

const ROW_BLOCK: usize = 128;

/// Weighted Markov-normalized Gaussian rows `w_j g(x_i, x_j) / sum_l w_l g(x_i, x_l)`
/// for `i` in `rows`, as a dense block.
fn weighted_markov_block(
    xs: &[Point],
    weights: &[f64],
    rows: std::ops::Range<usize>,
    bandwidth: f64,
) -> Result<DMatrix<f64>> {
    let n = xs.len();
    let mut block = DMatrix::zeros(rows.len(), n);
    for (r, i) in rows.enumerate() {
        let mut mass = 0.0;
        for j in 0..n {
            let v = weights[j] * gauss(xs[i].dist_sq(&xs[j]), bandwidth);
            block[(r, j)] = v;
            mass += v;
        }
        if !(mass > 0.0 && mass.is_normal()) {
            return Err(Error::DegenerateRow {
                row: i,
                bandwidth_hint: format!("(currently {bandwidth})"),
            });
        }
        block.row_mut(r).unscale_mut(mass);
    }
    Ok(block)
}

fn row_blocks(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n)
        .step_by(ROW_BLOCK)
        .map(|s| s..(s + ROW_BLOCK).min(n))
        .collect()
}

/// `G_delta y` without materializing the N x N smoother.
pub(crate) fn smooth_samples(
    xs: &[Point],
    weights: &[f64],
    ys: &[f64],
    delta: f64,
) -> Result<DVector<f64>> {
    let y = DVector::from_column_slice(ys);
    let parts = row_blocks(xs.len())
        .into_par_iter()
        .map(|rows| Ok(weighted_markov_block(xs, weights, rows, delta)? * &y))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_iterator(
        xs.len(),
        parts
            .into_iter()
            .flat_map(|p| p.into_iter().copied().collect::<Vec<_>>()),
    ))
}

/// Assembles `lhs = P K` and `rhs = P G_delta y` over the sampling measure of `data`.
///
/// `P` is applied in row blocks so memory stays at O(N M + block * N).
pub fn assemble_problem(
    data: &Dataset,
    centers: &[Point],
    kspec: &KernelSpec,
    delta: f64,
    markov_bw: f64,
) -> Result<InverseProblem> {
    check_bandwidth(delta)?;
    check_bandwidth(markov_bw)?;
    check_bandwidth(kspec.bandwidth)?;
    common_dim(centers, "centers")?;
    check_dims(centers, data.dim())?;

    let xs = data.xs();
    let measure = data.sampling_measure();
    let w = measure.weights();

    let gy = smooth_samples(xs, w, data.ys(), delta)?;
    let kernel = Kernel::new(*kspec, &EmpiricalMeasure::uniform(centers.to_vec())?)?;
    let k = kernel.matrix(xs, centers)?;

    let m = centers.len();
    let parts = row_blocks(xs.len())
        .into_par_iter()
        .map(|rows| {
            let p = weighted_markov_block(xs, w, rows, markov_bw)?;
            Ok((&p * &k, &p * &gy))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lhs = DMatrix::zeros(xs.len(), m);
    let mut rhs = DVector::zeros(xs.len());
    let mut r0 = 0;
    for (pk, pgy) in parts {
        let b = pk.nrows();
        lhs.rows_mut(r0, b).copy_from(&pk);
        rhs.rows_mut(r0, b).copy_from(&pgy);
        r0 += b;
    }
    if lhs.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "inverse problem",
            "assembled operators are not finite",
        ));
    }

    let lhs = OperatorMatrix::new(lhs, xs.to_vec(), centers.to_vec(), vec![1.0; m])?;
    Ok(InverseProblem {
        lhs,
        rhs,
        centers: centers.to_vec(),
        smoother_bandwidth: delta,
        markov_bandwidth: markov_bw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use rand::{Rng, SeedableRng};

    fn random_data(seed: u64, n: usize, d: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|_| Point::new((0..d).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let ys = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![Point::scalar(0.0)], vec![1.0]).is_err());
        assert!(Dataset::new(vec![Point::scalar(0.0), Point::scalar(1.0)], vec![1.0]).is_err());
        assert!(Dataset::new(
            vec![Point::scalar(0.0), Point::scalar(1.0)],
            vec![1.0, f64::INFINITY]
        )
        .is_err());
    }

    #[test]
    fn markov_single_point_and_constants() {
        let one = vec![Point::scalar(0.2)];
        let m1 = EmpiricalMeasure::uniform(one.clone()).unwrap();
        let p = build_markov(&one, &m1, 0.1).unwrap();
        assert_eq!(p.entries().as_slice(), &[1.0]);

        let data = random_data(1, 40, 2);
        let m = data.sampling_measure();
        let p = build_markov(data.xs(), &m, 0.05).unwrap();
        let out = p.apply(&vec![2.5; 40]).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-12));
        let g = build_smoother(data.xs(), &m, 0.02).unwrap();
        for s in g.weighted_row_sums().iter() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_two_point_hand_computation() {
        // exp(-d^2/h) = 0.5 at d = 1 when h = 1/ln 2.
        let pts = vec![Point::scalar(0.0), Point::scalar(1.0)];
        let m = EmpiricalMeasure::uniform(pts.clone()).unwrap();
        let p = build_markov(&pts, &m, 1.0 / 2f64.ln()).unwrap();
        let want = [[4.0 / 3.0, 2.0 / 3.0], [2.0 / 3.0, 4.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p.entries()[(i, j)] - want[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_centers() {
        let xs: Vec<Point> = (0..10).map(|i| Point::scalar(i as f64)).collect();
        let c = select_centers(&xs, 4, CenterSelection::Stride).unwrap();
        let got: Vec<f64> = c.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(got, vec![0.0, 2.0, 5.0, 7.0]);
        let c = select_centers(&xs, 5, CenterSelection::Stride).unwrap();
        let got: Vec<f64> = c.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(got, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(
            select_centers(&xs, 10, CenterSelection::Stride).unwrap(),
            xs
        );
        assert!(select_centers(&xs, 11, CenterSelection::Stride).is_err());
        assert!(select_centers(&xs, 0, CenterSelection::Stride).is_err());

        let r1 = select_centers(&xs, 6, CenterSelection::Random { seed: 3 }).unwrap();
        let r2 = select_centers(&xs, 6, CenterSelection::Random { seed: 3 }).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 6);
    }

    #[test]
    fn constant_response_gives_constant_rhs() {
        let data = random_data(2, 60, 2);
        let data = data.with_responses(vec![-1.75; 60]).unwrap();
        let centers = select_centers(data.xs(), 12, CenterSelection::Stride).unwrap();
        let spec = KernelSpec::new(KernelFamily::Diffusion, 0.05).unwrap();
        let prob = assemble_problem(&data, &centers, &spec, 0.03, 0.04).unwrap();
        assert!(prob.rhs.iter().all(|v| (v + 1.75).abs() < 1e-12));
        assert_eq!(prob.lhs.nrows(), 60);
        assert_eq!(prob.lhs.ncols(), 12);
    }

    #[test]
    fn streamed_assembly_matches_dense_products() {
        let data = random_data(4, 300, 1);
        let m = data.sampling_measure();
        let centers = select_centers(data.xs(), 30, CenterSelection::Stride).unwrap();
        let spec = KernelSpec::gaussian(0.01).unwrap();
        let prob = assemble_problem(&data, &centers, &spec, 0.004, 0.006).unwrap();

        let p = build_markov(data.xs(), &m, 0.006).unwrap();
        let g = build_smoother(data.xs(), &m, 0.004).unwrap();
        let k = kernel_matrix(&spec, data.xs(), &centers).unwrap();
        let w = 1.0 / 300.0;
        let lhs = p.entries() * k.entries() * w;
        let gy = g.apply(data.ys()).unwrap();
        let rhs = p.apply(gy.as_slice()).unwrap();
        assert!((lhs - prob.lhs.entries()).amax() < 1e-12);
        assert!((rhs - &prob.rhs).amax() < 1e-12);
    }

    #[test]
    fn narrow_smoother_is_near_identity_on_separated_points() {
        let xs: Vec<Point> = (0..5).map(|i| Point::scalar(i as f64)).collect();
        let ys = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let data = Dataset::new(xs.clone(), ys.clone()).unwrap();
        let m = data.sampling_measure();
        let delta = 0.05;
        let leak = (-1.0f64 / delta).exp();
        let g = build_smoother(&xs, &m, delta).unwrap();
        let s = smoothed_truth(&ys, &g, &m).unwrap();
        for (v, y) in s.values.iter().zip(&ys) {
            assert!((v - y).abs() <= 10.0 * leak);
        }
        let spec = KernelSpec::gaussian(0.3).unwrap();
        let prob = assemble_problem(&data, &xs, &spec, delta, 0.4).unwrap();
        let p = build_markov(&xs, &m, 0.4).unwrap();
        let py = p.apply(&ys).unwrap();
        assert!((&prob.rhs - py).amax() <= 10.0 * leak);
    }

    #[test]
    fn smoothed_truth_of_linear_function_in_interior() {
        let n = 1001;
        let xs: Vec<Point> = (0..n)
            .map(|i| Point::scalar(i as f64 / (n - 1) as f64))
            .collect();
        let truth: Vec<f64> = xs.iter().map(|p| 3.0 * p.coords()[0] - 1.0).collect();
        let m = EmpiricalMeasure::uniform(xs.clone()).unwrap();
        let delta = 1e-3;
        let g = build_smoother(&xs, &m, delta).unwrap();
        let s = smoothed_truth(&truth, &g, &m).unwrap();
        // Brute-force weighted average at each interior point.
        for i in (200..800).step_by(37) {
            let x = xs[i].coords()[0];
            let (mut num, mut den) = (0.0, 0.0);
            for (p, t) in xs.iter().zip(&truth) {
                let k = (-(p.coords()[0] - x).powi(2) / delta).exp();
                num += k * t;
                den += k;
            }
            assert!((s.values[i] - num / den).abs() < 1e-12);
            assert!((s.values[i] - truth[i]).abs() < delta);
        }
        let c = smoothed_truth(&vec![4.0; n], &g, &m).unwrap();
        assert!(c.values.iter().all(|v| (v - 4.0).abs() < 1e-12));
    }
}
