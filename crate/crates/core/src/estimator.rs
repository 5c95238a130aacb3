//! End-to-end estimation: assemble `P K a = P G y`, solve it with Tikhonov
//! regularization, and wrap the coefficients as a model `x -> sum_m a_m k(x, x_m)`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{check_bandwidth, Kernel, KernelFamily, KernelSpec};
use crate::operators::{assemble_problem, select_centers, CenterSelection, Dataset};
use crate::point::{check_dims, EmpiricalMeasure, Point};
use crate::solver::{svd, SolverConfig};

/// Model file format version written by this build.
pub const MODEL_VERSION: u64 = 1;

/// Default regularization: `1e-6 * s_1^2` of the assembled operator.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// Use `epsilon` as given.
    Absolute(f64),
    /// `epsilon = factor * s_1^2`, with `s_1` the largest singular value of `P K`.
    Relative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(DEFAULT_RELATIVE_EPSILON)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub kernel: KernelSpec,
    /// Smoothing bandwidth of `G_delta`.
    pub delta: f64,
    /// Bandwidth of the Markov kernel `P`.
    pub markov_bw: f64,
    pub epsilon: Regularization,
    /// Number of kernel centers.
    pub m: usize,
    pub centers: CenterSelection,
}

impl FitParams {
    /// Diffusion kernel with every bandwidth set to `delta`.
    pub fn new(delta: f64, m: usize) -> Result<Self> {
        Ok(FitParams {
            kernel: KernelSpec::new(KernelFamily::Diffusion, delta)?,
            delta,
            markov_bw: delta,
            epsilon: Regularization::default(),
            m,
            centers: CenterSelection::Stride,
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_bandwidth(self.kernel.bandwidth)?;
        check_bandwidth(self.delta)?;
        check_bandwidth(self.markov_bw)?;
        let e = match self.epsilon {
            Regularization::Absolute(e) | Regularization::Relative(e) => e,
        };
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("{e} is not a nonnegative number"),
            ));
        }
        if self.m == 0 || self.m > n {
            return Err(Error::invalid(
                "M",
                format!("need 1 <= M <= N = {n}, got {}", self.m),
            ));
        }
        Ok(())
    }

    fn seed(&self) -> Option<u64> {
        match self.centers {
            CenterSelection::Stride => None,
            CenterSelection::Random { seed } => Some(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub delta: f64,
    pub markov_bw: f64,
    /// The resolved absolute regularization parameter.
    pub epsilon: f64,
    pub n: usize,
    pub m: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    /// `|lhs a - rhs|_2`.
    pub residual_norm: f64,
    pub rhs_norm: f64,
    pub effective_rank: usize,
}

/// Kernel expansion `x -> sum_m a_m k(x, x_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RkhsModel {
    centers: Vec<Point>,
    coefficients: Vec<f64>,
    kspec: KernelSpec,
    fit_meta: FitMeta,
    kernel: Kernel,
    // a_m times the column factor of the kernel at x_m.
    scaled: Vec<f64>,
}

impl RkhsModel {
    /// Builds a model whose normalized kernels use the uniform measure on `centers`.
    pub fn new(
        centers: Vec<Point>,
        coefficients: Vec<f64>,
        kspec: KernelSpec,
        fit_meta: FitMeta,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Empty("model centers"));
        }
        if centers.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: centers.len(),
                found: coefficients.len(),
            });
        }
        if let Some(a) = coefficients.iter().find(|a| !a.is_finite()) {
            return Err(Error::invalid("coefficient", format!("{a} is not finite")));
        }
        let kernel = Kernel::new(kspec, &EmpiricalMeasure::uniform(centers.clone())?)?;
        let scaled = kernel
            .col_factors(&centers)?
            .iter()
            .zip(&coefficients)
            .map(|(c, a)| c * a)
            .collect();
        Ok(RkhsModel {
            centers,
            coefficients,
            kspec,
            fit_meta,
            kernel,
            scaled,
        })
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn kernel_spec(&self) -> &KernelSpec {
        &self.kspec
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn fit_meta(&self) -> &FitMeta {
        &self.fit_meta
    }

    pub fn dim(&self) -> usize {
        self.centers[0].dim()
    }

    /// `sum_m a_m k(x, x_m)` at every query point.
    pub fn evaluate(&self, query: &[Point]) -> Result<Vec<f64>> {
        check_dims(query, self.dim())?;
        let rf = self.kernel.row_factors(query)?;
        let bw = self.kspec.bandwidth;
        Ok(query
            .iter()
            .zip(rf)
            .map(|(q, r)| {
                let s: f64 = self
                    .centers
                    .iter()
                    .zip(&self.scaled)
                    .map(|(c, a)| crate::kernel::gauss(q.dist_sq(c), bw) * a)
                    .sum();
                r * s
            })
            .collect())
    }
}

/// Fits the conditional expectation of `data` with centers chosen by `params.centers`.
pub fn fit(data: &Dataset, params: &FitParams) -> Result<(RkhsModel, FitReport)> {
    params.validate(data.len())?;
    let centers = select_centers(data.xs(), params.m, params.centers)?;
    fit_with_centers(data, centers, params)
}

/// Fits with an explicit list of centers; `params.m` and `params.centers` are ignored.
pub fn fit_with_centers(
    data: &Dataset,
    centers: Vec<Point>,
    params: &FitParams,
) -> Result<(RkhsModel, FitReport)> {
    let problem = assemble_problem(
        data,
        &centers,
        &params.kernel,
        params.delta,
        params.markov_bw,
    )?;
    let lhs = problem.lhs.entries();
    let factors = svd(lhs)?;
    let epsilon = match params.epsilon {
        Regularization::Absolute(e) => e,
        Regularization::Relative(f) => f * factors.largest().powi(2),
    };
    let config = SolverConfig::regularized(epsilon);
    let a = factors.solve(&problem.rhs, &config)?;
    let residual: DVector<f64> = lhs * &a - &problem.rhs;
    let report = FitReport {
        residual_norm: residual.norm(),
        rhs_norm: problem.rhs.norm(),
        effective_rank: factors.effective_rank(&config),
    };
    let meta = FitMeta {
        delta: params.delta,
        markov_bw: params.markov_bw,
        epsilon,
        n: data.len(),
        m: centers.len(),
        seed: params.seed(),
    };
    let model = RkhsModel::new(centers, a.iter().copied().collect(), params.kernel, meta)?;
    Ok((model, report))
}

/// Fits `E[(y - mean(x))^2 | x]` from squared residuals against the fitted mean.
pub fn fit_conditional_variance(
    data: &Dataset,
    mean_model: &RkhsModel,
    params: &FitParams,
) -> Result<(RkhsModel, FitReport)> {
    let fitted = mean_model.evaluate(data.xs())?;
    let z = data
        .ys()
        .iter()
        .zip(&fitted)
        .map(|(y, m)| (y - m) * (y - m))
        .collect();
    fit(&data.with_responses(z)?, params)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    kernel_family: KernelFamily,
    bandwidth: f64,
    centers: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    fit_meta: FitMeta,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

pub fn model_to_json(model: &RkhsModel) -> Result<String> {
    let file = ModelFile {
        version: MODEL_VERSION,
        kernel_family: model.kspec.family,
        bandwidth: model.kspec.bandwidth,
        centers: model.centers.iter().map(|c| c.coords().to_vec()).collect(),
        coefficients: model.coefficients.clone(),
        fit_meta: model.fit_meta,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn model_from_json(text: &str) -> Result<RkhsModel> {
    let probe: VersionProbe = serde_json::from_str(text)?;
    if probe.version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.version,
            expected: MODEL_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_str(text)?;
    let centers = file
        .centers
        .into_iter()
        .map(Point::new)
        .collect::<Result<Vec<_>>>()?;
    let kspec = KernelSpec::new(file.kernel_family, file.bandwidth)?;
    RkhsModel::new(centers, file.coefficients, kspec, file.fit_meta)
}

/// Writes the model as JSON through a temporary file and an atomic rename.
pub fn save_model(model: &RkhsModel, path: &Path) -> Result<()> {
    let text = model_to_json(model)?;
    write_atomic(path, text.as_bytes())
}

pub fn load_model(path: &Path) -> Result<RkhsModel> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_json(&text)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err)?;
    f.write_all(bytes).map_err(io_err)?;
    f.sync_all().map_err(io_err)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_1d(seed: u64, n: usize) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Point::scalar(rng.random::<f64>())).collect()
    }

    fn meta() -> FitMeta {
        FitMeta {
            delta: 0.1,
            markov_bw: 0.1,
            epsilon: 0.0,
            n: 1,
            m: 1,
            seed: None,
        }
    }

    #[test]
    fn evaluate_single_center() {
        let c = vec![Point::scalar(0.3)];
        let m = RkhsModel::new(
            c.clone(),
            vec![1.0],
            KernelSpec::gaussian(0.2).unwrap(),
            meta(),
        )
        .unwrap();
        assert_eq!(m.evaluate(&c).unwrap(), vec![1.0]);
        assert!(m.evaluate(&[Point::new(vec![0.0, 1.0]).unwrap()]).is_err());
    }

    #[test]
    fn evaluate_matches_kernel_matrix_at_centers() {
        let centers = uniform_1d(3, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..15).map(|_| rng.random::<f64>() - 0.5).collect();
        for family in [
            KernelFamily::Gaussian,
            KernelFamily::MarkovGaussian,
            KernelFamily::Diffusion,
            KernelFamily::SymmetrizedDiffusion,
        ] {
            let spec = KernelSpec::new(family, 0.05).unwrap();
            let model = RkhsModel::new(centers.clone(), a.clone(), spec, meta()).unwrap();
            let k = Kernel::new(spec, &EmpiricalMeasure::uniform(centers.clone()).unwrap())
                .unwrap()
                .matrix(&centers, &centers)
                .unwrap();
            let want = k * DVector::from_column_slice(&a);
            let got = model.evaluate(&centers).unwrap();
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12, "{family}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn far_query_decays() {
        let centers = vec![Point::scalar(0.0), Point::scalar(0.1), Point::scalar(0.2)];
        let a = vec![1.5, -2.0, 0.7];
        let delta = 0.01;
        let m = RkhsModel::new(
            centers,
            a.clone(),
            KernelSpec::gaussian(delta).unwrap(),
            meta(),
        )
        .unwrap();
        let q = Point::scalar(1.0);
        let out = m.evaluate(std::slice::from_ref(&q)).unwrap()[0];
        let bound = (-(0.8f64 * 0.8) / delta).exp() * a.iter().map(|x| x.abs()).sum::<f64>();
        assert!(out.abs() <= bound);
    }

    fn constant_fit_error(family: KernelFamily, n: usize, bw: f64, m: usize, eps: f64) -> f64 {
        let data = Dataset::new(uniform_1d(5, n), vec![2.5; n]).unwrap();
        let mut params = FitParams::new(bw, m).unwrap();
        params.kernel = KernelSpec::new(family, bw).unwrap();
        params.epsilon = Regularization::Absolute(eps);
        let (model, _) = fit(&data, &params).unwrap();
        let out = model.evaluate(data.xs()).unwrap();
        out.iter().map(|v| (v - 2.5).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_response_is_recovered() {
        for n in [50, 300] {
            for bw in [1e-3, 1e-2, 0.1, 0.3] {
                for m in [n / 10, n] {
                    let err = constant_fit_error(KernelFamily::Diffusion, n, bw, m, 0.0);
                    assert!(err < 1e-6, "n={n} bw={bw} m={m}: {err}");
                }
            }
        }
    }

    // Sums of finitely many Gaussians never equal a constant; the boundary error
    // stays around 1e-2 for every bandwidth tried.
    #[test]
    #[ignore = "a finite Gaussian expansion cannot reproduce constants to 1e-6"]
    fn constant_response_is_recovered_gaussian() {
        for bw in [1e-4, 4e-3, 0.05, 1.0] {
            let err = constant_fit_error(KernelFamily::Gaussian, 300, bw, 300, 1e-8);
            assert!(err < 1e-6, "bw={bw}: {err}");
        }
    }

    #[test]
    fn interpolation_regime() {
        let xs: Vec<Point> = (0..40).map(|i| Point::scalar(i as f64 / 39.0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ys = (0..40).map(|_| rng.random::<f64>()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let mut params = FitParams::new(2e-4, 40).unwrap();
        params.kernel = KernelSpec::gaussian(2e-4).unwrap();
        params.epsilon = Regularization::Absolute(0.0);
        let (_, report) = fit(&data, &params).unwrap();
        assert!(report.residual_norm <= 1e-8 * report.rhs_norm, "{report:?}");
        assert_eq!(report.effective_rank, 40);
    }

    #[test]
    fn m_larger_than_n_is_rejected() {
        let data = Dataset::new(uniform_1d(1, 5), vec![0.0; 5]).unwrap();
        let params = FitParams::new(0.1, 6).unwrap();
        assert!(matches!(
            fit(&data, &params),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn zero_residuals_give_zero_variance() {
        let xs = uniform_1d(7, 200);
        let ys: Vec<f64> = xs.iter().map(|p| (3.0 * p.coords()[0]).sin()).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let params = FitParams::new(0.004, 50).unwrap();
        let (mean, _) = fit(&data, &params).unwrap();
        // A model that reproduces the data exactly leaves zero residuals.
        let exact = RkhsModel::new(
            data.xs().to_vec(),
            vec![0.0; 200],
            KernelSpec::gaussian(0.01).unwrap(),
            meta(),
        )
        .unwrap();
        let zero_data = data.with_responses(vec![0.0; 200]).unwrap();
        let (var, _) = fit_conditional_variance(&zero_data, &exact, &params).unwrap();
        let out = var.evaluate(data.xs()).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-3));
        // The smooth noiseless curve leaves small residuals too.
        let (var, _) = fit_conditional_variance(&data, &mean, &params).unwrap();
        let inner: Vec<Point> = data
            .xs()
            .iter()
            .filter(|p| (0.1..=0.9).contains(&p.coords()[0]))
            .cloned()
            .collect();
        let out = var.evaluate(&inner).unwrap();
        assert!(
            out.iter().all(|v| v.abs() < 1e-3),
            "{:?}",
            out.iter().fold(0.0f64, |a, b| a.max(b.abs()))
        );
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let xs = uniform_1d(8, 120);
        let ys = xs.iter().map(|p| p.coords()[0].powi(2)).collect();
        let data = Dataset::new(xs, ys).unwrap();
        let mut params = FitParams::new(0.003, 30).unwrap();
        params.centers = CenterSelection::Random { seed: 42 };
        let (model, _) = fit(&data, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        let q = uniform_1d(9, 50);
        assert_eq!(back.evaluate(&q).unwrap(), model.evaluate(&q).unwrap());
        assert_eq!(back.fit_meta().seed, Some(42));
    }

    #[test]
    fn malformed_model_files() {
        let m = RkhsModel::new(
            vec![Point::scalar(0.5)],
            vec![2.0],
            KernelSpec::gaussian(0.1).unwrap(),
            meta(),
        )
        .unwrap();
        let text = model_to_json(&m).unwrap();
        let truncated = &text[..text.len() / 2];
        let err = model_from_json(truncated).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("line"), "{err}");

        let bumped = text.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(
            model_from_json(&bumped),
            Err(Error::UnsupportedVersion { found: 7, .. })
        ));

        let missing = std::path::Path::new("/nonexistent/dir/model.json");
        assert!(matches!(load_model(missing), Err(Error::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn json_round_trip_preserves_numbers(
            coeffs in proptest::collection::vec(-1e6f64..1e6, 1..12),
            bw in 1e-6f64..10.0,
        ) {
            let centers: Vec<Point> = (0..coeffs.len()).map(|i| Point::scalar(i as f64 / 7.0)).collect();
            let m = RkhsModel::new(centers, coeffs, KernelSpec::gaussian(bw).unwrap(), meta()).unwrap();
            let back = model_from_json(&model_to_json(&m).unwrap()).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn scale_and_permutation() {
        let xs = uniform_1d(10, 150);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ys: Vec<f64> = xs
            .iter()
            .map(|p| p.coords()[0] + rng.random::<f64>())
            .collect();
        let data = Dataset::new(xs.clone(), ys.clone()).unwrap();
        let params = FitParams::new(0.004, 30).unwrap();
        let (base, _) = fit(&data, &params).unwrap();

        let doubled = data
            .with_responses(ys.iter().map(|y| 2.0 * y).collect())
            .unwrap();
        let (m2, _) = fit(&doubled, &params).unwrap();
        for (a, b) in base.coefficients().iter().zip(m2.coefficients()) {
            assert_eq!(2.0 * a, *b);
        }

        let centers = base.centers().to_vec();
        let mut order: Vec<usize> = (0..150).collect();
        order.reverse();
        order.swap(3, 77);
        let shuffled = Dataset::new(
            order.iter().map(|&i| xs[i].clone()).collect(),
            order.iter().map(|&i| ys[i]).collect(),
        )
        .unwrap();
        let (perm, _) = fit_with_centers(&shuffled, centers, &params).unwrap();
        for (a, b) in base.coefficients().iter().zip(perm.coefficients()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
