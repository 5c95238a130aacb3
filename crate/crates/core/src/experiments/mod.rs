//! Reproducible experiments: image denoising, principal-curve recovery, conditional
//! variance recovery, and the sample-size convergence study.
//!
//! Errors are measured on an interior window that drops a margin near the boundary of
//! the unit cube, where Markov normalization is biased.

pub mod binning;
pub mod curve;
pub mod image;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{
    fit, fit_conditional_variance, write_atomic, FitParams, FitReport, Regularization, RkhsModel,
};
use crate::kernel::{heuristic_bandwidth, KernelFamily, KernelSpec};
use crate::operators::{build_smoother_at, smoothed_truth, Dataset};
use crate::point::Point;

pub use binning::{binned_conditional_mean, BinnedMean};
pub use curve::{
    default_c_const, generate_curve_dataset, lambda_curve, lambda_dd, rho_spread, CurveSpec,
    SampleDesign,
};
pub use image::{generate_image_dataset, image_truth, lattice, ImageSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Image,
    Curve,
    Variance,
    Convergence,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(ExperimentKind::Image),
            "curve" => Ok(ExperimentKind::Curve),
            "variance" => Ok(ExperimentKind::Variance),
            "convergence" => Ok(ExperimentKind::Convergence),
            other => Err(Error::invalid(
                "experiment",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

/// Image noise level used when none is given.
pub const DEFAULT_IMAGE_NOISE: f64 = 0.25;
/// Fraction of each side excluded from error metrics.
pub const DEFAULT_MARGIN: f64 = 0.05;
/// Kernel centers for the one-dimensional experiments.
pub const DEFAULT_CURVE_CENTERS: usize = 200;
/// Evaluation grid size for the one-dimensional experiments.
pub const DEFAULT_EVAL_POINTS: usize = 201;
/// Smoothing bandwidth of the image experiment, in squared pixel widths.
pub const IMAGE_DELTA_PIXELS: f64 = 2.0;
/// The image experiment places a kernel center on every fourth pixel.
pub const IMAGE_CENTER_STRIDE: usize = 4;
/// Smoothing bandwidth of the variance experiment. The spread surface has cusps
/// about 0.01 wide, much narrower than the features of the mean curve.
pub const VARIANCE_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Sample count of the curve and variance experiments.
    pub n: usize,
    /// Sample counts of the convergence study.
    pub sizes: Vec<usize>,
    /// Seeds per size in the convergence study, `seed, seed + 1, ...`.
    pub seeds: usize,
    /// Sample design of the curve and variance experiments.
    pub design: SampleDesign,
    pub kappa: u32,
    pub grid: usize,
    pub noise_std: f64,
    pub kernel_family: KernelFamily,
    /// `None` picks the per-experiment default.
    pub m: Option<usize>,
    pub delta: Option<f64>,
    pub markov_bw: Option<f64>,
    pub kernel_bw: Option<f64>,
    /// Absolute regularization; `None` means `1e-6 * s_1^2`.
    pub epsilon: Option<f64>,
    pub eval_points: usize,
    pub margin: f64,
}

impl ExperimentConfig {
    fn base(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seed: 0,
            n: 4000,
            sizes: vec![250, 1000, 4000],
            seeds: 5,
            design: SampleDesign::Uniform,
            kappa: 2,
            grid: 50,
            noise_std: DEFAULT_IMAGE_NOISE,
            kernel_family: KernelFamily::Diffusion,
            m: None,
            delta: None,
            markov_bw: None,
            kernel_bw: None,
            epsilon: None,
            eval_points: DEFAULT_EVAL_POINTS,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn new(kind: ExperimentKind) -> Self {
        let mut c = Self::base(kind);
        if kind == ExperimentKind::Variance {
            c.n = 8000;
        }
        c
    }

    pub fn curve(n: usize, seed: u64) -> Self {
        ExperimentConfig {
            n,
            seed,
            ..Self::new(ExperimentKind::Curve)
        }
    }

    pub fn variance(n: usize, seed: u64) -> Self {
        ExperimentConfig {
            n,
            seed,
            ..Self::new(ExperimentKind::Variance)
        }
    }

    pub fn image(kappa: u32, grid: usize, noise_std: f64, seed: u64) -> Self {
        ExperimentConfig {
            kappa,
            grid,
            noise_std,
            seed,
            ..Self::new(ExperimentKind::Image)
        }
    }

    pub fn convergence(sizes: Vec<usize>, seeds: usize) -> Self {
        ExperimentConfig {
            sizes,
            seeds,
            ..Self::new(ExperimentKind::Convergence)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin < 0.5) {
            return Err(Error::invalid(
                "margin",
                format!("{} is outside [0, 0.5)", self.margin),
            ));
        }
        if self.eval_points < 2 {
            return Err(Error::invalid("eval points", "need at least 2"));
        }
        if self.kind == ExperimentKind::Convergence && (self.sizes.is_empty() || self.seeds == 0) {
            return Err(Error::invalid(
                "convergence",
                "need at least one size and one seed",
            ));
        }
        Ok(())
    }

    /// Fills unset parameters. `delta` defaults to the median heuristic for the curve
    /// and convergence experiments, to [`VARIANCE_DELTA`] for the variance experiment
    /// and to [`IMAGE_DELTA_PIXELS`] squared pixel widths for images. The Markov and
    /// kernel bandwidths default to `delta`.
    pub fn fit_params(&self, data: &Dataset) -> Result<FitParams> {
        let delta = match (self.delta, self.kind) {
            (Some(d), _) => d,
            (None, ExperimentKind::Image) => IMAGE_DELTA_PIXELS / (self.grid * self.grid) as f64,
            (None, ExperimentKind::Variance) => VARIANCE_DELTA,
            (None, _) => heuristic_bandwidth(data.xs())?,
        };
        let m = match (self.m, self.kind) {
            (Some(m), _) => m,
            (None, ExperimentKind::Image) => data.len().div_ceil(IMAGE_CENTER_STRIDE),
            (None, _) => DEFAULT_CURVE_CENTERS.min(data.len()),
        };
        Ok(FitParams {
            kernel: KernelSpec::new(self.kernel_family, self.kernel_bw.unwrap_or(delta))?,
            delta,
            markov_bw: self.markov_bw.unwrap_or(delta),
            epsilon: self
                .epsilon
                .map_or_else(Regularization::default, Regularization::Absolute),
            m,
            centers: Default::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRow {
    pub x: Vec<f64>,
    pub truth: f64,
    pub smoothed_truth: f64,
    pub prediction: f64,
    pub interior: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub rmse_vs_smoothed_truth: Vec<f64>,
    pub rmse_vs_truth: Vec<f64>,
    pub median_rmse_vs_smoothed_truth: f64,
    pub median_rmse_vs_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub delta: f64,
    pub markov_bw: f64,
    pub kernel_family: KernelFamily,
    pub kernel_bw: f64,
    pub epsilon: f64,
    pub n: usize,
    pub m: usize,
    pub residual_norm: f64,
    pub rhs_norm: f64,
    pub effective_rank: usize,
}

impl FitSummary {
    fn new(model: &RkhsModel, report: &FitReport) -> Self {
        let meta = model.fit_meta();
        FitSummary {
            delta: meta.delta,
            markov_bw: meta.markov_bw,
            kernel_family: model.kernel_spec().family,
            kernel_bw: model.kernel_spec().bandwidth,
            epsilon: meta.epsilon,
            n: meta.n,
            m: meta.m,
            residual_norm: report.residual_norm,
            rhs_norm: report.rhs_norm,
            effective_rank: report.effective_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub params: ExperimentConfig,
    /// Fits performed, in order (the variance experiment fits the mean first).
    pub fits: Vec<FitSummary>,
    /// Interior RMSE of the prediction against the analytic target.
    pub rmse_vs_truth: f64,
    /// Interior RMSE against the target smoothed by `G_delta` over the samples.
    pub rmse_vs_smoothed_truth: f64,
    /// `rmse_vs_truth` divided by the interior RMS of the target.
    pub relative_rmse_vs_truth: f64,
    pub per_point: Vec<PointRow>,
    pub convergence: Option<Vec<ConvergenceRow>>,
    pub runtime_ms: u64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-point table with header `x1[,x2],truth,smoothed_truth,prediction`.
    pub fn per_point_csv(&self) -> String {
        let dim = self.per_point.first().map_or(1, |r| r.x.len());
        let mut out = String::new();
        for k in 1..=dim {
            let _ = write!(out, "x{k},");
        }
        out.push_str("truth,smoothed_truth,prediction\n");
        for r in &self.per_point {
            for x in &r.x {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{},{},{}", r.truth, r.smoothed_truth, r.prediction);
        }
        out
    }

    /// `n,median_rmse_vs_smoothed_truth,median_rmse_vs_truth` for the convergence study.
    pub fn convergence_csv(&self) -> Option<String> {
        let rows = self.convergence.as_ref()?;
        let mut out = String::from("n,median_rmse_vs_smoothed_truth,median_rmse_vs_truth\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{}",
                r.n, r.median_rmse_vs_smoothed_truth, r.median_rmse_vs_truth
            );
        }
        Some(out)
    }

    /// Writes `report.json`, `points.csv`, and for the convergence study `convergence.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_atomic(&dir.join("report.json"), self.to_json()?.as_bytes())?;
        write_atomic(&dir.join("points.csv"), self.per_point_csv().as_bytes())?;
        if let Some(csv) = self.convergence_csv() {
            write_atomic(&dir.join("convergence.csv"), csv.as_bytes())?;
        }
        Ok(())
    }
}

fn is_interior(p: &Point, margin: f64) -> bool {
    p.coords().iter().all(|&c| c >= margin && c <= 1.0 - margin)
}

struct Metrics {
    rmse_vs_truth: f64,
    rmse_vs_smoothed_truth: f64,
    relative_rmse_vs_truth: f64,
}

fn interior_metrics(rows: &[PointRow]) -> Result<Metrics> {
    let inner: Vec<&PointRow> = rows.iter().filter(|r| r.interior).collect();
    if inner.is_empty() {
        return Err(Error::invalid(
            "margin",
            "no evaluation points in the interior",
        ));
    }
    let n = inner.len() as f64;
    let ms =
        |f: &dyn Fn(&PointRow) -> f64| (inner.iter().map(|r| f(r).powi(2)).sum::<f64>() / n).sqrt();
    let rmse_vs_truth = ms(&|r| r.prediction - r.truth);
    Ok(Metrics {
        rmse_vs_truth,
        rmse_vs_smoothed_truth: ms(&|r| r.prediction - r.smoothed_truth),
        relative_rmse_vs_truth: rmse_vs_truth / ms(&|r| r.truth),
    })
}

/// Builds the per-point table for a fitted model against an analytic target.
fn tabulate(
    data: &Dataset,
    model: &RkhsModel,
    delta: f64,
    eval: &[Point],
    margin: f64,
    target: impl Fn(&Point) -> f64,
) -> Result<Vec<PointRow>> {
    let measure = data.sampling_measure();
    let truth_at_samples: Vec<f64> = data.xs().iter().map(&target).collect();
    let smoother = build_smoother_at(eval, &measure, delta)?;
    let smoothed = smoothed_truth(&truth_at_samples, &smoother, &measure)?;
    let pred = model.evaluate(eval)?;
    Ok(eval
        .iter()
        .zip(smoothed.values)
        .zip(pred)
        .map(|((p, s), y)| PointRow {
            x: p.coords().to_vec(),
            truth: target(p),
            smoothed_truth: s,
            prediction: y,
            interior: is_interior(p, margin),
        })
        .collect())
}

fn unit_grid(points: usize) -> Vec<Point> {
    (0..points)
        .map(|i| Point::scalar(i as f64 / (points - 1) as f64))
        .collect()
}

struct Outcome {
    fits: Vec<FitSummary>,
    rows: Vec<PointRow>,
}

fn curve_spec(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<CurveSpec> {
    Ok(CurveSpec {
        design: cfg.design,
        ..CurveSpec::new(n, seed)?
    })
}

fn run_curve(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Outcome> {
    let spec = curve_spec(cfg, n, seed)?;
    let data = generate_curve_dataset(&spec)?;
    let params = cfg.fit_params(&data)?;
    let (model, report) = fit(&data, &params)?;
    let rows = tabulate(
        &data,
        &model,
        params.delta,
        &unit_grid(cfg.eval_points),
        cfg.margin,
        |p| lambda_curve(p.coords()[0]),
    )?;
    Ok(Outcome {
        fits: vec![FitSummary::new(&model, &report)],
        rows,
    })
}

fn run_variance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = curve_spec(cfg, cfg.n, cfg.seed)?;
    let data = generate_curve_dataset(&spec)?;
    let params = cfg.fit_params(&data)?;
    let (mean, mean_report) = fit(&data, &params)?;
    let (var, var_report) = fit_conditional_variance(&data, &mean, &params)?;
    let c = spec.c_const;
    let rows = tabulate(
        &data,
        &var,
        params.delta,
        &unit_grid(cfg.eval_points),
        cfg.margin,
        |p| rho_spread(p.coords()[0], c).powi(2),
    )?;
    Ok(Outcome {
        fits: vec![
            FitSummary::new(&mean, &mean_report),
            FitSummary::new(&var, &var_report),
        ],
        rows,
    })
}

fn run_image(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = ImageSpec {
        kappa: cfg.kappa,
        grid: cfg.grid,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
    };
    let data = generate_image_dataset(&spec)?;
    let params = cfg.fit_params(&data)?;
    let (model, report) = fit(&data, &params)?;
    let kappa = cfg.kappa;
    let rows = tabulate(&data, &model, params.delta, data.xs(), cfg.margin, |p| {
        image_truth(p.coords()[0], p.coords()[1], kappa)
    })?;
    Ok(Outcome {
        fits: vec![FitSummary::new(&model, &report)],
        rows,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Runs the curve experiment over every size and seed with one `delta` for all fits,
/// taken from the largest dataset at the base seed when not given.
fn run_convergence(cfg: &ExperimentConfig) -> Result<(Outcome, Vec<ConvergenceRow>)> {
    let mut cfg = cfg.clone();
    if cfg.delta.is_none() {
        let largest = cfg.sizes.iter().copied().max().expect("validated");
        let data = generate_curve_dataset(&curve_spec(&cfg, largest, cfg.seed)?)?;
        cfg.delta = Some(heuristic_bandwidth(data.xs())?);
    }
    let cfg = &cfg;
    let jobs: Vec<(usize, u64)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.seeds as u64).map(move |s| (n, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(n, s)| {
            let out = run_curve(cfg, n, cfg.seed + s)?;
            let m = interior_metrics(&out.rows)?;
            Ok((out, m))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = Vec::new();
    for (k, &n) in cfg.sizes.iter().enumerate() {
        let chunk = &results[k * cfg.seeds..(k + 1) * cfg.seeds];
        let vs_smoothed: Vec<f64> = chunk
            .iter()
            .map(|(_, m)| m.rmse_vs_smoothed_truth)
            .collect();
        let vs_truth: Vec<f64> = chunk.iter().map(|(_, m)| m.rmse_vs_truth).collect();
        table.push(ConvergenceRow {
            n,
            median_rmse_vs_smoothed_truth: median(&vs_smoothed),
            median_rmse_vs_truth: median(&vs_truth),
            rmse_vs_smoothed_truth: vs_smoothed,
            rmse_vs_truth: vs_truth,
        });
    }
    // Per-point table and fit summaries from the first seed of the largest size.
    let last = results.len() - cfg.seeds;
    let (out, _) = results.into_iter().nth(last).expect("non-empty");
    Ok((out, table))
}

/// Generates data, fits, and scores one experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (outcome, convergence) = match cfg.kind {
        ExperimentKind::Curve => (run_curve(cfg, cfg.n, cfg.seed)?, None),
        ExperimentKind::Variance => (run_variance(cfg)?, None),
        ExperimentKind::Image => (run_image(cfg)?, None),
        ExperimentKind::Convergence => {
            let (o, t) = run_convergence(cfg)?;
            (o, Some(t))
        }
    };
    let metrics = interior_metrics(&outcome.rows)?;
    let (rmse_vs_truth, rmse_vs_smoothed_truth) = match &convergence {
        Some(t) => {
            let last = t.last().expect("non-empty");
            (
                last.median_rmse_vs_truth,
                last.median_rmse_vs_smoothed_truth,
            )
        }
        None => (metrics.rmse_vs_truth, metrics.rmse_vs_smoothed_truth),
    };
    Ok(ExperimentReport {
        params: cfg.clone(),
        fits: outcome.fits,
        rmse_vs_truth,
        rmse_vs_smoothed_truth,
        relative_rmse_vs_truth: metrics.relative_rmse_vs_truth,
        per_point: outcome.rows,
        convergence,
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}
