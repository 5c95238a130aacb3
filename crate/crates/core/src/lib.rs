//! Kernel estimation of conditional expectations `E[Y | X = x]` from samples.
//!
//! The estimator represents the regression function in the span of a kernel
//! evaluated at `M` centers and finds coefficients `a` by solving the regularized
//! least squares problem `min |P K a - P G y|^2 + eps |a|^2`, where `P` is a
//! Markov-normalized Gaussian over the samples and `G` a Gaussian smoother.
//!
//! ```
//! use condexp::{fit, Dataset, FitParams, Point};
//!
//! let xs: Vec<Point> = (0..200).map(|i| Point::scalar(i as f64 / 199.0)).collect();
//! let ys: Vec<f64> = xs.iter().map(|p| 2.0 * p.coords()[0]).collect();
//! let data = Dataset::new(xs, ys).unwrap();
//! let (model, _) = fit(&data, &FitParams::new(0.01, 50).unwrap()).unwrap();
//! let y = model.evaluate(&[Point::scalar(0.5)]).unwrap();
//! assert!((y[0] - 1.0).abs() < 0.05);
//! ```

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod kernel;
pub mod operators;
pub mod point;
pub mod solver;

pub use error::{Error, ErrorKind, Result};
pub use estimator::{
    fit, fit_conditional_variance, fit_with_centers, load_model, model_from_json, model_to_json,
    save_model, FitMeta, FitParams, FitReport, Regularization, RkhsModel, MODEL_VERSION,
};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentKind, ExperimentReport};
pub use kernel::{
    gaussian_kernel, heuristic_bandwidth, rkhs_inner, Kernel, KernelFamily, KernelSpec,
    OperatorMatrix,
};
pub use operators::{assemble_problem, select_centers, CenterSelection, Dataset, InverseProblem};
pub use point::{EmpiricalMeasure, Point};
pub use solver::{solve_regularized, svd, SolverConfig, SvdFactors};
