//! Principal curve with heteroskedastic spread: `y = lambda(x) + rho(x) z`, `z ~ N(0, 1)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::Dataset;
use crate::point::Point;

/// Grid size used to locate `max |lambda''|` on `[0, 1]`.
pub const C_CONST_GRID: usize = 10_001;

/// `exp(sin(2 pi x)^2)`.
pub fn lambda_curve(x: f64) -> f64 {
    (2.0 * PI * x).sin().powi(2).exp()
}

/// Second derivative of [`lambda_curve`]: `4 pi^2 lambda(x) [2 - (cos(4 pi x) - 1)^2]`.
pub fn lambda_dd(x: f64) -> f64 {
    let c = (4.0 * PI * x).cos() - 1.0;
    4.0 * PI * PI * lambda_curve(x) * (2.0 - c * c)
}

/// `4 / max |lambda''|`, the maximum taken over an evenly spaced grid of `[0, 1]`.
pub fn default_c_const() -> f64 {
    let max = (0..C_CONST_GRID)
        .map(|i| lambda_dd(i as f64 / (C_CONST_GRID - 1) as f64).abs())
        .fold(0.0, f64::max);
    4.0 / max
}

/// Spread `3 / (2 + C |lambda''(x)|)`, which ranges over `[0.5, 1.5]`.
pub fn rho_spread(x: f64, c_const: f64) -> f64 {
    3.0 / (2.0 + c_const * lambda_dd(x).abs())
}

/// How the sample abscissae cover `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleDesign {
    /// Independent uniform draws.
    #[default]
    Uniform,
    /// Golden-ratio sequence `frac(u + k / phi)` with a seeded offset `u`.
    LowDiscrepancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSpec {
    pub n: usize,
    pub seed: u64,
    pub c_const: f64,
    pub design: SampleDesign,
}

impl CurveSpec {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        let spec = CurveSpec {
            n,
            seed,
            c_const: default_c_const(),
            design: SampleDesign::Uniform,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::invalid(
                "curve sample count",
                format!("need n >= 10, got {}", self.n),
            ));
        }
        if !(self.c_const.is_finite() && self.c_const > 0.0) {
            return Err(Error::invalid(
                "C",
                format!("{} is not positive", self.c_const),
            ));
        }
        Ok(())
    }
}

/// `x ~ U[0, 1]` (or the low-discrepancy design), `y = lambda(x) + rho(x) z`, from a
/// generator seeded with `spec.seed`.
pub fn generate_curve_dataset(spec: &CurveSpec) -> Result<Dataset> {
    generate_scaled(spec, 1.0)
}

fn generate_scaled(spec: &CurveSpec, noise_scale: f64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset: f64 = match spec.design {
        SampleDesign::Uniform => 0.0,
        SampleDesign::LowDiscrepancy => rng.random(),
    };
    let step = (5f64.sqrt() - 1.0) / 2.0;
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for k in 0..spec.n {
        let x: f64 = match spec.design {
            SampleDesign::Uniform => rng.random(),
            SampleDesign::LowDiscrepancy => (offset + k as f64 * step).fract(),
        };
        let z: f64 = rng.sample(StandardNormal);
        xs.push(Point::scalar(x));
        ys.push(lambda_curve(x) + noise_scale * rho_spread(x, spec.c_const) * z);
    }
    Dataset::new(xs, ys)
}
