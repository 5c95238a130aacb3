//! Smooth synthetic image on a pixel lattice with additive Gaussian noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit, FitParams, FitReport, RkhsModel};
use crate::operators::Dataset;
use crate::point::Point;

/// `cos(2 pi kappa x1) + exp(sin(2 pi kappa x2))`.
pub fn image_truth(x1: f64, x2: f64, kappa: u32) -> f64 {
    let k = 2.0 * PI * kappa as f64;
    (k * x1).cos() + (k * x2).sin().exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageSpec {
    pub kappa: u32,
    /// Pixels per side.
    pub grid: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl ImageSpec {
    fn validate(&self) -> Result<()> {
        if self.kappa < 1 {
            return Err(Error::invalid("kappa", "must be at least 1"));
        }
        if self.grid < 2 {
            return Err(Error::invalid(
                "grid",
                format!("need at least 2 pixels per side, got {}", self.grid),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid(
                "noise std",
                format!("{} is not a nonnegative number", self.noise_std),
            ));
        }
        Ok(())
    }
}

/// Pixel centers `((i + 1/2) / g, (j + 1/2) / g)`, with `x1` varying fastest.
pub fn lattice(grid: usize) -> Vec<Point> {
    let h = 1.0 / grid as f64;
    let mut out = Vec::with_capacity(grid * grid);
    for j in 0..grid {
        for i in 0..grid {
            out.push(Point::new(vec![(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]).expect("finite"));
        }
    }
    out
}

pub fn generate_image_dataset(spec: &ImageSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let xs = lattice(spec.grid);
    let ys = xs
        .iter()
        .map(|p| {
            let z: f64 = rng.sample(StandardNormal);
            let c = p.coords();
            image_truth(c[0], c[1], spec.kappa) + spec.noise_std * z
        })
        .collect();
    Dataset::new(xs, ys)
}

/// Fits every channel of a multi-channel image (RGB, say) as its own scalar problem
/// on the shared pixel positions.
pub fn fit_channels(
    pixels: &[Point],
    channels: &[Vec<f64>],
    params: &FitParams,
) -> Result<Vec<(RkhsModel, FitReport)>> {
    if channels.is_empty() {
        return Err(Error::Empty("channel list"));
    }
    channels
        .iter()
        .map(|c| fit(&Dataset::new(pixels.to_vec(), c.clone())?, params))
        .collect()
}
