use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::Dataset;

/// Per-bin averages of the responses of a one-dimensional dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedMean {
    /// `bins + 1` edges spanning the observed input range.
    pub edges: Vec<f64>,
    pub centers: Vec<f64>,
    pub means: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Brute-force step-function estimate of the conditional mean; the last bin is closed.
pub fn binned_conditional_mean(data: &Dataset, bins: usize) -> Result<BinnedMean> {
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: data.dim(),
        });
    }
    if bins == 0 {
        return Err(Error::invalid("bins", "need at least one bin"));
    }
    let xs: Vec<f64> = data.xs().iter().map(|p| p.coords()[0]).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for (x, y) in xs.iter().zip(data.ys()) {
        let b = if width > 0.0 {
            (((x - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        sums[b] += y;
        counts[b] += 1;
    }
    if let Some(b) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyBin { bin: b, bins });
    }
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok(BinnedMean {
        centers: edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect(),
        edges,
        means: sums
            .iter()
            .zip(&counts)
            .map(|(s, c)| s / *c as f64)
            .collect(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::curve::{generate_curve_dataset, lambda_curve, rho_spread, CurveSpec};
    use crate::point::Point;

    fn grid_data(n: usize, f: impl Fn(f64) -> f64) -> Dataset {
        let xs: Vec<Point> = (0..n)
            .map(|i| Point::scalar(i as f64 / (n - 1) as f64))
            .collect();
        let ys = xs.iter().map(|p| f(p.coords()[0])).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn constant_and_identity() {
        let b = binned_conditional_mean(&grid_data(101, |_| 3.5), 7).unwrap();
        assert!(b.means.iter().all(|m| (m - 3.5).abs() < 1e-12));
        let b = binned_conditional_mean(&grid_data(1000, |x| x), 10).unwrap();
        for (m, c) in b.means.iter().zip(&b.centers) {
            assert!((m - c).abs() <= 0.05);
        }
        assert_eq!(b.counts.iter().sum::<usize>(), 1000);
    }

    #[test]
    fn empty_bin_is_an_error() {
        let xs = vec![Point::scalar(0.0), Point::scalar(0.05), Point::scalar(1.0)];
        let d = Dataset::new(xs, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            binned_conditional_mean(&d, 4),
            Err(Error::EmptyBin { bin: 1, .. })
        ));
        assert!(binned_conditional_mean(&d, 0).is_err());
    }

    #[test]
    fn curve_bins_track_lambda() {
        let spec = CurveSpec::new(10_000, 5).unwrap();
        let d = generate_curve_dataset(&spec).unwrap();
        let bins = 50;
        let b = binned_conditional_mean(&d, bins).unwrap();
        let se_scale = ((d.len() / bins) as f64).sqrt();
        let mut ok = 0;
        for (m, c) in b.means.iter().zip(&b.centers) {
            if (m - lambda_curve(*c)).abs() <= 3.0 * rho_spread(*c, spec.c_const) / se_scale {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * bins as f64, "{ok}/{bins}");
    }
}
