use condexp::experiments::{
    binned_conditional_mean, generate_curve_dataset, lambda_dd, rho_spread, CurveSpec,
};
use condexp::{
    fit, fit_conditional_variance, run_experiment, Dataset, ExperimentConfig, FitParams, Point,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn max_abs_lambda_dd() -> f64 {
    (0..10_001)
        .map(|i| lambda_dd(i as f64 / 10_000.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn fitted_curve_agrees_with_bin_means() {
    let spec = CurveSpec::new(10_000, 7).unwrap();
    let data = generate_curve_dataset(&spec).unwrap();
    let bins = 50;
    let binned = binned_conditional_mean(&data, bins).unwrap();
    let params = ExperimentConfig::curve(10_000, 7)
        .fit_params(&data)
        .unwrap();
    let (model, _) = fit(&data, &params).unwrap();

    let centers: Vec<Point> = binned.centers.iter().map(|&c| Point::scalar(c)).collect();
    let pred = model.evaluate(&centers).unwrap();
    let width = binned.edges[1] - binned.edges[0];
    // Gaussian smoothing with exp(-d^2 / delta) has variance delta / 2, so its bias is
    // about delta / 4 * |lambda''|; averaging over a bin adds width^2 / 24 * |lambda''|.
    let bias = (params.delta / 4.0 + width * width / 24.0) * max_abs_lambda_dd();
    let mut worst = 0.0f64;
    for (k, &c) in binned.centers.iter().enumerate() {
        if !(0.05..=0.95).contains(&c) {
            continue;
        }
        let se = rho_spread(c, spec.c_const) / (binned.counts[k] as f64).sqrt();
        let gap = (pred[k] - binned.means[k]).abs();
        worst = worst.max(gap / (3.0 * se + bias));
    }
    assert!(worst <= 1.0, "worst gap ratio {worst}");
}

#[test]
fn homoskedastic_noise_variance() {
    let n = 6000;
    let s = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<Point> = (0..n).map(|_| Point::scalar(rng.random())).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|p| {
            let z: f64 = rng.sample(StandardNormal);
            (2.0 * p.coords()[0]).sin() + s * z
        })
        .collect();
    let data = Dataset::new(xs, ys).unwrap();
    let params = FitParams::new(0.002, 200).unwrap();
    let (mean, _) = fit(&data, &params).unwrap();
    let (var, _) = fit_conditional_variance(&data, &mean, &params).unwrap();
    let grid: Vec<Point> = (0..=90)
        .map(|i| Point::scalar(0.05 + i as f64 * 0.01))
        .collect();
    for v in var.evaluate(&grid).unwrap() {
        assert!((v - s * s).abs() <= 0.25 * s * s, "{v}");
    }
}

#[test]
fn reports_echo_config_and_repeat() {
    let cfg = ExperimentConfig {
        eval_points: 21,
        ..ExperimentConfig::curve(400, 3)
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.per_point, b.per_point);
    assert_eq!(a.per_point_csv(), b.per_point_csv());
    let json: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    assert_eq!(json["params"]["kind"], "curve");
    assert_eq!(json["params"]["n"], 400);
    assert_eq!(json["params"]["seed"], 3);
    assert!(json["rmse_vs_truth"].as_f64().unwrap() >= 0.0);
    assert!(json["rmse_vs_smoothed_truth"].as_f64().unwrap() >= 0.0);
}

#[test]
fn image_report_covers_every_pixel() {
    let cfg = ExperimentConfig::image(1, 16, 0.1, 2);
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.per_point.len(), 256);
    let csv = r.per_point_csv();
    assert!(csv.starts_with("x1,x2,truth,smoothed_truth,prediction\n"));
    assert_eq!(csv.lines().count(), 257);
}
