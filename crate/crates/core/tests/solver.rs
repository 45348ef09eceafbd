mod common;

use std::collections::HashMap;

use bigssa::design::{build_contrast_matrices, build_null_matrix};
use bigssa::rounding::rounded_points;
use bigssa::solver::{
    gcv_score, reduced_smoother_apply, select_smoothing, solve_coefficients, solve_system, CrossProducts,
};
use bigssa::{
    bayes_interval, compress, fit, fit_with, predict, select_knots_binsample, FitOptions, FitResult,
    KernelSpec, ModelSpec, RoundingSpec, Scenario, TestFunction,
};
use common::{dense_fit, dense_points, random_instance, rel_diff};
use nalgebra::{DMatrix, DVector};

fn instance(seed: u64) -> (Vec<f64>, DMatrix<f64>, ModelSpec, RoundingSpec) {
    let (kernels, p_cont, levels) = match seed % 3 {
        0 => (vec![KernelSpec::cubic(), KernelSpec::nominal(3).unwrap()], 1, vec![3]),
        1 => (vec![KernelSpec::cubic(), KernelSpec::polynomial(1).unwrap()], 2, vec![]),
        _ => (vec![KernelSpec::polynomial(2).unwrap(), KernelSpec::nominal(2).unwrap()], 1, vec![2]),
    };
    let (y, x) = random_instance(900 + seed, 120 + 10 * seed as usize, p_cont, &levels);
    let model = if seed & 1 == 0 {
        ModelSpec::tensor(kernels, 20, seed).unwrap()
    } else {
        ModelSpec::additive(kernels, 20, seed).unwrap()
    };
    let rounding = model.rounding(Some(0.05)).unwrap();
    (y, x, model, rounding)
}

fn coefficients(f: &FitResult) -> Vec<f64> {
    f.d_hat.iter().chain(&f.c_hat).copied().collect()
}

/// Index of each row's cell in the unique design.
fn cell_of_rows(points: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<usize> {
    let key = |m: &DMatrix<f64>, i: usize| -> Vec<u64> { m.row(i).iter().map(|v| v.to_bits()).collect() };
    let cells: HashMap<Vec<u64>, usize> = (0..z.nrows()).map(|t| (key(z, t), t)).collect();
    (0..points.nrows()).map(|i| cells[&key(points, i)]).collect()
}

#[test]
fn constant_response() {
    let n = 300;
    let c = 3.7;
    let x = DMatrix::from_fn(n, 1, |i, _| ((i * 53) % 211) as f64 / 7.0);
    let y = vec![c; n];
    let model = ModelSpec::additive(vec![KernelSpec::cubic()], 21, 0).unwrap();
    let f = fit(&y, &x, &RoundingSpec::continuous(0.01).unwrap(), &model).unwrap();
    let yhat = predict(&f, &x).unwrap();
    assert!(yhat.iter().all(|v| (v - c).abs() < 1e-10 * c));
    let rss: f64 = yhat.iter().map(|v| (v - c) * (v - c)).sum();
    assert!(rss <= 1e-16 * n as f64 * c * c);
    assert!(f.rss <= 1e-16 * n as f64 * c * c, "reported rss {}", f.rss);
    let c_norm = f.c_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(c_norm < 1e-8 * c);
}

#[test]
fn reduced_system_matches_dense_oracle() {
    for seed in 0..6 {
        let (y, x, model, rounding) = instance(seed);
        let f = fit(&y, &x, &rounding, &model).unwrap();
        let pts = dense_points(&x, &rounding);
        let oracle = dense_fit(&y, &pts, &f.knots, &model, f.lambda, &f.theta);

        assert!(rel_diff(&coefficients(&f), oracle.coef.as_slice()) <= 1e-8, "coef, seed {seed}");
        assert!(((f.gcv - oracle.gcv) / oracle.gcv).abs() <= 1e-8, "gcv, seed {seed}");
        assert!(((f.edf - oracle.edf) / oracle.edf).abs() <= 1e-8, "edf, seed {seed}");

        // predictions at the rounded training points
        let grid = rounded_points(&x, &rounding).unwrap();
        let yhat = f.evaluate_normalized(&grid);
        assert!(rel_diff(&yhat, oracle.fitted.as_slice()) <= 1e-8, "fitted, seed {seed}");

        // posterior variance
        let basis = f.basis(&grid);
        let fx = &oracle.pinv_factor * basis.transpose();
        let dense_var: Vec<f64> = fx.column_iter().map(|c| f.sigma2_hat * c.norm_squared()).collect();
        let var: Vec<f64> = f.posterior_sd_normalized(&grid).iter().map(|s| s * s).collect();
        assert!(rel_diff(&var, &dense_var) <= 1e-8, "posterior variance, seed {seed}");
    }
}

#[test]
fn smoother_expansion_and_gcv_parts() {
    for seed in 0..4 {
        let (y, x, model, rounding) = instance(seed);
        let f = fit(&y, &x, &rounding, &model).unwrap();
        let ud = compress(&y, &x, &rounding).unwrap();
        let knots = select_knots_binsample(&ud, model.knots.min(ud.u()), model.seed).unwrap();
        let null = build_null_matrix(&ud, &model).unwrap();
        let (contrast, gram) = build_contrast_matrices(&ud, &knots, &model).unwrap();
        let sys = solve_system(&ud, &null, &contrast, &gram, f.lambda, &f.theta).unwrap();
        let fitted = reduced_smoother_apply(&null, &contrast, &sys, &ud.y_sums).unwrap();

        let (d, c) = solve_coefficients(&ud, &null, &contrast, &gram, f.lambda, &f.theta).unwrap();
        assert_eq!(d, f.d_hat);
        assert_eq!(c, f.c_hat);

        // expanding the unique fitted values reproduces the dense smoother applied to y
        let pts = dense_points(&x, &rounding);
        let oracle = dense_fit(&y, &pts, &f.knots, &model, f.lambda, &f.theta);
        let dense_sy = &oracle.smoother * DVector::from_column_slice(&y);
        let cells = cell_of_rows(&rounded_points(&x, &rounding).unwrap(), &ud.z);
        let expanded: Vec<f64> = cells.iter().map(|&t| fitted[t]).collect();
        assert!(rel_diff(&expanded, dense_sy.as_slice()) <= 1e-8, "seed {seed}");

        // row-wise residual sum of squares equals the three-term form
        let rowwise: f64 = y.iter().zip(&cells).map(|(v, &t)| (v - fitted[t]).powi(2)).sum();
        let gcv = gcv_score(&ud, &fitted, sys.edf).unwrap();
        let n = y.len() as f64;
        let three_term = gcv * (n - sys.edf).powi(2) / n;
        assert!((rowwise - three_term).abs() <= 1e-8 * rowwise);
        assert!(((gcv - oracle.gcv) / oracle.gcv).abs() <= 1e-8);
    }
}

#[test]
fn penalty_domination() {
    let sc = Scenario {
        seed: 5,
        ..Scenario::new(TestFunction::A(2), 2000, Some(0.01), 21)
    };
    let data = bigssa::sim::generate_dataset(&sc).unwrap();
    let mean = data.y.iter().sum::<f64>() / data.y.len() as f64;
    let y: Vec<f64> = data.y.iter().map(|v| v - mean).collect();
    let model = sc.model().unwrap();
    let rounding = model.rounding(sc.r).unwrap();
    let c_norm = |lambda: f64| {
        let options = FitOptions {
            fixed: Some((lambda, 1.0)),
            ..FitOptions::default()
        };
        let f = fit_with(&y, &data.x, &rounding, &model, &options).unwrap();
        f.c_hat.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    assert!(c_norm(1e6) <= 1e-4 * c_norm(1e-4));
}

#[test]
fn lambda_matches_grid_search() {
    for seed in [1u64, 4] {
        let (y, x) = random_instance(300 + seed, 150, 1, &[]);
        let model = ModelSpec::additive(vec![KernelSpec::cubic()], 20, seed).unwrap();
        let rounding = model.rounding(Some(0.02)).unwrap();
        let f = fit(&y, &x, &rounding, &model).unwrap();
        let pts = dense_points(&x, &rounding);
        let (best, _) = (0..=200)
            .map(|i| -9.0 + 0.05 * i as f64)
            .map(|g| (g, dense_fit(&y, &pts, &f.knots, &model, 10f64.powf(g), &f.theta).gcv))
            .fold((f64::NAN, f64::INFINITY), |acc, (g, v)| if v < acc.1 { (g, v) } else { acc });
        assert!((f.lambda.log10() - best).abs() <= 0.05 + 1e-9, "seed {seed}: {} vs {best}", f.lambda.log10());
    }
}

#[test]
fn search_path_on_simulated_data() {
    let sc = Scenario {
        seed: 3,
        ..Scenario::new(TestFunction::A(1), 10_000, Some(0.01), 21)
    };
    let data = bigssa::sim::generate_dataset(&sc).unwrap();
    let model = sc.model().unwrap();
    let ud = compress(&data.y, &data.x, &model.rounding(sc.r).unwrap()).unwrap();
    let knots = select_knots_binsample(&ud, 21, sc.seed).unwrap();
    let null = build_null_matrix(&ud, &model).unwrap();
    let (contrast, gram) = build_contrast_matrices(&ud, &knots, &model).unwrap();
    let cp = CrossProducts::new(&ud, &null, &contrast, &gram).unwrap();
    let sel = select_smoothing(&cp, &Default::default()).unwrap();
    for end in [-9.0, 1.0] {
        let at_end = sel.path.iter().find(|p| p.log10_lambda == end).unwrap();
        assert!(sel.gcv <= at_end.gcv);
    }
    assert!(sel.path.iter().all(|p| p.gcv.is_finite() && p.gcv >= 0.0));

    let sys = solve_system(&ud, &null, &contrast, &gram, sel.lambda, &sel.theta).unwrap();
    let ynorm = ud.y_sums.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(sys.stationarity_residual() <= 1e-6 * ynorm);
}

#[test]
fn duplicated_rows_at_fixed_smoothing() {
    let (y, x) = random_instance(77, 90, 1, &[3]);
    let model = ModelSpec::additive(vec![KernelSpec::cubic(), KernelSpec::nominal(3).unwrap()], 15, 2).unwrap();
    let rounding = model.rounding(Some(0.05)).unwrap();
    let options = FitOptions {
        fixed: Some((1e-4, 1.0)),
        ..FitOptions::default()
    };
    let once = fit_with(&y, &x, &rounding, &model, &options).unwrap();
    let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
    let x2 = DMatrix::from_fn(180, 2, |i, j| x[(i % 90, j)]);
    let twice = fit_with(&y2, &x2, &rounding, &model, &options).unwrap();
    assert_eq!(twice.n, 2 * once.n);
    assert!(rel_diff(&coefficients(&twice), &coefficients(&once)) <= 1e-8);
    assert!((twice.edf - once.edf).abs() <= 1e-8 * once.edf);

    let pts = dense_points(&x2, &rounding);
    let oracle = dense_fit(&y2, &pts, &twice.knots, &model, twice.lambda, &twice.theta);
    assert!(rel_diff(&coefficients(&twice), oracle.coef.as_slice()) <= 1e-8);
}

#[test]
fn predictions_at_training_cells_and_between() {
    let (y, x) = random_instance(5, 400, 1, &[]);
    let model = ModelSpec::additive(vec![KernelSpec::cubic()], 21, 0).unwrap();
    let rounding = RoundingSpec::continuous(0.05).unwrap();
    let f = fit(&y, &x, &rounding, &model).unwrap();

    let ud = compress(&y, &x, &rounding).unwrap();
    let knots = select_knots_binsample(&ud, 21, 0).unwrap();
    let null = build_null_matrix(&ud, &model).unwrap();
    let (contrast, gram) = build_contrast_matrices(&ud, &knots, &model).unwrap();
    let sys = solve_system(&ud, &null, &contrast, &gram, f.lambda, &f.theta).unwrap();
    let fitted = reduced_smoother_apply(&null, &contrast, &sys, &ud.y_sums).unwrap();

    // raw inputs sitting exactly on the unique points
    let scale = f.scales[0].unwrap();
    let raw = DMatrix::from_fn(ud.u(), 1, |t, _| scale.from_unit(ud.z[(t, 0)]).clamp(scale.min, scale.max));
    let yhat = predict(&f, &raw).unwrap();
    for (a, b) in yhat.iter().zip(&fitted) {
        assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
    }

    // midway between grid points, and a tiny step either side
    let h = 1e-6 * (scale.max - scale.min);
    for k in 0..20 {
        let mid = scale.from_unit((k as f64 + 0.5) * 0.05);
        let at = |v: f64| predict(&f, &DMatrix::from_element(1, 1, v)).unwrap()[0];
        let centre = at(mid);
        assert!((centre - at(mid + h)).abs() <= 1e-4);
        assert!((centre - at(mid - h)).abs() <= 1e-4);
    }
}

#[test]
fn interval_examples() {
    let (y, x) = random_instance(8, 200, 1, &[2]);
    let model = ModelSpec::additive(vec![KernelSpec::cubic(), KernelSpec::nominal(2).unwrap()], 20, 0).unwrap();
    let f = fit(&y, &x, &model.rounding(Some(0.02)).unwrap(), &model).unwrap();
    let wide = bayes_interval(&f, &x, 0.99).unwrap();
    let narrow = bayes_interval(&f, &x, 0.95).unwrap();
    assert!(wide.iter().zip(&narrow).all(|(w, n)| w > n));

    let silent = FitResult {
        sigma2_hat: 0.0,
        ..f.clone()
    };
    assert!(bayes_interval(&silent, &x, 0.95).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn on_grid_data_matches_unrounded_fit() {
    let n = 300;
    let x = DMatrix::from_fn(n, 1, |i, _| ((i * 17) % 101) as f64 / 100.0);
    let y: Vec<f64> = (0..n).map(|i| (7.0 * x[(i, 0)]).cos() + 0.1 * (i as f64).sin()).collect();
    let model = ModelSpec::additive(vec![KernelSpec::cubic()], 21, 9).unwrap();
    let rounded = fit(&y, &x, &RoundingSpec::continuous(0.01).unwrap(), &model).unwrap();
    let exact = fit(&y, &x, &model.rounding(None).unwrap(), &model).unwrap();
    assert_eq!(rounded.u, exact.u);
    assert!(rel_diff(&coefficients(&rounded), &coefficients(&exact)) <= 1e-8);
}

#[test]
fn serialized_fit_predicts_identically() {
    let (y, x) = random_instance(12, 250, 2, &[3]);
    let model = ModelSpec::additive(
        vec![KernelSpec::cubic(), KernelSpec::cubic(), KernelSpec::nominal(3).unwrap()],
        25,
        0,
    )
    .unwrap();
    let f = fit(&y, &x, &model.rounding(Some(0.02)).unwrap(), &model).unwrap();
    let text = serde_json::to_string(&f).unwrap();
    let back: FitResult = serde_json::from_str(&text).unwrap();
    let a = predict(&f, &x).unwrap();
    let b = predict(&back, &x).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
    }
}
