use std::f64::consts::TAU;

use bigssa::sim::generate_replicate;
use bigssa::{eta_a, eta_b, generate_dataset, run_benchmark, true_mse, Scenario, TestFunction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn a_ref(k: f64, x: f64) -> f64 {
    (TAU * k * x).sin() + x - 0.5
}

fn b_ref(k: f64, x1: f64, x2: f64) -> f64 {
    let wave = (TAU * k * x1).sin() + (TAU * k * x2).cos() + 2.0 * (TAU * (x1 - x2)).sin();
    0.25 * wave + x1 + x2 - 1.0
}

#[test]
fn test_functions_match_retyped_formulas() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (x1, x2): (f64, f64) = (rng.random(), rng.random());
        for k in 1..=4u8 {
            let kf = k as f64;
            assert!((eta_a(k, x1) - a_ref(kf, x1)).abs() < 1e-12);
            assert!((eta_b(k, x1, x2) - b_ref(kf, x1, x2)).abs() < 1e-12);
            assert_eq!(TestFunction::A(k).eval(&[x1]), eta_a(k, x1));
            assert_eq!(TestFunction::B(k).eval(&[x1, x2]), eta_b(k, x1, x2));
            let diag = 2.0 * x1 - 1.0 + ((TAU * kf * x1).sin() + (TAU * kf * x1).cos()) / 4.0;
            assert!((eta_b(k, x1, x1) - diag).abs() < 1e-12);
        }
    }
}

#[test]
fn noise_and_design_distribution() {
    let n = 100_000;
    let sc = Scenario {
        seed: 11,
        sigma: 1.5,
        ..Scenario::new(TestFunction::A(2), n, None, 21)
    };
    let data = generate_dataset(&sc).unwrap();
    let mean_e = data.y.iter().zip(&data.eta).map(|(y, e)| y - e).sum::<f64>() / n as f64;
    assert!(mean_e.abs() < 4.0 * sc.sigma / (n as f64).sqrt(), "{mean_e}");

    let mut x: Vec<f64> = data.x.column(0).iter().copied().collect();
    x.sort_by(f64::total_cmp);
    let ks = x
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n as f64 - v).max(v - i as f64 / n as f64))
        .fold(0.0, f64::max);
    assert!(ks <= 1.63 / (n as f64).sqrt(), "{ks}");
    assert!(x[0] >= 0.0 && x[n - 1] < 1.0);
    for (i, e) in data.eta.iter().enumerate() {
        assert_eq!(*e, eta_a(2, data.x[(i, 0)]));
    }
}

#[test]
fn replicates_differ_and_repeat() {
    let sc = Scenario::new(TestFunction::B(3), 500, Some(0.02), 25);
    let a = generate_replicate(&sc, 2).unwrap();
    assert_eq!(a, generate_replicate(&sc, 2).unwrap());
    assert_ne!(a.x, generate_replicate(&sc, 3).unwrap().x);
    assert_ne!(a.x, generate_replicate(&Scenario { seed: 1, ..sc }, 2).unwrap().x);
    assert!(generate_dataset(&Scenario { n: 1, ..sc }).is_err());
}

#[test]
fn mse_matches_two_pass_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 10_000;
    let eta: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let fitted: Vec<f64> = eta.iter().map(|e| e + 0.1 * (rng.random::<f64>() - 0.5)).collect();
    let diffs: Vec<f64> = eta.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let mut reference = 0.0;
    for d in &diffs {
        reference += d * d;
    }
    reference /= n as f64;
    let got = true_mse(&eta, &fitted).unwrap();
    assert!((got - reference).abs() <= 1e-12 * reference);
    let offset: Vec<f64> = eta.iter().map(|e| e - 0.3).collect();
    assert!((true_mse(&eta, &offset).unwrap() - 0.09).abs() < 1e-14);
    assert!(true_mse(&[], &[]).is_err());
}

#[test]
fn benchmark_rows_are_reproducible() {
    let sc = Scenario {
        replications: 3,
        seed: 4,
        ..Scenario::new(TestFunction::B(1), 2000, Some(0.02), 30)
    };
    let a = run_benchmark(&sc).unwrap();
    let b = run_benchmark(&sc).unwrap();
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.scenario, sc);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!((ra.u, ra.mse, ra.gcv, ra.lambda, ra.edf), (rb.u, rb.mse, rb.gcv, rb.lambda, rb.edf));
        assert_eq!((ra.function, ra.n, ra.r, ra.q), (sc.function, sc.n, sc.r, sc.q));
        assert!(ra.runtime_s >= 0.0);
    }
    assert_eq!(a.median_mse, b.median_mse);
    let mut mse: Vec<f64> = a.rows.iter().map(|r| r.mse).collect();
    mse.sort_by(f64::total_cmp);
    assert_eq!(a.median_mse, mse[1]);
}

#[test]
fn rounded_fit_is_faster_than_unrounded() {
    let base = Scenario {
        seed: 2,
        ..Scenario::new(TestFunction::A(1), 100_000, None, 21)
    };
    let exact = run_benchmark(&base).unwrap();
    let rounded = run_benchmark(&Scenario { r: Some(0.01), ..base }).unwrap();
    assert!(
        rounded.median_runtime_s < exact.median_runtime_s,
        "{} vs {}",
        rounded.median_runtime_s,
        exact.median_runtime_s
    );
    assert!(rounded.rows.iter().all(|row| row.u <= 101));
}

#[test]
fn fine_rounding_costs_little_accuracy() {
    let base = Scenario {
        seed: 5,
        ..Scenario::new(TestFunction::A(1), 50_000, None, 21)
    };
    let exact = run_benchmark(&base).unwrap().median_mse;
    for r in [0.01, 0.02] {
        let rounded = run_benchmark(&Scenario { r: Some(r), ..base }).unwrap().median_mse;
        assert!(rounded <= 2.0 * exact, "r = {r}: {rounded} vs {exact}");
    }
}

#[test]
fn mse_falls_with_sample_size() {
    let medians: Vec<f64> = [10_000, 50_000, 100_000]
        .into_iter()
        .map(|n| {
            let sc = Scenario {
                seed: 8,
                ..Scenario::new(TestFunction::A(1), n, Some(0.01), 21)
            };
            run_benchmark(&sc).unwrap().median_mse
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
