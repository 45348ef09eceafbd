//! Simulation harness: test functions, seeded data generation, true MSE and
//! timed benchmark replications.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::design::ModelSpec;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::linalg::median;
use crate::solver::{fit, predict};

/// `x - 0.5 + sin(2 k pi x)`.
pub fn eta_a(k: u8, x: f64) -> f64 {
    x - 0.5 + (2.0 * k as f64 * PI * x).sin()
}

/// `x1 + x2 - 1 + [sin(2 k pi x1) + cos(2 k pi x2) + 2 sin(2 pi (x1 - x2))] / 4`.
pub fn eta_b(k: u8, x1: f64, x2: f64) -> f64 {
    let kk = 2.0 * k as f64 * PI;
    x1 + x2 - 1.0 + ((kk * x1).sin() + (kk * x2).cos() + 2.0 * (2.0 * PI * (x1 - x2)).sin()) / 4.0
}

/// One of the eight test functions `A1..A4` (one predictor) and `B1..B4` (two).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TestFunction {
    A(u8),
    B(u8),
}

impl TestFunction {
    pub fn p(&self) -> usize {
        match self {
            TestFunction::A(_) => 1,
            TestFunction::B(_) => 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TestFunction::A(k) => eta_a(k, x[0]),
            TestFunction::B(k) => eta_b(k, x[0], x[1]),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::A(k) => write!(f, "A{k}"),
            TestFunction::B(k) => write!(f, "B{k}"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown test function {s:?}; expected A1..A4 or B1..B4"));
        let mut chars = s.chars();
        let family = chars.next().ok_or_else(bad)?;
        let k: u8 = chars.as_str().parse().map_err(|_| bad())?;
        if !(1..=4).contains(&k) {
            return Err(bad());
        }
        match family.to_ascii_uppercase() {
            'A' => Ok(TestFunction::A(k)),
            'B' => Ok(TestFunction::B(k)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for TestFunction {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TestFunction> for String {
    fn from(f: TestFunction) -> String {
        f.to_string()
    }
}

/// A simulation condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub function: TestFunction,
    pub n: usize,
    /// Rounding parameter; `None` fits the unrounded data.
    pub r: Option<f64>,
    pub q: usize,
    pub sigma: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(function: TestFunction, n: usize, r: Option<f64>, q: usize) -> Self {
        Scenario {
            function,
            n,
            r,
            q,
            sigma: 1.0,
            replications: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (TestFunction::A(k) | TestFunction::B(k)) = self.function;
        if !(1..=4).contains(&k) {
            return Err(Error::InvalidArgument(format!("function index {k} outside 1..=4")));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        if self.q == 0 {
            return Err(Error::InvalidArgument("knot count must be at least 1".into()));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!("rounding parameter must lie in (0, 1], got {r}")));
            }
        }
        Ok(())
    }

    /// Cubic spline for `A`, cubic tensor product for `B`.
    pub fn model(&self) -> Result<ModelSpec> {
        let kernels = vec![KernelSpec::cubic(); self.function.p()];
        match self.function {
            TestFunction::A(_) => ModelSpec::additive(kernels, self.q, self.seed),
            TestFunction::B(_) => ModelSpec::tensor(kernels, self.q, self.seed),
        }
    }
}

/// Simulated sample with the noiseless function values.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub eta: Vec<f64>,
}

/// Data of replication `rep`: uniform predictors, then Gaussian noise.
///
/// Predictors are drawn before any noise, so scenarios differing only in
/// `sigma` share `x` and have proportional errors.
pub fn generate_replicate(sc: &Scenario, rep: usize) -> Result<Dataset> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    rng.set_stream(rep as u64);
    let p = sc.function.p();
    let mut x = DMatrix::zeros(sc.n, p);
    for i in 0..sc.n {
        for j in 0..p {
            x[(i, j)] = rng.random::<f64>();
        }
    }
    let eta: Vec<f64> = (0..sc.n)
        .map(|i| sc.function.eval(x.row(i).transpose().as_slice()))
        .collect();
    let y = eta
        .iter()
        .map(|&e| {
            let z: f64 = rng.sample(StandardNormal);
            e + sc.sigma * z
        })
        .collect();
    Ok(Dataset { y, x, eta })
}

/// The first replication's data.
pub fn generate_dataset(sc: &Scenario) -> Result<Dataset> {
    generate_replicate(sc, 0)
}

/// `n^-1 sum (eta_i - fitted_i)^2`.
pub fn true_mse(eta: &[f64], fitted: &[f64]) -> Result<f64> {
    if eta.len() != fitted.len() {
        return Err(Error::Dimension(format!(
            "{} function values but {} fitted values",
            eta.len(),
            fitted.len()
        )));
    }
    if eta.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    let sum: f64 = eta.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / eta.len() as f64)
}

/// One benchmark replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub function: TestFunction,
    pub n: usize,
    pub r: Option<f64>,
    pub q: usize,
    pub replication: usize,
    pub u: usize,
    pub mse: f64,
    pub runtime_s: f64,
    pub gcv: f64,
    pub lambda: f64,
    pub edf: f64,
}

/// Per-replication rows and their medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub scenario: Scenario,
    pub rows: Vec<BenchmarkRow>,
    pub median_mse: f64,
    pub median_runtime_s: f64,
}

/// Fit every replication, timing the fit alone.
///
/// Replications run one after another so wall-clock times are not inflated
/// by competing fits.
pub fn run_benchmark(sc: &Scenario) -> Result<BenchmarkResult> {
    sc.validate()?;
    let model = sc.model()?;
    let rounding = model.rounding(sc.r)?;
    let mut rows = Vec::with_capacity(sc.replications);
    for rep in 0..sc.replications {
        let data = generate_replicate(sc, rep)?;
        let start = Instant::now();
        let fitted = fit(&data.y, &data.x, &rounding, &model)?;
        let runtime_s = start.elapsed().as_secs_f64();
        let yhat = predict(&fitted, &data.x)?;
        rows.push(BenchmarkRow {
            function: sc.function,
            n: sc.n,
            r: sc.r,
            q: sc.q,
            replication: rep,
            u: fitted.u,
            mse: true_mse(&data.eta, &yhat)?,
            runtime_s,
            gcv: fitted.gcv,
            lambda: fitted.lambda,
            edf: fitted.edf,
        });
    }
    let mut mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let mut runtime: Vec<f64> = rows.iter().map(|r| r.runtime_s).collect();
    Ok(BenchmarkResult {
        scenario: *sc,
        median_mse: median(&mut mse),
        median_runtime_s: median(&mut runtime),
        rows,
    })
}
