//! Workloads shared by the benchmarks.

use bigssa::sim::Dataset;
use bigssa::{generate_dataset, ModelSpec, Result, Scenario, TestFunction};

/// Sample sizes swept by the fit benchmarks.
pub const SIZES: [usize; 3] = [10_000, 50_000, 100_000];

/// Simulated data and the matching model for `function` at size `n`.
pub fn workload(function: TestFunction, n: usize, seed: u64) -> Result<(Dataset, ModelSpec)> {
    let sc = Scenario {
        seed,
        ..Scenario::new(function, n, None, bigssa::default_knots(function.p()))
    };
    Ok((generate_dataset(&sc)?, sc.model()?))
}
