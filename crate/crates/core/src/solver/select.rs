//! GCV minimization over `log10(lambda)` and `log(theta)`.

use serde::{Deserialize, Serialize};

use super::system::CrossProducts;
use crate::error::{Error, Result};

/// Search range and tolerances of the smoothing-parameter search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    /// Bounds on `log10(lambda)`.
    pub log10_lambda: (f64, f64),
    /// Spacing of the bracketing scan in `log10(lambda)`.
    pub scan_step: f64,
    /// Width at which golden-section refinement stops.
    pub golden_tol: f64,
    /// Maximum alternations between the theta and lambda stages.
    pub max_rounds: usize,
    /// Relative GCV improvement below which the alternation stops.
    pub rel_improvement: f64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds {
            log10_lambda: (-9.0, 1.0),
            scan_step: 0.5,
            golden_tol: 1e-4,
            max_rounds: 10,
            rel_improvement: 1e-5,
        }
    }
}

/// One evaluated point of the GCV search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcvPoint {
    pub log10_lambda: f64,
    pub theta: Vec<f64>,
    pub gcv: f64,
}

/// Outcome of [`select_smoothing`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSelection {
    pub lambda: f64,
    pub theta: Vec<f64>,
    pub gcv: f64,
    pub path: Vec<GcvPoint>,
}

struct Search<'a> {
    cp: &'a CrossProducts,
    path: Vec<GcvPoint>,
}

impl Search<'_> {
    fn eval(&mut self, log10_lambda: f64, theta: &[f64]) -> f64 {
        let gcv = self
            .cp
            .system(10f64.powf(log10_lambda), theta)
            .and_then(|sys| sys.gcv())
            .ok()
            .filter(|g| g.is_finite())
            .unwrap_or(f64::INFINITY);
        self.path.push(GcvPoint {
            log10_lambda,
            theta: theta.to_vec(),
            gcv,
        });
        gcv
    }

    /// Scan a grid on `log10(lambda)`, then refine by golden section around the best point.
    fn lambda_stage(&mut self, theta: &[f64], bounds: &SearchBounds) -> (f64, f64) {
        let (lo, hi) = bounds.log10_lambda;
        let steps = ((hi - lo) / bounds.scan_step).ceil().max(1.0) as usize;
        let grid: Vec<f64> = (0..=steps)
            .map(|i| (lo + i as f64 * (hi - lo) / steps as f64).min(hi))
            .collect();
        let values: Vec<f64> = grid.iter().map(|&g| self.eval(g, theta)).collect();
        let best = argmin(&values);
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(steps)];
        let (x, fx) = self.golden(a, b, theta, bounds.golden_tol);
        if fx < values[best] {
            (x, fx)
        } else {
            (grid[best], values[best])
        }
    }

    fn golden(&mut self, mut a: f64, mut b: f64, theta: &[f64], tol: f64) -> (f64, f64) {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let mut fc = self.eval(c, theta);
        let mut fd = self.eval(d, theta);
        while (b - a).abs() > tol {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = self.eval(c, theta);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = self.eval(d, theta);
            }
        }
        if fc <= fd {
            (c, fc)
        } else {
            (d, fd)
        }
    }

    /// Nelder-Mead on `log(theta)` with `lambda` held fixed.
    fn theta_stage(&mut self, log10_lambda: f64, theta: &[f64], max_evals: usize) -> (Vec<f64>, f64) {
        let dim = theta.len();
        let start: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
        let f = |s: &mut Self, x: &[f64]| {
            let th: Vec<f64> = x.iter().map(|v| v.exp()).collect();
            s.eval(log10_lambda, &th)
        };
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
        let f0 = f(self, &start);
        simplex.push((start.clone(), f0));
        for i in 0..dim {
            let mut x = start.clone();
            x[i] += 1.0;
            let fx = f(self, &x);
            simplex.push((x, fx));
        }
        let mut evals = dim + 1;
        while evals < max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[dim].1;
            if worst.is_finite() && (worst - best).abs() <= 1e-10 * best.abs().max(1e-300) {
                break;
            }
            let centroid: Vec<f64> = (0..dim)
                .map(|k| simplex[..dim].iter().map(|p| p.0[k]).sum::<f64>() / dim as f64)
                .collect();
            let toward = |t: f64, from: &[f64]| -> Vec<f64> {
                centroid.iter().zip(from).map(|(c, w)| c + t * (w - c)).collect()
            };
            let worst_x = simplex[dim].0.clone();
            let reflected = toward(-1.0, &worst_x);
            let fr = f(self, &reflected);
            evals += 1;
            if fr < simplex[0].1 {
                let expanded = toward(-2.0, &worst_x);
                let fe = f(self, &expanded);
                evals += 1;
                simplex[dim] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[dim - 1].1 {
                simplex[dim] = (reflected, fr);
            } else {
                let contracted = if fr < worst {
                    toward(-0.5, &worst_x)
                } else {
                    toward(0.5, &worst_x)
                };
                let fc = f(self, &contracted);
                evals += 1;
                if fc < worst.min(fr) {
                    simplex[dim] = (contracted, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for p in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = anchor.iter().zip(&p.0).map(|(a, v)| a + 0.5 * (v - a)).collect();
                        let fx = f(self, &x);
                        *p = (x, fx);
                    }
                    evals += dim;
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        (x.iter().map(|v| v.exp()).collect(), fx)
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) })
        .0
}

/// Initial `theta` with `theta_k tr(Q_k)` equal across terms.
pub fn balanced_theta(cp: &CrossProducts) -> Vec<f64> {
    cp.gram()
        .iter()
        .map(|q| {
            let tr = q.trace();
            if tr > 0.0 {
                1.0 / tr
            } else {
                1.0
            }
        })
        .collect()
}

/// Minimize GCV over `(lambda, theta)`.
///
/// With one penalized term `theta` only rescales `lambda`, so the search is
/// one-dimensional. Otherwise the `theta` stage (Nelder-Mead on `log(theta)`)
/// and the `lambda` stage alternate until GCV stops improving.
pub fn select_smoothing(cp: &CrossProducts, bounds: &SearchBounds) -> Result<SmoothingSelection> {
    let (lo, hi) = bounds.log10_lambda;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid log10(lambda) bounds ({lo}, {hi})")));
    }
    let mut search = Search { cp, path: Vec::new() };
    let mut theta = balanced_theta(cp);
    let (mut log_lambda, mut gcv) = search.lambda_stage(&theta, bounds);

    if cp.s() > 1 && gcv.is_finite() {
        for _ in 0..bounds.max_rounds {
            let previous = gcv;
            let (next_theta, theta_gcv) = search.theta_stage(log_lambda, &theta, 60 * cp.s());
            if theta_gcv < gcv {
                theta = next_theta;
                gcv = theta_gcv;
            }
            let (next_lambda, lambda_gcv) = search.lambda_stage(&theta, bounds);
            if lambda_gcv < gcv {
                log_lambda = next_lambda;
                gcv = lambda_gcv;
            }
            if (previous - gcv) <= bounds.rel_improvement * previous.abs() {
                break;
            }
        }
    }

    if !gcv.is_finite() {
        return Err(Error::Numerical("GCV is not finite anywhere on the search path".into()));
    }
    Ok(SmoothingSelection {
        lambda: 10f64.powf(log_lambda),
        theta,
        gcv,
        path: search.path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_contrast_matrices, build_null_matrix, select_knots_binsample, ModelSpec};
    use crate::kernel::KernelSpec;
    use crate::rounding::{compress, RoundingSpec};
    use nalgebra::DMatrix;

    fn cross_products(p: usize) -> CrossProducts {
        let n = 400;
        let x = DMatrix::from_fn(n, p, |i, j| ((i * (31 + 6 * j) + 7 * j) % 97) as f64 / 96.0);
        let y: Vec<f64> = (0..n)
            .map(|i| (5.0 * x[(i, 0)]).sin() + x[(i, p - 1)].powi(2) + 0.1 * ((i as f64 * 0.7).sin()))
            .collect();
        let ud = compress(&y, &x, &RoundingSpec::new(vec![crate::PredictorRounding::Continuous { r: 0.02 }; p]).unwrap())
            .unwrap();
        let model = ModelSpec::additive(vec![KernelSpec::cubic(); p], 15, 1).unwrap();
        let knots = select_knots_binsample(&ud, 15, 1).unwrap();
        let null = build_null_matrix(&ud, &model).unwrap();
        let (contrast, gram) = build_contrast_matrices(&ud, &knots, &model).unwrap();
        CrossProducts::new(&ud, &null, &contrast, &gram).unwrap()
    }

    #[test]
    fn single_term_skips_theta_stage() {
        let cp = cross_products(1);
        let sel = select_smoothing(&cp, &SearchBounds::default()).unwrap();
        let start = balanced_theta(&cp);
        assert_eq!(sel.theta, start);
        assert!(sel.path.iter().all(|pt| pt.theta == start));
    }

    #[test]
    fn result_is_minimum_of_path() {
        let cp = cross_products(2);
        let sel = select_smoothing(&cp, &SearchBounds::default()).unwrap();
        assert!(sel.path.iter().all(|pt| sel.gcv <= pt.gcv));
        assert!(sel.path.iter().any(|pt| pt.theta != sel.path[0].theta));
        let check = cp.system(sel.lambda, &sel.theta).unwrap().gcv().unwrap();
        assert!((check - sel.gcv).abs() <= 1e-12 * check);
    }

    #[test]
    fn balanced_start() {
        let cp = cross_products(2);
        let theta = balanced_theta(&cp);
        for (t, q) in theta.iter().zip(cp.gram()) {
            assert!((t * q.trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_bounds() {
        let cp = cross_products(1);
        let bounds = SearchBounds {
            log10_lambda: (1.0, -1.0),
            ..SearchBounds::default()
        };
        assert!(select_smoothing(&cp, &bounds).is_err());
    }
}
