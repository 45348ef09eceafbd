//! Model terms, knot selection and the reduced basis matrices.
//!
//! A [`ModelSpec`] lists the marginal kernel of every predictor and the
//! penalized terms of the tensor-sum decomposition. Each term multiplies one
//! factor per predictor: the constant (omitted), a null-space function
//! `k_v`, or the contrast kernel. Null-space products that carry no penalty
//! become columns of the null matrix instead.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{scaled_bernoulli, KernelSpec};
use crate::rounding::{PredictorRounding, RoundingSpec, UniqueDesign};

/// Factor contributed by one predictor to a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Omit,
    /// Null-space function `k_v`, `1 <= v < m`.
    Null(u8),
    Contrast,
}

/// One penalized term: a product of per-predictor factors.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TermDef {
    pub factors: Vec<Factor>,
}

impl TermDef {
    pub fn main_effect(p: usize, j: usize) -> Self {
        let mut factors = vec![Factor::Omit; p];
        factors[j] = Factor::Contrast;
        TermDef { factors }
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| **f != Factor::Omit)
            .map(|(j, _)| j)
    }
}

/// Marginal kernels, penalized terms and knot budget of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub predictors: Vec<KernelSpec>,
    pub terms: Vec<TermDef>,
    pub knots: usize,
    pub seed: u64,
}

/// Knot count used when none is given: 21 for one predictor, 100 otherwise.
pub fn default_knots(p: usize) -> usize {
    if p <= 1 {
        21
    } else {
        100
    }
}

impl ModelSpec {
    pub fn new(
        predictors: Vec<KernelSpec>,
        terms: Vec<TermDef>,
        knots: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = ModelSpec {
            predictors,
            terms,
            knots,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Main effects only.
    pub fn additive(predictors: Vec<KernelSpec>, knots: usize, seed: u64) -> Result<Self> {
        let p = predictors.len();
        let terms = (0..p).map(|j| TermDef::main_effect(p, j)).collect();
        Self::new(predictors, terms, knots, seed)
    }

    /// Main effects plus every two-way interaction.
    ///
    /// For a pair `(a, b)` the interaction terms are `contrast x contrast`,
    /// `k_v(a) x contrast(b)` and `contrast(a) x k_w(b)`; the unpenalized
    /// products `k_v(a) k_w(b)` join the null space.
    pub fn tensor(predictors: Vec<KernelSpec>, knots: usize, seed: u64) -> Result<Self> {
        let p = predictors.len();
        let mut terms: Vec<TermDef> = (0..p).map(|j| TermDef::main_effect(p, j)).collect();
        for a in 0..p {
            for b in (a + 1)..p {
                let pair = |fa: Factor, fb: Factor| {
                    let mut factors = vec![Factor::Omit; p];
                    factors[a] = fa;
                    factors[b] = fb;
                    TermDef { factors }
                };
                terms.push(pair(Factor::Contrast, Factor::Contrast));
                for v in 1..=predictors[a].null_dim() {
                    terms.push(pair(Factor::Null(v as u8), Factor::Contrast));
                }
                for w in 1..=predictors[b].null_dim() {
                    terms.push(pair(Factor::Contrast, Factor::Null(w as u8)));
                }
            }
        }
        Self::new(predictors, terms, knots, seed)
    }

    pub fn p(&self) -> usize {
        self.predictors.len()
    }

    /// Number of penalized terms `s`.
    pub fn s(&self) -> usize {
        self.terms.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() {
            return Err(Error::InvalidArgument("model has no predictors".into()));
        }
        for k in &self.predictors {
            k.validate()?;
        }
        if self.knots < 1 {
            return Err(Error::InvalidArgument("knot count must be at least 1".into()));
        }
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("model has no penalized terms".into()));
        }
        let p = self.p();
        for (k, term) in self.terms.iter().enumerate() {
            if term.factors.len() != p {
                return Err(Error::Dimension(format!(
                    "term {k} has {} factors for {p} predictors",
                    term.factors.len()
                )));
            }
            if !term.factors.contains(&Factor::Contrast) {
                return Err(Error::InvalidArgument(format!(
                    "term {k} has no contrast factor and belongs to the null space"
                )));
            }
            if term.active().count() > 2 {
                return Err(Error::InvalidArgument(format!(
                    "term {k} is a three-way or higher interaction"
                )));
            }
            for (j, f) in term.factors.iter().enumerate() {
                if let Factor::Null(v) = *f {
                    let dim = self.predictors[j].null_dim();
                    if v == 0 || v as usize > dim {
                        return Err(Error::InvalidArgument(format!(
                            "term {k}: predictor {j} has no null function k_{v}"
                        )));
                    }
                }
            }
        }
        let mut seen = self.terms.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate model term".into()));
        }
        Ok(())
    }

    /// Null-space columns after the intercept, as factor products.
    pub fn null_columns(&self) -> Vec<Vec<Factor>> {
        let p = self.p();
        let mut cols = Vec::new();
        for (j, k) in self.predictors.iter().enumerate() {
            for v in 1..=k.null_dim() {
                let mut f = vec![Factor::Omit; p];
                f[j] = Factor::Null(v as u8);
                cols.push(f);
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                let paired = self
                    .terms
                    .iter()
                    .any(|t| t.factors[a] != Factor::Omit && t.factors[b] != Factor::Omit);
                if !paired {
                    continue;
                }
                for v in 1..=self.predictors[a].null_dim() {
                    for w in 1..=self.predictors[b].null_dim() {
                        let mut f = vec![Factor::Omit; p];
                        f[a] = Factor::Null(v as u8);
                        f[b] = Factor::Null(w as u8);
                        cols.push(f);
                    }
                }
            }
        }
        cols
    }

    /// Dimension `m` of the null space, intercept included.
    pub fn null_dim(&self) -> usize {
        1 + self.null_columns().len()
    }

    /// Rounding rules matching the kernels: every continuous predictor at `r`
    /// (`None` leaves them unrounded), nominal predictors by level.
    pub fn rounding(&self, r: Option<f64>) -> Result<RoundingSpec> {
        RoundingSpec::new(
            self.predictors
                .iter()
                .map(|k| match (*k, r) {
                    (KernelSpec::Nominal { levels }, _) => PredictorRounding::Nominal { levels },
                    (_, Some(r)) => PredictorRounding::Continuous { r },
                    (_, None) => PredictorRounding::Exact,
                })
                .collect(),
        )
    }
}

fn null_value(factors: &[Factor], x: &[f64]) -> f64 {
    factors
        .iter()
        .zip(x)
        .map(|(f, &xj)| match *f {
            Factor::Null(v) => scaled_bernoulli(v as usize, xj),
            _ => 1.0,
        })
        .product()
}

/// Reproducing kernel of one term between points `x` and `z`.
#[inline]
pub(crate) fn term_kernel(model: &ModelSpec, term: &TermDef, x: &[f64], z: &[f64]) -> f64 {
    let mut acc = 1.0;
    for (j, f) in term.factors.iter().enumerate() {
        acc *= match *f {
            Factor::Omit => 1.0,
            Factor::Null(v) => scaled_bernoulli(v as usize, x[j]) * scaled_bernoulli(v as usize, z[j]),
            Factor::Contrast => model.predictors[j].contrast_unchecked(x[j], z[j]),
        };
    }
    acc
}

fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

/// Null matrix at arbitrary normalized points: intercept column first.
pub fn null_matrix(points: &DMatrix<f64>, model: &ModelSpec) -> DMatrix<f64> {
    let cols = model.null_columns();
    let mut out = DMatrix::from_element(points.nrows(), 1 + cols.len(), 1.0);
    for i in 0..points.nrows() {
        let x = row(points, i);
        for (c, factors) in cols.iter().enumerate() {
            out[(i, c + 1)] = null_value(factors, &x);
        }
    }
    out
}

/// One `n x q` kernel matrix per term, between `points` and `knots`.
pub fn contrast_matrices(
    points: &DMatrix<f64>,
    knots: &DMatrix<f64>,
    model: &ModelSpec,
) -> Vec<DMatrix<f64>> {
    let n = points.nrows();
    let q = knots.nrows();
    let point_rows: Vec<Vec<f64>> = (0..n).map(|i| row(points, i)).collect();
    let knot_rows: Vec<Vec<f64>> = (0..q).map(|h| row(knots, h)).collect();
    model
        .terms
        .iter()
        .map(|term| {
            let mut m = DMatrix::zeros(n, q);
            if n > 0 {
                m.as_mut_slice()
                    .par_chunks_mut(n)
                    .zip(knot_rows.par_iter())
                    .for_each(|(column, z)| {
                        for (entry, x) in column.iter_mut().zip(&point_rows) {
                            *entry = term_kernel(model, term, x, z);
                        }
                    });
            }
            m
        })
        .collect()
}

/// Knot Gram matrices, one per term.
pub fn gram_matrices(knots: &DMatrix<f64>, model: &ModelSpec) -> Vec<DMatrix<f64>> {
    contrast_matrices(knots, knots, model)
        .into_iter()
        .map(|m| (&m + m.transpose()) * 0.5)
        .collect()
}

/// `u x m` null matrix of the unique design.
pub fn build_null_matrix(ud: &UniqueDesign, model: &ModelSpec) -> Result<DMatrix<f64>> {
    check_design(ud, model)?;
    Ok(null_matrix(&ud.z, model))
}

/// Per-term `u x q` matrices `J_k` and `q x q` knot Grams `Q_k`.
pub fn build_contrast_matrices(
    ud: &UniqueDesign,
    knots: &[usize],
    model: &ModelSpec,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    check_design(ud, model)?;
    let knot_points = knot_rows(ud, knots)?;
    Ok((
        contrast_matrices(&ud.z, &knot_points, model),
        gram_matrices(&knot_points, model),
    ))
}

/// Rows of the unique design selected as knots.
pub fn knot_rows(ud: &UniqueDesign, knots: &[usize]) -> Result<DMatrix<f64>> {
    if let Some(&bad) = knots.iter().find(|&&k| k >= ud.u()) {
        return Err(Error::InvalidArgument(format!(
            "knot index {bad} out of range for {} unique points",
            ud.u()
        )));
    }
    Ok(DMatrix::from_fn(knots.len(), ud.p(), |h, j| ud.z[(knots[h], j)]))
}

fn check_design(ud: &UniqueDesign, model: &ModelSpec) -> Result<()> {
    model.validate()?;
    if ud.p() != model.p() {
        return Err(Error::Dimension(format!(
            "design has {} predictors, model has {}",
            ud.p(),
            model.p()
        )));
    }
    for (j, k) in model.predictors.iter().enumerate() {
        if k.is_nominal() != ud.scales[j].is_none() {
            return Err(Error::InvalidArgument(format!(
                "predictor {j}: kernel and rounding disagree on nominal vs continuous"
            )));
        }
    }
    Ok(())
}

/// Bin-sampled knots: indices into the unique design, ascending.
///
/// Each continuous axis is cut into `c` equal cells (nominal level
/// combinations form extra cell coordinates) and the unique point nearest to
/// each occupied cell center is taken. The selection is then trimmed or
/// topped up to `q` by weight-proportional sampling without replacement.
pub fn select_knots_binsample(ud: &UniqueDesign, q: usize, seed: u64) -> Result<Vec<usize>> {
    if q < 1 {
        return Err(Error::InvalidArgument("knot count must be at least 1".into()));
    }
    let u = ud.u();
    if u == 0 {
        return Err(Error::InvalidArgument("empty design".into()));
    }
    if q >= u {
        return Ok((0..u).collect());
    }

    let continuous: Vec<usize> = (0..ud.p()).filter(|&j| ud.scales[j].is_some()).collect();
    let nominal: Vec<usize> = (0..ud.p()).filter(|&j| ud.scales[j].is_none()).collect();
    let mut combos: Vec<Vec<u64>> = (0..u)
        .map(|t| nominal.iter().map(|&j| ud.z[(t, j)] as u64).collect())
        .collect();
    combos.sort();
    combos.dedup();
    let per_axis = if continuous.is_empty() {
        1
    } else {
        let target = (q as f64 / combos.len() as f64).max(1.0);
        (target.powf(1.0 / continuous.len() as f64) - 1e-9).ceil().max(1.0) as u64
    };

    // cell key -> (distance to center, index)
    let mut best: BTreeMap<Vec<u64>, (f64, usize)> = BTreeMap::new();
    for t in 0..u {
        let mut key = Vec::with_capacity(ud.p());
        let mut dist2 = 0.0;
        for &j in &continuous {
            let v = ud.z[(t, j)];
            let cell = ((v * per_axis as f64).floor() as u64).min(per_axis - 1);
            let center = (cell as f64 + 0.5) / per_axis as f64;
            dist2 += (v - center) * (v - center);
            key.push(cell);
        }
        key.extend(nominal.iter().map(|&j| ud.z[(t, j)] as u64));
        best.entry(key)
            .and_modify(|e| {
                if dist2 < e.0 {
                    *e = (dist2, t);
                }
            })
            .or_insert((dist2, t));
    }
    let mut picks: Vec<usize> = best.values().map(|&(_, t)| t).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if picks.len() > q {
        picks = weighted_sample(&picks, &ud.weights, q, &mut rng);
    } else if picks.len() < q {
        let mut taken = vec![false; u];
        for &t in &picks {
            taken[t] = true;
        }
        let rest: Vec<usize> = (0..u).filter(|&t| !taken[t]).collect();
        picks.extend(weighted_sample(&rest, &ud.weights, q - picks.len(), &mut rng));
    }
    picks.sort_unstable();
    Ok(picks)
}

/// Weighted sampling without replacement via exponential keys `ln(U) / w`.
fn weighted_sample(pool: &[usize], weights: &[u64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = pool
        .iter()
        .map(|&t| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / weights[t] as f64, t)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(k).map(|(_, t)| t).collect()
}
