//! Predictor rounding and compression of `(y, X)` to sufficient statistics.
//!
//! Continuous predictors are min-max normalized to `[0, 1]` and rounded to
//! the grid `r * Z`; nominal predictors are passed through as level codes.
//! Each observation receives a mixed-radix cell index `g`, and observations
//! sharing a cell are collapsed into one row of a [`UniqueDesign`] carrying
//! the count `w_t` and response sum `y~_t`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows per partial aggregate. Fixed so the floating-point summation order,
/// and therefore the output, does not depend on the thread count.
const CHUNK_ROWS: usize = 1 << 14;

/// How one predictor is rounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorRounding {
    /// Continuous predictor rounded to precision `r` on the normalized scale.
    Continuous { r: f64 },
    /// Continuous predictor normalized but not rounded.
    Exact,
    /// Nominal predictor coded `1..=levels`.
    Nominal { levels: usize },
}

impl PredictorRounding {
    pub fn is_continuous(&self) -> bool {
        !matches!(self, PredictorRounding::Nominal { .. })
    }
}

/// Per-predictor rounding rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingSpec {
    pub predictors: Vec<PredictorRounding>,
}

impl RoundingSpec {
    pub fn new(predictors: Vec<PredictorRounding>) -> Result<Self> {
        let spec = RoundingSpec { predictors };
        spec.validate()?;
        Ok(spec)
    }

    /// One continuous predictor rounded at `r`.
    pub fn continuous(r: f64) -> Result<Self> {
        Self::new(vec![PredictorRounding::Continuous { r }])
    }

    pub fn len(&self) -> usize {
        self.predictors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.is_empty() {
            return Err(Error::InvalidArgument("at least one predictor is required".into()));
        }
        for p in &self.predictors {
            match *p {
                PredictorRounding::Continuous { r } => check_r(r)?,
                PredictorRounding::Nominal { levels } if levels < 2 => {
                    return Err(Error::InvalidArgument(format!(
                        "nominal predictor needs at least 2 levels, got {levels}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Same spec with every continuous predictor rounded at `r` (`None` disables rounding).
    pub fn with_uniform_r(&self, r: Option<f64>) -> Result<Self> {
        let predictors = self
            .predictors
            .iter()
            .map(|p| match (p, r) {
                (PredictorRounding::Nominal { .. }, _) => *p,
                (_, Some(r)) => PredictorRounding::Continuous { r },
                (_, None) => PredictorRounding::Exact,
            })
            .collect();
        Self::new(predictors)
    }
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "rounding parameter must lie in (0, 1], got {r}"
        )))
    }
}

/// `rd(x / r)`, rounding halves away from zero.
#[inline]
fn grid_index(x: f64, r: f64) -> f64 {
    (x / r).round()
}

/// Grid point `index * r`. When `1/r` is an integer `N` the value is formed as
/// `index / N`, which reproduces decimal grids such as `0.07` bit for bit.
#[inline]
fn grid_value(index: f64, r: f64) -> f64 {
    let steps = 1.0 / r;
    let whole = steps.round();
    if (steps - whole).abs() <= 1e-9 * whole {
        index / whole
    } else {
        index * r
    }
}

/// Round `x` to the nearest multiple of `r`.
pub fn round_value(x: f64, r: f64) -> Result<f64> {
    check_r(r)?;
    Ok(grid_value(grid_index(x, r), r))
}

/// Min-max normalization constants of a continuous predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        self.min + u * (self.max - self.min)
    }
}

/// Unique rounded covariate vectors with their counts and response sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueDesign {
    /// `u x p` rounded covariates (normalized scale; nominal columns hold level codes).
    pub z: DMatrix<f64>,
    pub weights: Vec<u64>,
    pub y_sums: Vec<f64>,
    pub y_sqnorm: f64,
    pub y_total: f64,
    /// `sum_t sum_{i in t} (y_i - ybar_t)^2`, accumulated without cancellation.
    pub within_ss: f64,
    pub n: u64,
    /// Normalization of each continuous predictor, `None` for nominal ones.
    pub scales: Vec<Option<Scale>>,
}

impl UniqueDesign {
    pub fn u(&self) -> usize {
        self.weights.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    /// Expand back to `n` rows on the normalized scale, row `t` repeated `w_t` times.
    pub fn expand(&self) -> DMatrix<f64> {
        let n = self.n as usize;
        let mut out = DMatrix::zeros(n, self.p());
        let mut row = 0;
        for (t, &w) in self.weights.iter().enumerate() {
            for _ in 0..w {
                out.row_mut(row).copy_from(&self.z.row(t));
                row += 1;
            }
        }
        out
    }
}

/// Integer level codes of one predictor and how to turn a code back into a value.
struct ColumnCodes {
    codes: Vec<u64>,
    radix: u64,
    kind: CodeKind,
}

enum CodeKind {
    Grid(f64),
    Table(Vec<f64>),
    Nominal,
}

impl ColumnCodes {
    fn value(&self, code: u64) -> f64 {
        match &self.kind {
            CodeKind::Grid(r) => grid_value(code as f64, *r),
            CodeKind::Table(values) => values[code as usize],
            CodeKind::Nominal => (code + 1) as f64,
        }
    }
}

fn column_scale(col: usize, values: impl Iterator<Item = f64>) -> Result<Scale> {
    let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if max > min {
        Ok(Scale { min, max })
    } else {
        Err(Error::ZeroRange { column: col, value: min })
    }
}

fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { column: j, row: i });
            }
        }
    }
    Ok(())
}

fn code_columns(x: &DMatrix<f64>, spec: &RoundingSpec) -> Result<Vec<ColumnCodes>> {
    spec.validate()?;
    if x.ncols() != spec.len() {
        return Err(Error::Dimension(format!(
            "{} predictor columns but {} rounding entries",
            x.ncols(),
            spec.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    check_finite(x)?;

    let mut cols = Vec::with_capacity(spec.len());
    for (j, rule) in spec.predictors.iter().enumerate() {
        let column = x.column(j);
        let coded = match *rule {
            PredictorRounding::Continuous { r } => {
                let scale = column_scale(j, column.iter().copied())?;
                let codes = column
                    .iter()
                    .map(|&v| grid_index(scale.to_unit(v), r) as u64)
                    .collect();
                ColumnCodes {
                    codes,
                    radix: (1.0 + 1.0 / r).round() as u64,
                    kind: CodeKind::Grid(r),
                }
            }
            PredictorRounding::Exact => {
                let scale = column_scale(j, column.iter().copied())?;
                let unit: Vec<f64> = column.iter().map(|&v| scale.to_unit(v)).collect();
                let mut distinct = unit.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                let codes = unit
                    .iter()
                    .map(|v| distinct.partition_point(|d| d < v) as u64)
                    .collect();
                ColumnCodes {
                    codes,
                    radix: distinct.len() as u64,
                    kind: CodeKind::Table(distinct),
                }
            }
            PredictorRounding::Nominal { levels } => {
                let mut codes = Vec::with_capacity(column.len());
                for (i, &v) in column.iter().enumerate() {
                    if v.fract() != 0.0 || v < 1.0 || v > levels as f64 {
                        return Err(Error::BadLevel {
                            column: j,
                            row: i,
                            code: v,
                            levels,
                        });
                    }
                    codes.push(v as u64 - 1);
                }
                ColumnCodes {
                    codes,
                    radix: levels as u64,
                    kind: CodeKind::Nominal,
                }
            }
        };
        cols.push(coded);
    }
    Ok(cols)
}

fn cell_indices(cols: &[ColumnCodes], n: usize) -> Result<(Vec<u64>, u64)> {
    let mut g = vec![1u64; n];
    let mut h: u64 = 1;
    for col in cols {
        for (gi, &code) in g.iter_mut().zip(&col.codes) {
            *gi += h * code;
        }
        h = h.checked_mul(col.radix).ok_or_else(|| {
            Error::InvalidArgument("number of rounding cells overflows a 64-bit index".into())
        })?;
    }
    Ok((g, h))
}

/// Cell index `g_i` in `1..=h_final` of every observation, plus `h_final`.
///
/// Two rows share an index exactly when their rounded covariate vectors agree.
pub fn bin_index_vector(x: &DMatrix<f64>, spec: &RoundingSpec) -> Result<(Vec<u64>, u64)> {
    let cols = code_columns(x, spec)?;
    cell_indices(&cols, x.nrows())
}

/// Upper bound on the number of unique rounded covariate vectors.
///
/// `None` when some predictor is left unrounded, since the bound then depends on the data.
pub fn u_upper_bound(spec: &RoundingSpec) -> Option<u64> {
    spec.predictors.iter().try_fold(1u64, |acc, p| match *p {
        PredictorRounding::Continuous { r } => acc.checked_mul((1.0 + 1.0 / r).round() as u64),
        PredictorRounding::Nominal { levels } => acc.checked_mul(levels as u64),
        PredictorRounding::Exact => None,
    })
}

#[derive(Default)]
struct Partial {
    cells: BTreeMap<u64, Cell>,
    y_sqnorm: f64,
    y_total: f64,
}

struct Cell {
    weight: u64,
    y_sum: f64,
    mean: f64,
    m2: f64,
    first_row: usize,
}

impl Cell {
    fn push(&mut self, y: f64) {
        self.weight += 1;
        self.y_sum += y;
        let delta = y - self.mean;
        self.mean += delta / self.weight as f64;
        self.m2 += delta * (y - self.mean);
    }

    fn merge(&mut self, other: &Cell) {
        let (na, nb) = (self.weight as f64, other.weight as f64);
        let delta = other.mean - self.mean;
        self.m2 += other.m2 + delta * delta * na * nb / (na + nb);
        self.mean += delta * nb / (na + nb);
        self.weight += other.weight;
        self.y_sum += other.y_sum;
        self.first_row = self.first_row.min(other.first_row);
    }
}

impl Partial {
    fn absorb(mut self, other: Partial) -> Partial {
        for (g, cell) in other.cells {
            self.cells
                .entry(g)
                .and_modify(|c| c.merge(&cell))
                .or_insert(cell);
        }
        self.y_sqnorm += other.y_sqnorm;
        self.y_total += other.y_total;
        self
    }
}

/// Compress `(y, X)` to unique rounded covariate vectors, ordered by cell index.
pub fn compress(y: &[f64], x: &DMatrix<f64>, spec: &RoundingSpec) -> Result<UniqueDesign> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!(
            "{} responses but {} predictor rows",
            n,
            x.nrows()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite response at row {i}")));
    }
    let cols = code_columns(x, spec)?;
    let (g, _) = cell_indices(&cols, n)?;

    let partials: Vec<Partial> = g
        .par_chunks(CHUNK_ROWS)
        .zip(y.par_chunks(CHUNK_ROWS))
        .enumerate()
        .map(|(chunk, (gs, ys))| {
            let mut part = Partial::default();
            for (k, (&gi, &yi)) in gs.iter().zip(ys).enumerate() {
                let row = chunk * CHUNK_ROWS + k;
                part.cells
                    .entry(gi)
                    .or_insert(Cell {
                        weight: 0,
                        y_sum: 0.0,
                        mean: 0.0,
                        m2: 0.0,
                        first_row: row,
                    })
                    .push(yi);
                part.y_sqnorm += yi * yi;
                part.y_total += yi;
            }
            part
        })
        .collect();
    let merged = partials.into_iter().fold(Partial::default(), Partial::absorb);

    let u = merged.cells.len();
    let p = cols.len();
    let mut z = DMatrix::zeros(u, p);
    let mut weights = Vec::with_capacity(u);
    let mut y_sums = Vec::with_capacity(u);
    let mut within_ss = 0.0;
    for (t, cell) in merged.cells.values().enumerate() {
        within_ss += cell.m2;
        for (j, col) in cols.iter().enumerate() {
            z[(t, j)] = col.value(col.codes[cell.first_row]);
        }
        weights.push(cell.weight);
        y_sums.push(cell.y_sum);
    }

    let scales = spec
        .predictors
        .iter()
        .enumerate()
        .map(|(j, rule)| {
            rule.is_continuous()
                .then(|| column_scale(j, x.column(j).iter().copied()))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(UniqueDesign {
        z,
        weights,
        y_sums,
        y_sqnorm: merged.y_sqnorm,
        y_total: merged.y_total,
        within_ss,
        n: n as u64,
        scales,
    })
}

/// Normalized (and, where requested, rounded) covariates of every observation.
pub fn rounded_points(x: &DMatrix<f64>, spec: &RoundingSpec) -> Result<DMatrix<f64>> {
    let cols = code_columns(x, spec)?;
    Ok(DMatrix::from_fn(x.nrows(), cols.len(), |i, j| {
        cols[j].value(cols[j].codes[i])
    }))
}
