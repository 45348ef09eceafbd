//! Comma-separated input tables and the column schema of a model.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bigssa::{KernelSpec, ModelSpec, PredictorRounding, RoundingSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// `name` or `name:r` from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousArg {
    pub name: String,
    pub r: Option<f64>,
}

impl FromStr for ContinuousArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, r) = match s.rsplit_once(':') {
            Some((name, r)) => {
                let r: f64 = r
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad rounding parameter in {s:?}; expected name:r"))?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(format!("rounding parameter in {s:?} must lie in (0, 1]"));
                }
                (name, Some(r))
            }
            None => (s, None),
        };
        if name.is_empty() {
            return Err(format!("empty column name in {s:?}"));
        }
        Ok(ContinuousArg {
            name: name.to_string(),
            r,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// Rounded at `r` on the normalized scale, or left exact.
    Continuous { r: Option<f64> },
    /// Level `levels[k]` is coded `k + 1`.
    Nominal { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Response and predictor columns, continuous predictors first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub response: String,
    pub predictors: Vec<PredictorColumn>,
}

impl ColumnSchema {
    /// Build from flags, reading nominal levels off the training table.
    pub fn from_table(
        table: &Table,
        response: &str,
        continuous: &[ContinuousArg],
        nominal: &[String],
    ) -> Result<Self> {
        if continuous.is_empty() && nominal.is_empty() {
            return Err(CliError::Usage("at least one --continuous or --nominal column is required".into()));
        }
        let mut seen = BTreeSet::new();
        for name in std::iter::once(response)
            .chain(continuous.iter().map(|c| c.name.as_str()))
            .chain(nominal.iter().map(String::as_str))
        {
            if !seen.insert(name) {
                return Err(CliError::Usage(format!("column {name:?} is used more than once")));
            }
        }
        table.column(response)?;
        let mut predictors: Vec<PredictorColumn> = continuous
            .iter()
            .map(|c| {
                table.column(&c.name)?;
                Ok(PredictorColumn {
                    name: c.name.clone(),
                    kind: ColumnKind::Continuous { r: c.r },
                })
            })
            .collect::<Result<_>>()?;
        for name in nominal {
            let col = table.column(name)?;
            let levels = sorted_levels(table.rows.iter().map(|(_, rec)| rec[col].trim()));
            if levels.len() < 2 {
                return Err(CliError::Data(format!(
                    "nominal column {name:?} needs at least two levels, found {}",
                    levels.len()
                )));
            }
            predictors.push(PredictorColumn {
                name: name.clone(),
                kind: ColumnKind::Nominal { levels },
            });
        }
        Ok(ColumnSchema {
            response: response.to_string(),
            predictors,
        })
    }

    pub fn kernels(&self, order: u8) -> Result<Vec<KernelSpec>> {
        self.predictors
            .iter()
            .map(|p| {
                Ok(match &p.kind {
                    ColumnKind::Continuous { .. } => KernelSpec::polynomial(order)?,
                    ColumnKind::Nominal { levels } => KernelSpec::nominal(levels.len())?,
                })
            })
            .collect()
    }

    pub fn model(&self, order: u8, knots: usize, seed: u64, interactions: bool) -> Result<ModelSpec> {
        let kernels = self.kernels(order)?;
        Ok(if interactions {
            ModelSpec::tensor(kernels, knots, seed)?
        } else {
            ModelSpec::additive(kernels, knots, seed)?
        })
    }

    pub fn rounding(&self) -> Result<RoundingSpec> {
        Ok(RoundingSpec::new(
            self.predictors
                .iter()
                .map(|p| match &p.kind {
                    ColumnKind::Continuous { r: Some(r) } => PredictorRounding::Continuous { r: *r },
                    ColumnKind::Continuous { r: None } => PredictorRounding::Exact,
                    ColumnKind::Nominal { levels } => PredictorRounding::Nominal { levels: levels.len() },
                })
                .collect(),
        )?)
    }

    /// Predictor matrix with nominal levels coded `1..=f`.
    pub fn predictors(&self, table: &Table) -> Result<DMatrix<f64>> {
        let cols: Vec<usize> = self
            .predictors
            .iter()
            .map(|p| table.column(&p.name))
            .collect::<Result<_>>()?;
        let codes: Vec<Option<HashMap<&str, f64>>> = self
            .predictors
            .iter()
            .map(|p| match &p.kind {
                ColumnKind::Nominal { levels } => Some(
                    levels
                        .iter()
                        .enumerate()
                        .map(|(k, l)| (l.as_str(), (k + 1) as f64))
                        .collect(),
                ),
                ColumnKind::Continuous { .. } => None,
            })
            .collect();
        let mut x = DMatrix::zeros(table.rows.len(), cols.len());
        for (i, (line, rec)) in table.rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let field = rec[c].trim();
                x[(i, j)] = match &codes[j] {
                    Some(map) => *map.get(field).ok_or_else(|| {
                        table.row_error(
                            *line,
                            format!("unknown level {field:?} in nominal column {:?}", self.predictors[j].name),
                        )
                    })?,
                    None => table.number(*line, field, &self.predictors[j].name)?,
                };
            }
        }
        Ok(x)
    }

    pub fn response(&self, table: &Table) -> Result<Vec<f64>> {
        let c = table.column(&self.response)?;
        table
            .rows
            .iter()
            .map(|(line, rec)| table.number(*line, rec[c].trim(), &self.response))
            .collect()
    }
}

/// Distinct labels, numerically ordered when every label is a number.
fn sorted_levels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let distinct: BTreeSet<&str> = labels.collect();
    let mut levels: Vec<String> = distinct.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut pairs: Vec<(f64, String)> = values.into_iter().zip(levels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        levels = pairs.into_iter().map(|(_, l)| l).collect();
    }
    levels
}

/// A header row plus data records tagged with their line numbers.
#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub headers: Vec<String>,
    pub rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(csv_err)?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if headers.iter().all(String::is_empty) {
            return Err(CliError::Data(format!("{}: missing header row", path.display())));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        if rows.is_empty() {
            return Err(CliError::Data(format!("{}: no data rows", path.display())));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!(
                "{}: column {name:?} not found; available columns: {}",
                self.path.display(),
                self.headers.join(", ")
            ))
        })
    }

    pub fn row_error(&self, line: u64, message: String) -> CliError {
        CliError::Row {
            path: self.path.clone(),
            line,
            message,
        }
    }

    fn number(&self, line: u64, field: &str, column: &str) -> Result<f64> {
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.row_error(line, format!("cannot parse {field:?} in column {column:?} as a finite number"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn table(content: &str) -> (tempfile::NamedTempFile, Table) {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        let t = Table::read(f.path()).unwrap();
        (f, t)
    }

    #[test]
    fn continuous_flags() {
        let a: ContinuousArg = "x:0.01".parse().unwrap();
        assert_eq!(a, ContinuousArg { name: "x".into(), r: Some(0.01) });
        assert_eq!("temp".parse::<ContinuousArg>().unwrap().r, None);
        assert_eq!("a:b:0.5".parse::<ContinuousArg>().unwrap().name, "a:b");
        for bad in ["x:0", "x:2", "x:abc", ":0.1", ""] {
            assert!(bad.parse::<ContinuousArg>().is_err(), "{bad}");
        }
    }

    #[test]
    fn level_order() {
        assert_eq!(sorted_levels(["10", "9", "2", "9"].into_iter()), ["2", "9", "10"]);
        assert_eq!(sorted_levels(["b", "a", "10"].into_iter()), ["10", "a", "b"]);
    }

    #[test]
    fn schema_and_extraction() {
        let (_f, t) = table("y,x,g\n1.5,0.2,b\n2.5,0.4,a\n3.0, 0.9 ,b\n");
        let cont = vec!["x:0.1".parse().unwrap()];
        let s = ColumnSchema::from_table(&t, "y", &cont, &["g".into()]).unwrap();
        assert_eq!(
            s.predictors[1].kind,
            ColumnKind::Nominal { levels: vec!["a".into(), "b".into()] }
        );
        let x = s.predictors(&t).unwrap();
        assert_eq!(x.column(0).as_slice(), &[0.2, 0.4, 0.9]);
        assert_eq!(x.column(1).as_slice(), &[2.0, 1.0, 2.0]);
        assert_eq!(s.response(&t).unwrap(), vec![1.5, 2.5, 3.0]);
        assert_eq!(
            s.rounding().unwrap().predictors,
            vec![PredictorRounding::Continuous { r: 0.1 }, PredictorRounding::Nominal { levels: 2 }]
        );
    }

    #[test]
    fn schema_errors() {
        let (_f, t) = table("y,x,g\n1,0.2,a\n2,0.4,a\n");
        let cont: Vec<ContinuousArg> = vec!["x".parse().unwrap()];
        let err = ColumnSchema::from_table(&t, "z", &cont, &[]).unwrap_err();
        assert!(err.to_string().contains("\"z\""));
        assert!(ColumnSchema::from_table(&t, "y", &[], &[]).is_err());
        assert!(ColumnSchema::from_table(&t, "y", &cont, &["g".into()]).is_err());
        let twice: Vec<ContinuousArg> = vec!["y".parse().unwrap()];
        assert_eq!(ColumnSchema::from_table(&t, "y", &twice, &[]).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn bad_rows_report_lines() {
        let (_f, t) = table("y,x\n1,0.2\n2,oops\n");
        let s = ColumnSchema::from_table(&t, "y", &["x".parse().unwrap()], &[]).unwrap();
        let err = s.predictors(&t).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("oops"), "{err}");
        let (_g, t2) = table("y,x\nNaN,0.2\n");
        assert!(s.response(&t2).unwrap_err().to_string().contains("line 2"));
    }
}
