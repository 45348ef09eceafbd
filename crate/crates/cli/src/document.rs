//! The saved model document and atomic file output.

use std::io::Write;
use std::path::Path;

use bigssa::FitResult;
use serde::{Deserialize, Serialize};

use crate::data::ColumnSchema;
use crate::error::{CliError, Result};

pub const SCHEMA_TAG: &str = "bigssa-model/1";

/// Everything needed to predict without the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: String,
    pub columns: ColumnSchema,
    pub fit: FitResult,
}

impl ModelDocument {
    pub fn new(columns: ColumnSchema, fit: FitResult) -> Self {
        ModelDocument {
            schema: SCHEMA_TAG.to_string(),
            columns,
            fit,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec_pretty(self).map_err(|source| CliError::Json {
            path: "<model>".into(),
            source,
        })?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: ModelDocument = serde_json::from_slice(&bytes).map_err(|source| CliError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if doc.schema != SCHEMA_TAG {
            return Err(CliError::Data(format!(
                "{}: unsupported model schema {:?}, expected {SCHEMA_TAG:?}",
                path.display(),
                doc.schema
            )));
        }
        if doc.columns.predictors.len() != doc.fit.model.p() {
            return Err(CliError::Data(format!(
                "{}: {} predictor columns for a model with {} predictors",
                path.display(),
                doc.columns.predictors.len(),
                doc.fit.model.p()
            )));
        }
        Ok(doc)
    }
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Write to `path`, or to standard output when there is none.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}
