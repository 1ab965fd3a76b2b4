use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::selection::{PerfRow, PerformanceTable};

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `candidate_id,task,performance,seed` rows.
pub fn read_performance_table(path: &Path) -> Result<PerformanceTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let want = ["candidate_id", "task", "performance", "seed"];
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    for col in want {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing column {col:?}; expected header {}", want.join(",")),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<PerfRow>() {
        rows.push(rec.map_err(|e| csv_err(path, e))?);
    }
    PerformanceTable::new(rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

/// Writes serializable rows with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
