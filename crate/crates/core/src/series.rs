//! Time-series data model, CSV ingestion, chronological splitting and window extraction.
//!
//! Windowing is purely positional. Timestamps are carried as opaque text and only
//! used for reporting.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scaler::Scaler;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("unknown target column {target:?} (available: {available})")]
    UnknownTarget { target: String, available: String },
    #[error("non-numeric cell {value:?} at row {row}, column {column:?}")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("non-finite value {value:?} at row {row}, column {column:?}")]
    NonFinite { row: usize, column: String, value: String },
    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("series has no rows")]
    Empty,
    #[error("column length mismatch: {0}")]
    LengthMismatch(String),
    #[error("timestamps not strictly increasing at row {row} ({prev:?} >= {next:?})")]
    NonMonotonicTimestamps { row: usize, prev: String, next: String },
    #[error("train fraction {fraction} on {len} rows leaves an empty part (train {train}, test {test})")]
    EmptySplit {
        fraction: f64,
        len: usize,
        train: usize,
        test: usize,
    },
    #[error("window out of range: origin {origin}, context {context_len}, horizon {horizon}, series length {len}")]
    WindowOutOfRange {
        origin: usize,
        context_len: usize,
        horizon: usize,
        len: usize,
    },
    #[error("invalid window shape: context length {context_len} (needs >= 2), horizon {horizon} (needs >= 1)")]
    InvalidWindowShape { context_len: usize, horizon: usize },
    #[error("empty input")]
    EmptyInput,
}

/// Numeric stamps compare as numbers, anything else as text (ISO dates sort
/// lexically).
fn timestamp_before(a: &str, b: &str) -> bool {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x < y,
        _ => a < b,
    }
}

/// Header names recognised as a timestamp column when none is named explicitly.
const TIMESTAMP_HEADERS: &[&str] = &["date", "datetime", "timestamp", "time", "ds"];

/// Timestamped multivariate series with a designated target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries<T = f64> {
    name: String,
    column_names: Vec<String>,
    timestamps: Option<Vec<String>>,
    columns: Vec<Vec<T>>,
    target: String,
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(
        name: impl Into<String>,
        column_names: Vec<String>,
        columns: Vec<Vec<T>>,
        timestamps: Option<Vec<String>>,
        target: impl Into<String>,
    ) -> Result<Self, SeriesError> {
        let target = target.into();
        if column_names.len() != columns.len() {
            return Err(SeriesError::LengthMismatch(format!(
                "{} names for {} columns",
                column_names.len(),
                columns.len()
            )));
        }
        if !column_names.iter().any(|c| c == &target) {
            return Err(SeriesError::UnknownTarget {
                target,
                available: column_names.join(", "),
            });
        }
        let len = columns.first().map(Vec::len).unwrap_or(0);
        if len == 0 {
            return Err(SeriesError::Empty);
        }
        if let Some((name, col)) = column_names.iter().zip(&columns).find(|(_, c)| c.len() != len) {
            return Err(SeriesError::LengthMismatch(format!(
                "column {name:?} has {} values, expected {len}",
                col.len()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != len {
                return Err(SeriesError::LengthMismatch(format!(
                    "{} timestamps for {len} rows",
                    ts.len()
                )));
            }
            if let Some(i) = ts.windows(2).position(|w| !timestamp_before(&w[0], &w[1])) {
                return Err(SeriesError::NonMonotonicTimestamps {
                    row: i + 2,
                    prev: ts[i].clone(),
                    next: ts[i + 1].clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            column_names,
            timestamps,
            columns,
            target,
        })
    }

    /// Single-column series without timestamps.
    pub fn univariate(name: impl Into<String>, target: impl Into<String>, values: Vec<T>) -> Result<Self, SeriesError> {
        let target = target.into();
        Self::new(name, vec![target.clone()], vec![values], None, target)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[T]> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn target_values(&self) -> &[T] {
        self.column(&self.target)
            .expect("target column validated at construction")
    }

    /// Rows `[start, end)` as a new series. Caller guarantees `start < end <= len`.
    fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            name: self.name.clone(),
            column_names: self.column_names.clone(),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
            target: self.target.clone(),
        }
    }
}

/// Reads a header-first CSV file. The timestamp column is auto-detected by header name
/// (`date`, `datetime`, `timestamp`, `time`, `ds`); every other column must be numeric.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, target: &str) -> Result<TimeSeries<T>, SeriesError> {
    load_csv_with(path, target, None)
}

/// Like [`load_csv`] with an explicit timestamp column name.
pub fn load_csv_with<T: Scalar>(
    path: impl AsRef<Path>,
    target: &str,
    timestamp_column: Option<&str>,
) -> Result<TimeSeries<T>, SeriesError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SeriesError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".to_string());
    parse_csv(file, &name, target, timestamp_column)
}

/// Parses CSV text from any reader. See [`load_csv`].
pub fn parse_csv<T: Scalar, R: std::io::Read>(
    reader: R,
    name: &str,
    target: &str,
    timestamp_column: Option<&str>,
) -> Result<TimeSeries<T>, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| SeriesError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let ts_idx = match timestamp_column {
        Some(col) => Some(
            headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| SeriesError::Csv(format!("timestamp column {col:?} not in header")))?,
        ),
        None => headers
            .iter()
            .position(|h| TIMESTAMP_HEADERS.contains(&h.to_ascii_lowercase().as_str())),
    };
    if Some(target) == ts_idx.map(|i| headers[i].as_str()) || !headers.iter().any(|h| h == target) {
        return Err(SeriesError::UnknownTarget {
            target: target.to_string(),
            available: headers
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != ts_idx)
                .map(|(_, h)| h.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        });
    }

    let numeric: Vec<usize> = (0..headers.len()).filter(|i| Some(*i) != ts_idx).collect();
    let mut columns: Vec<Vec<T>> = vec![Vec::new(); numeric.len()];
    let mut timestamps = ts_idx.map(|_| Vec::new());

    for (i, record) in rdr.records().enumerate() {
        // 1-based data row number, header excluded
        let row = i + 1;
        let record = record.map_err(|e| SeriesError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(SeriesError::Ragged {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        if let (Some(ts), Some(idx)) = (timestamps.as_mut(), ts_idx) {
            ts.push(record[idx].to_string());
        }
        for (slot, &col) in numeric.iter().enumerate() {
            let cell = &record[col];
            let v: f64 = cell.parse().map_err(|_| SeriesError::NonNumeric {
                row,
                column: headers[col].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(SeriesError::NonFinite {
                    row,
                    column: headers[col].clone(),
                    value: cell.to_string(),
                });
            }
            columns[slot].push(T::from_f64_lossy(v));
        }
    }

    let names = numeric.iter().map(|&i| headers[i].clone()).collect();
    TimeSeries::new(name, names, columns, timestamps, target)
}

/// Chronological split at `floor(len * train_fraction)`. Both parts must be non-empty.
pub fn split<T: Scalar>(
    series: &TimeSeries<T>,
    train_fraction: f64,
) -> Result<(TimeSeries<T>, TimeSeries<T>), SeriesError> {
    let len = series.len();
    let train = split_point(len, train_fraction)?;
    Ok((series.slice_rows(0, train), series.slice_rows(train, len)))
}

fn split_point(len: usize, fraction: f64) -> Result<usize, SeriesError> {
    let train = if fraction > 0.0 && fraction < 1.0 {
        (len as f64 * fraction).floor() as usize
    } else {
        0
    };
    if train == 0 || train >= len {
        return Err(SeriesError::EmptySplit {
            fraction,
            len,
            train,
            test: len.saturating_sub(train),
        });
    }
    Ok(train)
}

/// Target column split chronologically and standard-scaled with a scaler fit on the
/// training part only.
#[derive(Debug, Clone)]
pub struct ScaledSplit<T = f64> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub scaler: Scaler<T>,
}

impl<T: Scalar> ScaledSplit<T> {
    pub fn new(series: &TimeSeries<T>, train_fraction: f64) -> Result<Self, SeriesError> {
        let values = series.target_values();
        let cut = split_point(values.len(), train_fraction)?;
        let scaler = Scaler::fit(&values[..cut])?;
        Ok(Self {
            train: scaler.apply(&values[..cut]),
            test: scaler.apply(&values[cut..]),
            scaler,
        })
    }

    /// Train followed by test, in scaled units.
    pub fn full(&self) -> Vec<T> {
        self.train.iter().chain(&self.test).copied().collect()
    }
}

/// A context window and the truth that immediately follows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPair<T = f64> {
    pub context: Vec<T>,
    pub truth: Vec<T>,
    /// Index of the first truth element in the source series.
    pub origin: usize,
}

impl<T: Scalar> WindowPair<T> {
    pub fn horizon(&self) -> usize {
        self.truth.len()
    }
}

/// `context = values[t-L .. t]`, `truth = values[t .. t+H]`.
pub fn window_at<T: Scalar>(
    values: &[T],
    origin: usize,
    context_len: usize,
    horizon: usize,
) -> Result<WindowPair<T>, SeriesError> {
    if context_len < 2 || horizon == 0 {
        return Err(SeriesError::InvalidWindowShape { context_len, horizon });
    }
    if origin < context_len || origin + horizon > values.len() {
        return Err(SeriesError::WindowOutOfRange {
            origin,
            context_len,
            horizon,
            len: values.len(),
        });
    }
    Ok(WindowPair {
        context: values[origin - context_len..origin].to_vec(),
        truth: values[origin..origin + horizon].to_vec(),
        origin,
    })
}
