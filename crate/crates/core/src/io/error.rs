use std::path::{Path, PathBuf};

use thiserror::Error;

/// Input-artifact diagnostics. Every variant names the file, and the line
/// where one is known.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing required column '{column}'")]
    MissingColumn { path: PathBuf, column: &'static str },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error("{path}:{line}: fragment references unknown task '{task}'")]
    UnknownTask { path: PathBuf, line: u64, task: String },
    #[error("{path}:{line}: negative or zero duration {value} ms")]
    NonPositiveDuration { path: PathBuf, line: u64, value: i64 },
    #[error("{path}: task '{task}' has no fragments")]
    NoFragments { path: PathBuf, task: String },
    #[error("{path}: duplicate task id '{task}'")]
    DuplicateTask { path: PathBuf, task: String },
    #[error("{path}:{line}:{column}: at '{field}': {message}")]
    Schema { path: PathBuf, field: String, line: usize, column: usize, message: String },
    #[error("{path}: at '{field}': {message}")]
    Invalid { path: PathBuf, field: String, message: String },
}

impl InputError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        InputError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn invalid(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        InputError::Invalid { path: path.to_path_buf(), field: field.into(), message: message.into() }
    }

    pub(crate) fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Self {
        InputError::Malformed { path: path.to_path_buf(), line, message: message.into() }
    }
}

/// Column lookup over a CSV header row.
pub(crate) struct Columns<'a> {
    path: &'a Path,
    headers: csv::StringRecord,
}

impl<'a> Columns<'a> {
    pub(crate) fn new(path: &'a Path, headers: csv::StringRecord) -> Self {
        Columns { path, headers }
    }

    pub(crate) fn required(&self, name: &'static str) -> Result<usize, InputError> {
        self.optional(name).ok_or(InputError::MissingColumn { path: self.path.to_path_buf(), column: name })
    }

    pub(crate) fn optional(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h.trim() == name)
    }
}

/// Typed cell access with line-precise errors.
pub(crate) struct Row<'a> {
    pub path: &'a Path,
    pub line: u64,
    pub record: &'a csv::StringRecord,
}

impl Row<'_> {
    pub(crate) fn str(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("").trim()
    }

    pub(crate) fn parse<T: std::str::FromStr>(&self, idx: usize, what: &str) -> Result<T, InputError> {
        let raw = self.str(idx);
        raw.parse::<T>()
            .map_err(|_| InputError::malformed(self.path, self.line, format!("cannot parse {what} from '{raw}'")))
    }

    /// Numeric cell that may carry a fractional part; rounds to an integer.
    pub(crate) fn millis(&self, idx: usize, what: &str) -> Result<i64, InputError> {
        let v: f64 = self.parse(idx, what)?;
        if !v.is_finite() {
            return Err(InputError::malformed(self.path, self.line, format!("{what} is not finite")));
        }
        Ok(v.round() as i64)
    }

    pub(crate) fn timestamp(&self, idx: usize, what: &str) -> Result<crate::time::SimTime, InputError> {
        let raw = self.str(idx);
        if let Ok(v) = raw.parse::<f64>() {
            if v.is_finite() {
                return Ok(crate::time::SimTime(v.trunc() as i64));
            }
        }
        crate::time::parse_timestamp(raw)
            .ok_or_else(|| InputError::malformed(self.path, self.line, format!("cannot parse {what} from '{raw}'")))
    }
}

pub(crate) fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, InputError> {
    let file = std::fs::File::open(path).map_err(|e| InputError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(file))
}

pub(crate) fn csv_error(path: &Path, err: csv::Error) -> InputError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    InputError::malformed(path, line, err.to_string())
}

/// Deserializes a JSON document, reporting the failing field path and position.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, InputError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        InputError::Schema {
            path: path.to_path_buf(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}
