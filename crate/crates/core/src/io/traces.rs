use std::path::Path;

use serde::{Deserialize, Serialize};

use super::error::{csv_error, csv_reader, Columns, InputError, Row};
use crate::power::{CarbonSample, CarbonTrace};
use crate::time::SimTime;

/// Reads a carbon-intensity trace. The region id is the file stem.
pub fn parse_carbon_trace(path: &Path) -> Result<CarbonTrace, InputError> {
    let region = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::new(path, headers);
    let c_ts = cols.required("timestamp")?;
    let c_ci = cols.required("carbon_intensity")?;

    let mut samples: Vec<CarbonSample> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { path, line, record: &record };
        let start = row.timestamp(c_ts, "timestamp")?;
        let intensity: f64 = row.parse(c_ci, "carbon_intensity")?;
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(InputError::malformed(path, line, format!("carbon intensity {intensity} must be >= 0")));
        }
        if let Some(prev) = samples.last() {
            if start <= prev.start {
                return Err(InputError::malformed(path, line, "timestamps must be strictly increasing"));
            }
        }
        samples.push(CarbonSample { start, intensity });
    }
    CarbonTrace::new(region, samples).map_err(|e| InputError::invalid(path, "samples", e.to_string()))
}

pub fn write_carbon_trace(trace: &CarbonTrace, path: &Path) -> Result<(), InputError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["timestamp", "carbon_intensity"]).map_err(|e| csv_error(path, e))?;
    for s in trace.samples() {
        w.write_record([s.start.0.to_string(), s.intensity.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| InputError::io(path, e))
}

/// How many hosts one failure record takes down.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FailureScope {
    /// Fraction of all hosts in (0, 1]; rounded up to whole hosts.
    Fraction(f64),
    Count(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub start: SimTime,
    pub duration_ms: i64,
    pub scope: FailureScope,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureTrace {
    pub records: Vec<FailureRecord>,
}

/// Reads a failure trace (`failure_start, failure_duration, failure_intensity`,
/// optionally `host_count` to name an explicit number of hosts instead).
pub fn parse_failure_trace(path: &Path) -> Result<FailureTrace, InputError> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns::new(path, headers);
    let c_start = cols.required("failure_start")?;
    let c_dur = cols.required("failure_duration")?;
    let c_int = cols.required("failure_intensity")?;
    let c_count = cols.optional("host_count");

    let mut records = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = Row { path, line, record: &record };
        let start = row.timestamp(c_start, "failure_start")?;
        let duration_ms = row.millis(c_dur, "failure_duration")?;
        if duration_ms <= 0 {
            return Err(InputError::NonPositiveDuration { path: path.to_path_buf(), line, value: duration_ms });
        }
        let scope = match c_count.filter(|&c| !row.str(c).is_empty()) {
            Some(c) => {
                let n: u32 = row.parse(c, "host_count")?;
                if n == 0 {
                    return Err(InputError::malformed(path, line, "host_count must be positive"));
                }
                FailureScope::Count(n)
            }
            None => {
                let f: f64 = row.parse(c_int, "failure_intensity")?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(InputError::malformed(path, line, format!("failure_intensity {f} must lie in (0, 1]")));
                }
                FailureScope::Fraction(f)
            }
        };
        records.push(FailureRecord { start, duration_ms, scope });
    }
    records.sort_by_key(|r| r.start);
    Ok(FailureTrace { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn carbon_trace_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("NL.csv");
        fs::write(&p, "timestamp,carbon_intensity\n2022-01-01T00:00:00Z,120.5\n2022-01-01T01:00:00Z,99\n").unwrap();
        let t = parse_carbon_trace(&p).unwrap();
        assert_eq!(t.region_id(), "NL");
        assert_eq!(t.samples().len(), 2);
        assert_eq!(t.samples()[1].start.since(t.samples()[0].start), 3_600_000);

        let out = dir.path().join("copy.csv");
        write_carbon_trace(&t, &out).unwrap();
        assert_eq!(parse_carbon_trace(&out).unwrap().samples(), t.samples());
    }

    #[test]
    fn carbon_trace_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "timestamp,carbon_intensity\n0,10\n0,20\n").unwrap();
        assert!(parse_carbon_trace(&p).unwrap_err().to_string().contains("bad.csv:3"));
        fs::write(&p, "timestamp,carbon_intensity\n0,-1\n").unwrap();
        assert!(parse_carbon_trace(&p).is_err());
        fs::write(&p, "timestamp,ci\n0,1\n").unwrap();
        assert!(matches!(parse_carbon_trace(&p), Err(InputError::MissingColumn { .. })));
        fs::write(&p, "timestamp,carbon_intensity\n").unwrap();
        assert!(parse_carbon_trace(&p).is_err());
    }

    #[test]
    fn failure_trace_fraction_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "failure_start,failure_duration,failure_intensity,host_count\n5000,100,0.25,\n1000,50,1.0,3\n").unwrap();
        let t = parse_failure_trace(&p).unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[0].scope, FailureScope::Count(3));
        assert_eq!(t.records[1].scope, FailureScope::Fraction(0.25));
    }

    #[test]
    fn failure_fraction_above_one_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        fs::write(&p, "failure_start,failure_duration,failure_intensity\n0,100,1.5\n").unwrap();
        assert!(parse_failure_trace(&p).is_err());
        fs::write(&p, "failure_start,failure_duration,failure_intensity\n0,0,0.5\n").unwrap();
        assert!(matches!(parse_failure_trace(&p), Err(InputError::NonPositiveDuration { .. })));
    }
}
