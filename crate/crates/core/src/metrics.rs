//! Per-episode metric rows and their CSV form.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

pub const CSV_HEADER: &str =
    "run_id,seed,mode,algo,episode,return,steps,exp_time_s,missed_deadlines,policy_version";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub algorithm: String,
    pub episode_index: u64,
    pub episodic_return: f64,
    pub episode_length_steps: u64,
    /// In-episode time only; resets are excluded.
    pub real_experience_time_s: f64,
    pub missed_deadlines: u64,
    pub policy_version_at_episode_start: u64,
}

impl MetricRecord {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.seed,
            self.mode,
            self.algorithm,
            self.episode_index,
            self.episodic_return,
            self.episode_length_steps,
            self.real_experience_time_s,
            self.missed_deadlines,
            self.policy_version_at_episode_start
        )
        .expect("writing to a String cannot fail");
        s
    }

    pub fn parse_row(line: &str) -> Result<Self, CsvError> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(CsvError::FieldCount(f.len()));
        }
        let num = |i: usize| -> Result<u64, CsvError> {
            f[i].parse().map_err(|_| CsvError::BadValue { column: i, value: f[i].to_string() })
        };
        let real = |i: usize| -> Result<f64, CsvError> {
            f[i].parse().map_err(|_| CsvError::BadValue { column: i, value: f[i].to_string() })
        };
        Ok(MetricRecord {
            run_id: f[0].to_string(),
            seed: num(1)?,
            mode: f[2].to_string(),
            algorithm: f[3].to_string(),
            episode_index: num(4)?,
            episodic_return: real(5)?,
            episode_length_steps: num(6)?,
            real_experience_time_s: real(7)?,
            missed_deadlines: num(8)?,
            policy_version_at_episode_start: num(9)?,
        })
    }
}

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("unexpected CSV header `{0}`")]
    Schema(String),
    #[error("expected 10 fields, found {0}")]
    FieldCount(usize),
    #[error("column {column}: cannot parse `{value}`")]
    BadValue { column: usize, value: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Header plus one LF-terminated row per record.
pub fn write_csv<W: Write>(mut w: W, records: &[MetricRecord]) -> io::Result<()> {
    w.write_all(CSV_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for r in records {
        w.write_all(r.csv_row().as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Rejects anything whose header is not exactly [`CSV_HEADER`].
pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<MetricRecord>, CsvError> {
    let mut lines = r.lines();
    match lines.next() {
        Some(h) => {
            let h = h?;
            if h.trim_end_matches('\r') != CSV_HEADER {
                return Err(CsvError::Schema(h));
            }
        }
        None => return Err(CsvError::Schema(String::new())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(MetricRecord::parse_row(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ep: u64, ret: f64) -> MetricRecord {
        MetricRecord {
            run_id: "demo".into(),
            seed: 3,
            mode: "remote_local".into(),
            algorithm: "sac".into(),
            episode_index: ep,
            episodic_return: ret,
            episode_length_steps: 100,
            real_experience_time_s: 4.0,
            missed_deadlines: 0,
            policy_version_at_episode_start: 12,
        }
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[rec(0, -12.5)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{CSV_HEADER}\ndemo,3,remote_local,sac,0,-12.5,100,4,0,12\n")
        );
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![rec(0, 1.0 / 3.0), rec(1, 1234.5678)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let err = read_csv(&b"a,b,c\n1,2,3\n"[..]).unwrap_err();
        assert!(matches!(err, CsvError::Schema(_)));
    }
}
