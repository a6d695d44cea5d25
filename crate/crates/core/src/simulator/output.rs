//! CSV tables and their metadata sidecars.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::experiments::{HierRow, LsRow, SweepRow};
use super::scenario::Scenario;
use super::tracking::TrackSample;
use crate::error::{invalid, Result};

/// One CSV cell. Floats use the shortest representation that reads back
/// exactly; NaN is written as `nan`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) if x.is_nan() => f.write_str("nan"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

impl From<usize> for Value {
    fn from(i: usize) -> Self {
        Value::Int(i as i64)
    }
}

impl From<u32> for Value {
    fn from(i: u32) -> Self {
        Value::Int(i as i64)
    }
}

impl From<u64> for Value {
    fn from(i: u64) -> Self {
        Value::Int(i as i64)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Int(b as i64)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(invalid(format!("row has {} cells, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    /// CSV bytes with a header row and LF line endings.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| panic!("writing to memory failed: {e}");
        w.write_record(&self.header).unwrap_or_else(io);
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).unwrap_or_else(io);
        }
        w.into_inner().expect("in-memory writer")
    }
}

/// Contents of the `.meta` sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct Meta<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub version: &'a str,
    pub scenario: &'a Scenario,
}

impl<'a> Meta<'a> {
    pub fn new(experiment: &'a str, scenario: &'a Scenario) -> Self {
        Self { experiment, seed: scenario.master_seed, version: env!("CARGO_PKG_VERSION"), scenario }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(format!("cannot serialize metadata: {e}")))
    }
}

/// Sidecar path: the CSV path with its extension replaced by `meta`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

/// Writes `table` to `path` and its metadata next to it.
pub fn write_table(path: &Path, table: &Table, meta: &Meta<'_>) -> std::io::Result<()> {
    let text = meta.to_toml().map_err(std::io::Error::other)?;
    fs::write(path, table.to_csv())?;
    fs::write(meta_path(path), text)
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&["pilots", "se", "se_stderr", "capacity", "nmse_g", "nmse_d", "feedback_bits"]);
    for r in rows {
        let row = vec![
            r.pilots.into(),
            r.se.into(),
            r.se_stderr.into(),
            r.capacity.into(),
            r.nmse_g.into(),
            r.nmse_d.into(),
            r.feedback_bits.into(),
        ];
        t.push(row).expect("fixed width");
    }
    t
}

/// Empirical CDF: sample, its SNR in dB and the cumulative probability.
pub fn cdf_table(init: &str, sorted_db: &[f64]) -> Table {
    let mut t = Table::new(&["init", "rank", "snr_db", "probability"]);
    let n = sorted_db.len() as f64;
    for (i, &x) in sorted_db.iter().enumerate() {
        t.push(vec![init.into(), (i + 1).into(), x.into(), ((i + 1) as f64 / n).into()]).expect("fixed width");
    }
    t
}

pub fn track_table(samples: &[TrackSample]) -> Table {
    let mut t = Table::new(&["t_ms", "x", "y", "se", "capacity", "reestimated"]);
    for s in samples {
        t.push(vec![s.t_ms.into(), s.x.into(), s.y.into(), s.se.into(), s.capacity.into(), s.reestimated.into()])
            .expect("fixed width");
    }
    t
}

pub fn ls_table(rows: &[LsRow]) -> Table {
    let mut t = Table::new(&["pilots", "se", "capacity", "nmse_g", "nmse_d", "full_rank_share"]);
    for r in rows {
        t.push(vec![
            r.pilots.into(),
            r.se.into(),
            r.capacity.into(),
            r.nmse_g.into(),
            r.nmse_d.into(),
            r.full_rank.into(),
        ])
        .expect("fixed width");
    }
    t
}

pub fn hier_table(rows: &[HierRow]) -> Table {
    let mut t = Table::new(&["pilots", "mle_se", "hier_se", "capacity"]);
    for r in rows {
        t.push(vec![r.pilots.into(), r.mle_se.into(), r.hier_se.into(), r.capacity.into()]).expect("fixed width");
    }
    t
}
