//! CSV rows and JSON manifests for experiment results.
//!
//! CSV files use a header row, `,` separators, `.` decimals and `\n` line
//! endings; floats are written in shortest round-trip form, so identical
//! results give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::experiments::Estimate;

pub const CSV_COLUMNS: [&str; 11] = [
    "experiment",
    "q",
    "p",
    "n",
    "rho",
    "bc",
    "seed",
    "replicas",
    "value",
    "std_error",
    "extra_json",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub experiment: String,
    pub q: f64,
    pub p: f64,
    pub n: usize,
    pub rho: f64,
    pub bc: String,
    pub seed: u64,
    pub replicas: usize,
    pub value: f64,
    pub std_error: f64,
    pub extra_json: String,
}

impl Row {
    pub fn from_estimate(experiment: &str, est: &Estimate, extra: serde_json::Value) -> Row {
        Row {
            experiment: experiment.into(),
            q: est.q,
            p: est.p,
            n: est.n,
            rho: est.rho,
            bc: est.bc.clone(),
            seed: est.seed,
            replicas: est.replicas,
            value: est.value,
            std_error: est.std_error,
            extra_json: extra.to_string(),
        }
    }
}

pub fn write_rows(out: impl Write, rows: &[Row]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows_to_path(path: &Path, rows: &[Row]) -> Result<()> {
    write_rows(BufWriter::new(File::create(path)?), rows)
}

pub fn read_rows(input: impl std::io::Read) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Full run configuration as given (after flag overrides).
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub rows: usize,
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Manifest {
        Manifest {
            tool: "rcm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            outputs: Vec::new(),
            rows: 0,
            wall_time_seconds: 0.0,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}
