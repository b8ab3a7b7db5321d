//! CSV tables and the JSON run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use killsens::identity_checks::IdentityReport;
use killsens::EstimatorResult;

use crate::config::RunConfig;

pub const RESULTS_FILE: &str = "results.csv";
pub const IDENTITIES_FILE: &str = "identities.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// One line of `results.csv`. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub estimator: String,
    pub engine: String,
    pub n: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<u64>,
    pub mean: f64,
    pub stderr: f64,
    pub oracle: Option<f64>,
    pub abs_err: Option<f64>,
    pub z: Option<f64>,
    pub seconds: f64,
}

pub const COLUMNS: [&str; 10] = ["estimator", "engine", "n", "M", "mean", "stderr", "oracle", "abs_err", "z", "seconds"];

impl Row {
    pub fn from_result(r: &EstimatorResult, oracle: Option<f64>) -> Self {
        let abs_err = oracle.map(|o| (r.mean - o).abs());
        let z = oracle.map(|o| z_score(r.mean - o, r.stderr));
        Self {
            estimator: r.estimator.clone(),
            engine: r.engine.clone(),
            n: Some(r.steps),
            m: Some(r.paths),
            mean: r.mean,
            stderr: r.stderr,
            oracle,
            abs_err,
            z,
            seconds: r.seconds,
        }
    }

    /// `|mean - oracle| <= sds stderr + rel |oracle|`; rows without an oracle pass.
    pub fn within(&self, sds: f64, rel: f64) -> bool {
        match (self.oracle, self.abs_err) {
            (Some(o), Some(e)) => e <= sds * self.stderr + rel * o.abs(),
            _ => true,
        }
    }
}

/// Signed error in units of the standard error.
pub fn z_score(err: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        err / stderr
    } else if err == 0.0 {
        0.0
    } else {
        err.signum() * f64::INFINITY
    }
}

pub fn write_rows(path: &Path, rows: &[Row]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}

pub fn read_rows(path: &Path) -> io::Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<Result<_, _>>().map_err(io::Error::other)
}

#[derive(Serialize)]
struct IdentityLine<'a> {
    identity: &'a str,
    model: &'a str,
    x: f64,
    dt: f64,
    lhs: f64,
    rhs: f64,
    residual: f64,
    tolerance: f64,
    pass: bool,
}

pub fn write_identities(path: &Path, reports: &[IdentityReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(IdentityLine {
            identity: &r.identity,
            model: &r.model,
            x: r.x,
            dt: r.dt,
            lhs: r.lhs,
            rhs: r.rhs,
            residual: r.residual,
            tolerance: r.tolerance,
            pass: r.pass,
        })?;
    }
    w.flush()
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    /// SHA-256 of the canonical TOML form of `config`.
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix: u64,
    pub wall_seconds: f64,
    /// Per-row wall times, in CSV order.
    pub row_seconds: Vec<f64>,
    pub files: Vec<PathBuf>,
    /// Subcommand-specific summary (oracle details, fitted order, failures).
    pub summary: serde_json::Value,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_toml().as_bytes()))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> io::Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

pub fn read_manifest(path: &Path) -> io::Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_score_edge_cases() {
        assert_eq!(z_score(0.0, 0.0), 0.0);
        assert_eq!(z_score(-1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(z_score(0.3, 0.1), 0.3 / 0.1);
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::minimal("constant", "expm", 0.0, 1.0);
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
