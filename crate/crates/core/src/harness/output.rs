use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::OutputFormat;
use crate::bounds::BoundReport;
use crate::error::{Error, Result};

/// CSV column order.
pub const COLUMNS: [&str; 12] = [
    "experiment",
    "seed",
    "instance",
    "name",
    "bound_value",
    "actual_value",
    "satisfied",
    "slack",
    "constituents",
    "permutation",
    "config_hash",
    "wall_time_ms",
];

/// One flattened bound report or learning record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub seed: u64,
    pub instance: usize,
    pub name: String,
    pub bound_value: Option<f64>,
    pub actual_value: Option<f64>,
    pub satisfied: Option<bool>,
    pub slack: Option<f64>,
    pub constituents: BTreeMap<String, f64>,
    pub permutation: Option<Vec<usize>>,
    pub config_hash: String,
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub fn from_report(
        experiment: &str,
        seed: u64,
        instance: usize,
        report: &BoundReport,
        config_hash: &str,
        wall_time_ms: f64,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            instance,
            name: report.bound_name.clone(),
            bound_value: Some(report.bound_value),
            actual_value: Some(report.actual_value),
            satisfied: Some(report.satisfied),
            slack: Some(report.slack),
            constituents: report.constituents.clone(),
            permutation: report.permutation.clone(),
            config_hash: config_hash.into(),
            wall_time_ms,
        }
    }

    /// Record without a bound (learning statistics).
    pub fn measurement(
        experiment: &str,
        seed: u64,
        instance: usize,
        name: impl Into<String>,
        value: f64,
        constituents: BTreeMap<String, f64>,
        config_hash: &str,
        wall_time_ms: f64,
    ) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            instance,
            name: name.into(),
            bound_value: None,
            actual_value: Some(value),
            satisfied: None,
            slack: None,
            constituents,
            permutation: None,
            config_hash: config_hash.into(),
            wall_time_ms,
        }
    }

    pub fn violated(&self) -> bool {
        self.satisfied == Some(false)
    }

    fn record(&self) -> Result<Vec<String>> {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        Ok(vec![
            self.experiment.clone(),
            self.seed.to_string(),
            self.instance.to_string(),
            self.name.clone(),
            opt(self.bound_value),
            opt(self.actual_value),
            self.satisfied.map(|b| b.to_string()).unwrap_or_default(),
            opt(self.slack),
            serde_json::to_string(&self.constituents)?,
            match &self.permutation {
                Some(p) => serde_json::to_string(p)?,
                None => String::new(),
            },
            self.config_hash.clone(),
            format!("{:.3}", self.wall_time_ms),
        ])
    }
}

/// Stable order by (experiment, seed, instance); ties keep their input order.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        (a.experiment.as_str(), a.seed, a.instance).cmp(&(b.experiment.as_str(), b.seed, b.instance))
    });
}

/// SHA-256 over every row with the wall-time column blanked.
pub fn determinism_hash(rows: &[ResultRow]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        let mut r = r.clone();
        r.wall_time_ms = 0.0;
        h.update(serde_json::to_vec(&r).expect("rows serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record(r.record()?)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))
}

pub fn emit_results(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<()> {
    let bytes = match format {
        OutputFormat::Csv => rows_to_csv(rows)?,
        OutputFormat::Json => serde_json::to_vec_pretty(rows)?,
    };
    write_atomic(path, &bytes)
}

/// Generic CSV table with a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv buffer: {e}")))?;
    write_atomic(path, &bytes)
}

pub fn results_dir(out: &Path, experiment: &str, config_hash: &str) -> PathBuf {
    out.join(experiment).join(config_hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: usize) -> ResultRow {
        let report = BoundReport::new(
            "team_generalization",
            BTreeMap::from([("psi".to_string(), 0.25 * i as f64)]),
            1.0 / 3.0,
            0.1,
        );
        ResultRow::from_report("verify-bounds", 7, i, &report, "abc", 1.5)
    }

    #[test]
    fn empty_csv_is_header_only() {
        let text = String::from_utf8(rows_to_csv(&[]).unwrap()).unwrap();
        assert_eq!(text.trim_end(), COLUMNS.join(","));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let rows: Vec<ResultRow> = (0..5).map(row).collect();
        emit_results(&rows, OutputFormat::Json, &path).unwrap();
        let back: Vec<ResultRow> = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn sort_is_stable_by_key() {
        let mut rows: Vec<ResultRow> = (0..10_000).map(|i| row(9_999 - i)).collect();
        rows[0].name = "z".into();
        sort_rows(&mut rows);
        assert!(rows.windows(2).all(|w| w[0].instance <= w[1].instance));
        assert_eq!(rows.last().unwrap().name, "z");
    }

    #[test]
    fn hash_ignores_wall_time() {
        let a = vec![row(1)];
        let mut b = a.clone();
        b[0].wall_time_ms = 99.0;
        assert_eq!(determinism_hash(&a), determinism_hash(&b));
        b[0].actual_value = Some(0.2);
        assert_ne!(determinism_hash(&a), determinism_hash(&b));
    }

    #[test]
    fn io_error_has_path() {
        let err = emit_results(&[], OutputFormat::Csv, Path::new("/proc/definitely/not/here.csv"))
            .unwrap_err();
        assert!(err.to_string().contains("/proc/definitely"), "{err}");
    }
}
