//! Evaluation rows, seed aggregates and their CSV / JSON serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use diffcore::Tensor64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::Split;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "method,environment,seed,ade,fde,k_batches,refine_iters";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub environment: String,
    pub seed: u64,
    pub ade: f64,
    pub fde: f64,
    pub k_batches: Option<usize>,
    pub refine_iters: Option<usize>,
}

/// Mean and sample standard deviation over seeds of one
/// (method, environment, k, iters) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub environment: String,
    pub k_batches: Option<usize>,
    pub refine_iters: Option<usize>,
    pub n: usize,
    pub ade_mean: f64,
    pub ade_std: f64,
    pub fde_mean: f64,
    pub fde_std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub config_hash: String,
    pub dataset_hashes: BTreeMap<String, String>,
    pub checkpoint_hashes: BTreeMap<String, String>,
}

/// Mean and sample standard deviation (`n - 1`; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

type CellKey = (String, String, Option<usize>, Option<usize>);

impl EvalReport {
    pub fn push(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.dataset_hashes.extend(other.dataset_hashes);
        self.checkpoint_hashes.extend(other.checkpoint_hashes);
        if self.config_hash.is_empty() {
            self.config_hash = other.config_hash;
        }
    }

    fn cells(&self) -> BTreeMap<CellKey, Vec<&EvalRow>> {
        let mut cells: BTreeMap<CellKey, Vec<&EvalRow>> = BTreeMap::new();
        for r in &self.rows {
            cells
                .entry((
                    r.method.clone(),
                    r.environment.clone(),
                    r.k_batches,
                    r.refine_iters,
                ))
                .or_default()
                .push(r);
        }
        cells
    }

    /// Aggregates recomputed from the rows, sorted by cell.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.cells()
            .into_iter()
            .map(|((method, environment, k_batches, refine_iters), rows)| {
                let (ade_mean, ade_std) = mean_std(&rows.iter().map(|r| r.ade).collect::<Vec<_>>());
                let (fde_mean, fde_std) = mean_std(&rows.iter().map(|r| r.fde).collect::<Vec<_>>());
                Aggregate {
                    method,
                    environment,
                    k_batches,
                    refine_iters,
                    n: rows.len(),
                    ade_mean,
                    ade_std,
                    fde_mean,
                    fde_std,
                }
            })
            .collect()
    }

    /// Seed-mean ADE of one cell.
    pub fn mean_ade(
        &self,
        method: &str,
        environment: &str,
        k: Option<usize>,
        iters: Option<usize>,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                r.method == method
                    && r.environment == environment
                    && r.k_batches == k
                    && r.refine_iters == iters
            })
            .map(|r| r.ade)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(mean_std(&vals).0)
        }
    }

    /// Same as [`mean_ade`](Self::mean_ade) but a missing cell is an error.
    pub fn require_ade(
        &self,
        method: &str,
        environment: &str,
        k: Option<usize>,
        iters: Option<usize>,
    ) -> Result<f64> {
        self.mean_ade(method, environment, k, iters).ok_or_else(|| {
            Error::MissingArtifact(format!(
                "no rows for {method} on {environment} (k {k:?}, iters {iters:?})"
            ))
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EvalRow>> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "{} missing",
                path.display()
            )));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(Error::InvalidInput(format!(
                "{}: unexpected header {:?}",
                path.display(),
                header
            )));
        }
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    /// Appends rows to a report CSV, creating it with a header if needed.
    pub fn append_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
        let mut all = if path.exists() {
            Self::read_csv(path)?
        } else {
            Vec::new()
        };
        all.extend_from_slice(rows);
        EvalReport {
            rows: all,
            ..Default::default()
        }
        .write_csv(path)
    }

    /// `report.csv` (rows), `aggregates.csv` (plot-ready columns) and
    /// `report.json` (rows, aggregates and hashes) under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join("report.csv"))?;
        let agg = self.aggregates();
        let path = dir.join("aggregates.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for a in &agg {
            w.serialize(a)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        #[derive(Serialize)]
        struct Doc<'a> {
            config_hash: &'a str,
            dataset_hashes: &'a BTreeMap<String, String>,
            checkpoint_hashes: &'a BTreeMap<String, String>,
            rows: &'a [EvalRow],
            aggregates: &'a [Aggregate],
        }
        let doc = Doc {
            config_hash: &self.config_hash,
            dataset_hashes: &self.dataset_hashes,
            checkpoint_hashes: &self.checkpoint_hashes,
            rows: &self.rows,
            aggregates: &agg,
        };
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&path, e))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON of any serializable value.
pub fn json_hash(value: &impl Serialize) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

fn hash_tensor(h: &mut Sha256, t: &Tensor64) {
    h.update((t.rows() as u64).to_le_bytes());
    h.update((t.cols() as u64).to_le_bytes());
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
}

/// Hash of a split's exact tensor contents.
pub fn split_hash(split: &Split) -> String {
    let mut h = Sha256::new();
    hash_tensor(&mut h, &split.inputs);
    hash_tensor(&mut h, &split.targets);
    hash_tensor(&mut h, &split.style);
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, ade: f64) -> EvalRow {
        EvalRow {
            method: method.into(),
            environment: "style-0.6".into(),
            seed,
            ade,
            fde: 2.0 * ade,
            k_batches: if method == "m" { Some(2) } else { None },
            refine_iters: None,
        }
    }

    #[test]
    fn sample_std_convention() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn csv_round_trip_keeps_rows_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut rep = EvalReport::default();
        for s in 0..5 {
            rep.push(row("a", s, 0.1 * s as f64 + 1.0 / 3.0));
            rep.push(row("m", s, 0.2));
        }
        rep.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(EvalReport::read_csv(&path).unwrap(), rep.rows);
        EvalReport::append_csv(&path, &[row("a", 9, 1.0)]).unwrap();
        assert_eq!(EvalReport::read_csv(&path).unwrap().len(), 11);
    }

    #[test]
    fn aggregates_ignore_row_order() {
        let mut a = EvalReport::default();
        for s in 0..5 {
            a.push(row("a", s, s as f64));
        }
        let mut b = a.clone();
        b.rows.reverse();
        assert_eq!(a.aggregates(), b.aggregates());
        assert_eq!(a.aggregates()[0].n, 5);
        assert_eq!(a.mean_ade("a", "style-0.6", None, None), Some(2.0));
        assert!(a.require_ade("b", "style-0.6", None, None).is_err());
    }
}
