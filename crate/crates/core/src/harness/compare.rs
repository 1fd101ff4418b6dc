//! Replicate-level comparison of two runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::two_sample_p_value;

use super::export::KEY_COLUMNS;
use super::table::{RawTable, Table};

#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub file: String,
    /// `column=value` pairs of the row's key columns.
    pub key: String,
    pub metric: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["file", "key", "metric", "mean_a", "mean_b", "difference", "p_value"]);
        for r in &self.rows {
            t.push(vec![
                r.file.clone().into(),
                r.key.clone().into(),
                r.metric.clone().into(),
                r.mean_a.into(),
                r.mean_b.into(),
                r.difference.into(),
                r.p_value.into(),
            ]);
        }
        t
    }
}

fn replicate_dirs(run: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for r in 0.. {
        let d = run.join("metrics").join(format!("replicate_{r}"));
        if !d.is_dir() {
            break;
        }
        dirs.push(d);
    }
    if dirs.is_empty() {
        return Err(Error::Missing(format!("{} has no per-replicate metrics", run.display())));
    }
    Ok(dirs)
}

fn csv_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    Ok(names)
}

/// Values per (row key, metric) across the replicates of one run.
type Samples = BTreeMap<(String, String), Vec<f64>>;

fn collect(dirs: &[PathBuf], file: &str) -> Result<(Vec<String>, Vec<String>, Samples)> {
    let mut header = None;
    let mut keys_in_order = None;
    let mut samples: Samples = BTreeMap::new();
    for d in dirs {
        let t = RawTable::read(&d.join(file))?;
        if let Some(h) = &header {
            if *h != t.header {
                return Err(Error::invalid(format!("{file}: header differs between replicates")));
            }
        }
        let key_idx: Vec<usize> = (0..t.header.len()).filter(|&i| KEY_COLUMNS.contains(&t.header[i].as_str())).collect();
        let keys: Vec<String> = t
            .rows
            .iter()
            .map(|row| key_idx.iter().map(|&i| format!("{}={}", t.header[i], row[i])).collect::<Vec<_>>().join(";"))
            .collect();
        for (row, key) in t.rows.iter().zip(&keys) {
            for (i, name) in t.header.iter().enumerate() {
                if key_idx.contains(&i) || row[i].is_empty() {
                    continue;
                }
                let v: f64 = row[i]
                    .parse()
                    .map_err(|_| Error::Parse(format!("{file}: `{}` in column `{name}` is not a number", row[i])))?;
                samples.entry((key.clone(), name.clone())).or_default().push(v);
            }
        }
        header.get_or_insert(t.header);
        keys_in_order.get_or_insert(keys);
    }
    Ok((header.unwrap_or_default(), keys_in_order.unwrap_or_default(), samples))
}

/// Compares every metric of two runs: difference of replicate means and a
/// two-sided permutation p-value over the replicate values. The runs must
/// export the same files, headers and row keys.
pub fn compare_runs(a: &Path, b: &Path, permutations: usize, seed: u64) -> Result<CompareReport> {
    let (da, db) = (replicate_dirs(a)?, replicate_dirs(b)?);
    let files = csv_names(&da[0])?;
    if files != csv_names(&db[0])? {
        return Err(Error::invalid("schema mismatch: the runs export different metric files"));
    }
    let stream = SeedStream::new(seed).derive("compare");
    let mut report = CompareReport::default();
    for file in &files {
        let (ha, ka, sa) = collect(&da, file)?;
        let (hb, kb, sb) = collect(&db, file)?;
        if ha != hb {
            return Err(Error::invalid(format!("schema mismatch: {file} headers differ")));
        }
        if ka != kb {
            return Err(Error::invalid(format!("schema mismatch: {file} row keys differ")));
        }
        let mut seen = std::collections::HashSet::new();
        for key in &ka {
            if !seen.insert(key) {
                continue;
            }
            for metric in &ha {
                let id = (key.clone(), metric.clone());
                let (Some(xa), Some(xb)) = (sa.get(&id), sb.get(&id)) else {
                    continue;
                };
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                let s = stream.derive(file).derive(key).derive(metric);
                report.rows.push(CompareRow {
                    file: file.clone(),
                    key: key.clone(),
                    metric: metric.clone(),
                    mean_a: mean(xa),
                    mean_b: mean(xb),
                    difference: mean(xa) - mean(xb),
                    p_value: two_sample_p_value(xa, xb, permutations, s),
                });
            }
        }
    }
    Ok(report)
}
