//! Seed-averaged RI, best-source selection, the data-reduction comparison and
//! the flat `results.csv` format.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ResultRecord;
use crate::error::{Error, Result};
use crate::metrics::relative_improvement;

/// Sparse density of the data-reduction check.
pub(super) const REDUCTION_SPARSE: f64 = 0.05;
/// Sparse/dense pair "echoing" the main check one step down.
const REDUCTION_SECONDARY: (f64, f64) = (0.01, 0.05);

/// Totally ordered density, for grouping.
#[derive(Debug, Clone, Copy, PartialEq)]
struct D(f64);

impl Eq for D {}

impl PartialOrd for D {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for D {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub(super) fn record_order(a: &ResultRecord, b: &ResultRecord) -> Ordering {
    a.grid
        .cmp(&b.grid)
        .then(a.target_density.total_cmp(&b.target_density))
        .then(a.matched.cmp(&b.matched))
        .then(a.source_density.total_cmp(&b.source_density))
        .then(a.seed.cmp(&b.seed))
}

fn baselines(records: &[ResultRecord]) -> BTreeMap<(&str, D, u64), &ResultRecord> {
    records
        .iter()
        .filter(|r| !r.is_transfer())
        .map(|r| ((r.grid.as_str(), D(r.target_density), r.seed), r))
        .collect()
}

/// Test-split RI of each record against its non-transfer twin (same grid,
/// target density and seed); `None` for non-transfer records, failed runs
/// and non-positive baselines.
pub fn record_ri(records: &[ResultRecord]) -> Vec<Option<f64>> {
    let base = baselines(records);
    records
        .iter()
        .map(|r| {
            if !r.is_transfer() {
                return None;
            }
            let b = base.get(&(r.grid.as_str(), D(r.target_density), r.seed))?;
            relative_improvement(r.r2_test?, b.r2_test?)
        })
        .collect()
}

/// Mean of all values, or `None` if any is missing or there are none.
fn strict_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Seed-aggregated RI for one (grid, target density, source density, matched) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiRow {
    pub grid: String,
    pub target_density: f64,
    pub source_density: f64,
    pub matched: bool,
    pub seeds: usize,
    /// Seeds whose RI is defined.
    pub defined: usize,
    /// Seed mean; defined only when every seed's RI is.
    pub ri_mean: Option<f64>,
    pub ri_min: Option<f64>,
    pub ri_max: Option<f64>,
    /// Seed-mean test R² of the transfer and non-transfer runs.
    pub r2_transfer: Option<f64>,
    pub r2_non_transfer: Option<f64>,
}

pub fn compute_ri_table(records: &[ResultRecord]) -> Vec<RiRow> {
    let ri = record_ri(records);
    let base = baselines(records);
    let mut groups: BTreeMap<(&str, D, bool, D), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate().filter(|(_, r)| r.is_transfer()) {
        groups
            .entry((r.grid.as_str(), D(r.target_density), r.matched, D(r.source_density)))
            .or_default()
            .push(i);
    }
    groups
        .into_iter()
        .map(|((grid, td, matched, sd), idx)| {
            let defined: Vec<f64> = idx.iter().filter_map(|&i| ri[i]).collect();
            let fold = |f: fn(f64, f64) -> f64| defined.iter().copied().reduce(f);
            RiRow {
                grid: grid.to_string(),
                target_density: td.0,
                source_density: sd.0,
                matched,
                seeds: idx.len(),
                defined: defined.len(),
                ri_mean: strict_mean(idx.iter().map(|&i| ri[i])),
                ri_min: fold(f64::min),
                ri_max: fold(f64::max),
                r2_transfer: strict_mean(idx.iter().map(|&i| records[i].r2_test)),
                r2_non_transfer: strict_mean(idx.iter().map(|&i| {
                    let r = &records[i];
                    base.get(&(grid, td, r.seed)).and_then(|b| b.r2_test)
                })),
            }
        })
        .collect()
}

/// Highest seed-mean RI over source densities for one (grid, target density).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRi {
    pub grid: String,
    pub target_density: f64,
    pub matched: bool,
    /// Winning source density; `None` when no source has a defined RI.
    pub source_density: Option<f64>,
    pub ri_mean: Option<f64>,
}

pub fn best_ri(table: &[RiRow]) -> Vec<BestRi> {
    let mut groups: BTreeMap<(&str, D, bool), BestRi> = BTreeMap::new();
    for row in table {
        let best = groups
            .entry((row.grid.as_str(), D(row.target_density), row.matched))
            .or_insert_with(|| BestRi {
                grid: row.grid.clone(),
                target_density: row.target_density,
                matched: row.matched,
                source_density: None,
                ri_mean: None,
            });
        if let Some(ri) = row.ri_mean {
            if best.ri_mean.is_none_or(|b| ri > b) {
                best.ri_mean = Some(ri);
                best.source_density = Some(row.source_density);
            }
        }
    }
    groups.into_values().collect()
}

/// Best transfer at a sparse density against non-transfer at a denser one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub grid: String,
    pub sparse_density: f64,
    pub dense_density: f64,
    /// Highest seed-mean transfer test R² at the sparse density.
    pub transfer_r2: Option<f64>,
    pub source_density: Option<f64>,
    /// Seed-mean non-transfer test R² at the dense density.
    pub non_transfer_r2: Option<f64>,
    pub pass: bool,
}

/// Per grid: does best transfer at 5% reach non-transfer at `5% * factor`?
/// Also reports 1% against 5%. Uses non-matched runs; pairs absent from the
/// records are skipped.
pub fn data_reduction_check(records: &[ResultRecord], factor: f64) -> Vec<ReductionRow> {
    let mut seed_means: BTreeMap<(&str, D, D), Vec<Option<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.matched) {
        seed_means
            .entry((r.grid.as_str(), D(r.target_density), D(r.source_density)))
            .or_default()
            .push(r.r2_test);
    }
    let grids: std::collections::BTreeSet<&str> = seed_means.keys().map(|k| k.0).collect();
    let pairs = [(REDUCTION_SPARSE, REDUCTION_SPARSE * factor), REDUCTION_SECONDARY];
    let mut rows = Vec::new();
    for grid in grids {
        for (sparse, dense) in pairs {
            let Some(base) = seed_means.get(&(grid, D(dense), D(0.0))) else {
                continue;
            };
            let transfer: Vec<(f64, Option<f64>)> = seed_means
                .range((grid, D(sparse), D(f64::MIN_POSITIVE))..=(grid, D(sparse), D(f64::INFINITY)))
                .map(|(k, v)| (k.2 .0, strict_mean(v.iter().copied())))
                .collect();
            if transfer.is_empty() {
                continue;
            }
            let best = transfer
                .iter()
                .filter_map(|&(sd, r2)| r2.map(|r| (sd, r)))
                .fold(None, |acc: Option<(f64, f64)>, (sd, r)| match acc {
                    Some((_, b)) if b >= r => acc,
                    _ => Some((sd, r)),
                });
            let non_transfer_r2 = strict_mean(base.iter().copied());
            rows.push(ReductionRow {
                grid: grid.to_string(),
                sparse_density: sparse,
                dense_density: dense,
                transfer_r2: best.map(|b| b.1),
                source_density: best.map(|b| b.0),
                non_transfer_r2,
                pass: matches!((best, non_transfer_r2), (Some((_, t)), Some(n)) if t >= n),
            });
        }
    }
    rows
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 8] = [
    "grid",
    "target_density",
    "source_density",
    "seed",
    "matched",
    "r2_val",
    "r2_test",
    "ri_pct",
];

pub fn write_results_csv(records: &[ResultRecord], path: impl AsRef<Path>) -> Result<()> {
    let ri = record_ri(records);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for (r, ri) in records.iter().zip(ri) {
        w.write_record([
            r.grid.clone(),
            r.target_density.to_string(),
            r.source_density.to_string(),
            r.seed.to_string(),
            r.matched.to_string(),
            opt(r.r2_val),
            opt(r.r2_test),
            opt(ri),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `results.csv` back into records. Rows without R² are marked failed.
pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |i: usize| -> Result<Option<f64>> {
            match &row[i] {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|_| bad(format!("row {}: bad number `{s}` in {}", line + 1, RESULTS_HEADER[i]))),
            }
        };
        let req = |i: usize| num(i)?.ok_or_else(|| bad(format!("row {}: empty {}", line + 1, RESULTS_HEADER[i])));
        let seed = row[3]
            .parse()
            .map_err(|_| bad(format!("row {}: bad seed `{}`", line + 1, &row[3])))?;
        let matched = row[4]
            .parse()
            .map_err(|_| bad(format!("row {}: bad matched flag `{}`", line + 1, &row[4])))?;
        let (r2_val, r2_test) = (num(5)?, num(6)?);
        out.push(ResultRecord {
            grid: row[0].to_string(),
            target_density: req(1)?,
            source_density: req(2)?,
            seed,
            matched,
            r2_val,
            r2_test,
            run_id: String::new(),
            error: r2_test.is_none().then(|| "run failed".to_string()),
        });
    }
    Ok(out)
}

pub(super) fn write_ri_csv(rows: &[RiRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "grid", "target_density", "source_density", "matched", "seeds", "defined", "ri_mean", "ri_min",
        "ri_max", "r2_transfer", "r2_non_transfer",
    ])?;
    for r in rows {
        w.write_record([
            r.grid.clone(),
            r.target_density.to_string(),
            r.source_density.to_string(),
            r.matched.to_string(),
            r.seeds.to_string(),
            r.defined.to_string(),
            opt(r.ri_mean),
            opt(r.ri_min),
            opt(r.ri_max),
            opt(r.r2_transfer),
            opt(r.r2_non_transfer),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn write_best_csv(rows: &[BestRi], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid", "target_density", "matched", "best_source_density", "ri_mean"])?;
    for r in rows {
        w.write_record([
            r.grid.clone(),
            r.target_density.to_string(),
            r.matched.to_string(),
            opt(r.source_density),
            opt(r.ri_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn write_reduction_csv(rows: &[ReductionRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "grid", "sparse_density", "dense_density", "transfer_r2", "source_density", "non_transfer_r2", "pass",
    ])?;
    for r in rows {
        w.write_record([
            r.grid.clone(),
            r.sparse_density.to_string(),
            r.dense_density.to_string(),
            opt(r.transfer_r2),
            opt(r.source_density),
            opt(r.non_transfer_r2),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
