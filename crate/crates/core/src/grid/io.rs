//! Dataset persistence: the `XGRD` binary format and a CSV twin.
//!
//! Layout after the common frame header: a JSON metadata block (grid spec,
//! technology profile, split seed, density, normalization statistics), the
//! column names, the row count, row-major `f64` values, then an optional split
//! block (flag byte followed by train/val/test index lists).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{value_columns, DesignPoint, GridDataset, GridSpec, NormStats, Split};
use crate::codec::{Reader, Writer};
use crate::error::Result;
use crate::surrogate::TechnologyProfile;

pub const DATASET_MAGIC: &[u8; 4] = b"XGRD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: GridSpec,
    tech: TechnologyProfile,
    split_seed: Option<u64>,
    density: f64,
    norm_stats: Option<NormStats>,
}

pub(crate) fn encode(ds: &GridDataset) -> Result<Vec<u8>> {
    let meta = Meta {
        spec: ds.spec.clone(),
        tech: ds.tech.clone(),
        split_seed: ds.split_seed,
        density: ds.density,
        norm_stats: ds.norm_stats.clone(),
    };
    let mut w = Writer::new(DATASET_MAGIC, DATASET_VERSION);
    w.bytes(&serde_json::to_vec(&meta)?);
    let cols: Vec<&str> = value_columns().collect();
    w.u32(cols.len() as u32);
    for c in &cols {
        w.str(c);
    }
    w.u64(ds.points.len() as u64);
    for p in &ds.points {
        for v in p.row() {
            w.f64(v);
        }
    }
    match &ds.split {
        Some(s) => {
            w.u8(1);
            w.indices(&s.train);
            w.indices(&s.val);
            w.indices(&s.test);
        }
        None => w.u8(0),
    }
    Ok(w.finish())
}

pub fn save_dataset(ds: &GridDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<GridDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let mut r = Reader::open(path, &bytes, DATASET_MAGIC, DATASET_VERSION)?;
    let meta: Meta = serde_json::from_slice(r.bytes()?)?;

    let ncols = r.u32()? as usize;
    let expected: Vec<&str> = value_columns().collect();
    let cols = (0..ncols).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    if cols != expected {
        return Err(r.err(format!("unexpected columns {cols:?}")));
    }
    let nrows = r.len(8 * ncols)?;
    let mut points = Vec::with_capacity(nrows);
    let mut row = [0.0; 12];
    for _ in 0..nrows {
        for v in row.iter_mut() {
            *v = r.f64()?;
        }
        points.push(DesignPoint::from_row(&row));
    }
    let split = match r.u8()? {
        0 => None,
        1 => Some(Split {
            train: r.indices()?,
            val: r.indices()?,
            test: r.indices()?,
        }),
        flag => return Err(r.err(format!("bad split flag {flag}"))),
    };
    if let Some(s) = &split {
        if s.train.iter().chain(&s.val).chain(&s.test).any(|&i| i >= nrows) {
            return Err(r.err("split index out of range".into()));
        }
    }
    r.finish()?;
    Ok(GridDataset {
        spec: meta.spec,
        tech: meta.tech,
        points,
        norm_stats: meta.norm_stats,
        split,
        split_seed: meta.split_seed,
        density: meta.density,
    })
}

/// Writes one row per point with a trailing `split` label (`train`, `val`,
/// `test`, `unused` for train points dropped by subsampling, empty when no
/// split is assigned).
pub fn export_csv(ds: &GridDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut labels = vec![""; ds.len()];
    if let Some(s) = &ds.split {
        labels.iter_mut().for_each(|l| *l = "unused");
        for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
            for &i in idx {
                labels[i] = name;
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = value_columns().collect();
    header.push("split");
    w.write_record(&header)?;
    for (p, label) in ds.points.iter().zip(labels) {
        let mut rec: Vec<String> = p.row().iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
