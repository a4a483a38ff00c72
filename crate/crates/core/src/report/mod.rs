//! Figure analogs from `results.csv`: training dynamics per grid, RI versus
//! density, best RI with and without the matched grid, and target R² with
//! and without transfer. Each figure is one SVG plus the CSV it plots.

mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::{best_ri, compute_ri_table, read_results_csv, ResultRecord};

pub use svg::{Chart, Kind, Panel, Series};

/// One row of `histories.csv`.
#[derive(Debug, Clone, PartialEq)]
struct HistoryRow {
    grid: String,
    target_density: f64,
    source_density: f64,
    matched: bool,
    epoch: usize,
    val_r2: f64,
}

fn read_histories(path: &Path) -> Result<Vec<HistoryRow>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != 9 {
            return Err(bad(format!("row {}: expected 9 fields, found {}", i + 1, row.len())));
        }
        let p = |j: usize| -> Result<f64> {
            row[j]
                .parse()
                .map_err(|_| bad(format!("row {}: bad number `{}`", i + 1, &row[j])))
        };
        out.push(HistoryRow {
            grid: row[0].to_string(),
            target_density: p(1)?,
            source_density: p(2)?,
            matched: row[4] == *"true",
            epoch: p(5)? as usize,
            val_r2: p(8)?,
        });
    }
    Ok(out)
}

fn pct(d: f64) -> String {
    format!("{}%", d * 100.0)
}

fn source_label(sd: f64) -> String {
    if sd == 0.0 {
        "non-transfer".into()
    } else {
        format!("source {}", pct(sd))
    }
}

fn grids(records: &[ResultRecord]) -> Vec<String> {
    let mut g: Vec<String> = records.iter().map(|r| r.grid.clone()).collect();
    g.sort();
    g.dedup();
    g
}

fn densities(records: &[ResultRecord], grid: &str) -> Vec<f64> {
    let mut d: Vec<f64> = records
        .iter()
        .filter(|r| r.grid == grid && !r.matched)
        .map(|r| r.target_density)
        .collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    d
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Seed-mean validation R² per epoch for every non-matched run of `grid`.
fn dynamics(history: &[HistoryRow], grid: &str) -> BTreeMap<(u64, u64), Vec<(usize, f64)>> {
    let mut acc: BTreeMap<(u64, u64, usize), (f64, usize)> = BTreeMap::new();
    for h in history.iter().filter(|h| h.grid == grid && !h.matched) {
        let e = acc
            .entry((h.target_density.to_bits(), h.source_density.to_bits(), h.epoch))
            .or_insert((0.0, 0));
        e.0 += h.val_r2;
        e.1 += 1;
    }
    let mut out: BTreeMap<(u64, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for ((td, sd, epoch), (sum, n)) in acc {
        out.entry((td, sd)).or_default().push((epoch, sum / n as f64));
    }
    out
}

/// Writes every figure into `out_dir`; returns the files written.
///
/// Training dynamics come from `histories.csv` beside `results.csv` when it
/// exists; without it those charts are drawn empty.
pub fn write_report(results: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let results = results.as_ref();
    let out_dir = out_dir.as_ref();
    let records = read_results_csv(results)?;
    if records.is_empty() {
        return Err(Error::Report(format!("no records in {}", results.display())));
    }
    let hist_path = results.with_file_name("histories.csv");
    let history = if hist_path.exists() {
        read_histories(&hist_path)?
    } else {
        Vec::new()
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |stem: &str, chart: Chart, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let svg = out_dir.join(format!("{stem}.svg"));
        let csv = out_dir.join(format!("{stem}.csv"));
        fs::write(&svg, chart.render())?;
        write_csv(&csv, header, &rows)?;
        written.push(svg);
        written.push(csv);
        Ok(())
    };
    let grid_names = grids(&records);

    // Training dynamics, one chart per grid, one panel per target density.
    for grid in &grid_names {
        let curves = dynamics(&history, grid);
        let mut panels = Vec::new();
        let mut rows = Vec::new();
        for td in densities(&records, grid) {
            let mut series = Vec::new();
            for ((t, sd), pts) in &curves {
                if *t != td.to_bits() {
                    continue;
                }
                let sd = f64::from_bits(*sd);
                for (e, v) in pts {
                    rows.push(vec![td.to_string(), sd.to_string(), e.to_string(), v.to_string()]);
                }
                series.push(Series {
                    label: source_label(sd),
                    points: pts.iter().map(|&(e, v)| (e as f64, v)).collect(),
                });
            }
            panels.push(Panel {
                title: format!("target density {}", pct(td)),
                categories: None,
                series,
            });
        }
        emit(
            &format!("training_dynamics_{}", file_safe(grid)),
            Chart {
                title: format!("Training dynamics, {grid}"),
                x_label: "epoch".into(),
                y_label: "validation R² (seed mean)".into(),
                kind: Kind::Lines,
                panels,
            },
            &["target_density", "source_density", "epoch", "val_r2_mean"],
            rows,
        )?;
    }

    let table = compute_ri_table(&records);
    let best = best_ri(&table);

    // RI versus target density, lines per source density.
    let mut panels = Vec::new();
    let mut rows = Vec::new();
    for grid in &grid_names {
        let tds = densities(&records, grid);
        let mut by_source: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for r in table.iter().filter(|r| &r.grid == grid && !r.matched) {
            rows.push(vec![
                grid.clone(),
                r.target_density.to_string(),
                r.source_density.to_string(),
                r.ri_mean.map(|v| v.to_string()).unwrap_or_default(),
                r.ri_min.map(|v| v.to_string()).unwrap_or_default(),
                r.ri_max.map(|v| v.to_string()).unwrap_or_default(),
            ]);
            if let (Some(ri), Some(i)) = (r.ri_mean, tds.iter().position(|&d| d == r.target_density)) {
                by_source.entry(r.source_density.to_bits()).or_default().push((i as f64, ri));
            }
        }
        panels.push(Panel {
            title: grid.clone(),
            categories: Some(tds.iter().map(|&d| pct(d)).collect()),
            series: by_source
                .into_iter()
                .map(|(sd, points)| Series {
                    label: source_label(f64::from_bits(sd)),
                    points,
                })
                .collect(),
        });
    }
    emit(
        "ri_by_density",
        Chart {
            title: "Relative improvement versus source and target data density".into(),
            x_label: "target data density".into(),
            y_label: "RI % (seed mean)".into(),
            kind: Kind::Lines,
            panels,
        },
        &["grid", "target_density", "source_density", "ri_mean", "ri_min", "ri_max"],
        rows,
    )?;

    // Best RI over source models, non-matched against matched.
    let mut panels = Vec::new();
    let mut rows = Vec::new();
    for grid in &grid_names {
        let tds = densities(&records, grid);
        let mut series: BTreeMap<bool, Vec<(f64, f64)>> = BTreeMap::new();
        for b in best.iter().filter(|b| &b.grid == grid) {
            rows.push(vec![
                grid.clone(),
                b.target_density.to_string(),
                b.matched.to_string(),
                b.source_density.map(|v| v.to_string()).unwrap_or_default(),
                b.ri_mean.map(|v| v.to_string()).unwrap_or_default(),
            ]);
            if let (Some(ri), Some(i)) = (b.ri_mean, tds.iter().position(|&d| d == b.target_density)) {
                series.entry(b.matched).or_default().push((i as f64, ri));
            }
        }
        panels.push(Panel {
            title: grid.clone(),
            categories: Some(tds.iter().map(|&d| pct(d)).collect()),
            series: series
                .into_iter()
                .map(|(m, points)| Series {
                    label: if m { "matched grid".into() } else { "non-matched grid".into() },
                    points,
                })
                .collect(),
        });
    }
    emit(
        "best_ri_matched",
        Chart {
            title: "Best RI over source models".into(),
            x_label: "target data density".into(),
            y_label: "best RI % (seed mean)".into(),
            kind: Kind::Bars,
            panels,
        },
        &["grid", "target_density", "matched", "best_source_density", "ri_mean"],
        rows,
    )?;

    // Target R² with and without transfer.
    let mut panels = Vec::new();
    let mut rows = Vec::new();
    for grid in &grid_names {
        let tds = densities(&records, grid);
        let (mut base, mut transfer) = (Vec::new(), Vec::new());
        for (i, &td) in tds.iter().enumerate() {
            let mut means: BTreeMap<u64, (f64, usize, bool)> = BTreeMap::new();
            for r in records.iter().filter(|r| &r.grid == grid && !r.matched && r.target_density == td) {
                let e = means.entry(r.source_density.to_bits()).or_insert((0.0, 0, true));
                match r.r2_test {
                    Some(v) => {
                        e.0 += v;
                        e.1 += 1;
                    }
                    None => e.2 = false,
                }
            }
            let mean = |(s, n, ok): (f64, usize, bool)| (ok && n > 0).then(|| s / n as f64);
            let nt = means.get(&0f64.to_bits()).copied().and_then(mean);
            let bt = means
                .iter()
                .filter(|(sd, _)| **sd != 0f64.to_bits())
                .filter_map(|(sd, v)| mean(*v).map(|m| (f64::from_bits(*sd), m)))
                .fold(None, |acc: Option<(f64, f64)>, (sd, m)| match acc {
                    Some((_, b)) if b >= m => acc,
                    _ => Some((sd, m)),
                });
            if let Some(v) = nt {
                base.push((i as f64, v));
            }
            if let Some((_, v)) = bt {
                transfer.push((i as f64, v));
            }
            let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            rows.push(vec![grid.clone(), td.to_string(), o(nt), o(bt.map(|b| b.1)), o(bt.map(|b| b.0))]);
        }
        panels.push(Panel {
            title: grid.clone(),
            categories: Some(tds.iter().map(|&d| pct(d)).collect()),
            series: vec![
                Series { label: "non-transfer".into(), points: base },
                Series { label: "best transfer".into(), points: transfer },
            ],
        });
    }
    emit(
        "r2_comparison",
        Chart {
            title: "Target R² with and without transfer".into(),
            x_label: "target data density".into(),
            y_label: "test R² (seed mean)".into(),
            kind: Kind::Lines,
            panels,
        },
        &["grid", "target_density", "r2_non_transfer", "r2_best_transfer", "best_source_density"],
        rows,
    )?;
    Ok(written)
}
