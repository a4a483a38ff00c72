//! TOML configuration: technology tables, grid configs, train configs and
//! experiment plans.
//!
//! Any file may carry `include = ["other.toml", ...]` (paths relative to the
//! including file) and inline `[tech.<name>]` tables. Included technology
//! tables are merged first; inline ones override them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::harness::{ExperimentPlan, FastProfile};
use crate::nn::TrainConfig;
use crate::surrogate::TechnologyProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TechEntry {
    sigma: f64,
    t_metal: f64,
    h_gap: f64,
    k_max: f64,
    freq: f64,
    #[serde(default = "default_z_load")]
    z_load: f64,
}

fn default_z_load() -> f64 {
    50.0
}

/// Named technology profiles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TechTable(BTreeMap<String, TechnologyProfile>);

impl TechTable {
    pub fn get(&self, name: &str) -> Result<&TechnologyProfile> {
        self.0
            .get(name)
            .ok_or_else(|| Error::UnknownTechnology(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, tech: TechnologyProfile) {
        self.0.insert(tech.name.clone(), tech);
    }
}

fn config_err(path: &Path, reason: impl ToString) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_toml(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    text.parse::<toml::Table>().map_err(|e| config_err(path, e.message()))
}

fn field<T: serde::de::DeserializeOwned>(path: &Path, key: &str, value: toml::Value) -> Result<T> {
    value
        .try_into()
        .map_err(|e: toml::de::Error| config_err(path, format!("`{key}`: {}", e.message())))
}

/// Technology tables from `table` and everything it includes.
fn collect_techs(path: &Path, table: &mut toml::Table, depth: usize) -> Result<TechTable> {
    if depth > 8 {
        return Err(config_err(path, "include nesting deeper than 8"));
    }
    let mut techs = TechTable::default();
    if let Some(inc) = table.remove("include") {
        let files: Vec<PathBuf> = field(path, "include", inc)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in files {
            let p = base.join(f);
            let mut sub = read_toml(&p)?;
            for t in collect_techs(&p, &mut sub, depth + 1)?.0.into_values() {
                techs.insert(t);
            }
        }
    }
    if let Some(inline) = table.remove("tech") {
        let entries: BTreeMap<String, TechEntry> = field(path, "tech", inline)?;
        for (name, e) in entries {
            let t = TechnologyProfile {
                name,
                sigma: e.sigma,
                t_metal: e.t_metal,
                h_gap: e.h_gap,
                k_max: e.k_max,
                freq: e.freq,
                z_load: e.z_load,
            };
            t.validate()?;
            techs.insert(t);
        }
    }
    Ok(techs)
}

/// Loads only the technology tables of a file.
pub fn load_techs(path: impl AsRef<Path>) -> Result<TechTable> {
    let path = path.as_ref();
    collect_techs(path, &mut read_toml(path)?, 0)
}

/// `gen-data` input: one grid plus the technologies it may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub grid: GridSpec,
    pub tech: TechnologyProfile,
    pub split_seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    grid: GridSpec,
    #[serde(default)]
    split_seed: u64,
}

pub fn load_grid_config(path: impl AsRef<Path>) -> Result<GridConfig> {
    let path = path.as_ref();
    let mut table = read_toml(path)?;
    let techs = collect_techs(path, &mut table, 0)?;
    // A `[train]` table may sit beside the grid for `xfmr train`.
    table.remove("train");
    let file: GridFile = field(path, "grid config", toml::Value::Table(table))?;
    file.grid.validate()?;
    let tech = techs.get(&file.grid.tech)?.clone();
    Ok(GridConfig {
        grid: file.grid,
        tech,
        split_seed: file.split_seed,
    })
}

#[derive(Deserialize)]
struct TrainFile {
    #[serde(default)]
    train: Option<TrainConfig>,
}

/// Reads the `[train]` table of any config file; absent means defaults.
pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let mut table = read_toml(path)?;
    table.retain(|k, _| k == "train");
    let file: TrainFile = field(path, "train", toml::Value::Table(table))?;
    let cfg = file.train.unwrap_or_default();
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default)]
    out: Option<PathBuf>,
    source: GridSpec,
    targets: Vec<GridSpec>,
    #[serde(default = "defaults::source_densities")]
    source_densities: Vec<f64>,
    #[serde(default = "defaults::target_densities")]
    target_densities: Vec<f64>,
    #[serde(default = "defaults::seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    source_seed: u64,
    #[serde(default)]
    split_seed: u64,
    #[serde(default = "defaults::yes")]
    matched_grid: bool,
    #[serde(default)]
    matched_densities: Option<Vec<f64>>,
    #[serde(default = "defaults::reduction_factor")]
    data_reduction_factor: Option<f64>,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    fast: FastProfile,
}

mod defaults {
    pub fn source_densities() -> Vec<f64> {
        vec![0.25, 0.5, 0.75, 1.0]
    }
    pub fn target_densities() -> Vec<f64> {
        vec![0.005, 0.01, 0.05, 1.0]
    }
    pub fn seeds() -> Vec<u64> {
        vec![0, 1, 2]
    }
    pub fn yes() -> bool {
        true
    }
    pub fn reduction_factor() -> Option<f64> {
        Some(4.0)
    }
}

/// Loads and validates an experiment plan. Relative `out` paths resolve
/// against the current directory.
pub fn load_plan(path: impl AsRef<Path>) -> Result<ExperimentPlan> {
    let path = path.as_ref();
    let mut table = read_toml(path)?;
    let techs = collect_techs(path, &mut table, 0)?;
    let file: PlanFile = field(path, "plan", toml::Value::Table(table))?;
    let mut tech_of = |g: &GridSpec| techs.get(&g.tech).cloned();
    let source_tech = tech_of(&file.source)?;
    let target_techs = file.targets.iter().map(&mut tech_of).collect::<Result<Vec<_>>>()?;
    let plan = ExperimentPlan {
        source: file.source,
        source_tech,
        targets: file.targets.into_iter().zip(target_techs).collect(),
        source_densities: file.source_densities,
        target_densities: file.target_densities,
        seeds: file.seeds,
        source_seed: file.source_seed,
        split_seed: file.split_seed,
        matched_grid: file.matched_grid,
        matched_densities: file.matched_densities,
        data_reduction_factor: file.data_reduction_factor,
        train: file.train,
        fast: file.fast,
        out: file.out.unwrap_or_else(|| PathBuf::from("runs")),
    };
    plan.validate()?;
    Ok(plan)
}
