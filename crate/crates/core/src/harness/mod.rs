//! Experiment orchestration: source models at several densities, transfer and
//! non-transfer target runs over grids, densities and seeds, the matched-grid
//! variant, and the aggregated tables.

mod tables;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{compute_norm_stats, generate_grid, split_dataset, subsample_density, GridDataset, GridSpec, SplitKind};
use crate::nn::{evaluate, load_checkpoint, save_checkpoint, train, EpochRecord, ModelCheckpoint, TrainConfig};
use crate::surrogate::TechnologyProfile;

pub use tables::{
    best_ri, compute_ri_table, data_reduction_check, read_results_csv, write_results_csv, BestRi,
    ReductionRow, RiRow,
};

/// Environment variable overriding the run cache location.
pub const CACHE_ENV: &str = "XFMR_CACHE_DIR";

/// Overrides applied by `--fast`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FastProfile {
    pub epochs: usize,
    pub hidden: usize,
    pub batch_size: usize,
    /// Step counts `(d_out, w_p, w_s, c1, c2)` for the source grid.
    pub source_steps: [usize; 5],
    /// Step counts for every target grid.
    pub target_steps: [usize; 5],
    /// Target densities of the matched-grid variant; `None` keeps the plan's.
    pub matched_densities: Option<Vec<f64>>,
}

impl Default for FastProfile {
    fn default() -> Self {
        let t = TrainConfig::fast();
        Self {
            epochs: t.epochs,
            hidden: t.hidden,
            batch_size: t.batch_size,
            source_steps: [5, 5, 4, 10, 10],
            target_steps: [4, 4, 4, 25, 25],
            matched_densities: Some(vec![0.01]),
        }
    }
}

fn resize(spec: &GridSpec, s: [usize; 5]) -> GridSpec {
    spec.with_steps([s[0], s[1], s[2]], [s[3], s[4]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub source: GridSpec,
    pub source_tech: TechnologyProfile,
    pub targets: Vec<(GridSpec, TechnologyProfile)>,
    pub source_densities: Vec<f64>,
    pub target_densities: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed of source-model subsampling and training.
    pub source_seed: u64,
    /// Seed of every grid's 6:2:2 split.
    pub split_seed: u64,
    pub matched_grid: bool,
    /// Target densities of the matched-grid variant; `None` means all.
    pub matched_densities: Option<Vec<f64>>,
    /// Enables the data-reduction check, comparing 5% transfer with
    /// non-transfer at 5% times this factor.
    pub data_reduction_factor: Option<f64>,
    pub train: TrainConfig,
    pub fast: FastProfile,
    pub out: PathBuf,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Plan(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.targets.is_empty() {
            return bad("at least one target grid is required".into());
        }
        if self.source_densities.is_empty() || self.target_densities.is_empty() {
            return bad("density lists must not be empty".into());
        }
        let all = self
            .source_densities
            .iter()
            .chain(&self.target_densities)
            .chain(self.matched_densities.iter().flatten());
        for &d in all {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Density(d));
            }
        }
        if let Some(m) = &self.matched_densities {
            if let Some(d) = m.iter().find(|d| !self.target_densities.contains(d)) {
                return bad(format!("matched density {d} is not a target density"));
            }
        }
        if let Some(f) = self.data_reduction_factor {
            if !(f > 1.0) {
                return bad(format!("data_reduction_factor must exceed 1, got {f}"));
            }
        }
        let mut names = BTreeSet::new();
        for (g, t) in std::iter::once((&self.source, &self.source_tech)).chain(self.targets.iter().map(|(g, t)| (g, t))) {
            g.validate()?;
            t.validate()?;
            if g.tech != t.name {
                return bad(format!("grid `{}` names technology `{}` but got `{}`", g.name, g.tech, t.name));
            }
            if !names.insert(g.name.clone()) {
                return bad(format!("duplicate grid name `{}`", g.name));
            }
        }
        self.train.validate()
    }

    /// The plan with the fast profile's grid sizes and training overrides.
    pub fn fast_profile(&self) -> Self {
        let f = &self.fast;
        let mut p = self.clone();
        p.source = resize(&self.source, f.source_steps);
        for (g, _) in &mut p.targets {
            *g = resize(g, f.target_steps);
        }
        p.train.epochs = f.epochs;
        p.train.hidden = f.hidden;
        p.train.batch_size = f.batch_size;
        if f.matched_densities.is_some() {
            p.matched_densities = f.matched_densities.clone();
        }
        p
    }

    /// Declared runs: one non-transfer run plus one transfer run per source
    /// model, for every target grid, target density and seed.
    pub fn cell_count(&self) -> usize {
        self.targets.len() * self.target_densities.len() * (1 + self.source_densities.len()) * self.seeds.len()
    }

    /// Target densities with a non-transfer run, including the auto-added
    /// dense cell of the data-reduction check.
    pub fn baseline_densities(&self) -> Vec<f64> {
        let mut d = self.target_densities.clone();
        if let Some(dense) = self.reduction_density() {
            if !d.contains(&dense) {
                d.push(dense);
            }
        }
        d.sort_by(f64::total_cmp);
        d
    }

    fn reduction_density(&self) -> Option<f64> {
        let f = self.data_reduction_factor?;
        let dense = tables::REDUCTION_SPARSE * f;
        (self.target_densities.contains(&tables::REDUCTION_SPARSE) && dense <= 1.0).then_some(dense)
    }

    pub fn matched_target_densities(&self) -> Vec<f64> {
        if !self.matched_grid {
            return Vec::new();
        }
        self.matched_densities
            .clone()
            .unwrap_or_else(|| self.target_densities.clone())
    }
}

/// One target-grid training run. `source_density == 0` marks non-transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub grid: String,
    pub target_density: f64,
    pub source_density: f64,
    pub seed: u64,
    pub matched: bool,
    pub r2_val: Option<f64>,
    pub r2_test: Option<f64>,
    /// Content hash of the run; keys its cache entry and history rows.
    pub run_id: String,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn is_transfer(&self) -> bool {
        self.source_density > 0.0
    }
}

/// A source model's score on its own grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub grid: String,
    /// Target grid whose sweep the source data reuses, for matched sources.
    pub matched_to: Option<String>,
    pub density: f64,
    pub r2_val: f64,
    pub r2_test: f64,
    pub run_id: String,
}

#[derive(Debug, Clone)]
pub struct SourceModel {
    pub record: SourceRecord,
    pub checkpoint: Arc<ModelCheckpoint>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedRun {
    record: ResultRecord,
    history: Vec<EpochRecord>,
}

pub struct Runner {
    pool: rayon::ThreadPool,
    cache: PathBuf,
    log: Mutex<Option<BufWriter<File>>>,
}

/// Hex SHA-256 prefix of a JSON-serializable key.
fn content_hash(key: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(key).expect("run keys serialize");
    let digest = Sha256::digest(bytes);
    digest[..12].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct RunKey<'a> {
    kind: &'static str,
    grid: &'a GridSpec,
    tech: &'a TechnologyProfile,
    split_seed: u64,
    density: f64,
    train: &'a TrainConfig,
    init: Option<&'a str>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Generates, splits and standardizes one grid.
pub fn prepare_grid(spec: &GridSpec, tech: &TechnologyProfile, split_seed: u64) -> Result<GridDataset> {
    compute_norm_stats(split_dataset(generate_grid(spec, tech)?, split_seed)?)
}

/// Source grid regenerated on the target's sweep values.
fn matched_spec(source: &GridSpec, target: &GridSpec) -> GridSpec {
    GridSpec {
        name: format!("{}@{}", source.name, target.name),
        tech: source.tech.clone(),
        ..target.clone()
    }
}

struct Job<'a> {
    target: usize,
    density: f64,
    seed: u64,
    source: Option<&'a SourceModel>,
    matched: bool,
}

impl Runner {
    /// `workers == 0` uses every available core. The cache lives in
    /// `$XFMR_CACHE_DIR` if set, else `<out>/cache`.
    pub fn new(out: &Path, workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Plan(format!("worker pool: {e}")))?;
        let cache = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| out.join("cache"));
        fs::create_dir_all(&cache)?;
        Ok(Self {
            pool,
            cache,
            log: Mutex::new(None),
        })
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache
    }

    fn append(&self, record: &ResultRecord) -> Result<()> {
        let mut guard = self.log.lock().expect("record log poisoned");
        if let Some(w) = guard.as_mut() {
            serde_json::to_writer(&mut *w, record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    /// Trains (or loads from cache) one source model per density.
    pub fn run_source_stage(
        &self,
        plan: &ExperimentPlan,
        ds: &GridDataset,
        matched_to: Option<&str>,
    ) -> Result<Vec<SourceModel>> {
        let cfg = TrainConfig {
            seed: plan.source_seed,
            ..plan.train.clone()
        };
        self.pool.install(|| {
            plan.source_densities
                .par_iter()
                .map(|&d| self.source_model(ds, &cfg, plan.split_seed, d, matched_to))
                .collect()
        })
    }

    fn source_model(
        &self,
        ds: &GridDataset,
        cfg: &TrainConfig,
        split_seed: u64,
        density: f64,
        matched_to: Option<&str>,
    ) -> Result<SourceModel> {
        let id = content_hash(&RunKey {
            kind: "source",
            grid: &ds.spec,
            tech: &ds.tech,
            split_seed,
            density,
            train: cfg,
            init: None,
        });
        let ckpt_path = self.cache.join(format!("{id}.xckp"));
        let meta_path = self.cache.join(format!("{id}.json"));
        if let (Ok(ckpt), Ok(meta)) = (load_checkpoint(&ckpt_path), fs::read(&meta_path)) {
            if let Ok(record) = serde_json::from_slice::<SourceRecord>(&meta) {
                info!("source {} @ {density}: cached", ds.spec.name);
                let fingerprint = ckpt.fingerprint();
                return Ok(SourceModel {
                    record,
                    checkpoint: Arc::new(ckpt),
                    fingerprint,
                });
            }
        }
        let sub = subsample_density(ds.clone(), density, cfg.seed)?;
        let outcome = train(&sub, cfg, None)?;
        let model = &outcome.checkpoint.model;
        let record = SourceRecord {
            grid: ds.spec.name.clone(),
            matched_to: matched_to.map(str::to_string),
            density,
            r2_val: evaluate(model, ds, SplitKind::Val)?.mean,
            r2_test: evaluate(model, ds, SplitKind::Test)?.mean,
            run_id: id,
        };
        info!("source {} @ {density}: test R² {:.4}", ds.spec.name, record.r2_test);
        save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
        write_atomic(&meta_path, &serde_json::to_vec(&record)?)?;
        let fingerprint = outcome.checkpoint.fingerprint();
        Ok(SourceModel {
            record,
            checkpoint: Arc::new(outcome.checkpoint),
            fingerprint,
        })
    }

    fn target_run(
        &self,
        targets: &[GridDataset],
        plan: &ExperimentPlan,
        job: &Job,
    ) -> (ResultRecord, Vec<EpochRecord>) {
        let ds = &targets[job.target];
        let cfg = TrainConfig {
            seed: job.seed,
            ..plan.train.clone()
        };
        let run_id = content_hash(&RunKey {
            kind: "target",
            grid: &ds.spec,
            tech: &ds.tech,
            split_seed: plan.split_seed,
            density: job.density,
            train: &cfg,
            init: job.source.map(|s| s.fingerprint.as_str()),
        });
        let mut record = ResultRecord {
            grid: ds.spec.name.clone(),
            target_density: job.density,
            source_density: job.source.map_or(0.0, |s| s.record.density),
            seed: job.seed,
            matched: job.matched,
            r2_val: None,
            r2_test: None,
            run_id: run_id.clone(),
            error: None,
        };
        let path = self.cache.join(format!("{run_id}.json"));
        if let Ok(bytes) = fs::read(&path) {
            if let Ok(c) = serde_json::from_slice::<CachedRun>(&bytes) {
                return (c.record, c.history);
            }
        }
        let result = (|| -> Result<_> {
            let sub = subsample_density(ds.clone(), job.density, job.seed)?;
            let init = job.source.map(|s| s.checkpoint.as_ref());
            let outcome = train(&sub, &cfg, init)?;
            let m = &outcome.checkpoint.model;
            Ok((
                evaluate(m, ds, SplitKind::Val)?.mean,
                evaluate(m, ds, SplitKind::Test)?.mean,
                outcome.history,
            ))
        })();
        match result {
            Ok((val, test, history)) => {
                record.r2_val = Some(val);
                record.r2_test = Some(test);
                let cached = CachedRun {
                    record: record.clone(),
                    history,
                };
                if let Err(e) = serde_json::to_vec(&cached)
                    .map_err(Error::from)
                    .and_then(|b| write_atomic(&path, &b))
                {
                    warn!("could not cache run {run_id}: {e}");
                }
                (cached.record, cached.history)
            }
            Err(e) => {
                warn!("{} @ {} seed {}: {e}", record.grid, record.target_density, record.seed);
                record.error = Some(e.to_string());
                (record, Vec::new())
            }
        }
    }

    /// Non-transfer and transfer runs for every target cell.
    pub fn run_target_stage(
        &self,
        plan: &ExperimentPlan,
        targets: &[GridDataset],
        sources: &[SourceModel],
    ) -> Vec<(ResultRecord, Vec<EpochRecord>)> {
        let mut jobs = Vec::new();
        for t in 0..targets.len() {
            for &density in &plan.baseline_densities() {
                let with_transfer = plan.target_densities.contains(&density);
                for &seed in &plan.seeds {
                    jobs.push(Job { target: t, density, seed, source: None, matched: false });
                    if with_transfer {
                        for s in sources {
                            jobs.push(Job { target: t, density, seed, source: Some(s), matched: false });
                        }
                    }
                }
            }
        }
        self.run_jobs(plan, targets, jobs)
    }

    /// Matched-grid scenario for one target: transfer runs from sources
    /// trained on that target's sweep.
    pub fn run_matched_grid_variant(
        &self,
        plan: &ExperimentPlan,
        targets: &[GridDataset],
        target: usize,
        sources: &[SourceModel],
    ) -> Vec<(ResultRecord, Vec<EpochRecord>)> {
        let mut jobs = Vec::new();
        for density in plan.matched_target_densities() {
            for &seed in &plan.seeds {
                for s in sources {
                    jobs.push(Job { target, density, seed, source: Some(s), matched: true });
                }
            }
        }
        self.run_jobs(plan, targets, jobs)
    }

    fn run_jobs(
        &self,
        plan: &ExperimentPlan,
        targets: &[GridDataset],
        jobs: Vec<Job>,
    ) -> Vec<(ResultRecord, Vec<EpochRecord>)> {
        self.pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let out = self.target_run(targets, plan, job);
                    if let Err(e) = self.append(&out.0) {
                        warn!("record log: {e}");
                    }
                    out
                })
                .collect()
        })
    }

    /// Runs the whole plan and writes its artifacts under `plan.out`.
    pub fn run_experiment(&self, plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
        plan.validate()?;
        fs::create_dir_all(&plan.out)?;
        *self.log.lock().expect("record log poisoned") =
            Some(BufWriter::new(File::create(plan.out.join("records.jsonl"))?));

        info!("generating {} grids", plan.targets.len() + 1);
        let source_ds = prepare_grid(&plan.source, &plan.source_tech, plan.split_seed)?;
        let targets = plan
            .targets
            .iter()
            .map(|(g, t)| prepare_grid(g, t, plan.split_seed))
            .collect::<Result<Vec<_>>>()?;

        let sources = self.run_source_stage(plan, &source_ds, None)?;
        drop(source_ds);
        let mut source_records: Vec<SourceRecord> = sources.iter().map(|s| s.record.clone()).collect();
        let mut runs = self.run_target_stage(plan, &targets, &sources);

        if !plan.matched_target_densities().is_empty() {
            for (i, (g, _)) in plan.targets.iter().enumerate() {
                let spec = matched_spec(&plan.source, g);
                let ds = prepare_grid(&spec, &plan.source_tech, plan.split_seed)?;
                let matched = self.run_source_stage(plan, &ds, Some(&g.name))?;
                source_records.extend(matched.iter().map(|s| s.record.clone()));
                runs.extend(self.run_matched_grid_variant(plan, &targets, i, &matched));
            }
        }
        *self.log.lock().expect("record log poisoned") = None;

        runs.sort_by(|a, b| tables::record_order(&a.0, &b.0));
        let (records, histories): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
        let outcome = ExperimentOutcome::new(records, histories, source_records, plan.data_reduction_factor);
        outcome.write(&plan.out)?;
        Ok(outcome)
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<ResultRecord>,
    pub histories: Vec<Vec<EpochRecord>>,
    pub sources: Vec<SourceRecord>,
    pub ri: Vec<RiRow>,
    pub best: Vec<BestRi>,
    pub reduction: Vec<ReductionRow>,
}

impl ExperimentOutcome {
    pub fn new(
        records: Vec<ResultRecord>,
        histories: Vec<Vec<EpochRecord>>,
        sources: Vec<SourceRecord>,
        reduction_factor: Option<f64>,
    ) -> Self {
        let ri = compute_ri_table(&records);
        let best = best_ri(&ri);
        let reduction = reduction_factor
            .map(|f| data_reduction_check(&records, f))
            .unwrap_or_default();
        Self {
            records,
            histories,
            sources,
            ri,
            best,
            reduction,
        }
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }

    /// `results.csv`, `histories.csv`, `source.csv`, `ri_table.csv`,
    /// `best_ri.csv` and `data_reduction.csv`.
    pub fn write(&self, out: &Path) -> Result<()> {
        fs::create_dir_all(out)?;
        write_results_csv(&self.records, out.join("results.csv"))?;

        let mut w = csv::Writer::from_path(out.join("histories.csv"))?;
        w.write_record(["grid", "target_density", "source_density", "seed", "matched", "epoch", "lr", "train_loss", "val_r2"])?;
        for (r, h) in self.records.iter().zip(&self.histories) {
            for e in h {
                w.write_record([
                    r.grid.clone(),
                    r.target_density.to_string(),
                    r.source_density.to_string(),
                    r.seed.to_string(),
                    r.matched.to_string(),
                    e.epoch.to_string(),
                    e.lr.to_string(),
                    e.train_loss.to_string(),
                    e.val_r2.to_string(),
                ])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(out.join("source.csv"))?;
        w.write_record(["grid", "matched_to", "source_density", "r2_val", "r2_test"])?;
        for s in &self.sources {
            w.write_record([
                s.grid.clone(),
                s.matched_to.clone().unwrap_or_default(),
                s.density.to_string(),
                s.r2_val.to_string(),
                s.r2_test.to_string(),
            ])?;
        }
        w.flush()?;

        tables::write_ri_csv(&self.ri, out.join("ri_table.csv"))?;
        tables::write_best_csv(&self.best, out.join("best_ri.csv"))?;
        tables::write_reduction_csv(&self.reduction, out.join("data_reduction.csv"))?;
        Ok(())
    }
}
