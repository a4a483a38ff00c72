use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xfmr_tl::config::{load_grid_config, load_plan, load_train_config};
use xfmr_tl::grid::{
    compute_norm_stats, export_csv, generate_grid, load_dataset, save_dataset, split_dataset, subsample_density,
    SplitKind, V_COLUMNS, X_COLUMNS, Y_COLUMNS,
};
use xfmr_tl::harness::{ExperimentOutcome, Runner};
use xfmr_tl::nn::{evaluate, load_checkpoint, load_init_checkpoint, save_checkpoint, train, TrainConfig};
use xfmr_tl::report::write_report;
use xfmr_tl::Result;

#[derive(Parser)]
#[command(name = "xfmr", version, about = "Transfer-learning workbench for transformer matching-network synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, split and standardize a grid dataset.
    GenData {
        /// Grid config (`[grid]` table plus technologies).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
        /// Split seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Keep only this fraction of the train split.
        #[arg(long)]
        density: Option<f64>,
        /// Also write a CSV twin next to the dataset.
        #[arg(long)]
        export_csv: bool,
    },
    /// Train a model from random initialization, or from `--init-from`.
    Train(TrainArgs),
    /// Fine-tune a source checkpoint on a target dataset.
    Transfer(TrainArgs),
    /// Print the R² report of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: SplitKind,
    },
    /// Run an experiment plan end to end.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the plan).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a single seed instead of the plan's list.
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel training runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Apply the plan's reduced profile.
        #[arg(long)]
        fast: bool,
    },
    /// Emit figure analogs from a results.csv.
    Report {
        /// Path to results.csv.
        #[arg(long, visible_alias = "config")]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// File with a `[train]` table; defaults apply without it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Output checkpoint; the history CSV is written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Train on this fraction of the dataset's train split.
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// 50 epochs, 64 hidden units, batch 64.
    #[arg(long)]
    fast: bool,
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("history.csv")
}

fn gen_data(config: &Path, out: &Path, seed: Option<u64>, density: Option<f64>, csv: bool) -> Result<()> {
    let cfg = load_grid_config(config)?;
    let split_seed = seed.unwrap_or(cfg.split_seed);
    let mut ds = compute_norm_stats(split_dataset(generate_grid(&cfg.grid, &cfg.tech)?, split_seed)?)?;
    if let Some(d) = density {
        ds = subsample_density(ds, d, split_seed)?;
    }
    save_dataset(&ds, out)?;
    let split = ds.split()?;
    println!(
        "{}: {} points ({} geometries x {} cap pairs), tech {}, split {}/{}/{} -> {}",
        cfg.grid.name,
        ds.len(),
        cfg.grid.geometry_count(),
        cfg.grid.cap_count(),
        cfg.tech.name,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    let stats = ds.norm_stats()?;
    for (names, cols) in [(&X_COLUMNS[..], &stats.x), (&Y_COLUMNS[..], &stats.y), (&V_COLUMNS[..], &stats.v)] {
        for (i, n) in names.iter().enumerate() {
            println!("  {n:>7}: mean {:.6e}  std {:.6e}", cols.mean[i], cols.std[i]);
        }
    }
    if csv {
        let p = out.with_extension("csv");
        export_csv(&ds, &p)?;
        println!("csv -> {}", p.display());
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, require_init: bool) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_train_config(p)?,
        None => TrainConfig::default(),
    };
    if a.fast {
        let f = TrainConfig::fast();
        cfg.epochs = f.epochs;
        cfg.hidden = f.hidden;
        cfg.batch_size = f.batch_size;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if require_init && a.init_from.is_none() {
        return Err(xfmr_tl::Error::TrainConfig("transfer needs --init-from".into()));
    }
    let init = a.init_from.as_ref().map(|p| load_init_checkpoint(p, &cfg)).transpose()?;
    let full = load_dataset(&a.dataset)?;
    let ds = match a.density {
        Some(d) => subsample_density(full.clone(), d, cfg.seed)?,
        None => full.clone(),
    };
    let outcome = train(&ds, &cfg, init.as_ref())?;
    for w in &outcome.warnings {
        println!("warning: {w}");
    }
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    let hist = history_path(&a.out);
    let mut w = csv::Writer::from_path(&hist)?;
    w.write_record(["epoch", "lr", "train_loss", "val_r2"])?;
    for e in &outcome.history {
        w.write_record([e.epoch.to_string(), e.lr.to_string(), e.train_loss.to_string(), e.val_r2.to_string()])?;
    }
    w.flush()?;
    let val = evaluate(&outcome.checkpoint.model, &full, SplitKind::Val)?;
    println!(
        "trained {} epochs on {} points ({}): val R² {:.6}",
        cfg.epochs,
        ds.split()?.train.len(),
        match &init {
            Some(c) => format!("init from {}", c.provenance.grid),
            None => "random init".into(),
        },
        val.mean
    );
    println!("checkpoint -> {}", a.out.display());
    println!("history -> {}", hist.display());
    Ok(())
}

fn eval_cmd(checkpoint: &Path, dataset: &Path, split: SplitKind) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let r = evaluate(&ckpt.model, &ds, split)?;
    println!("split: {split}");
    println!("n: {}", r.n);
    println!("r2_mean: {}", r.mean);
    for (name, v) in V_COLUMNS.iter().zip(&r.per_dim) {
        println!("r2_{name}: {v}");
    }
    Ok(())
}

fn print_summary(out: &ExperimentOutcome, dir: &Path) {
    let o = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.2}"));
    println!("{} runs, {} failed", out.records.len(), out.failures());
    println!("source models:");
    for s in &out.sources {
        println!(
            "  {} {:>5}%: test R² {:.4}",
            s.grid,
            s.density * 100.0,
            s.r2_test
        );
    }
    println!("best RI (%):");
    for b in &out.best {
        println!(
            "  {} {:>5}% {}: {} (source {})",
            b.grid,
            b.target_density * 100.0,
            if b.matched { "matched" } else { "non-matched" },
            o(b.ri_mean),
            b.source_density.map_or("-".into(), |d| format!("{}%", d * 100.0))
        );
    }
    if !out.reduction.is_empty() {
        println!("data reduction:");
        for r in &out.reduction {
            println!(
                "  {} transfer@{}% {} vs non-transfer@{}% {}: {}",
                r.grid,
                r.sparse_density * 100.0,
                o(r.transfer_r2),
                r.dense_density * 100.0,
                o(r.non_transfer_r2),
                if r.pass { "pass" } else { "fail" }
            );
        }
    }
    println!("results -> {}", dir.join("results.csv").display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out, seed, density, export_csv } => gen_data(&config, &out, seed, density, export_csv),
        Command::Train(a) => train_cmd(&a, false),
        Command::Transfer(a) => train_cmd(&a, true),
        Command::Eval { checkpoint, dataset, split } => eval_cmd(&checkpoint, &dataset, split),
        Command::Experiment { config, out, seed, workers, fast } => {
            let mut plan = load_plan(&config)?;
            if fast {
                plan = plan.fast_profile();
            }
            if let Some(o) = out {
                plan.out = o;
            }
            if let Some(s) = seed {
                plan.seeds = vec![s];
            }
            let runner = Runner::new(&plan.out, workers)?;
            let outcome = runner.run_experiment(&plan)?;
            print_summary(&outcome, &plan.out);
            Ok(())
        }
        Command::Report { results, out } => {
            for f in write_report(&results, &out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
