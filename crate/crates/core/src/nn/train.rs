use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{ModelCheckpoint, Provenance};
use super::model::{Architecture, SynthesisModel};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::grid::{DesignPoint, GridDataset, NormStats, SplitKind};
use crate::metrics::{r_squared, R2Report};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub decay_start_epoch: usize,
    pub decay_every: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Hidden width of both nets.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            lr: 5e-4,
            weight_decay: 1e-4,
            epochs: 300,
            batch_size: 4096,
            decay_factor: 0.2,
            decay_start_epoch: 150,
            decay_every: 50,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            hidden: 512,
        }
    }
}

impl TrainConfig {
    /// Continuous-integration profile: 50 epochs on 64-wide nets. Batches
    /// shrink to 64 so that sparse subsets still take several steps per epoch.
    pub fn fast() -> Self {
        Self {
            epochs: 50,
            hidden: 64,
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::TrainConfig(m));
        if !(self.tau >= 0.0) {
            return bad(format!("tau must be >= 0, got {}", self.tau));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.decay_every == 0 {
            return bad("decay_every must be >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1".into());
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::with_hidden(self.hidden)
    }
}

/// Base rate times `decay_factor` for every decay point
/// (`decay_start_epoch`, `+decay_every`, ...) at or before `epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let decays = if epoch >= cfg.decay_start_epoch {
        (epoch - cfg.decay_start_epoch) / cfg.decay_every + 1
    } else {
        0
    };
    cfg.lr * cfg.decay_factor.powi(decays as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_r2: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

/// Standardized `(x, y, v)` matrices for the given rows.
pub fn standardize_rows(
    ds: &GridDataset,
    rows: &[usize],
    stats: &NormStats,
) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
    fn fill<const K: usize>(
        ds: &GridDataset,
        rows: &[usize],
        cols: &crate::grid::ColumnStats,
        get: impl Fn(&DesignPoint) -> [f64; K],
    ) -> Array2<f32> {
        let mut m = Array2::zeros((rows.len(), K));
        for (r, &i) in rows.iter().enumerate() {
            for (c, v) in get(&ds.points[i]).into_iter().enumerate() {
                m[[r, c]] = cols.standardize(c, v) as f32;
            }
        }
        m
    }
    (
        fill(ds, rows, &stats.x, DesignPoint::x),
        fill(ds, rows, &stats.y, DesignPoint::y),
        fill(ds, rows, &stats.v, DesignPoint::v),
    )
}

/// Geometry predictions in physical units for `rows` of `ds`, standardized
/// with the model's own statistics.
pub fn predict_geometry(
    model: &SynthesisModel<f32>,
    ds: &GridDataset,
    rows: &[usize],
) -> Result<Array2<f64>> {
    let stats = model
        .norm_stats
        .as_ref()
        .ok_or_else(|| Error::Dataset("model carries no normalization statistics".into()))?;
    let (x, _, _) = standardize_rows(ds, rows, stats);
    let (_, v_hat) = model.forward_eval(&x)?;
    let mut out = Array2::zeros(v_hat.dim());
    for ((r, c), &v) in v_hat.indexed_iter() {
        out[[r, c]] = stats.v.restore(c, v as f64);
    }
    Ok(out)
}

/// R² of predicted geometry on one split, in physical units.
pub fn evaluate(model: &SynthesisModel<f32>, ds: &GridDataset, split: SplitKind) -> Result<R2Report> {
    let rows = ds.split()?.indices(split);
    let pred = predict_geometry(model, ds, rows)?;
    let mut target = Array2::zeros((rows.len(), 3));
    for (r, &i) in rows.iter().enumerate() {
        for (c, v) in ds.points[i].v().into_iter().enumerate() {
            target[[r, c]] = v;
        }
    }
    let mut report = r_squared(pred.view(), target.view())?;
    report.split = Some(split);
    Ok(report)
}

/// Trains on the dataset's (possibly subsampled) train split.
///
/// With `init`, every parameter and running statistic starts from the
/// checkpoint and stays trainable; standardization always uses the dataset's
/// own statistics. Optimizer state starts fresh either way.
pub fn train(
    ds: &GridDataset,
    cfg: &TrainConfig,
    init: Option<&ModelCheckpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let stats = ds.norm_stats()?.clone();
    let split = ds.split()?;
    let arch = cfg.architecture();
    let mut model = match init {
        Some(ckpt) => {
            ckpt.model.arch.ensure_matches(&arch)?;
            ckpt.model.clone()
        }
        None => SynthesisModel::new(arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    model.norm_stats = Some(stats.clone());

    let train_rows = &split.train;
    if train_rows.len() < 2 {
        return Err(Error::Dataset(format!(
            "train split has {} points; batch norm needs at least 2",
            train_rows.len()
        )));
    }
    let mut warnings = Vec::new();
    let batch = if cfg.batch_size > train_rows.len() {
        let msg = format!(
            "batch_size {} exceeds train split size {}; clamped",
            cfg.batch_size,
            train_rows.len()
        );
        warn!("{msg}");
        warnings.push(msg);
        train_rows.len()
    } else {
        cfg.batch_size
    };

    let (x, y, v) = standardize_rows(ds, train_rows, &stats);
    let has_val = split.val.len() >= 2;
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle.set_stream(1);
    let mut adam = Adam::new(&model.params_mut(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let tau = cfg.tau as f32;
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut rows_seen) = (0.0f64, 0usize);
        for chunk in order.chunks(batch) {
            if chunk.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let vb = v.select(Axis(0), chunk);
            let pass = model.forward_train(&xb)?;
            let (grads, loss) = model.backward(&pass, &yb, &vb, tau)?;
            adam.step(model.params_mut(), grads.slices(), lr, cfg.weight_decay);
            loss_sum += loss as f64 * chunk.len() as f64;
            rows_seen += chunk.len();
        }
        let val_r2 = if has_val {
            evaluate(&model, ds, SplitKind::Val)?.mean
        } else {
            f64::NAN
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / rows_seen as f64,
            val_r2,
        });
    }

    let provenance = Provenance {
        config: cfg.clone(),
        seed: cfg.seed,
        grid: ds.spec.name.clone(),
        tech: ds.tech.name.clone(),
        density: ds.density,
        epochs: cfg.epochs,
        init: init.map(|c| c.provenance.grid.clone()),
        init_fingerprint: init.map(ModelCheckpoint::fingerprint),
    };
    Ok(TrainOutcome {
        checkpoint: ModelCheckpoint { model, provenance },
        history,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 5e-4);
        assert_eq!(lr_schedule(149, &cfg), 5e-4);
        assert!((lr_schedule(150, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(199, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(200, &cfg) - 2e-5).abs() < 1e-18);
        assert!((lr_schedule(299, &cfg) - 4e-6).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { tau: -1.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
