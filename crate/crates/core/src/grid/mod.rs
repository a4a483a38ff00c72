//! Grid-structured datasets: Cartesian sweeps over geometry and tuning
//! capacitors, evaluated through the surrogate, then split, standardized and
//! density-subsampled.

mod io;

pub use io::{export_csv, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{
    geometry_to_circuit, input_impedance, CircuitParams, DesignImpedance, Geometry,
    TechnologyProfile, TuningCaps,
};

pub const X_COLUMNS: [&str; 4] = ["c1", "c2", "zin_re", "zin_im"];
pub const Y_COLUMNS: [&str; 5] = ["l_p", "l_s", "k", "q_p", "q_s"];
pub const V_COLUMNS: [&str; 3] = ["d_out", "w_p", "w_s"];

/// All twelve value columns in storage order.
pub fn value_columns() -> impl Iterator<Item = &'static str> {
    X_COLUMNS
        .iter()
        .chain(Y_COLUMNS.iter())
        .chain(V_COLUMNS.iter())
        .copied()
}

/// Inclusive, linearly spaced sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl Sweep {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        Self { min, max, steps }
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.steps {
            return self.max;
        }
        self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.value(i)).collect()
    }

    fn validate(&self, dim: &str) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::GridSpec(format!("`{dim}` needs at least 2 steps")));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.max > self.min) {
            return Err(Error::GridSpec(format!(
                "`{dim}` range [{}, {}] is empty or non-finite",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Sweep definition for one grid. Rows are ordered lexicographically by
/// `(d_out, w_p, w_s, c1, c2)` with `c2` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub tech: String,
    pub d_out: Sweep,
    pub w_p: Sweep,
    pub w_s: Sweep,
    pub c1: Sweep,
    pub c2: Sweep,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.d_out.validate("d_out")?;
        self.w_p.validate("w_p")?;
        self.w_s.validate("w_s")?;
        self.c1.validate("c1")?;
        self.c2.validate("c2")?;
        if self.c1.min < 0.0 || self.c2.min < 0.0 {
            return Err(Error::GridSpec("capacitances must be non-negative".into()));
        }
        Ok(())
    }

    pub fn geometry_count(&self) -> usize {
        self.d_out.steps * self.w_p.steps * self.w_s.steps
    }

    pub fn cap_count(&self) -> usize {
        self.c1.steps * self.c2.steps
    }

    pub fn len(&self) -> usize {
        self.geometry_count() * self.cap_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Geometry and caps of row `i`.
    pub fn point(&self, i: usize) -> (Geometry, TuningCaps) {
        let caps = self.cap_count();
        let (g, c) = (i / caps, i % caps);
        let (c1, c2) = (c / self.c2.steps, c % self.c2.steps);
        let ws = g % self.w_s.steps;
        let wp = (g / self.w_s.steps) % self.w_p.steps;
        let d = g / (self.w_s.steps * self.w_p.steps);
        (
            Geometry {
                d_out: self.d_out.value(d),
                w_p: self.w_p.value(wp),
                w_s: self.w_s.value(ws),
            },
            TuningCaps {
                c1: self.c1.value(c1),
                c2: self.c2.value(c2),
            },
        )
    }

    /// Same sweep ranges, resized to the given step counts.
    pub fn with_steps(&self, geometry: [usize; 3], caps: [usize; 2]) -> Self {
        let mut s = self.clone();
        s.d_out.steps = geometry[0];
        s.w_p.steps = geometry[1];
        s.w_s.steps = geometry[2];
        s.c1.steps = caps[0];
        s.c2.steps = caps[1];
        s
    }
}

/// One grid sample: tuning caps, resulting impedance, circuit parameters and geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub x1: TuningCaps,
    pub x2: DesignImpedance,
    pub y: CircuitParams,
    pub v: Geometry,
}

impl DesignPoint {
    pub fn evaluate(v: Geometry, x1: TuningCaps, tech: &TechnologyProfile) -> Result<Self> {
        let y = geometry_to_circuit(&v, tech)?;
        let x2 = input_impedance(&y, &x1, tech);
        Ok(Self { x1, x2, y, v })
    }

    pub fn x(&self) -> [f64; 4] {
        [self.x1.c1, self.x1.c2, self.x2.re, self.x2.im]
    }

    pub fn y(&self) -> [f64; 5] {
        self.y.to_array()
    }

    pub fn v(&self) -> [f64; 3] {
        self.v.to_array()
    }

    /// All twelve columns in [`value_columns`] order.
    pub fn row(&self) -> [f64; 12] {
        let (x, y, v) = (self.x(), self.y(), self.v());
        [
            x[0], x[1], x[2], x[3], y[0], y[1], y[2], y[3], y[4], v[0], v[1], v[2],
        ]
    }

    pub fn from_row(r: &[f64]) -> Self {
        Self {
            x1: TuningCaps { c1: r[0], c2: r[1] },
            x2: DesignImpedance { re: r[2], im: r[3] },
            y: CircuitParams {
                l_p: r[4],
                l_s: r[5],
                k: r[6],
                q_p: r[7],
                q_s: r[8],
            },
            v: Geometry {
                d_out: r[9],
                w_p: r[10],
                w_s: r[11],
            },
        }
    }
}

/// Per-column mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn standardize(&self, col: usize, value: f64) -> f64 {
        (value - self.mean[col]) / self.std[col]
    }

    pub fn restore(&self, col: usize, value: f64) -> f64 {
        value * self.std[col] + self.mean[col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x: ColumnStats,
    pub y: ColumnStats,
    pub v: ColumnStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

impl Split {
    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub spec: GridSpec,
    pub tech: TechnologyProfile,
    pub points: Vec<DesignPoint>,
    pub norm_stats: Option<NormStats>,
    pub split: Option<Split>,
    /// Seed of the 6:2:2 split, when assigned.
    pub split_seed: Option<u64>,
    /// Fraction of the full train split retained by [`subsample_density`].
    pub density: f64,
}

impl GridDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn split(&self) -> Result<&Split> {
        self.split
            .as_ref()
            .ok_or_else(|| Error::Dataset("split has not been assigned".into()))
    }

    pub fn norm_stats(&self) -> Result<&NormStats> {
        self.norm_stats
            .as_ref()
            .ok_or_else(|| Error::Dataset("normalization statistics missing".into()))
    }
}

/// Evaluates every point of `spec` under `tech`.
pub fn generate_grid(spec: &GridSpec, tech: &TechnologyProfile) -> Result<GridDataset> {
    spec.validate()?;
    tech.validate()?;
    if spec.tech != tech.name {
        return Err(Error::GridSpec(format!(
            "grid `{}` expects technology `{}`, got `{}`",
            spec.name, spec.tech, tech.name
        )));
    }
    // Geometry validity is checked over the geometry sub-grid before any work.
    let caps = spec.cap_count();
    for g in 0..spec.geometry_count() {
        spec.point(g * caps).0.validate()?;
    }
    let points = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let (v, x1) = spec.point(i);
            DesignPoint::evaluate(v, x1, tech)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridDataset {
        spec: spec.clone(),
        tech: tech.clone(),
        points,
        norm_stats: None,
        split: None,
        split_seed: None,
        density: 1.0,
    })
}

/// Seeded 6:2:2 partition. Clears normalization statistics, which depend on the split.
pub fn split_dataset(mut ds: GridDataset, seed: u64) -> Result<GridDataset> {
    let n = ds.len();
    if n < 5 {
        return Err(Error::Dataset(format!(
            "cannot split {n} points; at least 5 required"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    ds.split = Some(Split {
        train: order,
        val,
        test,
    });
    ds.split_seed = Some(seed);
    ds.norm_stats = None;
    ds.density = 1.0;
    Ok(ds)
}

fn column_stats<const K: usize>(
    ds: &GridDataset,
    idx: &[usize],
    names: &[&str; K],
    get: impl Fn(&DesignPoint) -> [f64; K],
) -> Result<ColumnStats> {
    let n = idx.len() as f64;
    let mut mean = vec![0.0; K];
    for &i in idx {
        for (m, v) in mean.iter_mut().zip(get(&ds.points[i])) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; K];
    for &i in idx {
        for ((s, v), m) in var.iter_mut().zip(get(&ds.points[i])).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    if let Some(col) = std.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::ZeroVariance(names[col].to_string()));
    }
    Ok(ColumnStats { mean, std })
}

/// Per-column mean/std over the train split only.
pub fn compute_norm_stats(mut ds: GridDataset) -> Result<GridDataset> {
    let train = ds.split()?.train.clone();
    if train.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    let stats = NormStats {
        x: column_stats(&ds, &train, &X_COLUMNS, DesignPoint::x)?,
        y: column_stats(&ds, &train, &Y_COLUMNS, DesignPoint::y)?,
        v: column_stats(&ds, &train, &V_COLUMNS, DesignPoint::v)?,
    };
    ds.norm_stats = Some(stats);
    Ok(ds)
}

/// Number of train points kept at `density`.
pub fn retained_count(density: f64, n_train: usize) -> usize {
    // The tolerance keeps e.g. 0.07 * 100 from rounding up to 8.
    ((density * n_train as f64 - 1e-9).ceil() as usize).clamp(1, n_train.max(1))
}

/// Keeps a seeded uniform subset of the train split; val/test are untouched.
///
/// Subsets at increasing densities with the same seed are nested: they are
/// prefixes of one seeded permutation of the train indices.
pub fn subsample_density(mut ds: GridDataset, density: f64, seed: u64) -> Result<GridDataset> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Density(density));
    }
    let split = ds
        .split
        .as_mut()
        .ok_or_else(|| Error::Dataset("split has not been assigned".into()))?;
    if density < 1.0 {
        let keep = retained_count(density, split.train.len());
        let mut order = split.train.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order.truncate(keep);
        order.sort_unstable();
        split.train = order;
    }
    ds.density *= density;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    pub(crate) fn tech(name: &str) -> TechnologyProfile {
        TechnologyProfile {
            name: name.into(),
            sigma: 3.0e7,
            t_metal: 3.0,
            h_gap: 2.0,
            k_max: 0.85,
            freq: 30.0,
            z_load: 50.0,
        }
    }

    pub(crate) fn small_spec(steps: [usize; 5]) -> GridSpec {
        GridSpec {
            name: "g".into(),
            tech: "t".into(),
            d_out: Sweep::new(40.0, 120.0, steps[0]),
            w_p: Sweep::new(3.0, 12.0, steps[1]),
            w_s: Sweep::new(3.0, 12.0, steps[2]),
            c1: Sweep::new(20.0, 300.0, steps[3]),
            c2: Sweep::new(20.0, 300.0, steps[4]),
        }
    }

    fn prepared(steps: [usize; 5], seed: u64) -> GridDataset {
        let ds = generate_grid(&small_spec(steps), &tech("t")).unwrap();
        compute_norm_stats(split_dataset(ds, seed).unwrap()).unwrap()
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(small_spec([10, 8, 8, 20, 20]).geometry_count(), 640);
        assert_eq!(small_spec([10, 8, 8, 20, 20]).len(), 256_000);
        assert_eq!(small_spec([18, 12, 12, 20, 20]).geometry_count(), 2_592);
        assert_eq!(small_spec([18, 12, 12, 20, 20]).len(), 1_036_800);
        let ds = generate_grid(&small_spec([2, 2, 2, 2, 2]), &tech("t")).unwrap();
        assert_eq!(ds.len(), 32);
        let distinct: HashSet<_> = ds
            .points
            .iter()
            .map(|p| p.row().map(f64::to_bits))
            .collect();
        assert_eq!(distinct.len(), 32);
    }

    #[test]
    fn row_order_is_lexicographic() {
        let spec = small_spec([3, 2, 2, 2, 3]);
        let ds = generate_grid(&spec, &tech("t")).unwrap();
        assert_eq!(ds.points[0].v.d_out, 40.0);
        assert_eq!(ds.points[1].x1.c2, 160.0);
        assert_eq!(ds.points[3].x1.c1, 300.0);
        assert_eq!(ds.points[3].x1.c2, 20.0);
        assert_eq!(ds.points[6].v.w_s, 12.0);
        assert_eq!(ds.points[spec.len() - 1].v.d_out, 120.0);
        for p in &ds.points {
            let again = DesignPoint::evaluate(p.v, p.x1, &ds.tech).unwrap();
            assert_eq!(*p, again);
        }
    }

    #[test]
    fn invalid_geometry_fails_fast() {
        let mut spec = small_spec([2, 2, 2, 2, 2]);
        spec.w_p = Sweep::new(3.0, 30.0, 2);
        assert!(matches!(
            generate_grid(&spec, &tech("t")),
            Err(Error::Geometry(_))
        ));
        let one_step = small_spec([1, 2, 2, 2, 2]);
        assert!(generate_grid(&one_step, &tech("t")).is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = generate_grid(&small_spec([5, 5, 5, 2, 4]), &tech("t")).unwrap();
        assert_eq!(ds.len(), 1000);
        let ds = split_dataset(ds, 7).unwrap();
        let s = ds.split.as_ref().unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (600, 200, 200));
        let all: HashSet<_> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), 1000);

        let again = split_dataset(ds.clone(), 7).unwrap();
        assert_eq!(again.split, ds.split);
        let other = split_dataset(ds.clone(), 8).unwrap();
        assert_ne!(other.split, ds.split);
    }

    #[test]
    fn tiny_dataset_cannot_be_split() {
        let mut ds = generate_grid(&small_spec([2, 2, 2, 2, 2]), &tech("t")).unwrap();
        ds.points.truncate(4);
        assert!(split_dataset(ds, 0).is_err());
    }

    #[test]
    fn norm_stats_population_convention() {
        let mut ds = prepared([2, 2, 2, 2, 2], 0);
        // Force c1 to {0, 2} equally across the train split.
        let train = ds.split.as_ref().unwrap().train.clone();
        for (j, &i) in train.iter().enumerate() {
            ds.points[i].x1.c1 = if j % 2 == 0 { 0.0 } else { 2.0 };
        }
        assert_eq!(train.len() % 2, 1);
        let mut even = ds.clone();
        even.split.as_mut().unwrap().train.pop();
        let even = compute_norm_stats(even).unwrap();
        let x = &even.norm_stats.unwrap().x;
        assert_eq!(x.mean[0], 1.0);
        assert_eq!(x.std[0], 1.0);
    }

    #[test]
    fn zero_variance_column_is_named() {
        let mut ds = prepared([2, 2, 2, 2, 2], 0);
        for p in &mut ds.points {
            p.y.k = 0.5;
        }
        match compute_norm_stats(ds) {
            Err(Error::ZeroVariance(col)) => assert_eq!(col, "k"),
            other => panic!("expected zero-variance error, got {other:?}"),
        }
    }

    #[test]
    fn standardized_train_columns_are_unit() {
        let ds = prepared([4, 3, 3, 3, 3], 1);
        let stats = ds.norm_stats.as_ref().unwrap();
        let train = &ds.split.as_ref().unwrap().train;
        for col in 0..5 {
            let z: Vec<f64> = train
                .iter()
                .map(|&i| stats.y.standardize(col, ds.points[i].y()[col]))
                .collect();
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-10, "std {}", var.sqrt());
        }
    }

    #[test]
    fn subsample_counts_and_nesting() {
        let ds = prepared([5, 5, 5, 2, 4], 3);
        let full = subsample_density(ds.clone(), 1.0, 9).unwrap();
        assert_eq!(full.split, ds.split);

        let one = subsample_density(ds.clone(), 0.01, 9).unwrap();
        assert_eq!(one.split.as_ref().unwrap().train.len(), 6);
        assert_eq!(one.split.as_ref().unwrap().val, ds.split.as_ref().unwrap().val);
        assert_eq!(one.split.as_ref().unwrap().test, ds.split.as_ref().unwrap().test);

        let five = subsample_density(ds.clone(), 0.05, 9).unwrap();
        let five_set: HashSet<_> = five.split.as_ref().unwrap().train.iter().collect();
        let full_set: HashSet<_> = ds.split.as_ref().unwrap().train.iter().collect();
        assert_eq!(five_set.len(), 30);
        assert!(five_set.is_subset(&full_set));
        assert!(one
            .split
            .as_ref()
            .unwrap()
            .train
            .iter()
            .all(|i| five_set.contains(i)));

        for bad in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                subsample_density(ds.clone(), bad, 0),
                Err(Error::Density(_))
            ));
        }
    }

    #[test]
    fn retained_count_ceiling() {
        assert_eq!(retained_count(0.01, 600), 6);
        assert_eq!(retained_count(0.07, 100), 7);
        assert_eq!(retained_count(0.005, 6000), 30);
        assert_eq!(retained_count(0.005, 30), 1);
        assert_eq!(retained_count(0.25, 601), 151);
    }

    #[test]
    fn matched_grids_share_inputs() {
        let spec = small_spec([3, 3, 3, 2, 2]);
        let a = generate_grid(&spec, &tech("t")).unwrap();
        let mut other = tech("t");
        other.freq = 39.0;
        other.h_gap = 1.0;
        let b = generate_grid(&spec, &other).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!((p.x1, p.v), (q.x1, q.v));
            assert_ne!(p.y, q.y);
            assert_ne!(p.x2, q.x2);
        }
    }
}
