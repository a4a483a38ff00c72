//! Python bindings: technologies, the surrogate, grid datasets, training,
//! metrics and experiment plans.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use xfmr_tl::config;
use xfmr_tl::grid::{self, GridDataset, GridSpec, SplitKind, Sweep};
use xfmr_tl::harness::Runner;
use xfmr_tl::nn::{self, ModelCheckpoint, TrainConfig};
use xfmr_tl::surrogate::{self, Geometry, TechnologyProfile, TuningCaps};
use xfmr_tl::{metrics, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn split_kind(s: &str) -> PyResult<SplitKind> {
    s.parse().map_err(py_err)
}

#[pyclass(name = "Technology", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTechnology(TechnologyProfile);

#[pymethods]
impl PyTechnology {
    #[new]
    #[pyo3(signature = (name, sigma, t_metal, h_gap, k_max, freq, z_load = 50.0))]
    fn new(name: String, sigma: f64, t_metal: f64, h_gap: f64, k_max: f64, freq: f64, z_load: f64) -> PyResult<Self> {
        let t = TechnologyProfile {
            name,
            sigma,
            t_metal,
            h_gap,
            k_max,
            freq,
            z_load,
        };
        t.validate().map_err(py_err)?;
        Ok(Self(t))
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.0.sigma
    }
    #[getter]
    fn t_metal(&self) -> f64 {
        self.0.t_metal
    }
    #[getter]
    fn h_gap(&self) -> f64 {
        self.0.h_gap
    }
    #[getter]
    fn k_max(&self) -> f64 {
        self.0.k_max
    }
    #[getter]
    fn freq(&self) -> f64 {
        self.0.freq
    }
    #[getter]
    fn z_load(&self) -> f64 {
        self.0.z_load
    }

    fn __repr__(&self) -> String {
        format!("Technology({:?}, {} GHz)", self.0.name, self.0.freq)
    }
}

/// Technology profiles of a TOML file, by name.
#[pyfunction]
fn load_techs(path: PathBuf) -> PyResult<Vec<PyTechnology>> {
    let table = config::load_techs(path).map_err(py_err)?;
    table
        .names()
        .map(|n| table.get(n).map(|t| PyTechnology(t.clone())).map_err(py_err))
        .collect()
}

/// `(l_p, l_s, k, q_p, q_s)` of a geometry, in H and dimensionless units.
#[pyfunction]
fn geometry_to_circuit(d_out: f64, w_p: f64, w_s: f64, tech: &PyTechnology) -> PyResult<(f64, f64, f64, f64, f64)> {
    let g = Geometry::new(d_out, w_p, w_s).map_err(py_err)?;
    let y = surrogate::geometry_to_circuit(&g, &tech.0).map_err(py_err)?;
    Ok((y.l_p, y.l_s, y.k, y.q_p, y.q_s))
}

/// Complex input impedance (Ω) of a geometry tuned by `c1`, `c2` in fF.
#[pyfunction]
fn input_impedance(d_out: f64, w_p: f64, w_s: f64, c1: f64, c2: f64, tech: &PyTechnology) -> PyResult<(f64, f64)> {
    let g = Geometry::new(d_out, w_p, w_s).map_err(py_err)?;
    let y = surrogate::geometry_to_circuit(&g, &tech.0).map_err(py_err)?;
    let z = surrogate::input_impedance(&y, &TuningCaps { c1, c2 }, &tech.0);
    Ok((z.re, z.im))
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset(GridDataset);

type Range = (f64, f64, usize);

#[pymethods]
impl PyDataset {
    /// Generates a grid, splits it 6:2:2 and computes train-split statistics.
    /// Each range is `(min, max, steps)`.
    #[staticmethod]
    #[pyo3(signature = (name, tech, d_out, w_p, w_s, c1, c2, split_seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        name: String,
        tech: &PyTechnology,
        d_out: Range,
        w_p: Range,
        w_s: Range,
        c1: Range,
        c2: Range,
        split_seed: u64,
    ) -> PyResult<Self> {
        let s = |r: Range| Sweep::new(r.0, r.1, r.2);
        let spec = GridSpec {
            name,
            tech: tech.0.name.clone(),
            d_out: s(d_out),
            w_p: s(w_p),
            w_s: s(w_s),
            c1: s(c1),
            c2: s(c2),
        };
        let ds = grid::generate_grid(&spec, &tech.0)
            .and_then(|d| grid::split_dataset(d, split_seed))
            .and_then(grid::compute_norm_stats)
            .map_err(py_err)?;
        Ok(Self(ds))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        grid::load_dataset(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        grid::save_dataset(&self.0, path).map_err(py_err)
    }

    fn export_csv(&self, path: PathBuf) -> PyResult<()> {
        grid::export_csv(&self.0, path).map_err(py_err)
    }

    /// A copy keeping `density` of the train split.
    fn subsample(&self, density: f64, seed: u64) -> PyResult<Self> {
        grid::subsample_density(self.0.clone(), density, seed).map(Self).map_err(py_err)
    }

    fn split_sizes(&self) -> PyResult<(usize, usize, usize)> {
        let s = self.0.split().map_err(py_err)?;
        Ok((s.train.len(), s.val.len(), s.test.len()))
    }

    /// Rows of `[c1, c2, zin_re, zin_im, l_p, l_s, k, q_p, q_s, d_out, w_p, w_s]`.
    #[pyo3(signature = (split = None))]
    fn rows(&self, split: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
        let pick: Vec<usize> = match split {
            Some(s) => self.0.split().map_err(py_err)?.indices(split_kind(s)?).to_vec(),
            None => (0..self.0.len()).collect(),
        };
        Ok(pick.into_iter().map(|i| self.0.points[i].row().to_vec()).collect())
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.spec.name
    }
    #[getter]
    fn density(&self) -> f64 {
        self.0.density
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Checkpoint", frozen)]
struct PyCheckpoint(ModelCheckpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        nn::load_checkpoint(path).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        nn::save_checkpoint(&self.0, path).map_err(py_err)
    }

    /// `(mean, [r2_d_out, r2_w_p, r2_w_s])` on one split.
    #[pyo3(signature = (dataset, split = "test"))]
    fn evaluate(&self, dataset: &PyDataset, split: &str) -> PyResult<(f64, Vec<f64>)> {
        let r = nn::evaluate(&self.0.model, &dataset.0, split_kind(split)?).map_err(py_err)?;
        Ok((r.mean, r.per_dim))
    }

    /// Geometry predictions `[d_out, w_p, w_s]` for rows of one split.
    #[pyo3(signature = (dataset, split = "test"))]
    fn predict(&self, dataset: &PyDataset, split: &str) -> PyResult<Vec<[f64; 3]>> {
        let rows = dataset.0.split().map_err(py_err)?.indices(split_kind(split)?);
        let p = nn::predict_geometry(&self.0.model, &dataset.0, rows).map_err(py_err)?;
        Ok(p.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }

    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    #[getter]
    fn grid(&self) -> &str {
        &self.0.provenance.grid
    }
    #[getter]
    fn init(&self) -> Option<&str> {
        self.0.provenance.init.as_deref()
    }
    #[getter]
    fn epochs(&self) -> usize {
        self.0.provenance.epochs
    }
}

fn train_config(epochs: Option<usize>, hidden: Option<usize>, batch_size: Option<usize>, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: epochs.unwrap_or(d.epochs),
        hidden: hidden.unwrap_or(d.hidden),
        batch_size: batch_size.unwrap_or(d.batch_size),
        seed,
        ..d
    }
}

type HistoryRow = (usize, f64, f64, f64);

/// Trains on `dataset`, from `init` when given. Returns the checkpoint and
/// the history as `(epoch, lr, train_loss, val_r2)` tuples.
#[pyfunction]
#[pyo3(signature = (dataset, epochs = None, hidden = None, batch_size = None, seed = 0, init = None))]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    epochs: Option<usize>,
    hidden: Option<usize>,
    batch_size: Option<usize>,
    seed: u64,
    init: Option<&PyCheckpoint>,
) -> PyResult<(PyCheckpoint, Vec<HistoryRow>)> {
    let cfg = train_config(epochs, hidden, batch_size, seed);
    let init = init.map(|c| &c.0);
    let out = py
        .detach(|| nn::train(&dataset.0, &cfg, init))
        .map_err(py_err)?;
    let hist = out
        .history
        .iter()
        .map(|e| (e.epoch, e.lr, e.train_loss, e.val_r2))
        .collect();
    Ok((PyCheckpoint(out.checkpoint), hist))
}

/// Learning rate of `epoch` under the default schedule.
#[pyfunction]
fn lr_schedule(epoch: usize) -> f64 {
    nn::lr_schedule(epoch, &TrainConfig::default())
}

/// `(mean, per_dim)` R² of `predictions` against `targets`, both N×K.
#[pyfunction]
fn r_squared(predictions: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> PyResult<(f64, Vec<f64>)> {
    let m = |rows: Vec<Vec<f64>>| -> PyResult<Array2<f64>> {
        let k = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((n, k), flat).map_err(|e| PyValueError::new_err(format!("ragged rows: {e}")))
    };
    let r = metrics::r_squared(m(predictions)?.view(), m(targets)?.view()).map_err(py_err)?;
    Ok((r.mean, r.per_dim))
}

/// Relative improvement in percent; `None` when the baseline is not positive.
#[pyfunction]
fn relative_improvement(r2_transfer: f64, r2_non_transfer: f64) -> Option<f64> {
    metrics::relative_improvement(r2_transfer, r2_non_transfer)
}

/// Runs an experiment plan and writes its tables under the plan's output
/// directory (or `out`). Returns `(runs, failed)`.
#[pyfunction]
#[pyo3(signature = (config, out = None, fast = false, workers = 0))]
fn run_experiment(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, fast: bool, workers: usize) -> PyResult<(usize, usize)> {
    let mut plan = config::load_plan(config).map_err(py_err)?;
    if fast {
        plan = plan.fast_profile();
    }
    if let Some(o) = out {
        plan.out = o;
    }
    let outcome = py
        .detach(|| Runner::new(&plan.out, workers).and_then(|r| r.run_experiment(&plan)))
        .map_err(py_err)?;
    Ok((outcome.records.len(), outcome.failures()))
}

#[pymodule]
fn xfmr_tl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTechnology>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(load_techs, m)?)?;
    m.add_function(wrap_pyfunction!(geometry_to_circuit, m)?)?;
    m.add_function(wrap_pyfunction!(input_impedance, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(r_squared, m)?)?;
    m.add_function(wrap_pyfunction!(relative_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
