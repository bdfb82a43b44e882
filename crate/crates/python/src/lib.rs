use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mobcount::cli::{cmd_pipeline, PipelineConfig};
use mobcount::datamodel::{Adjacency, Grid as CoreGrid};
use mobcount::geolocation::{self, HmmModel, SparseTransition, TransitionParams};
use mobcount::inference::{self, PopDistr, RegionParams};
use mobcount::simulator::{self, Scenario};
use mobcount::{dedup, seed};

fn to_py(e: mobcount::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn adjacency(name: &str) -> PyResult<Adjacency> {
    name.parse().map_err(to_py)
}

#[pyclass(frozen)]
struct Grid {
    inner: CoreGrid,
}

#[pymethods]
impl Grid {
    #[new]
    #[pyo3(signature = (n_tiles_x, n_tiles_y, tile_size, origin_x=0.0, origin_y=0.0))]
    fn new(n_tiles_x: usize, n_tiles_y: usize, tile_size: f64, origin_x: f64, origin_y: f64) -> PyResult<Self> {
        let inner = CoreGrid::new(n_tiles_x, n_tiles_y, tile_size, tile_size, origin_x, origin_y).map_err(to_py)?;
        Ok(Grid { inner })
    }

    #[getter]
    fn n_tiles(&self) -> usize {
        self.inner.n_tiles()
    }

    fn tile_center(&self, tile: usize) -> PyResult<(f64, f64)> {
        self.inner.tile_center(tile).map_err(to_py)
    }

    #[pyo3(signature = (tile, adjacency="queen"))]
    fn tile_neighbors(&self, tile: usize, adjacency: &str) -> PyResult<Vec<usize>> {
        self.inner.tile_neighbors(tile, self::adjacency(adjacency)?).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid({}x{}, tile_size={})",
            self.inner.n_tiles_x, self.inner.n_tiles_y, self.inner.tile_size_x
        )
    }
}

/// Dense row-stochastic transition matrix of the tile walk.
#[pyfunction]
#[pyo3(signature = (grid, p_stay, p_diag_ratio=0.5, adjacency="queen"))]
fn transition_matrix(grid: &Grid, p_stay: f64, p_diag_ratio: f64, adjacency: &str) -> PyResult<Vec<Vec<f64>>> {
    let params = TransitionParams { p_stay, p_diag_ratio };
    Ok(geolocation::transition_matrix(&grid.inner, self::adjacency(adjacency)?, params).to_dense())
}

/// Smoothed posteriors and log-likelihood for one observation sequence.
#[pyfunction]
fn forward_backward(
    py: Python<'_>,
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    likelihoods: Vec<Vec<f64>>,
) -> PyResult<Py<PyDict>> {
    let transition = SparseTransition::from_dense(&transition).map_err(to_py)?;
    let model = HmmModel::new(initial, transition).map_err(to_py)?;
    let s = geolocation::forward_backward(&model, &likelihoods).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("posterior", s.posterior)?;
    out.set_item("joint", s.joint)?;
    out.set_item("log_likelihood", s.log_likelihood)?;
    Ok(out.unbind())
}

#[pyfunction]
#[pyo3(signature = (values, ci_level=0.9))]
fn compute_stats(py: Python<'_>, values: Vec<f64>, ci_level: f64) -> PyResult<Py<PyDict>> {
    let s = inference::compute_stats(&values, ci_level).ok_or_else(|| PyValueError::new_err("no values"))?;
    let out = PyDict::new(py);
    for (k, v) in [
        ("mean", s.mean),
        ("mode", s.mode),
        ("median", s.median),
        ("min", s.min),
        ("max", s.max),
        ("q1", s.q1),
        ("q3", s.q3),
        ("iqr", s.iqr),
        ("sd", s.sd),
        ("cv", s.cv),
        ("ci_low", s.ci_low),
        ("ci_high", s.ci_high),
    ] {
        out.set_item(k, v)?;
    }
    Ok(out.unbind())
}

/// `n_draws` samples of the undetected count for `n` detected individuals.
#[pyfunction]
#[pyo3(signature = (n, p, n0, distr="BetaNegBin", n_draws=1000, dispersion=1.5, seed=1))]
#[allow(clippy::too_many_arguments)]
fn sample_undetected(
    n: f64,
    p: f64,
    n0: u64,
    distr: &str,
    n_draws: usize,
    dispersion: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let distr: PopDistr = distr.parse().map_err(to_py)?;
    let params = RegionParams {
        p,
        alpha: p * n0 as f64,
        beta: (1.0 - p) * n0 as f64,
        n0,
    };
    let mut rng = seed::rng_for(seed, b"python/sample_undetected");
    (0..n_draws)
        .map(|_| inference::sample_undetected(n, &params, distr, dispersion, &mut rng).map_err(to_py))
        .collect()
}

#[pyfunction]
fn posterior_probability(prior: f64, lambda: f64, log_b: f64) -> f64 {
    dedup::posterior_probability(prior, lambda, log_b)
}

/// Runs the default scenario with `seed` and writes its files into `out_dir`.
/// Returns the number of devices.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=1))]
fn simulate(out_dir: PathBuf, seed: u64) -> PyResult<usize> {
    let scenario = Scenario {
        seed,
        ..Scenario::default()
    };
    let sim = simulator::simulate(&scenario).map_err(to_py)?;
    simulator::write_simulation(&out_dir, &sim).map_err(to_py)?;
    Ok(sim.events.devices().len())
}

/// Runs the whole pipeline from a TOML config, optionally redirecting outputs.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, cache_dir=None))]
fn run_pipeline(config: PathBuf, output_dir: Option<PathBuf>, cache_dir: Option<PathBuf>) -> PyResult<String> {
    let mut cfg = PipelineConfig::from_file(&config).map_err(to_py)?;
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(dir) = cache_dir {
        cfg.cache_dir = dir;
    }
    cfg.propagate();
    let report = cmd_pipeline(&cfg).map_err(to_py)?;
    Ok(report.summary())
}

#[pymodule]
fn mobcount_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Grid>()?;
    m.add_function(wrap_pyfunction!(transition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(forward_backward, m)?)?;
    m.add_function(wrap_pyfunction!(compute_stats, m)?)?;
    m.add_function(wrap_pyfunction!(sample_undetected, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_probability, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", mobcount::cli::VERSION)?;
    Ok(())
}
