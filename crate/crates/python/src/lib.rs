//! Python bindings: configs, single runs, sweeps, the catalog, link rates
//! and direct access to the replacement policies.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use d2dsim::catalog::{build_catalog, Catalog, CatalogConfig, Layer};
use d2dsim::energy::d2d_availability;
use d2dsim::experiment::{self, SweepSpec};
use d2dsim::policies::{self, knapsack, CacheState, Candidate, InsertOutcome, Policy};
use d2dsim::{ChannelParams, Error, Metrics, PolicyKind, SimConfig, UnitId};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Invariant(_) => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("policy", m.policy.name())?;
    d.set_item("seed", m.seed)?;
    d.set_item("config_hash", &m.config_hash)?;
    for (k, v) in m.numeric_fields() {
        d.set_item(k, v)?;
    }
    Ok(d)
}

/// Full simulation config. Unset keys keep their defaults.
#[pyclass(name = "SimConfig", from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: SimConfig,
}

#[pymethods]
impl PySimConfig {
    #[new]
    fn new() -> Self {
        PySimConfig { inner: SimConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PySimConfig {
            inner: SimConfig::from_toml(text).map_err(py_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    #[getter]
    fn policy(&self) -> &'static str {
        self.inner.policy.kind.name()
    }

    #[setter]
    fn set_policy(&mut self, name: &str) -> PyResult<()> {
        self.inner.policy.kind = name.parse().map_err(py_err)?;
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.sim.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.sim.seed = v;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.inner.sim.duration_s
    }

    #[setter]
    fn set_duration_s(&mut self, v: f64) {
        self.inner.sim.duration_s = v;
    }

    #[getter]
    fn arrival_rate(&self) -> f64 {
        self.inner.sim.arrival_rate_per_device_hz
    }

    #[setter]
    fn set_arrival_rate(&mut self, v: f64) {
        self.inner.sim.arrival_rate_per_device_hz = v;
    }

    #[getter]
    fn c_dev_bits(&self) -> f64 {
        self.inner.cache.c_dev_bits
    }

    #[setter]
    fn set_c_dev_bits(&mut self, v: f64) {
        self.inner.cache.c_dev_bits = v;
    }

    #[getter]
    fn r_d2d_m(&self) -> f64 {
        self.inner.topology.r_d2d_m
    }

    #[setter]
    fn set_r_d2d_m(&mut self, v: f64) {
        self.inner.topology.r_d2d_m = v;
    }

    #[getter]
    fn pool_size(&self) -> u32 {
        self.inner.channel.pool_size
    }

    #[setter]
    fn set_pool_size(&mut self, v: u32) {
        self.inner.channel.pool_size = v;
    }

    #[getter]
    fn contents(&self) -> u32 {
        self.inner.catalog.contents
    }

    #[setter]
    fn set_contents(&mut self, v: u32) {
        self.inner.catalog.contents = v;
    }

    #[getter]
    fn density_per_m2(&self) -> f64 {
        self.inner.topology.density_per_m2
    }

    #[setter]
    fn set_density_per_m2(&mut self, v: f64) {
        self.inner.topology.density_per_m2 = v;
    }

    fn __repr__(&self) -> String {
        format!("SimConfig(policy={}, seed={}, hash={})", self.policy(), self.seed(), &self.hash()[..12])
    }
}

/// Runs one simulation; returns the metrics as a dict.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: &PySimConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let m = py.detach(|| d2dsim::run(&cfg)).map_err(py_err)?;
    metrics_dict(py, &m)
}

/// Runs a sweep spec given as TOML; returns one dict per replication.
#[pyfunction]
fn run_sweep<'py>(py: Python<'py>, spec_toml: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let spec = SweepSpec::from_toml(spec_toml).map_err(py_err)?;
    let res = py.detach(|| experiment::run_sweep(&spec)).map_err(py_err)?;
    res.rows
        .iter()
        .map(|r| {
            let d = metrics_dict(py, &r.metrics)?;
            d.set_item(res.parameter.name(), r.value)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn figure_ids() -> Vec<String> {
    experiment::figure_ids()
}

/// Shannon rate in bit/s for the default channel parameters.
#[pyfunction]
fn link_rate(p_tx_w: f64, d_m: f64, path_loss_exp: f64) -> PyResult<f64> {
    ChannelParams::default().link_rate(p_tx_w, d_m, path_loss_exp).map_err(py_err)
}

#[pyfunction]
fn w_d2d(w_loc: f64, n_ngh: f64) -> f64 {
    d2d_availability(w_loc, n_ngh)
}

/// Keep flags maximizing kept value under an integer weight budget.
#[pyfunction]
fn knapsack_keep(weights: Vec<u64>, values: Vec<f64>, budget: u64) -> PyResult<Vec<bool>> {
    if weights.len() != values.len() {
        return Err(PyValueError::new_err("weights and values differ in length"));
    }
    Ok(knapsack::keep_within_budget(&weights, &values, budget))
}

#[pyclass(name = "Catalog", frozen)]
struct PyCatalog {
    inner: Catalog,
}

#[pymethods]
impl PyCatalog {
    #[new]
    #[pyo3(signature = (contents=100, chunks=100, zipf_s=1.0, weibull_lambda=5.0, weibull_k=0.8, p_hq=1.0))]
    fn new(contents: u32, chunks: u32, zipf_s: f64, weibull_lambda: f64, weibull_k: f64, p_hq: f64) -> PyResult<Self> {
        let cfg = CatalogConfig {
            contents,
            chunks,
            zipf_s,
            weibull_lambda,
            weibull_k,
            p_hq,
            ..CatalogConfig::default()
        };
        Ok(PyCatalog {
            inner: build_catalog(&cfg).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn total_bits(&self) -> f64 {
        self.inner.total_bits()
    }

    fn content_prob(&self, content: u32) -> PyResult<f64> {
        self.inner.content_prob(content).map_err(py_err)
    }

    fn chunk_prob(&self, chunk: u32) -> PyResult<f64> {
        self.inner.chunk_prob(chunk).map_err(py_err)
    }

    /// `(content, chunk, layer, size_bits)` of a unit id.
    fn unit(&self, id: u32) -> PyResult<(u32, u32, &'static str, f64)> {
        let u = self
            .inner
            .unit(UnitId(id))
            .ok_or_else(|| PyValueError::new_err(format!("unit {id} is not in the catalog")))?;
        Ok((u.content, u.chunk, u.layer.name(), u.size_bits))
    }

    fn unit_id(&self, content: u32, chunk: u32, enhancement: bool) -> PyResult<u32> {
        let layer = if enhancement { Layer::Enhancement } else { Layer::Base };
        Ok(self.inner.unit_id(content, chunk, layer).map_err(py_err)?.0)
    }
}

/// One cache driven by a replacement policy.
#[pyclass(name = "Cache")]
struct PyCache {
    policy: Policy,
    state: CacheState,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyCache {
    #[new]
    #[pyo3(signature = (capacity_bits, policy="epdc", delta_bits=0.01e6, seed=1))]
    fn new(capacity_bits: f64, policy: &str, delta_bits: f64, seed: u64) -> PyResult<Self> {
        let kind: PolicyKind = policy.parse().map_err(py_err)?;
        if !(capacity_bits > 0.0 && delta_bits > 0.0) {
            return Err(PyValueError::new_err("capacity and delta must be positive"));
        }
        Ok(PyCache {
            policy: Policy::new(kind, delta_bits),
            state: CacheState::new(capacity_bits),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Offers a unit; returns `(outcome, evicted_ids)` where outcome is
    /// `inserted`, `resident` or `oversize`.
    #[pyo3(signature = (id, size_bits, e_all, request_prob=0.0))]
    fn insert(&mut self, id: u32, size_bits: f64, e_all: f64, request_prob: f64) -> PyResult<(&'static str, Vec<u32>)> {
        if !(size_bits > 0.0) {
            return Err(PyValueError::new_err("size_bits must be positive"));
        }
        let unit = Candidate {
            id: UnitId(id),
            size_bits,
            e_all,
            request_prob,
        };
        let d = policies::insert(&self.policy, &mut self.state, &unit, &mut self.rng).map_err(py_err)?;
        let outcome = match d.outcome {
            InsertOutcome::Inserted => "inserted",
            InsertOutcome::AlreadyResident => "resident",
            InsertOutcome::Oversize => "oversize",
        };
        Ok((outcome, d.evicted.iter().map(|u| u.0).collect()))
    }

    fn ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.state.ids().iter().map(|u| u.0).collect();
        ids.sort_unstable();
        ids
    }

    fn __contains__(&self, id: u32) -> bool {
        self.state.contains(UnitId(id))
    }

    fn __len__(&self) -> usize {
        self.state.len()
    }

    #[getter]
    fn used_bits(&self) -> f64 {
        self.state.used_bits()
    }

    #[getter]
    fn capacity_bits(&self) -> f64 {
        self.state.capacity_bits()
    }

    fn retained_energy(&self) -> f64 {
        self.state.retained_energy()
    }
}

#[pymodule]
fn d2dsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyCache>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(figure_ids, m)?)?;
    m.add_function(wrap_pyfunction!(link_rate, m)?)?;
    m.add_function(wrap_pyfunction!(w_d2d, m)?)?;
    m.add_function(wrap_pyfunction!(knapsack_keep, m)?)?;
    m.add("POLICIES", PolicyKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    Ok(())
}
