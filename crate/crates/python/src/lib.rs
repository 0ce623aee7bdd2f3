use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use dmpead_core::config::Config;
use dmpead_core::detect::{self, ThresholdMethod};
use dmpead_core::mts::{AnomalySpec, Matrix, TimeSeries};
use dmpead_core::model::{self, ReconModel};
use dmpead_core::pipeline::{self, DetectOptions, PoolState};
use dmpead_core::synth::{generate_labeled, Regime};
use dmpead_core::Error;

create_exception!(dmpead, DmpeadError, PyException);
create_exception!(dmpead, ConfigError, DmpeadError);
create_exception!(dmpead, IntegrityError, DmpeadError);

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config(_) => ConfigError::new_err(msg),
        Error::Integrity { .. } => IntegrityError::new_err(msg),
        _ => DmpeadError::new_err(msg),
    }
}

/// Rows of equal length into a series.
fn series(rows: Vec<Vec<f64>>) -> PyResult<TimeSeries> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(DmpeadError::new_err("rows differ in length"));
    }
    let data = rows.into_iter().flatten().collect();
    Matrix::new(m, n, data).and_then(TimeSeries::new).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Labeled synthetic series as `(rows, labels)`.
#[pyfunction]
#[pyo3(signature = (m, n, regime="mixed", anomalies=Vec::new(), seed=0))]
fn synth(m: usize, n: usize, regime: &str, anomalies: Vec<String>, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let regime: Regime = regime.parse().map_err(err)?;
    let specs = anomalies
        .iter()
        .map(|s| s.parse::<AnomalySpec>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let ts = generate_labeled(regime, m, n, &specs, seed).map_err(err)?;
    let labels = ts.labels().map(<[u8]>::to_vec).unwrap_or_else(|| vec![0; ts.len()]);
    Ok((rows(ts.values()), labels))
}

#[pyfunction]
fn auc_pr(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    detect::auc_pr(&scores, &labels).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, max_buffer=16))]
fn vus_pr(scores: Vec<f64>, labels: Vec<u8>, max_buffer: usize) -> PyResult<f64> {
    detect::vus_pr(&scores, &labels, max_buffer).map_err(err)
}

/// `{"ts_auc_pr", "range_auc_pr", "vus_pr"}`.
#[pyfunction]
#[pyo3(signature = (scores, labels, max_buffer=16))]
fn evaluate(scores: Vec<f64>, labels: Vec<u8>, max_buffer: usize) -> PyResult<std::collections::BTreeMap<&'static str, f64>> {
    let m = detect::evaluate(&scores, &labels, max_buffer).map_err(err)?;
    Ok([("ts_auc_pr", m.ts_auc_pr), ("range_auc_pr", m.range_auc_pr), ("vus_pr", m.vus_pr)].into())
}

/// Threshold by method: `mean_std` (uses `param` as multiplier, default 2.5),
/// `epsilon`, or `percentile` (uses `param` as anomaly ratio, default 0.01).
#[pyfunction]
#[pyo3(signature = (scores, method="mean_std", param=None))]
fn threshold(scores: Vec<f64>, method: &str, param: Option<f64>) -> PyResult<f64> {
    let method = match method {
        "mean_std" => ThresholdMethod::MeanStd {
            multiplier: param.unwrap_or(2.5),
        },
        "epsilon" => ThresholdMethod::Epsilon,
        "percentile" => ThresholdMethod::Percentile {
            anomaly_ratio: param.unwrap_or(0.01),
        },
        other => return Err(ConfigError::new_err(format!("unknown threshold method '{other}'"))),
    };
    method.validate().map_err(err)?;
    method.threshold(&scores).map_err(err)
}

/// Inclusive `(start, end)` runs of points scoring at or above `epsilon`.
#[pyfunction]
fn identify(scores: Vec<f64>, epsilon: f64) -> Vec<(usize, usize)> {
    detect::identify(&scores, epsilon).ranges
}

#[pyclass(name = "Config", module = "dmpead", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml="", overrides=Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        let inner = Config::from_toml_with_overrides(toml, &overrides).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn segment_length(&self) -> usize {
        self.inner.segment_length
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={})", &self.inner.hash()[..12])
    }
}

#[pyclass(name = "ReconModel", module = "dmpead", skip_from_py_object)]
#[derive(Clone)]
struct PyReconModel {
    inner: ReconModel,
}

#[pymethods]
impl PyReconModel {
    #[new]
    #[pyo3(signature = (segment_length=32, hidden=vec![16, 8, 16], stride=16, seed=0))]
    fn new(segment_length: usize, hidden: Vec<usize>, stride: usize, seed: u64) -> PyResult<Self> {
        let inner = ReconModel::new("m", segment_length, &hidden, stride, seed).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn frozen_count(&self) -> usize {
        self.inner.frozen_count()
    }

    fn theta(&self) -> Vec<f32> {
        self.inner.theta().to_vec()
    }

    fn reconstruct(&self, values: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let ts = series(values)?;
        Ok(rows(&self.inner.reconstruct(&ts).map_err(err)?))
    }

    /// Per-point reconstruction error.
    fn point_errors(&self, values: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let ts = series(values)?;
        let xhat = self.inner.reconstruct(&ts).map_err(err)?;
        model::point_errors(ts.values(), &xhat).map_err(err)
    }

    /// Copy with a `beta` share of parameters frozen and the rest re-initialized.
    fn transfer(&self, beta: f64, seed: u64) -> PyResult<Self> {
        let inner = model::transfer_parameters(&self.inner, beta, seed).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ReconModel::load(&path).map_err(err)?,
        })
    }
}

/// A model pool with its meta store, meta-model and dataset catalog.
#[pyclass(name = "Pool", module = "dmpead")]
struct PyPool {
    state: PoolState,
}

#[pymethods]
impl PyPool {
    /// Train a pool from `{tag: rows}`; tags are processed in sorted order.
    #[staticmethod]
    fn build(config: &PyConfig, datasets: std::collections::BTreeMap<String, Vec<Vec<f64>>>) -> PyResult<Self> {
        let datasets = datasets
            .into_iter()
            .map(|(tag, r)| Ok((tag, series(r)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let state = pipeline::build(&config.inner, &datasets).map_err(err)?;
        Ok(Self { state })
    }

    #[staticmethod]
    #[pyo3(signature = (path, config=None))]
    fn load(path: PathBuf, config: Option<&PyConfig>) -> PyResult<Self> {
        let state = PoolState::load(&path, config.map(|c| c.inner.clone())).map_err(err)?;
        Ok(Self { state })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.state.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.state.pool.len()
    }

    fn ids(&self) -> Vec<String> {
        self.state.pool.ids()
    }

    #[getter]
    fn version(&self) -> u64 {
        self.state.pool.manifest().pool_version
    }

    #[getter]
    fn has_meta_model(&self) -> bool {
        self.state.meta.is_some()
    }

    /// Run one detection. Returns `(report_json, final_scores)`.
    #[pyo3(signature = (name, values, labels=None, expansion=true, merging=true))]
    fn detect(
        &mut self,
        name: &str,
        values: Vec<Vec<f64>>,
        labels: Option<Vec<u8>>,
        expansion: bool,
        merging: bool,
    ) -> PyResult<(String, Vec<f64>)> {
        let ts = series(values)?;
        let opts = DetectOptions {
            expansion,
            merging,
            labels,
        };
        let run = pipeline::detect(&mut self.state, name, &ts, &opts).map_err(err)?;
        Ok((run.report.to_json(), run.outcome.final_score))
    }
}

#[pymodule]
fn dmpead(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DmpeadError", m.py().get_type::<DmpeadError>())?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("IntegrityError", m.py().get_type::<IntegrityError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyReconModel>()?;
    m.add_class::<PyPool>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(vus_pr, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    Ok(())
}
