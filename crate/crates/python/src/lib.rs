//! Python bindings for `extarm-core`.
//!
//! Structured results come back as plain dicts and lists; structured inputs
//! (scenario definitions, estimands) are accepted the same way.

use extarm_core::controls::{synthetic_weights as fit_synthetic, SourceSummary};
use extarm_core::data::OutcomeKind;
use extarm_core::estimand::{validate_estimand, EstimandSpec};
use extarm_core::estimators::{
    binomial_response_test, fit_propensity, g_computation, g_computation_bootstrap, ipw, naive_difference, tmle,
    AnalysisSample, BootstrapConfig, EffectEstimate, OutcomeModelSpec, PropensitySpec, Weighting,
};
use extarm_core::sensitivity::{causal_gap_sweep_bounds, e_value as core_e_value};
use extarm_core::simulate::{self, ScmConfig, SCENARIO_NAMES};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// A scenario name or a full model dict.
fn resolve_model(model: &Bound<'_, PyAny>) -> PyResult<ScmConfig> {
    match model.extract::<String>() {
        Ok(name) => simulate::require_scenario(&name).map_err(err),
        Err(_) => from_py(model),
    }
}

/// Names of the shipped simulation scenarios.
#[pyfunction]
fn scenarios() -> Vec<&'static str> {
    SCENARIO_NAMES.to_vec()
}

/// The model definition behind a named scenario.
#[pyfunction]
fn scenario(py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &simulate::require_scenario(name).map_err(err)?)
}

/// Draws `n` trial subjects (plus any external source) and returns the
/// observed data as columns. `y1`/`y0` are included only when
/// `counterfactuals` is true.
#[pyfunction]
#[pyo3(signature = (model, n, seed, counterfactuals = false))]
fn generate(py: Python<'_>, model: &Bound<'_, PyAny>, n: usize, seed: u64, counterfactuals: bool) -> PyResult<Py<PyAny>> {
    let cfg = resolve_model(model)?;
    let (ds, sealed) = py.detach(|| simulate::generate(&cfg, n, seed)).map_err(err)?;
    let out = PyDict::new(py);
    let records = ds.records();
    out.set_item("id", records.iter().map(|r| r.id.clone()).collect::<Vec<_>>())?;
    for (j, col) in ds.schema().columns().iter().enumerate() {
        out.set_item(&col.name, records.iter().map(|r| r.covariates[j]).collect::<Vec<_>>())?;
    }
    out.set_item("treatment", records.iter().map(|r| r.treatment.indicator()).collect::<Vec<_>>())?;
    out.set_item("observed", records.iter().map(|r| r.observed).collect::<Vec<_>>())?;
    out.set_item("outcome", records.iter().map(|r| r.outcome()).collect::<Vec<_>>())?;
    out.set_item("source", records.iter().map(|r| r.source.label.clone()).collect::<Vec<_>>())?;
    out.set_item("external", records.iter().map(|r| r.source.external).collect::<Vec<_>>())?;
    out.set_item("index_date", records.iter().map(|r| r.index_date.map(|d| d.to_string())).collect::<Vec<_>>())?;
    if counterfactuals {
        let pairs = sealed.unseal();
        out.set_item("y1", pairs.iter().map(|p| p.y1).collect::<Vec<_>>())?;
        out.set_item("y0", pairs.iter().map(|p| p.y0).collect::<Vec<_>>())?;
    }
    Ok(out.into_any().unbind())
}

/// Monte Carlo ψ over `draws` simulated subjects.
#[pyfunction]
#[pyo3(signature = (model, draws = 1_000_000, seed = 0))]
fn true_ate(py: Python<'_>, model: &Bound<'_, PyAny>, draws: usize, seed: u64) -> PyResult<Py<PyAny>> {
    let cfg = resolve_model(model)?;
    let t = py.detach(|| simulate::true_ate(&cfg, draws, seed)).map_err(err)?;
    to_py(py, &t)
}

/// Analytic ψ, or `None` when the model has no closed form.
#[pyfunction]
fn closed_form_ate(model: &Bound<'_, PyAny>) -> PyResult<Option<f64>> {
    Ok(resolve_model(model)?.closed_form_ate())
}

/// Numeric analysis sample: one row of covariates per subject.
#[pyclass(module = "extarm", frozen)]
struct Sample {
    inner: AnalysisSample,
}

fn check_len(what: &str, got: usize, n: usize) -> PyResult<()> {
    if got != n {
        return Err(PyValueError::new_err(format!("{what} has length {got}, expected {n}")));
    }
    Ok(())
}

#[pymethods]
impl Sample {
    /// `binary` defaults to whether every outcome is 0 or 1.
    #[new]
    #[pyo3(signature = (covariates, treatment, outcome, names = None, binary = None, weights = None))]
    fn new(
        covariates: Vec<Vec<f64>>,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        names: Option<Vec<String>>,
        binary: Option<bool>,
        weights: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let n = covariates.len();
        check_len("treatment", treatment.len(), n)?;
        check_len("outcome", outcome.len(), n)?;
        let p = covariates.first().map_or(0, Vec::len);
        if let Some(i) = covariates.iter().position(|r| r.len() != p) {
            return Err(PyValueError::new_err(format!("covariate row {i} has {} values, expected {p}", covariates[i].len())));
        }
        let names = names.unwrap_or_else(|| (1..=p).map(|j| format!("c{j}")).collect());
        check_len("names", names.len(), p)?;
        if treatment.iter().any(|a| *a != 0.0 && *a != 1.0) {
            return Err(PyValueError::new_err("treatment must be 0 or 1"));
        }
        let binary = binary.unwrap_or_else(|| outcome.iter().all(|y| *y == 0.0 || *y == 1.0));
        let kind = if binary { OutcomeKind::Binary } else { OutcomeKind::Continuous };
        let mut inner = AnalysisSample::from_columns(names, covariates, treatment, outcome, kind);
        if let Some(w) = weights {
            check_len("weights", w.len(), n)?;
            inner = inner.with_weights(w);
        }
        Ok(Sample { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, covariates={:?})", self.inner.len(), self.inner.covariate_names)
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    /// Unadjusted difference in means with a Wald interval.
    #[pyo3(signature = (level = 0.95))]
    fn naive(&self, py: Python<'_>, level: f64) -> PyResult<Py<PyAny>> {
        estimate(py, naive_difference(&self.inner, level))
    }

    /// Plug-in G-computation; `bootstrap` replicates give a percentile
    /// interval.
    #[pyo3(signature = (bootstrap = None, seed = 0, level = 0.95, interactions = false))]
    fn g_computation(&self, py: Python<'_>, bootstrap: Option<usize>, seed: u64, level: f64, interactions: bool) -> PyResult<Py<PyAny>> {
        let spec = OutcomeModelSpec { interactions, ..Default::default() };
        let r = py.detach(|| match bootstrap {
            Some(replicates) => g_computation_bootstrap(&self.inner, &spec, &BootstrapConfig { replicates, level, seed }),
            None => g_computation(&self.inner, &spec),
        });
        estimate(py, r)
    }

    /// Inverse probability weighting, `"hajek"` or `"horvitz-thompson"`.
    #[pyo3(signature = (weighting = "hajek", truncation = None, level = 0.95))]
    fn ipw(&self, py: Python<'_>, weighting: &str, truncation: Option<(f64, f64)>, level: f64) -> PyResult<Py<PyAny>> {
        let weighting: Weighting = serde_json::from_value(serde_json::Value::String(weighting.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown weighting {weighting:?}")))?;
        let spec = propensity_spec(truncation);
        let r = fit_propensity(&self.inner, &spec).and_then(|ps| ipw(&self.inner, &ps, weighting, level));
        estimate(py, r)
    }

    /// Targeted maximum likelihood with logistic fluctuation.
    #[pyo3(signature = (truncation = None, level = 0.95))]
    fn tmle(&self, py: Python<'_>, truncation: Option<(f64, f64)>, level: f64) -> PyResult<Py<PyAny>> {
        let r = tmle(&self.inner, &OutcomeModelSpec::default(), &propensity_spec(truncation), level).map(|(e, _)| e);
        estimate(py, r)
    }
}

fn propensity_spec(truncation: Option<(f64, f64)>) -> PropensitySpec {
    let mut spec = PropensitySpec::default();
    if let Some(t) = truncation {
        spec.truncation = t;
    }
    spec
}

fn estimate<E: std::fmt::Display>(py: Python<'_>, r: Result<EffectEstimate, E>) -> PyResult<Py<PyAny>> {
    let mut e = r.map_err(err)?;
    e.influence = None;
    let out = to_py(py, &e)?;
    let dict = out.bind(py).cast::<PyDict>()?;
    dict.set_item("standard_error", e.standard_error())?;
    dict.set_item("p_value", e.p_value())?;
    Ok(out)
}

/// Exact one-sided test of H0: p ≤ p0 for `x` responders out of `n`.
#[pyfunction]
#[pyo3(signature = (x, n, p0, alpha = 0.05, p1 = None))]
fn binomial_test(py: Python<'_>, x: u64, n: u64, p0: f64, alpha: f64, p1: Option<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &binomial_response_test(x, n, p0, alpha, p1).map_err(err)?)
}

/// E-value for a risk ratio and, optionally, the interval bound nearer 1.
#[pyfunction]
#[pyo3(signature = (rr, ci_bound = None))]
fn e_value(py: Python<'_>, rr: f64, ci_bound: Option<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &core_e_value(rr, ci_bound).map_err(err)?)
}

/// Shifts an estimate and its interval by each gap in `grid`.
#[pyfunction]
fn causal_gap(py: Python<'_>, psi: f64, lo: f64, hi: f64, grid: Vec<f64>) -> PyResult<Py<PyAny>> {
    to_py(py, &causal_gap_sweep_bounds(psi, lo, hi, &grid).map_err(err)?)
}

/// Simplex weights matching a convex combination of source means to
/// `target`. `metric` defaults to unit weights.
#[pyfunction]
#[pyo3(signature = (source_means, target, metric = None))]
fn synthetic_weights(py: Python<'_>, source_means: Vec<Vec<f64>>, target: Vec<f64>, metric: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let sources: Vec<SourceSummary> = source_means
        .into_iter()
        .enumerate()
        .map(|(k, means)| SourceSummary { name: format!("source{k}"), means, count: 1 })
        .collect();
    let metric = metric.unwrap_or_else(|| vec![1.0; target.len()]);
    to_py(py, &fit_synthetic(&sources, &target, &metric).map_err(err)?)
}

/// Validates an estimand dict and fills in its rendered form.
#[pyfunction]
fn estimand(py: Python<'_>, spec: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let spec: EstimandSpec = from_py(spec)?;
    to_py(py, &validate_estimand(spec).map_err(err)?)
}

#[pymodule]
fn extarm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Sample>()?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(scenario, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(true_ate, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_ate, m)?)?;
    m.add_function(wrap_pyfunction!(binomial_test, m)?)?;
    m.add_function(wrap_pyfunction!(e_value, m)?)?;
    m.add_function(wrap_pyfunction!(causal_gap, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_weights, m)?)?;
    m.add_function(wrap_pyfunction!(estimand, m)?)?;
    Ok(())
}
