//! Python bindings. Fits cross the boundary as JSON documents so they can be
//! shared with the command-line tool.

use std::collections::BTreeMap;

use pcause::simulation::StudyConfig;
use pcause::{
    coefficient_rows, coefficient_table, complete_case_filter, fit_projection, load_csv,
    odds_of_causation, run_study, select_model, Candidate, Error, NuisanceConfig, ProjectionFit,
    RegressorKind, RegressorSpec, SolveOptions, WorkingModelSpec,
};
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Study(_) => PyRuntimeError::new_err(e.to_string()),
        ref e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn working_model(model: &str, intercept: bool) -> PyResult<WorkingModelSpec> {
    let spec = match model {
        "logistic" => WorkingModelSpec::logistic(),
        "linear" => WorkingModelSpec::identity(),
        other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    };
    Ok(spec.with_intercept(intercept))
}

fn nuisance_config(
    nuisance: &str,
    params: Option<BTreeMap<String, f64>>,
    folds: usize,
    clip: f64,
    seed: u64,
) -> PyResult<NuisanceConfig> {
    let kind = match nuisance {
        "logistic" => RegressorKind::LogisticLinear,
        "forest" => RegressorKind::RandomForest,
        "kernel" => RegressorKind::KernelSmoother,
        other => return Err(PyValueError::new_err(format!("unknown nuisance regressor `{other}`"))),
    };
    let reg = RegressorSpec::from_params(kind, &params.unwrap_or_default()).map_err(py_err)?;
    Ok(NuisanceConfig::new(reg).folds(folds).clip_eps(clip).seed(seed))
}

fn load(
    path: &str,
    outcome: &str,
    treatment: &str,
    covariates: &[String],
    complete_cases: bool,
) -> PyResult<pcause::Dataset> {
    let ds = load_csv(path, outcome, treatment, covariates).map_err(py_err)?;
    if complete_cases {
        Ok(complete_case_filter(&ds).map_err(py_err)?.0)
    } else {
        Ok(ds)
    }
}

/// A fitted projection of the probability of causation.
#[pyclass(name = "Fit", module = "pcause_py", frozen)]
struct PyFit {
    inner: ProjectionFit,
}

#[pymethods]
impl PyFit {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ProjectionFit::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.inner.beta_hat.as_slice().to_vec()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.inner.covariate_names.clone()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    /// Robust standard errors, or `None` when no variance is available.
    fn std_errors(&self) -> Option<Vec<f64>> {
        self.inner.std_errors()
    }

    fn coefficient_table(&self) -> PyResult<String> {
        let rows = coefficient_rows(&self.inner).map_err(py_err)?;
        Ok(coefficient_table(&rows, self.inner.n))
    }

    /// `(pc, ci_low, ci_high)` at the profile `x` given in covariate order.
    #[pyo3(signature = (x, level = 0.95))]
    fn predict(&self, x: Vec<f64>, level: f64) -> PyResult<(f64, f64, f64)> {
        let e = self.inner.predict(&x, level).map_err(py_err)?;
        Ok((e.point, e.ci_low, e.ci_high))
    }

    fn __repr__(&self) -> String {
        format!("Fit(n={}, beta={:?})", self.inner.n, self.inner.beta_hat.as_slice())
    }
}

#[pyfunction]
#[pyo3(signature = (
    path, outcome, treatment, covariates, model = "logistic", nuisance = "forest",
    params = None, folds = 5, clip = 0.01, seed = 0, intercept = true, complete_cases = false,
))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    path: &str,
    outcome: &str,
    treatment: &str,
    covariates: Vec<String>,
    model: &str,
    nuisance: &str,
    params: Option<BTreeMap<String, f64>>,
    folds: usize,
    clip: f64,
    seed: u64,
    intercept: bool,
    complete_cases: bool,
) -> PyResult<PyFit> {
    let ds = load(path, outcome, treatment, &covariates, complete_cases)?;
    let cfg = nuisance_config(nuisance, params, folds, clip, seed)?;
    let spec = working_model(model, intercept)?;
    let (fit, _) = fit_projection(&ds, &cfg, &spec, &SolveOptions::default()).map_err(py_err)?;
    Ok(PyFit { inner: fit })
}

/// `pc / (1 - pc)`; `inf` at `pc = 1`.
#[pyfunction]
fn odds(pc: f64) -> PyResult<f64> {
    match odds_of_causation(pc) {
        Ok(o) => Ok(o),
        Err(Error::InfiniteOdds(p)) if p >= 1.0 => Ok(f64::INFINITY),
        Err(Error::InfiniteOdds(_)) => Ok(0.0),
        Err(e) => Err(py_err(e)),
    }
}

/// Runs a study from TOML text and returns the report as CSV text.
#[pyfunction]
#[pyo3(signature = (config, seed = None))]
fn simulate(py: Python<'_>, config: &str, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = StudyConfig::from_toml(config).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = py.detach(|| run_study(&cfg)).map_err(py_err)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(py_err)?;
    String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Ranks candidates `(id, model, covariates or None)` by cross-validated
/// pseudo-risk. Returns `(id, risk, se)` best first.
#[pyfunction]
#[pyo3(signature = (
    path, outcome, treatment, covariates, candidates, nuisance = "forest",
    params = None, folds = 5, clip = 0.01, seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn select(
    path: &str,
    outcome: &str,
    treatment: &str,
    covariates: Vec<String>,
    candidates: Vec<(String, String, Option<Vec<String>>)>,
    nuisance: &str,
    params: Option<BTreeMap<String, f64>>,
    folds: usize,
    clip: f64,
    seed: u64,
) -> PyResult<Vec<(String, f64, f64)>> {
    let ds = load(path, outcome, treatment, &covariates, false)?;
    let cfg = nuisance_config(nuisance, params, folds, clip, seed)?;
    let cands = candidates
        .into_iter()
        .map(|(id, model, covs)| {
            let c = Candidate::new(&id, working_model(&model, true)?);
            Ok(match covs {
                Some(v) => c.with_covariates(&v),
                None => c,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let report = select_model(&ds, &cfg, &cands).map_err(py_err)?;
    Ok(report
        .ranking
        .into_iter()
        .map(|r| (r.candidate_id, r.pseudo_risk, r.se))
        .collect())
}

#[pymodule]
fn pcause_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(odds, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    Ok(())
}
