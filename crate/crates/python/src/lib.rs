//! Python bindings: `import condmean`.
//!
//! Records cross the boundary as parallel sequences (`t`, `delta`, optional
//! covariate rows `z` and outcomes `y`). Input errors raise `ValueError`,
//! numeric failures raise `ArithmeticError`.

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use condmean_core as core;
use core::{CoxOptions, Formula, ImputationSpec, Indicator, MiOptions, SampleDesign, StepConvention, SubjectRecord};

fn py_err(e: core::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyArithmeticError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn spec(formula: &str, indicator: &str) -> PyResult<ImputationSpec> {
    Ok(ImputationSpec::new(parse::<Formula>(formula)?, parse::<Indicator>(indicator)?))
}

fn records(t: Vec<f64>, delta: Vec<bool>, z: Option<Vec<Vec<f64>>>, y: Option<Vec<f64>>) -> PyResult<Vec<SubjectRecord>> {
    let n = t.len();
    if delta.len() != n {
        return Err(PyValueError::new_err(format!("t has {n} values but delta has {}", delta.len())));
    }
    let z = z.unwrap_or_else(|| vec![Vec::new(); n]);
    if z.len() != n {
        return Err(PyValueError::new_err(format!("t has {n} values but z has {} rows", z.len())));
    }
    let y: Vec<Option<f64>> = match y {
        Some(y) if y.len() != n => {
            return Err(PyValueError::new_err(format!("t has {n} values but y has {}", y.len())));
        }
        Some(y) => y.into_iter().map(Some).collect(),
        None => vec![None; n],
    };
    t.into_iter()
        .zip(delta)
        .zip(z)
        .zip(y)
        .map(|(((t, d), z), y)| SubjectRecord::new(t, d, z, y).map_err(py_err))
        .collect()
}

/// Right-continuous step survival curve.
#[pyclass(name = "SurvivalCurve", module = "condmean", frozen, from_py_object)]
#[derive(Clone)]
struct PySurvivalCurve(core::SurvivalCurve);

#[pymethods]
impl PySurvivalCurve {
    #[new]
    fn new(times: Vec<f64>, probs: Vec<f64>) -> PyResult<Self> {
        core::SurvivalCurve::new(times, probs).map(Self).map_err(py_err)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    fn __call__(&self, t: f64) -> f64 {
        self.0.eval(t)
    }

    /// `P(X >= t)`.
    fn eval_left(&self, t: f64) -> f64 {
        self.0.eval_left(t)
    }

    fn survival_at(&self, t: f64, hazard_ratio: f64) -> PyResult<f64> {
        if !(hazard_ratio > 0.0 && hazard_ratio.is_finite()) {
            return Err(PyValueError::new_err("hazard ratio must be positive and finite"));
        }
        Ok(self.0.survival_at(t, hazard_ratio))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("SurvivalCurve(<{} steps>)", self.0.len())
    }
}

/// Cox fit, or Kaplan-Meier when there are no covariates.
#[pyclass(name = "SurvivalFit", module = "condmean", frozen)]
struct PySurvivalFit(core::SurvivalFit);

#[pymethods]
impl PySurvivalFit {
    #[getter]
    fn method(&self) -> String {
        self.0.provenance()
    }

    #[getter]
    fn log_hazard_ratios(&self) -> Vec<f64> {
        self.0.log_hazard_ratios.clone()
    }

    #[getter]
    fn baseline(&self) -> PySurvivalCurve {
        PySurvivalCurve(self.0.baseline.clone())
    }

    #[getter]
    fn converged(&self) -> bool {
        self.0.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.0.iterations
    }

    fn hazard_ratio(&self, z: Vec<f64>) -> PyResult<f64> {
        if z.len() != self.0.log_hazard_ratios.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} covariates, got {}",
                self.0.log_hazard_ratios.len(),
                z.len()
            )));
        }
        Ok(self.0.hazard_ratio(&z))
    }

    fn __repr__(&self) -> String {
        format!("SurvivalFit({})", self.0.provenance())
    }
}

/// Trapezoid grid over observed times for one baseline curve.
#[pyclass(name = "ImputationGrid", module = "condmean", frozen)]
struct PyImputationGrid(core::ImputationGrid);

#[pymethods]
impl PyImputationGrid {
    #[new]
    #[pyo3(signature = (times, baseline, convention = "at-risk"))]
    fn new(times: Vec<f64>, baseline: &PySurvivalCurve, convention: &str) -> PyResult<Self> {
        let convention = parse::<StepConvention>(convention)?;
        core::ImputationGrid::with_convention(times, &baseline.0, convention).map(Self).map_err(py_err)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    /// Returns `(value, status)`; status is "imputed" or "degenerate".
    #[pyo3(signature = (c, hazard_ratio, formula = "correct", indicator = "inclusive"))]
    fn conditional_mean(&self, c: f64, hazard_ratio: f64, formula: &str, indicator: &str) -> PyResult<(f64, String)> {
        let imp = self.0.conditional_mean(c, hazard_ratio, spec(formula, indicator)?).map_err(py_err)?;
        Ok((imp.value, imp.status.as_str().to_owned()))
    }

    fn indicator_gap(&self, c: f64, hazard_ratio: f64) -> PyResult<f64> {
        self.0.indicator_gap(c, hazard_ratio).map_err(py_err)
    }
}

/// Rubin-pooled estimate for one coefficient.
#[pyclass(name = "PooledEstimate", module = "condmean", frozen, get_all)]
struct PyPooledEstimate {
    estimate: f64,
    std_error: f64,
    within_var: f64,
    between_var: f64,
    b: usize,
}

#[pymethods]
impl PyPooledEstimate {
    fn __repr__(&self) -> String {
        format!("PooledEstimate(estimate={}, std_error={}, b={})", self.estimate, self.std_error, self.b)
    }
}

impl From<&core::PooledEstimate> for PyPooledEstimate {
    fn from(p: &core::PooledEstimate) -> Self {
        Self { estimate: p.estimate, std_error: p.std_error, within_var: p.within_var, between_var: p.between_var, b: p.b }
    }
}

#[pyfunction]
fn kaplan_meier(t: Vec<f64>, delta: Vec<bool>) -> PyResult<PySurvivalCurve> {
    let recs = records(t, delta, None, None)?;
    core::kaplan_meier(&recs).map(PySurvivalCurve).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (t, delta, z = None))]
fn fit_survival(t: Vec<f64>, delta: Vec<bool>, z: Option<Vec<Vec<f64>>>) -> PyResult<PySurvivalFit> {
    let recs = records(t, delta, z, None)?;
    core::SurvivalFit::estimate(&recs, CoxOptions::default()).map(PySurvivalFit).map_err(py_err)
}

/// Completes `t`: events keep their value, censored entries get their
/// conditional mean. Returns `(x, statuses)`.
#[pyfunction]
#[pyo3(signature = (t, delta, z = None, formula = "correct", indicator = "inclusive"))]
fn impute(
    t: Vec<f64>,
    delta: Vec<bool>,
    z: Option<Vec<Vec<f64>>>,
    formula: &str,
    indicator: &str,
) -> PyResult<(Vec<f64>, Vec<String>)> {
    let spec = spec(formula, indicator)?;
    let recs = records(t, delta, z, None)?;
    let fit = core::SurvivalFit::estimate(&recs, CoxOptions::default()).map_err(py_err)?;
    let out = core::impute_dataset(&recs, &fit, spec).map_err(py_err)?;
    Ok((out.x(), out.records.iter().map(|r| r.status.as_str().to_owned()).collect()))
}

#[pyfunction]
fn rubin_pool(estimates: Vec<f64>, variances: Vec<f64>) -> PyResult<PyPooledEstimate> {
    core::rubin_pool(&estimates, &variances).map(|p| PyPooledEstimate::from(&p)).map_err(py_err)
}

/// Bootstrap multiple imputation of `y ~ x + z`; one pooled estimate per
/// coefficient, intercept first and the imputed covariate second.
#[pyfunction]
#[pyo3(signature = (
    t, delta, y, z = None, formula = "correct", indicator = "inclusive",
    imputations = 20, seed = 0, reuse_survival_fit = false
))]
#[allow(clippy::too_many_arguments)]
fn bootstrap_mi(
    py: Python<'_>,
    t: Vec<f64>,
    delta: Vec<bool>,
    y: Vec<f64>,
    z: Option<Vec<Vec<f64>>>,
    formula: &str,
    indicator: &str,
    imputations: usize,
    seed: u64,
    reuse_survival_fit: bool,
) -> PyResult<Vec<PyPooledEstimate>> {
    let spec = spec(formula, indicator)?;
    let recs = records(t, delta, z, Some(y))?;
    let options = MiOptions { imputations, seed, reuse_survival_fit, ..MiOptions::default() };
    let fit = py.detach(|| core::bootstrap_mi(&recs, spec, &options)).map_err(py_err)?;
    Ok(fit.terms.iter().map(PyPooledEstimate::from).collect())
}

/// One simulated study as a dict of `t`, `delta`, `z` (rows) and `y`.
#[pyfunction]
#[pyo3(signature = (n = 1000, log_hr = 0.0, seed = 0))]
fn generate_sample(py: Python<'_>, n: usize, log_hr: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let design = SampleDesign { n, log_hr, ..SampleDesign::default() };
    let recs = core::generate_sample(&design, seed).map_err(py_err)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("t", recs.iter().map(|r| r.t).collect::<Vec<_>>())?;
    out.set_item("delta", recs.iter().map(|r| r.delta).collect::<Vec<_>>())?;
    out.set_item("z", recs.iter().map(|r| r.z.clone()).collect::<Vec<_>>())?;
    out.set_item("y", recs.iter().map(|r| r.y.unwrap_or(f64::NAN)).collect::<Vec<_>>())?;
    Ok(out.into_any().unbind())
}

#[pyfunction]
fn censoring_rate(delta: Vec<bool>) -> PyResult<f64> {
    let recs: Vec<SubjectRecord> =
        delta.into_iter().map(|d| if d { SubjectRecord::event(0.0) } else { SubjectRecord::censored(0.0) }).collect();
    core::censoring_rate(&recs).map_err(py_err)
}

#[pymodule]
fn condmean(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySurvivalCurve>()?;
    m.add_class::<PySurvivalFit>()?;
    m.add_class::<PyImputationGrid>()?;
    m.add_class::<PyPooledEstimate>()?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(fit_survival, m)?)?;
    m.add_function(wrap_pyfunction!(impute, m)?)?;
    m.add_function(wrap_pyfunction!(rubin_pool, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_mi, m)?)?;
    m.add_function(wrap_pyfunction!(generate_sample, m)?)?;
    m.add_function(wrap_pyfunction!(censoring_rate, m)?)?;
    m.add("FORMULAS", Formula::ALL.map(|f| f.as_str()).to_vec())?;
    m.add("INDICATORS", Indicator::ALL.map(|i| i.as_str()).to_vec())?;
    Ok(())
}
