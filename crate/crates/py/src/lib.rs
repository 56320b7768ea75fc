//! Python bindings: the file-level commands (check, lyapunov, taylor,
//! simulate, reduce_base) returning plain dicts, plus the expression and
//! jet machinery for scripting parameter families. All high-precision
//! numbers cross the boundary as decimal strings.

use lyapcert::cli;
use lyapcert::family::{Expr, Jet};
use lyapcert::numeric::{parse_rational, parse_real, Real};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;

fn value_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => {
            pyo3::types::PyBool::new(py, *b).to_owned().into_any()
        }
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(value_to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, value_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn run_cmd<'py>(py: Python<'py>, result: cli::CmdResult) -> PyResult<Bound<'py, PyAny>> {
    match result {
        Ok(v) => value_to_py(py, &v),
        Err(e) => match e.exit_code() {
            3 => Err(PyIOError::new_err(e.to_string())),
            _ => Err(PyValueError::new_err(e.to_string())),
        },
    }
}

/// Validate a system file and report its branch structure.
#[pyfunction]
fn check<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    run_cmd(py, cli::cmd_check(&path))
}

/// Compute the exponent with a certified error bound.
#[pyfunction]
#[pyo3(signature = (path, epsilon=None, precision=None, mode=None))]
fn lyapunov<'py>(
    py: Python<'py>,
    path: PathBuf,
    epsilon: Option<String>,
    precision: Option<u32>,
    mode: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    run_cmd(
        py,
        cli::cmd_lyapunov(&path, epsilon.as_deref(), precision, mode.as_deref()),
    )
}

/// Certified Taylor coefficients along the family in the file.
#[pyfunction]
#[pyo3(signature = (path, order=None, epsilon=None, radius=None, rho_bar=None, estimate=false, precision=None))]
#[allow(clippy::too_many_arguments)]
fn taylor<'py>(
    py: Python<'py>,
    path: PathBuf,
    order: Option<usize>,
    epsilon: Option<String>,
    radius: Option<String>,
    rho_bar: Option<String>,
    estimate: bool,
    precision: Option<u32>,
) -> PyResult<Bound<'py, PyAny>> {
    run_cmd(
        py,
        cli::cmd_taylor(
            &path,
            order,
            epsilon.as_deref(),
            radius.as_deref(),
            rho_bar.as_deref(),
            estimate,
            precision,
        ),
    )
}

/// Monte-Carlo sanity estimate with a fixed seed.
#[pyfunction]
#[pyo3(signature = (path, steps=100_000, trials=32, seed=1))]
fn simulate<'py>(
    py: Python<'py>,
    path: PathBuf,
    steps: u64,
    trials: u64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    run_cmd(py, cli::cmd_simulate(&path, steps, trials, seed))
}

/// The d-step block reduction of a periodic system file, as a dict.
#[pyfunction]
#[pyo3(signature = (path, output=None))]
fn reduce_base<'py>(
    py: Python<'py>,
    path: PathBuf,
    output: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    run_cmd(py, cli::cmd_reduce_base(&path, output.as_deref()))
}

/// Inverse hyperbolic tangent at the requested precision, as a decimal
/// string.
#[pyfunction]
#[pyo3(signature = (x, precision=128))]
fn artanh(x: &str, precision: u32) -> PyResult<String> {
    let v = parse_real(x, precision).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let r = lyapcert::numeric::artanh(&v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(lyapcert::systemfile::real_to_string(&r))
}

/// An expression in the parameter t, as used in system files.
#[pyclass(name = "Expr")]
struct PyExpr {
    inner: Expr,
}

#[pymethods]
impl PyExpr {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Expr::parse(text)
            .map(|inner| PyExpr { inner })
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Evaluate at a parameter value (decimal string) to a decimal
    /// string at the chosen precision.
    #[pyo3(signature = (t, precision=128))]
    fn eval(&self, t: &str, precision: u32) -> PyResult<String> {
        let tv = parse_real(t, precision).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let v = self
            .inner
            .eval(&tv)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(lyapcert::systemfile::real_to_string(&v))
    }

    /// Evaluate exactly over rationals ("n/d" strings).
    fn eval_exact(&self, t: &str) -> PyResult<String> {
        let tq = parse_rational(t).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let v = self
            .inner
            .eval_rational(&tq)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(v.to_string())
    }

    /// Taylor coefficients at t0 up to the given order, as decimal
    /// strings (coefficient j is the j-th derivative over j!).
    #[pyo3(signature = (t0, order, precision=128))]
    fn jet(&self, t0: &str, order: usize, precision: u32) -> PyResult<Vec<String>> {
        let t = parse_real(t0, precision).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let jet: Jet<Real> = self
            .inner
            .eval(&Jet::variable(t, order))
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(jet
            .coeffs
            .iter()
            .map(lyapcert::systemfile::real_to_string)
            .collect())
    }

    fn __str__(&self) -> String {
        self.inner.print()
    }

    fn __repr__(&self) -> String {
        format!("Expr({:?})", self.inner.print())
    }
}

#[pymodule]
fn lyapcert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(taylor, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(reduce_base, m)?)?;
    m.add_function(wrap_pyfunction!(artanh, m)?)?;
    m.add_class::<PyExpr>()?;
    Ok(())
}
