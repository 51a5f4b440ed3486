use conicsqp::cone::{self, ConeBlock, ConeKind, ConeSpec};
use conicsqp::diagnostics::{DiagnosticsConfig, ProbeConfig};
use conicsqp::harness::{self, RunReport};
use conicsqp::problem::{problem_from_json, problem_to_json};
use conicsqp::sqp::SQPConfig;
use conicsqp::{KKTPair, ProblemSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: conicsqp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn report_to_py<'py>(py: Python<'py>, rep: &RunReport) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &rep.to_json())
}

fn cone_from_blocks(blocks: Vec<(String, usize)>) -> PyResult<ConeSpec> {
    let blocks = blocks
        .into_iter()
        .map(|(kind, dim)| {
            let kind = match kind.as_str() {
                "zero" => ConeKind::Zero,
                "orthant" => ConeKind::Orthant,
                "soc" | "second_order" => ConeKind::SecondOrder,
                other => return Err(PyValueError::new_err(format!("unknown cone kind `{other}`"))),
            };
            ConeBlock::new(kind, dim).map_err(err)
        })
        .collect::<PyResult<Vec<_>>>()?;
    ConeSpec::new(blocks).map_err(err)
}

/// A problem `min φ0(x) s.t. f(x) ∈ Θ`.
#[pyclass(name = "Problem", frozen)]
struct PyProblem {
    inner: ProblemSpec,
}

impl PyProblem {
    fn pair(&self, x: Option<Vec<f64>>, lam: Option<Vec<f64>>) -> PyResult<KKTPair> {
        match (x, lam) {
            (Some(x), Some(lam)) => Ok(KKTPair::new(x, lam)),
            (Some(x), None) => {
                let m = self.inner.m();
                Ok(KKTPair::new(x, vec![0.0; m]))
            }
            (None, _) => self
                .inner
                .reference
                .clone()
                .ok_or_else(|| PyValueError::new_err("no point given and the problem has no reference point")),
        }
    }
}

#[pymethods]
impl PyProblem {
    /// `cone` is a list of `(kind, dim)` with kind one of zero, orthant, soc.
    #[new]
    #[pyo3(signature = (name, n, objective, constraints, cone, reference=None))]
    fn new(
        name: &str,
        n: usize,
        objective: &str,
        constraints: Vec<String>,
        cone: Vec<(String, usize)>,
        reference: Option<(Vec<f64>, Vec<f64>)>,
    ) -> PyResult<Self> {
        let cons: Vec<&str> = constraints.iter().map(String::as_str).collect();
        let reference = reference.map(|(x, lam)| KKTPair::new(x, lam));
        let inner = ProblemSpec::new(name, n, objective, &cons, cone_from_blocks(cone)?, reference).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: problem_from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> String {
        problem_to_json(&self.inner).to_string()
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn reference(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.inner.reference.as_ref().map(|z| (z.x.clone(), z.lam.clone()))
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.objective_value(&x).map_err(err)
    }

    fn constraints(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.constraint_values(&x).map_err(err)?.iter().copied().collect())
    }

    /// Total KKT residual at `(x, lam)`.
    fn kkt_residual(&self, x: Vec<f64>, lam: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.kkt_residual(&KKTPair::new(x, lam)).map_err(err)?.total())
    }

    #[pyo3(signature = (x0=None, lam0=None, max_iters=50, delta=1.0, tol=1e-12, seed=0))]
    fn solve<'py>(
        &self,
        py: Python<'py>,
        x0: Option<Vec<f64>>,
        lam0: Option<Vec<f64>>,
        max_iters: usize,
        delta: f64,
        tol: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let z0 = KKTPair::new(
            x0.unwrap_or_else(|| vec![0.0; self.inner.n]),
            lam0.unwrap_or_else(|| vec![0.0; self.inner.m()]),
        );
        let cfg = SQPConfig { max_iters, delta, stop_tol: tol, seed, ..SQPConfig::default() };
        let (rep, _) = py.detach(|| harness::cmd_solve(&self.inner, &z0, &cfg)).map_err(err)?;
        report_to_py(py, &rep)
    }

    /// Stability diagnostics at `(x, lam)`; defaults to the reference point.
    #[pyo3(signature = (x=None, lam=None, probe=true, seed=0))]
    fn diagnose<'py>(
        &self,
        py: Python<'py>,
        x: Option<Vec<f64>>,
        lam: Option<Vec<f64>>,
        probe: bool,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let z = self.pair(x, lam)?;
        let mut cfg = DiagnosticsConfig { seed, ..DiagnosticsConfig::default() };
        if !probe {
            cfg.probe = None;
        }
        let (rep, _) = py.detach(|| harness::cmd_diagnose(&self.inner, &z, &cfg)).map_err(err)?;
        report_to_py(py, &rep)
    }

    #[pyo3(signature = (x=None, lam=None, directions=8, seed=0))]
    fn probe_calmness<'py>(
        &self,
        py: Python<'py>,
        x: Option<Vec<f64>>,
        lam: Option<Vec<f64>>,
        directions: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let z = self.pair(x, lam)?;
        let cfg = ProbeConfig { random_directions: directions, seed, ..ProbeConfig::default() };
        let gate = DiagnosticsConfig::default().gate_tol;
        let (rep, _) = py.detach(|| harness::cmd_probe(&self.inner, &z, &cfg, gate)).map_err(err)?;
        report_to_py(py, &rep)
    }

    fn __repr__(&self) -> String {
        format!("Problem(name={:?}, n={}, m={})", self.inner.name, self.inner.n, self.inner.m())
    }
}

/// Registry problem by name, or a problem file path.
#[pyfunction]
fn load_problem(source: &str) -> PyResult<PyProblem> {
    Ok(PyProblem { inner: harness::load_problem(source).map_err(err)? })
}

#[pyfunction]
fn registry_names() -> Vec<String> {
    harness::registry().into_iter().map(|e| e.name.to_string()).collect()
}

#[pyfunction]
fn project(cone: Vec<(String, usize)>, y: Vec<f64>) -> PyResult<Vec<f64>> {
    cone::project(&cone_from_blocks(cone)?, &y).map_err(err)
}

/// Second subderivative of the cone indicator at `(y, lam)` in direction `w`;
/// `inf` off the critical cone.
#[pyfunction]
fn second_subderivative(cone: Vec<(String, usize)>, y: Vec<f64>, lam: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    let v = cone::second_subderivative(&cone_from_blocks(cone)?, &y, &lam, &w).map_err(err)?;
    Ok(v.finite().unwrap_or(f64::INFINITY))
}

/// Closed form vs difference-quotient check for a cone flag such as `soc3`.
#[pyfunction]
#[pyo3(signature = (cone, samples=100, seed=0))]
fn oracle_check<'py>(py: Python<'py>, cone: String, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let (rep, _) = py.detach(|| harness::cmd_oracle_check(&[cone], samples, seed)).map_err(err)?;
    report_to_py(py, &rep)
}

#[pymodule]
fn pyconicsqp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", harness::VERSION)?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(load_problem, m)?)?;
    m.add_function(wrap_pyfunction!(registry_names, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(second_subderivative, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_check, m)?)?;
    Ok(())
}
