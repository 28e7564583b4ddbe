//! Python bindings. Policies cross the boundary as flat row-major
//! `num_states * num_actions` probability lists.

use std::path::PathBuf;

use mblb_core::bounds;
use mblb_core::experiment::{run_experiment as run_core, ExperimentConfig};
use mblb_core::hard::{self, HardInstanceSpec, ThetaDynamics};
use mblb_core::lqr::{self, Lqr1DParams, SignConvention};
use mblb_core::mdp::{self, TabularPolicy};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn py_err(e: mblb_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Finite MDP with dense transition tensor `P[s, a, s']` and rewards `r[s, a]`.
#[pyclass(name = "TabularMdp", module = "mblb", frozen)]
struct PyTabularMdp {
    inner: mdp::TabularMdp,
}

impl PyTabularMdp {
    fn policy(&self, probs: Vec<f64>) -> PyResult<TabularPolicy> {
        TabularPolicy::new(self.inner.num_states(), self.inner.num_actions(), probs).map_err(py_err)
    }
}

#[pymethods]
impl PyTabularMdp {
    #[new]
    #[pyo3(signature = (num_states, num_actions, transition, reward, gamma, initial_state = 0))]
    fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial_state: usize,
    ) -> PyResult<Self> {
        let inner =
            mdp::TabularMdp::new(num_states, num_actions, transition, reward, gamma, initial_state).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: mdp::TabularMdp::from_toml_str(text).map_err(py_err)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(py_err)
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    fn value(&self, policy: Vec<f64>) -> PyResult<Vec<f64>> {
        let pi = self.policy(policy)?;
        Ok(mdp::exact_value(&self.inner, &pi).map_err(py_err)?.values().to_vec())
    }

    /// Normalised discounted occupancy, flat over `(s, a)`.
    fn occupancy(&self, policy: Vec<f64>) -> PyResult<Vec<f64>> {
        let pi = self.policy(policy)?;
        Ok(mdp::exact_occupancy(&self.inner, &pi).map_err(py_err)?.mass().to_vec())
    }

    fn eta(&self, policy: Vec<f64>) -> PyResult<f64> {
        let pi = self.policy(policy)?;
        mdp::eta(&self.inner, &pi).map_err(py_err)
    }

    /// `eta(model) - eta(self)` through the next-state value discrepancy.
    fn simulation_gap(&self, model: &PyTabularMdp, policy: Vec<f64>) -> PyResult<f64> {
        let pi = self.policy(policy)?;
        mdp::simulation_gap(&self.inner, &model.inner, &pi).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "TabularMdp(num_states={}, num_actions={}, gamma={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.gamma()
        )
    }
}

/// `(eta_model, sup_loss, penalty, lb)`.
#[pyfunction]
fn lower_bound(eta_model: f64, sup_loss: f64, penalty: f64, gamma: f64) -> (f64, f64, f64, f64) {
    let r = bounds::lower_bound(eta_model, sup_loss, penalty, gamma);
    (r.eta_model, r.sup_loss, r.mismatch_penalty, r.lb)
}

#[pyfunction]
fn statistical_correction(
    n: usize,
    zeta: f64,
    class_sizes: (usize, usize, usize),
    delta: f64,
    v_max: f64,
) -> PyResult<f64> {
    bounds::statistical_correction(n, zeta, class_sizes, delta, v_max).map_err(py_err)
}

fn hard_spec(d: usize, gamma: f64, theta: Vec<f64>) -> PyResult<(HardInstanceSpec, ThetaDynamics)> {
    let spec = HardInstanceSpec::new(d, gamma).map_err(py_err)?;
    let theta = ThetaDynamics::normalized(&theta).map_err(py_err)?;
    Ok((spec, theta))
}

/// Suboptimality of planning greedily in the hard-instance model `T_theta`.
#[pyfunction]
#[pyo3(signature = (theta, gamma = 0.9))]
fn hard_instance_gap(theta: Vec<f64>, gamma: f64) -> PyResult<f64> {
    let (spec, theta) = hard_spec(theta.len(), gamma, theta)?;
    hard::suboptimality_gap(&spec, &theta).map_err(py_err)
}

/// Largest population MML loss of `T_theta` over the arm weights and values.
#[pyfunction]
#[pyo3(signature = (theta, gamma = 0.9))]
fn hard_instance_mml_loss(theta: Vec<f64>, gamma: f64) -> PyResult<f64> {
    let (spec, theta) = hard_spec(theta.len(), gamma, theta)?;
    hard::mml_max_loss(&spec, &theta).map_err(py_err)
}

#[pyfunction]
fn theta_grid(d: usize, steps: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(hard::theta_grid(d, steps).map_err(py_err)?.into_iter().map(|t| t.values().to_vec()).collect())
}

/// Optimal gain `k` (`a = k s`) and the value `U s^2 + q` as `(k, U, q)`.
#[pyfunction]
#[pyo3(signature = (x = 6.0, gamma = 0.9, sign_convention = "minus_B"))]
fn riccati_optimal(x: f64, gamma: f64, sign_convention: &str) -> PyResult<(f64, f64, f64)> {
    let sign: SignConvention = sign_convention.parse().map_err(py_err)?;
    let params = Lqr1DParams { x, gamma, sign, ..Lqr1DParams::default() };
    let (k, v) = lqr::riccati_optimal(&params).map_err(py_err)?;
    Ok((k, v.curvature, v.offset))
}

/// Runs an experiment from `key = value` configuration text and returns the
/// written file paths.
#[pyfunction]
#[pyo3(signature = (config, output = None))]
fn run_experiment(py: Python<'_>, config: &str, output: Option<PathBuf>) -> PyResult<Vec<String>> {
    let mut cfg = ExperimentConfig::parse(config).map_err(py_err)?;
    if output.is_some() {
        cfg.output = output;
    }
    let files = py.detach(|| run_core(&cfg)).map_err(py_err)?;
    Ok(files.into_iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn mblb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTabularMdp>()?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(statistical_correction, m)?)?;
    m.add_function(wrap_pyfunction!(hard_instance_gap, m)?)?;
    m.add_function(wrap_pyfunction!(hard_instance_mml_loss, m)?)?;
    m.add_function(wrap_pyfunction!(theta_grid, m)?)?;
    m.add_function(wrap_pyfunction!(riccati_optimal, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
