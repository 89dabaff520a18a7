//! Python bindings for `mh_policy`.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use mh_policy::envs::{self, Observation};
use mh_policy::harness::{self, Algorithm};
use mh_policy::policy;
use mh_policy::rng::seeded;
use mh_policy::sampler;
use mh_policy::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::InvalidArgument(_) | Error::Validation { .. } | Error::ContractViolation(_) => {
            PyValueError::new_err(err.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mh_policy::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse_algorithm(name: &str) -> PyResult<Algorithm> {
    match name {
        "mh" => Ok(Algorithm::Mh),
        "reinforce" => Ok(Algorithm::Reinforce),
        _ => Err(PyValueError::new_err(format!("unknown algorithm {name:?}"))),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// A tabular MDP with uniform start-state distribution.
#[pyclass(name = "MdpSpec", module = "mh_policy_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMdpSpec {
    inner: envs::MdpSpec,
}

#[pymethods]
impl PyMdpSpec {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: envs::MdpSpec::from_json(text).py_err()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn transitions(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.transitions.clone()
    }

    #[getter]
    fn rewards(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.rewards.clone()
    }

    /// `R[s][a] = sum_s' P(s'|s,a) r(s,a,s')`.
    fn expected_reward_table(&self) -> Vec<Vec<f64>> {
        self.inner.expected_reward_table()
    }

    fn __repr__(&self) -> String {
        format!(
            "MdpSpec(num_states={}, num_actions={}, seed={})",
            self.inner.num_states, self.inner.num_actions, self.inner.seed
        )
    }
}

#[pyfunction]
fn generate_random_mdp(num_states: usize, num_actions: usize, seed: u64) -> PyResult<PyMdpSpec> {
    Ok(PyMdpSpec {
        inner: envs::generate_random_mdp(num_states, num_actions, seed).py_err()?,
    })
}

#[pyfunction]
fn exact_expected_reward(mdp: &PyMdpSpec, action_probs: Vec<Vec<f64>>) -> PyResult<f64> {
    envs::exact_expected_reward(&mdp.inner, &action_probs).py_err()
}

/// Returns `(policy, value)` of the best deterministic policy.
#[pyfunction]
fn optimal_deterministic_policy(mdp: &PyMdpSpec) -> PyResult<(Vec<usize>, f64)> {
    envs::optimal_deterministic_policy(&mdp.inner).py_err()
}

/// Policy architecture, written `tabular:SxA` or `mlp:4xHx2`.
#[pyclass(name = "PolicySpec", module = "mh_policy_py", frozen, skip_from_py_object, eq)]
#[derive(Clone, PartialEq)]
struct PyPolicySpec {
    inner: policy::PolicySpec,
}

#[pymethods]
impl PyPolicySpec {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: text.parse().py_err()?,
        })
    }

    #[staticmethod]
    fn tabular(num_states: usize, num_actions: usize) -> Self {
        Self {
            inner: policy::PolicySpec::tabular(num_states, num_actions),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (hidden = policy::DEFAULT_HIDDEN))]
    fn mlp(hidden: usize) -> Self {
        Self {
            inner: policy::PolicySpec::mlp(hidden),
        }
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("PolicySpec('{}')", self.inner)
    }
}

/// Flat parameter vector tagged with its layout.
#[pyclass(name = "ParamVector", module = "mh_policy_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParamVector {
    inner: policy::ParamVector,
}

#[pymethods]
impl PyParamVector {
    #[new]
    fn new(spec: &PyPolicySpec, values: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: policy::ParamVector::new(spec.inner, values).py_err()?,
        })
    }

    /// Draw from `N(0, sigma^2 I)`.
    #[staticmethod]
    #[pyo3(signature = (spec, sigma = 1.0, seed = 0))]
    fn sample_prior(spec: &PyPolicySpec, sigma: f64, seed: u64) -> PyResult<Self> {
        let prior = policy::ProposalConfig::new(sigma).py_err()?;
        Ok(Self {
            inner: policy::init_params(&spec.inner, &prior, &mut seeded(seed)),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: policy::ParamVector::from_json(text).py_err()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[getter]
    fn spec(&self) -> PyPolicySpec {
        PyPolicySpec { inner: self.inner.layout }
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("ParamVector('{}', len={})", self.inner.layout, self.inner.len())
    }
}

#[derive(FromPyObject)]
enum PyObservation {
    Index(usize),
    Features([f64; 4]),
}

/// Action probabilities for a state index (tabular) or a 4-feature
/// observation (MLP).
#[pyfunction]
fn action_distribution(theta: &PyParamVector, observation: PyObservation) -> PyResult<Vec<f64>> {
    let obs = match observation {
        PyObservation::Index(s) => Observation::Index(s),
        PyObservation::Features(f) => Observation::Features(f),
    };
    policy::action_distribution(&theta.inner.layout, &theta.inner, &obs).py_err()
}

/// Row-per-state action probabilities of a tabular policy.
#[pyfunction]
fn tabular_action_table(theta: &PyParamVector) -> PyResult<Vec<Vec<f64>>> {
    policy::tabular_action_table(&theta.inner.layout, &theta.inner).py_err()
}

#[pyclass(name = "CartPoleState", module = "mh_policy_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCartPoleState {
    inner: envs::CartPoleState,
}

#[pymethods]
impl PyCartPoleState {
    #[new]
    fn new(cart_position: f64, cart_velocity: f64, pole_angle: f64, pole_tip_velocity: f64) -> Self {
        Self {
            inner: envs::CartPoleState::new(cart_position, cart_velocity, pole_angle, pole_tip_velocity),
        }
    }

    #[getter]
    fn features(&self) -> [f64; 4] {
        self.inner.features()
    }

    #[getter]
    fn steps(&self) -> u32 {
        self.inner.steps
    }

    fn __repr__(&self) -> String {
        let [x, v, th, w] = self.inner.features();
        format!("CartPoleState({x}, {v}, {th}, {w}, steps={})", self.inner.steps)
    }
}

#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn cartpole_reset(seed: u64) -> PyCartPoleState {
    PyCartPoleState {
        inner: envs::cartpole_reset(&mut seeded(seed)),
    }
}

/// Returns `(next_state, reward, terminal)`.
#[pyfunction]
fn cartpole_step(state: &PyCartPoleState, action: usize) -> PyResult<(PyCartPoleState, f64, bool)> {
    let step = envs::cartpole_step(&state.inner, action).py_err()?;
    Ok((PyCartPoleState { inner: step.next }, step.reward, step.terminal))
}

#[pyfunction]
fn acceptance_probability(log_ratio: f64) -> f64 {
    sampler::acceptance_probability(log_ratio)
}

#[pyfunction]
fn grid_posterior(utilities: Vec<f64>, log_priors: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    sampler::grid_posterior(&utilities, &log_priors, temperature).py_err()
}

#[pyfunction]
fn off_maximum_mass(utilities: Vec<f64>, log_priors: Vec<f64>, temperature: f64) -> PyResult<f64> {
    sampler::off_maximum_mass(&utilities, &log_priors, temperature).py_err()
}

/// Experiment configuration. Build one from a preset or JSON and adjust it
/// with `replace(**fields)`.
#[pyclass(name = "RunConfig", module = "mh_policy_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: harness::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn random_mdp() -> Self {
        Self {
            inner: harness::RunConfig::random_mdp_default(),
        }
    }

    #[staticmethod]
    fn cartpole() -> Self {
        Self {
            inner: harness::RunConfig::cartpole_default(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = harness::RunConfig::from_json(text).py_err()?;
        inner.validate().py_err()?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    /// Copy with top-level fields replaced; nested sections take dicts.
    #[pyo3(signature = (**fields))]
    fn replace(&self, py: Python<'_>, fields: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let json = py.import("json")?;
        let merged = json_to_py(py, &self.to_json()?)?;
        if let Some(fields) = fields {
            for (key, value) in fields.iter() {
                let current = merged.get_item(&key)?;
                if current.is_instance_of::<pyo3::types::PyDict>() && value.is_instance_of::<pyo3::types::PyDict>() {
                    current.call_method1("update", (value,))?;
                } else {
                    merged.set_item(key, value)?;
                }
            }
        }
        let text: String = json.call_method1("dumps", (merged,))?.extract()?;
        Self::from_json(&text)
    }

    fn __repr__(&self) -> PyResult<String> {
        Ok(format!("RunConfig({})", self.to_json()?))
    }
}

/// Result of one trial.
#[pyclass(name = "TrialResult", module = "mh_policy_py", frozen, skip_from_py_object)]
struct PyTrialResult {
    inner: harness::TrialResult,
}

#[pymethods]
impl PyTrialResult {
    #[getter]
    fn trial(&self) -> usize {
        self.inner.trial
    }

    /// Reward column of the trace.
    #[getter]
    fn rewards(&self) -> Vec<f64> {
        self.inner.trace.rewards()
    }

    #[getter]
    fn acceptance_rate(&self) -> f64 {
        self.inner.trace.acceptance_rate()
    }

    fn trace_csv(&self) -> String {
        self.inner.trace.to_csv()
    }

    #[getter]
    fn final_theta(&self) -> PyParamVector {
        PyParamVector {
            inner: self.inner.final_theta.clone(),
        }
    }

    #[getter]
    fn final_eval(&self) -> f64 {
        self.inner.final_eval
    }

    #[getter]
    fn posterior_mean_eval(&self) -> Option<f64> {
        self.inner.posterior_mean_eval
    }

    #[getter]
    fn best_sample_eval(&self) -> Option<f64> {
        self.inner.best_sample_eval
    }

    #[getter]
    fn oracle_value(&self) -> Option<f64> {
        self.inner.oracle_value
    }

    #[getter]
    fn seconds(&self) -> f64 {
        self.inner.seconds
    }
}

/// Runs one trial of `algorithm` (`"mh"` or `"reinforce"`).
#[pyfunction]
#[pyo3(signature = (config, trial = 0, algorithm = None))]
fn run_trial(py: Python<'_>, config: &PyRunConfig, trial: usize, algorithm: Option<&str>) -> PyResult<PyTrialResult> {
    let algorithm = algorithm.map(parse_algorithm).transpose()?.unwrap_or(config.inner.algorithm);
    let config = config.inner.clone();
    let inner = py.detach(|| harness::run_trial(&config, algorithm, trial)).py_err()?;
    Ok(PyTrialResult { inner })
}

/// Runs every trial, writes the output files and returns the report as a
/// dict.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyRunConfig) -> PyResult<Bound<'py, PyAny>> {
    let config = config.inner.clone();
    let (report, _) = py.detach(|| harness::run_experiment(&config)).py_err()?;
    let text = serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

/// Returns `(mh_seconds, reinforce_seconds)`.
#[pyfunction]
fn compare_runtimes(py: Python<'_>, config: &PyRunConfig) -> PyResult<(f64, f64)> {
    let config = config.inner.clone();
    let cmp = py.detach(|| harness::compare_runtimes(&config)).py_err()?;
    Ok((cmp.mh_seconds, cmp.pg_seconds))
}

#[pymodule]
fn mh_policy_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMdpSpec>()?;
    m.add_class::<PyPolicySpec>()?;
    m.add_class::<PyParamVector>()?;
    m.add_class::<PyCartPoleState>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyTrialResult>()?;
    m.add_function(wrap_pyfunction!(generate_random_mdp, m)?)?;
    m.add_function(wrap_pyfunction!(exact_expected_reward, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_deterministic_policy, m)?)?;
    m.add_function(wrap_pyfunction!(action_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(tabular_action_table, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_reset, m)?)?;
    m.add_function(wrap_pyfunction!(cartpole_step, m)?)?;
    m.add_function(wrap_pyfunction!(acceptance_probability, m)?)?;
    m.add_function(wrap_pyfunction!(grid_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(off_maximum_mass, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_runtimes, m)?)?;
    Ok(())
}
