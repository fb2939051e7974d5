//! Python bindings: matrix games, finite models, value iteration, tabular
//! Q-learning, the step-size checks and the deep learner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sormq::deep::{train, AlgoConfig, TargetRule};
use sormq::env::{GuardInvader, MarkovGameModel, Soccer};
use sormq::game::DEFAULT_TOL;
use sormq::linear::lemma_sequence_check;
use sormq::tabular::{run_q_learning, value_iteration, w_star, QTable, SorConfig, StepSchedule, DEFAULT_MAX_ITERS};
use sormq::{solve_matrix_game, Error, PayoffMatrix};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Optimal strategies of a zero-sum matrix game; rows belong to the maximizer.
#[pyclass(name = "GameSolution", get_all, frozen)]
struct PyGameSolution {
    value: f64,
    strategy: Vec<f64>,
    column_strategy: Vec<f64>,
}

#[pymethods]
impl PyGameSolution {
    fn __repr__(&self) -> String {
        format!("GameSolution(value={}, strategy={:?})", self.value, self.strategy)
    }
}

#[pyfunction]
#[pyo3(signature = (rows, tol = DEFAULT_TOL))]
fn solve_matrix(rows: Vec<Vec<f64>>, tol: f64) -> PyResult<PyGameSolution> {
    let q = PayoffMatrix::from_rows(&rows).map_err(py_err)?;
    let sol = solve_matrix_game(&q, tol).map_err(py_err)?;
    Ok(PyGameSolution {
        value: sol.value,
        strategy: sol.strategy.probabilities().to_vec(),
        column_strategy: sol.column_strategy,
    })
}

/// Finite two-player zero-sum Markov game with explicit transitions.
#[pyclass(name = "MarkovGameModel", frozen)]
struct PyModel {
    inner: MarkovGameModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (seed, states, max_actions, min_actions, gamma = 0.9, floor = 0.0))]
    fn random(seed: u64, states: usize, max_actions: usize, min_actions: usize, gamma: f64, floor: f64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = MarkovGameModel::random(&mut rng, states, max_actions, min_actions, gamma, floor).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, states, max_actions, min_actions, gamma = 0.95))]
    fn self_loop(seed: u64, states: usize, max_actions: usize, min_actions: usize, gamma: f64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = MarkovGameModel::self_loop(&mut rng, states, max_actions, min_actions, gamma).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states()
    }

    #[getter]
    fn n_max_actions(&self) -> usize {
        self.inner.n_max_actions()
    }

    #[getter]
    fn n_min_actions(&self) -> usize {
        self.inner.n_min_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    /// Largest relaxation weight for which the relaxed operator contracts.
    fn w_star(&self) -> f64 {
        w_star(&self.inner)
    }

    fn reward(&self, s: usize, a: usize, o: usize) -> f64 {
        self.inner.reward(s, a, o)
    }
}

fn sor(model: &MarkovGameModel, w: f64, strict: bool) -> PyResult<SorConfig> {
    let cfg = SorConfig::for_model(model, w).map_err(py_err)?;
    Ok(if strict { cfg.strict() } else { cfg })
}

/// Result of relaxed value iteration. `q` is flattened state-major, then
/// maximizer action, then minimizer action.
#[pyclass(name = "ValueIterationResult", get_all, frozen)]
struct PyVi {
    q: Vec<f64>,
    values: Vec<f64>,
    iterations: usize,
    residual: f64,
}

#[pyfunction]
#[pyo3(name = "value_iteration", signature = (model, w = 1.0, tol = 1e-10, max_iters = DEFAULT_MAX_ITERS, strict = false))]
fn value_iteration_py(model: &PyModel, w: f64, tol: f64, max_iters: usize, strict: bool) -> PyResult<PyVi> {
    let cfg = sor(&model.inner, w, strict)?;
    let r = value_iteration(&model.inner, &cfg, tol, max_iters).map_err(py_err)?;
    Ok(PyVi {
        values: r.q.values().map_err(py_err)?,
        q: r.q.as_slice().to_vec(),
        iterations: r.iterations,
        residual: r.residual,
    })
}

/// Runs online tabular Q-learning and returns `(step, sup-norm error)` pairs
/// measured against the fixed point of the same operator.
#[pyfunction]
#[pyo3(signature = (model, w = 1.0, h = 200.0, t0 = 2000.0, steps = 100_000, seed = 0, record_every = 1000))]
fn q_learning(
    model: &PyModel,
    w: f64,
    h: f64,
    t0: f64,
    steps: usize,
    seed: u64,
    record_every: usize,
) -> PyResult<Vec<(usize, f64)>> {
    let cfg = sor(&model.inner, w, false)?;
    let star: QTable = value_iteration(&model.inner, &cfg, 1e-12, DEFAULT_MAX_ITERS).map_err(py_err)?.q;
    let schedule = StepSchedule::new(h, t0).map_err(py_err)?;
    let run = run_q_learning(&model.inner, &cfg, schedule, steps, seed, Some(&star), record_every).map_err(py_err)?;
    Ok(run.errors)
}

/// Minimum slack of each step-size inequality; all three must be `>= 0`.
#[pyfunction]
#[pyo3(signature = (h, t0, tau = 1, gamma_prime = 0.9, big_gamma = 0.5, horizon = 10_000))]
fn sequence_slacks(h: f64, t0: f64, tau: usize, gamma_prime: f64, big_gamma: f64, horizon: usize) -> PyResult<(f64, f64, f64)> {
    let r = lemma_sequence_check(h, t0, tau, gamma_prime, big_gamma, horizon).map_err(py_err)?;
    Ok((r.product_slack, r.square_sum_slack, r.weighted_sum_slack))
}

/// Training trace of the deep learner.
#[pyclass(name = "TrainingResult", get_all, frozen)]
struct PyTraining {
    steps: Vec<usize>,
    loss_raw: Vec<f64>,
    loss_ma100: Vec<f64>,
    probe_minimax_q: Vec<f64>,
    converged_loss: Option<f64>,
    episodes: usize,
}

#[pyfunction]
#[pyo3(signature = (env, grid = 7, w = 1.0, seed = 0, steps = 150_000, hidden = None, batch = 64, target_period = 100, lr = 5e-5, minimax_baseline = false))]
#[allow(clippy::too_many_arguments)]
fn train_deep(
    py: Python<'_>,
    env: &str,
    grid: usize,
    w: f64,
    seed: u64,
    steps: usize,
    hidden: Option<Vec<usize>>,
    batch: usize,
    target_period: usize,
    lr: f64,
    minimax_baseline: bool,
) -> PyResult<PyTraining> {
    let mut cfg = AlgoConfig { w, seed, steps, batch, target_period, lr, ..AlgoConfig::default() };
    if let Some(h) = hidden {
        cfg.hidden = h;
    }
    if minimax_baseline {
        cfg.target_rule = TargetRule::Minimax;
    }
    let (log, _) = py
        .detach(|| match env {
            "guard-invader" => train(&GuardInvader::new(grid)?, &cfg),
            "soccer" => train(&Soccer::new(grid)?, &cfg),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        })
        .map_err(py_err)?;
    Ok(PyTraining {
        converged_loss: log.converged_loss(),
        episodes: log.episodes,
        steps: log.rows.iter().map(|r| r.step).collect(),
        loss_raw: log.rows.iter().map(|r| r.loss_raw).collect(),
        loss_ma100: log.rows.iter().map(|r| r.loss_ma100).collect(),
        probe_minimax_q: log.rows.iter().map(|r| r.probe_minimax_q).collect(),
    })
}

#[pymodule]
fn pysormq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGameSolution>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyVi>()?;
    m.add_class::<PyTraining>()?;
    m.add_function(wrap_pyfunction!(solve_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration_py, m)?)?;
    m.add_function(wrap_pyfunction!(q_learning, m)?)?;
    m.add_function(wrap_pyfunction!(sequence_slacks, m)?)?;
    m.add_function(wrap_pyfunction!(train_deep, m)?)?;
    m.add("DEFAULT_TOL", DEFAULT_TOL)?;
    Ok(())
}
