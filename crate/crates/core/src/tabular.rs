//! Tabular SOR minimax machinery: the relaxed Bellman operator, value
//! iteration, the online Q-learning update and the relaxation bound `w*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{MarkovGameModel, Transition};
use crate::error::{Error, Result};
use crate::game::{game_value, solve_matrix_game, MixedStrategy, PayoffMatrix, DEFAULT_TOL};

pub const DEFAULT_VI_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

/// `Q(s, a, o)` stored state-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTable {
    n_states: usize,
    n_max: usize,
    n_min: usize,
    data: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_max: usize, n_min: usize) -> Self {
        Self {
            n_states,
            n_max,
            n_min,
            data: vec![0.0; n_states * n_max * n_min],
        }
    }

    pub fn for_model(model: &MarkovGameModel) -> Self {
        Self::zeros(model.n_states(), model.n_max_actions(), model.n_min_actions())
    }

    pub fn from_vec(n_states: usize, n_max: usize, n_min: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_states * n_max * n_min {
            return Err(Error::DimensionMismatch {
                expected: n_states * n_max * n_min,
                got: data.len(),
            });
        }
        Ok(Self {
            n_states,
            n_max,
            n_min,
            data,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_max_actions(&self) -> usize {
        self.n_max
    }

    pub fn n_min_actions(&self) -> usize {
        self.n_min
    }

    pub fn index(&self, s: usize, a: usize, o: usize) -> usize {
        (s * self.n_max + a) * self.n_min + o
    }

    pub fn get(&self, s: usize, a: usize, o: usize) -> f64 {
        self.data[self.index(s, a, o)]
    }

    pub fn set(&mut self, s: usize, a: usize, o: usize, v: f64) {
        let i = self.index(s, a, o);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    fn state_slice(&self, s: usize) -> &[f64] {
        let k = self.n_max * self.n_min;
        &self.data[s * k..(s + 1) * k]
    }

    pub fn payoff(&self, s: usize) -> Result<PayoffMatrix> {
        PayoffMatrix::new(self.n_max, self.n_min, self.state_slice(s).to_vec())
    }

    /// `val(Q(s, ·, ·))`.
    pub fn state_value(&self, s: usize) -> Result<f64> {
        game_value(&self.payoff(s)?, DEFAULT_TOL)
    }

    /// `val` at every state.
    pub fn values(&self) -> Result<Vec<f64>> {
        (0..self.n_states)
            .into_par_iter()
            .map(|s| self.state_value(s))
            .collect()
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    fn check_model(&self, model: &MarkovGameModel) -> Result<()> {
        let expected = model.n_states() * model.n_max_actions() * model.n_min_actions();
        if self.n_states != model.n_states()
            || self.n_max != model.n_max_actions()
            || self.n_min != model.n_min_actions()
        {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.data.len(),
            });
        }
        Ok(())
    }
}

/// Relaxation weight and discount.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SorConfig {
    pub w: f64,
    pub gamma: f64,
    /// Reject `w > w*` when checked against a model.
    pub strict: bool,
}

impl SorConfig {
    pub fn new(w: f64, gamma: f64) -> Result<Self> {
        if !(w >= 1.0) || !w.is_finite() {
            return Err(Error::InvalidParams(format!("relaxation weight {w} must be >= 1")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParams(format!("discount {gamma} not in (0, 1)")));
        }
        Ok(Self {
            w,
            gamma,
            strict: false,
        })
    }

    pub fn for_model(model: &MarkovGameModel, w: f64) -> Result<Self> {
        Self::new(w, model.gamma())
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    /// Contraction modulus `1 - w(1 - γ)` of the relaxed operator when `w ≤ w*`.
    pub fn contraction_factor(&self) -> f64 {
        1.0 - self.w * (1.0 - self.gamma)
    }

    pub fn check(&self, model: &MarkovGameModel) -> Result<()> {
        if self.strict {
            let bound = w_star_with_gamma(model, self.gamma);
            if self.w > bound * (1.0 + 1e-12) {
                return Err(Error::InvalidParams(format!(
                    "w = {} exceeds w* = {bound}",
                    self.w
                )));
            }
        }
        Ok(())
    }
}

/// `w* = 1 / (1 - γ min_{s,a,o} P(s | s, a, o))`.
pub fn w_star(model: &MarkovGameModel) -> f64 {
    w_star_with_gamma(model, model.gamma())
}

fn w_star_with_gamma(model: &MarkovGameModel, gamma: f64) -> f64 {
    1.0 / (1.0 - gamma * model.min_self_transition())
}

/// Applies `T_w` given precomputed state values.
fn apply_with_values(model: &MarkovGameModel, v: &[f64], cfg: &SorConfig) -> QTable {
    let (na, no) = (model.n_max_actions(), model.n_min_actions());
    let mut out = QTable::for_model(model);
    out.data
        .par_chunks_mut(na * no)
        .enumerate()
        .for_each(|(s, chunk)| {
            for a in 0..na {
                for o in 0..no {
                    let expected: f64 = model
                        .next_states(s, a, o)
                        .iter()
                        .map(|&(n, p)| p * v[n])
                        .sum();
                    chunk[a * no + o] =
                        cfg.w * (model.reward(s, a, o) + cfg.gamma * expected) + (1.0 - cfg.w) * v[s];
                }
            }
        });
    out
}

/// `(T_w Q)(s,a,o) = w[R + γ Σ P(s'|s,a,o) val Q(s')] + (1 - w) val Q(s)`.
pub fn sor_bellman_apply(model: &MarkovGameModel, q: &QTable, cfg: &SorConfig) -> Result<QTable> {
    q.check_model(model)?;
    cfg.check(model)?;
    let v = q.values()?;
    Ok(apply_with_values(model, &v, cfg))
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueIterationResult {
    pub q: QTable,
    pub iterations: usize,
    /// Final `‖Q_k - Q_{k-1}‖∞`.
    pub residual: f64,
    /// Sup-norm step size of every sweep.
    pub residuals: Vec<f64>,
}

/// Iterates `Q ← T_w Q` from zero until successive iterates are within `tol`.
pub fn value_iteration(
    model: &MarkovGameModel,
    cfg: &SorConfig,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIterationResult> {
    value_iteration_from(model, cfg, QTable::for_model(model), tol, max_iters)
}

pub fn value_iteration_from(
    model: &MarkovGameModel,
    cfg: &SorConfig,
    start: QTable,
    tol: f64,
    max_iters: usize,
) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tol must be positive, got {tol}")));
    }
    start.check_model(model)?;
    cfg.check(model)?;
    let mut q = start;
    let mut residuals = Vec::new();
    if model.n_states() == 0 {
        return Ok(ValueIterationResult {
            q,
            iterations: 0,
            residual: 0.0,
            residuals,
        });
    }
    for k in 1..=max_iters {
        let next = apply_with_values(model, &q.values()?, cfg);
        let residual = next.sup_distance(&q);
        residuals.push(residual);
        q = next;
        if residual <= tol {
            return Ok(ValueIterationResult {
                q,
                iterations: k,
                residual,
                residuals,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// One online update of entry `(s, a, o)`; a terminal `s'` contributes zero.
pub fn sor_q_learning_step(
    q: &mut QTable,
    t: &Transition<usize>,
    alpha: f64,
    cfg: &SorConfig,
) -> Result<()> {
    if t.s >= q.n_states || t.s_next >= q.n_states {
        return Err(Error::DimensionMismatch {
            expected: q.n_states,
            got: t.s.max(t.s_next),
        });
    }
    if t.a >= q.n_max {
        return Err(Error::InvalidAction(t.a));
    }
    if t.o >= q.n_min {
        return Err(Error::InvalidAction(t.o));
    }
    let next_value = if t.terminal { 0.0 } else { q.state_value(t.s_next)? };
    let here = q.state_value(t.s)?;
    let target = cfg.w * (t.r + cfg.gamma * next_value) + (1.0 - cfg.w) * here;
    let i = q.index(t.s, t.a, t.o);
    q.data[i] += alpha * (target - q.data[i]);
    Ok(())
}

/// `π*(s) = K(Q(s, ·, ·))` at every state.
pub fn extract_policy(q: &QTable) -> Result<Vec<MixedStrategy>> {
    (0..q.n_states)
        .map(|s| Ok(solve_matrix_game(&q.payoff(s)?, DEFAULT_TOL)?.strategy))
        .collect()
}

/// Step sizes `α_k = H / (k + t0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSchedule {
    pub h: f64,
    pub t0: f64,
}

impl StepSchedule {
    pub fn new(h: f64, t0: f64) -> Result<Self> {
        if !(h > 0.0) || !(t0 > 0.0) {
            return Err(Error::InvalidParams(format!("schedule H = {h}, t0 = {t0}")));
        }
        Ok(Self { h, t0 })
    }

    pub fn alpha(&self, k: usize) -> f64 {
        (self.h / (k as f64 + self.t0)).min(1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QLearningRun {
    pub q: QTable,
    /// `(step, ‖Q_k - Q*‖∞)` at the recorded steps.
    pub errors: Vec<(usize, f64)>,
}

/// Runs the online update with uniform sampling of live `(s, a, o)` triples
/// and `s' ~ P(· | s, a, o)`, using the expected reward `R(s, a, o)`.
pub fn run_q_learning(
    model: &MarkovGameModel,
    cfg: &SorConfig,
    schedule: StepSchedule,
    steps: usize,
    seed: u64,
    q_star: Option<&QTable>,
    record_every: usize,
) -> Result<QLearningRun> {
    cfg.check(model)?;
    let live: Vec<usize> = model.live_states().collect();
    if live.is_empty() {
        return Err(Error::InvalidModel("model has no live states".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = QTable::for_model(model);
    let mut errors = Vec::new();
    let record_every = record_every.max(1);
    let mut record = |k: usize, q: &QTable| {
        if let Some(star) = q_star {
            errors.push((k, q.sup_distance(star)));
        }
    };
    record(0, &q);
    for k in 0..steps {
        let s = live[rng.gen_range(0..live.len())];
        let a = rng.gen_range(0..model.n_max_actions());
        let o = rng.gen_range(0..model.n_min_actions());
        let s_next = model.sample_next(s, a, o, &mut rng);
        let t = Transition {
            s,
            a,
            o,
            r: model.reward(s, a, o),
            s_next,
            terminal: model.is_absorbing(s_next),
            truncated: false,
        };
        sor_q_learning_step(&mut q, &t, schedule.alpha(k), cfg)?;
        if (k + 1) % record_every == 0 || k + 1 == steps {
            record(k + 1, &q);
        }
    }
    Ok(QLearningRun { q, errors })
}
