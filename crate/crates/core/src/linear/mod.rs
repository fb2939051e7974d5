//! Projected linear function approximation of the relaxed minimax Q-function.

mod bound;

pub use bound::{
    lemma_sequence_check, noise_bound, finite_time_bound, BoundParams, BoundVariant, LemmaReport,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{MarkovGameModel, Transition};
use crate::error::{Error, Result};
use crate::game::{game_value, PayoffMatrix, DEFAULT_TOL};
use crate::tabular::{value_iteration, SorConfig, StepSchedule, DEFAULT_MAX_ITERS};

/// Sparse feature vectors `ψ(s, a, o)` over an enumerated model.
///
/// Every row satisfies `‖ψ‖₁ ≤ 1`, so `|ψᵀθ| ≤ ‖θ‖∞`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    dim: usize,
    n_states: usize,
    n_max: usize,
    n_min: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl FeatureMap {
    /// One indicator per `(s, a, o)`, laid out like [`crate::tabular::QTable`].
    pub fn one_hot(n_states: usize, n_max: usize, n_min: usize) -> Self {
        let n = n_states * n_max * n_min;
        Self {
            dim: n,
            n_states,
            n_max,
            n_min,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    /// Builds from dense rows, rescaling all of them by one common factor if
    /// any row has `ℓ1` norm above one.
    pub fn from_dense(n_states: usize, n_max: usize, n_min: usize, dense: Vec<Vec<f64>>) -> Result<Self> {
        let n = n_states * n_max * n_min;
        if dense.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: dense.len() });
        }
        let dim = dense.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::InvalidParams("feature dimension must be positive".into()));
        }
        let mut max_l1 = 0.0f64;
        for row in &dense {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput("feature entry".into()));
            }
            max_l1 = max_l1.max(row.iter().map(|x| x.abs()).sum());
        }
        let scale = if max_l1 > 1.0 { 1.0 / max_l1 } else { 1.0 };
        let rows = dense
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|(_, x)| *x != 0.0)
                    .map(|(j, x)| (j, x * scale))
                    .collect()
            })
            .collect();
        Ok(Self { dim, n_states, n_max, n_min, rows })
    }

    /// Gaussian features of dimension `d`, normalized.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_max: usize, n_min: usize, d: usize) -> Result<Self> {
        let dense = (0..n_states * n_max * n_min)
            .map(|_| (0..d).map(|_| standard_normal(rng)).collect())
            .collect();
        Self::from_dense(n_states, n_max, n_min, dense)
    }

    pub fn for_model_one_hot(model: &MarkovGameModel) -> Self {
        Self::one_hot(model.n_states(), model.n_max_actions(), model.n_min_actions())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, s: usize, a: usize, o: usize) -> &[(usize, f64)] {
        &self.rows[(s * self.n_max + a) * self.n_min + o]
    }

    pub fn max_l1_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|e| e.1.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn dot(&self, s: usize, a: usize, o: usize, theta: &[f64]) -> f64 {
        self.row(s, a, o).iter().map(|&(j, x)| x * theta[j]).sum()
    }

    /// The matrix `ψ(s, ·, ·)ᵀθ`.
    pub fn payoff(&self, s: usize, theta: &[f64]) -> Result<PayoffMatrix> {
        let mut data = Vec::with_capacity(self.n_max * self.n_min);
        for a in 0..self.n_max {
            for o in 0..self.n_min {
                data.push(self.dot(s, a, o, theta));
            }
        }
        PayoffMatrix::new(self.n_max, self.n_min, data)
    }

    pub fn state_value(&self, s: usize, theta: &[f64]) -> Result<f64> {
        game_value(&self.payoff(s, theta)?, DEFAULT_TOL)
    }

    fn check_model(&self, model: &MarkovGameModel) -> Result<()> {
        if self.n_states != model.n_states()
            || self.n_max != model.n_max_actions()
            || self.n_min != model.n_min_actions()
        {
            return Err(Error::DimensionMismatch {
                expected: model.n_states() * model.n_max_actions() * model.n_min_actions(),
                got: self.rows.len(),
            });
        }
        Ok(())
    }
}

/// Box-Muller standard normal draw.
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `θ` together with the projection radius `Z`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearParams {
    pub theta: Vec<f64>,
    pub z: f64,
}

impl LinearParams {
    pub fn zeros(dim: usize, z: f64) -> Result<Self> {
        if !(z > 0.0) {
            return Err(Error::RadiusNonPositive(z));
        }
        Ok(Self { theta: vec![0.0; dim], z })
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, x.abs()))
}

/// Euclidean projection onto the ball of radius `z`.
pub fn project_l2(theta: &[f64], z: f64) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    project_l2_in_place(&mut out, z)?;
    Ok(out)
}

pub fn project_l2_in_place(theta: &mut [f64], z: f64) -> Result<()> {
    if !(z > 0.0) {
        return Err(Error::RadiusNonPositive(z));
    }
    let norm = l2_norm(theta);
    if norm > z {
        let k = z / norm;
        theta.iter_mut().for_each(|x| *x *= k);
    }
    Ok(())
}

/// `θ ← Π_Z(θ + α ψ(s,a,o)[w(r + γ val ψ(s')ᵀθ) + (1 - w) val ψ(s)ᵀθ - ψ(s,a,o)ᵀθ])`.
///
/// A terminal `s'` contributes zero.
pub fn sor_linear_update(
    params: &mut LinearParams,
    t: &Transition<usize>,
    alpha: f64,
    cfg: &SorConfig,
    phi: &FeatureMap,
) -> Result<()> {
    if !(params.z > 0.0) {
        return Err(Error::RadiusNonPositive(params.z));
    }
    if params.theta.len() != phi.dim {
        return Err(Error::DimensionMismatch { expected: phi.dim, got: params.theta.len() });
    }
    if t.s >= phi.n_states || t.s_next >= phi.n_states {
        return Err(Error::DimensionMismatch { expected: phi.n_states, got: t.s.max(t.s_next) });
    }
    if t.a >= phi.n_max {
        return Err(Error::InvalidAction(t.a));
    }
    if t.o >= phi.n_min {
        return Err(Error::InvalidAction(t.o));
    }
    let theta = &params.theta;
    let next_value = if t.terminal { 0.0 } else { phi.state_value(t.s_next, theta)? };
    let here = phi.state_value(t.s, theta)?;
    let target = cfg.w * (t.r + cfg.gamma * next_value) + (1.0 - cfg.w) * here;
    let delta = target - phi.dot(t.s, t.a, t.o, theta);
    for &(j, x) in phi.row(t.s, t.a, t.o) {
        params.theta[j] += alpha * delta * x;
    }
    project_l2_in_place(&mut params.theta, params.z)
}

/// Expected update direction
/// `F(θ) = E[ψ(s,a,o)(w(R + γ val ψ(s')ᵀθ) + (1 - w) val ψ(s)ᵀθ)]`
/// with `(s, a, o)` uniform over live triples and `s' ~ P(· | s, a, o)`.
pub fn expected_operator(
    phi: &FeatureMap,
    model: &MarkovGameModel,
    cfg: &SorConfig,
    theta: &[f64],
) -> Result<Vec<f64>> {
    phi.check_model(model)?;
    if theta.len() != phi.dim {
        return Err(Error::DimensionMismatch { expected: phi.dim, got: theta.len() });
    }
    let values: Vec<f64> = (0..model.n_states())
        .into_par_iter()
        .map(|s| {
            if model.is_absorbing(s) {
                Ok(0.0)
            } else {
                phi.state_value(s, theta)
            }
        })
        .collect::<Result<_>>()?;
    let live: Vec<usize> = model.live_states().collect();
    let (na, no) = (model.n_max_actions(), model.n_min_actions());
    let n = (live.len() * na * no) as f64;
    let mut f = vec![0.0; phi.dim];
    for &s in &live {
        for a in 0..na {
            for o in 0..no {
                let next: f64 = model
                    .next_states(s, a, o)
                    .iter()
                    .map(|&(j, p)| p * values[j])
                    .sum();
                let target = cfg.w * (model.reward(s, a, o) + cfg.gamma * next) + (1.0 - cfg.w) * values[s];
                for &(j, x) in phi.row(s, a, o) {
                    f[j] += x * target / n;
                }
            }
        }
    }
    Ok(f)
}

/// Largest observed `‖F(θ1) - F(θ2)‖∞ / ‖θ1 - θ2‖∞` over random pairs with
/// entries uniform on `[-scale, scale]`. Identical pairs are skipped.
pub fn estimate_contraction<R: Rng + ?Sized>(
    phi: &FeatureMap,
    model: &MarkovGameModel,
    cfg: &SorConfig,
    samples: usize,
    scale: f64,
    rng: &mut R,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let t1: Vec<f64> = (0..phi.dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        let t2: Vec<f64> = (0..phi.dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        worst = worst.max(contraction_ratio(phi, model, cfg, &t1, &t2)?);
    }
    Ok(worst)
}

pub fn contraction_ratio(
    phi: &FeatureMap,
    model: &MarkovGameModel,
    cfg: &SorConfig,
    t1: &[f64],
    t2: &[f64],
) -> Result<f64> {
    let diff: Vec<f64> = t1.iter().zip(t2).map(|(a, b)| a - b).collect();
    let denom = sup_norm(&diff);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let f1 = expected_operator(phi, model, cfg, t1)?;
    let f2 = expected_operator(phi, model, cfg, t2)?;
    let num = f1.iter().zip(&f2).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()));
    Ok(num / denom)
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearExperimentConfig {
    pub sor: SorConfig,
    pub schedule: StepSchedule,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub delta: f64,
    pub tau: f64,
    pub sigma: f64,
    /// Contraction factor used in the bound; `1 - w(1 - γ)` when absent.
    pub gamma_prime: Option<f64>,
    /// Projection radius; `2 max(‖θ*‖₂, 1)` when absent.
    pub z: Option<f64>,
    pub record_every: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedCurve {
    pub seed: u64,
    /// `ξ_t = ‖θ_t - θ*‖∞` at each recorded step.
    pub errors: Vec<f64>,
    pub final_error: f64,
    /// Largest `‖θ_t‖₂` seen over the run.
    pub max_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearExperiment {
    pub steps: Vec<usize>,
    pub curves: Vec<SeedCurve>,
    pub proof_bound: Vec<f64>,
    pub statement_bound: Vec<f64>,
    pub params: BoundParams,
    /// Whether the schedule satisfies the step-size preconditions of the bound.
    pub certified: bool,
    /// Fraction of seeds with `ξ_T` at most the proof-variant bound at `T`.
    pub coverage: f64,
    pub theta_star: Vec<f64>,
}

/// Runs the projected recursion with one-hot features, `θ*` taken from
/// value iteration on the same relaxed operator.
pub fn run_linear_experiment(model: &MarkovGameModel, cfg: &LinearExperimentConfig) -> Result<LinearExperiment> {
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParams("no seeds".into()));
    }
    let phi = FeatureMap::for_model_one_hot(model);
    let star = value_iteration(model, &cfg.sor, 1e-12, DEFAULT_MAX_ITERS)?.q;
    let theta_star = star.as_slice().to_vec();
    let z = cfg.z.unwrap_or(2.0 * l2_norm(&theta_star).max(1.0));
    if l2_norm(&theta_star) > z {
        return Err(Error::InvalidParams(format!(
            "radius {z} smaller than ‖θ*‖₂ = {}",
            l2_norm(&theta_star)
        )));
    }
    let rmax = (0..model.n_states())
        .flat_map(|s| (0..model.n_max_actions()).flat_map(move |a| (0..model.n_min_actions()).map(move |o| (s, a, o))))
        .map(|(s, a, o)| model.reward(s, a, o).abs())
        .fold(0.0, f64::max);
    let params = BoundParams {
        m_tilde: noise_bound(rmax, z, &cfg.sor),
        h: cfg.schedule.h,
        t0: cfg.schedule.t0,
        tau: cfg.tau,
        delta: cfg.delta,
        gamma_prime: cfg.gamma_prime.unwrap_or_else(|| cfg.sor.contraction_factor()),
        z,
        d: phi.dim() as f64,
        sigma: cfg.sigma,
    };
    params.validate()?;
    let certified = params.certified();

    let record_every = cfg.record_every.max(1);
    let mut steps: Vec<usize> = (0..=cfg.steps).step_by(record_every).collect();
    if *steps.last().unwrap() != cfg.steps {
        steps.push(cfg.steps);
    }
    let proof_bound = steps
        .iter()
        .map(|&t| finite_time_bound(&params, t as f64, BoundVariant::Proof))
        .collect::<Result<Vec<_>>>()?;
    let statement_bound = steps
        .iter()
        .map(|&t| finite_time_bound(&params, t as f64, BoundVariant::Statement))
        .collect::<Result<Vec<_>>>()?;

    let live: Vec<usize> = model.live_states().collect();
    if live.is_empty() {
        return Err(Error::InvalidModel("model has no live states".into()));
    }
    let curves = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(model, &phi, cfg, &live, &theta_star, z, seed))
        .collect::<Result<Vec<_>>>()?;
    let final_bound = *proof_bound.last().unwrap();
    let covered = curves.iter().filter(|c| c.final_error <= final_bound).count();
    Ok(LinearExperiment {
        steps,
        coverage: covered as f64 / curves.len() as f64,
        curves,
        proof_bound,
        statement_bound,
        params,
        certified,
        theta_star,
    })
}

fn run_seed(
    model: &MarkovGameModel,
    phi: &FeatureMap,
    cfg: &LinearExperimentConfig,
    live: &[usize],
    theta_star: &[f64],
    z: f64,
    seed: u64,
) -> Result<SeedCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = LinearParams::zeros(phi.dim(), z)?;
    let error = |theta: &[f64]| {
        theta
            .iter()
            .zip(theta_star)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    };
    let record_every = cfg.record_every.max(1);
    let mut errors = vec![error(&params.theta)];
    let mut max_norm = 0.0f64;
    for k in 0..cfg.steps {
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
        sor_linear_update(&mut params, &t, cfg.schedule.alpha(k), &cfg.sor, phi)?;
        max_norm = max_norm.max(l2_norm(&params.theta));
        if (k + 1) % record_every == 0 || k + 1 == cfg.steps {
            errors.push(error(&params.theta));
        }
    }
    Ok(SeedCurve {
        seed,
        final_error: *errors.last().unwrap(),
        errors,
        max_norm,
    })
}
