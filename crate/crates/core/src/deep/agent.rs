use std::collections::{HashMap, VecDeque};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::mlp::Mlp;
use super::optim::{Optimizer, OptimizerKind};
use super::replay::{ReplayBuffer, DEFAULT_REPLAY_CAPACITY};
use crate::env::{EpisodeRunner, MarkovGame, DEFAULT_EPISODE_CAP};
use crate::error::{Error, Result};
use crate::game::{best_response_column, response_value, solve_matrix_game, MixedStrategy, PayoffMatrix, DEFAULT_TOL};

/// Which bootstrap target the learner regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TargetRule {
    /// `w(r + γ V(s')) + (1 - w) V(s)`.
    Sor,
    /// `r + γ V(s')`, the unrelaxed minimax target.
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgoConfig {
    pub w: f64,
    pub gamma: f64,
    /// Target network period `T`.
    pub target_period: usize,
    /// Target refreshes per evaluation refresh `n`.
    pub eval_loops: usize,
    pub batch: usize,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub episode_cap: usize,
    pub probe_count: usize,
    pub probe_seed: u64,
    /// Steps between probe evaluations; the last value is carried forward.
    pub probe_every: usize,
    pub target_rule: TargetRule,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            gamma: 0.95,
            target_period: 100,
            eval_loops: 5,
            batch: 64,
            lr: 5e-5,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_decay: 20_000.0,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            replay_capacity: DEFAULT_REPLAY_CAPACITY,
            hidden: vec![256, 128],
            steps: 150_000,
            episode_cap: DEFAULT_EPISODE_CAP,
            probe_count: 32,
            probe_seed: 7_919,
            probe_every: 100,
            target_rule: TargetRule::Sor,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.w >= 1.0 && self.w.is_finite()) {
            return bad(format!("w = {} must be >= 1", self.w));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma = {} not in (0, 1)", self.gamma));
        }
        if self.target_period == 0 || self.eval_loops == 0 || self.batch == 0 || self.probe_every == 0 {
            return bad("periods and batch size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(self.eps_end..=1.0).contains(&self.eps_start) || !(self.eps_decay > 0.0) {
            return bad("epsilon schedule must satisfy 0 <= end <= start <= 1 and decay > 0".into());
        }
        if self.replay_capacity < self.batch {
            return bad("replay capacity below batch size".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer of width 0".into());
        }
        if self.episode_cap == 0 {
            return bad("episode cap must be positive".into());
        }
        Ok(())
    }

    /// `ε(t) = end + (start - end) exp(-t / decay)`.
    pub fn epsilon(&self, t: usize) -> f64 {
        self.eps_end + (self.eps_start - self.eps_end) * (-(t as f64) / self.eps_decay).exp()
    }
}

/// With probability `ε` a uniform action, otherwise a draw from the
/// maximizer's equilibrium strategy of `q`.
pub fn select_action<R: Rng + ?Sized>(q: &PayoffMatrix, eps: f64, rng: &mut R) -> Result<usize> {
    if rng.gen::<f64>() < eps {
        Ok(rng.gen_range(0..q.rows()))
    } else {
        Ok(solve_matrix_game(q, DEFAULT_TOL)?.strategy.sample(rng))
    }
}

/// Best response of the minimizer to `pi_eval` under the online matrix.
pub fn opponent_action(q_online: &PayoffMatrix, pi_eval: &MixedStrategy) -> Result<usize> {
    best_response_column(pi_eval, q_online)
}

/// The regression target for one stored transition. `next` is `None` for
/// terminal transitions.
pub fn compute_target(
    r: f64,
    next: Option<(&MixedStrategy, &PayoffMatrix)>,
    here: (&MixedStrategy, &PayoffMatrix),
    w: f64,
    gamma: f64,
    rule: TargetRule,
) -> Result<f64> {
    let v_next = match next {
        Some((pi, q)) => response_value(pi, q)?,
        None => 0.0,
    };
    Ok(match rule {
        TargetRule::Minimax => r + gamma * v_next,
        TargetRule::Sor => w * (r + gamma * v_next) + (1.0 - w) * response_value(here.0, here.1)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub episode: usize,
    pub loss_raw: f64,
    pub loss_ma100: f64,
    pub probe_minimax_q: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub w: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub episodes: usize,
    pub steps: usize,
}

impl TrainingLog {
    /// Mean raw loss over the last 10% of logged gradient steps.
    pub fn converged_loss(&self) -> Option<f64> {
        converged_mean(self.rows.iter().map(|r| r.loss_raw))
    }
}

/// Mean of the trailing 10% (at least one) of a series.
pub fn converged_mean(values: impl ExactSizeIterator<Item = f64>) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let k = (n / 10).max(1);
    Some(values.skip(n - k).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone)]
struct Stored<S> {
    s: S,
    x: Vec<f64>,
    action: usize,
    r: f64,
    s_next: S,
    x_next: Vec<f64>,
    terminal: bool,
}

/// Online, target and evaluation networks plus the replay memory of one run.
pub struct Trainer<'g, G: MarkovGame> {
    game: &'g G,
    cfg: AlgoConfig,
    n_max: usize,
    n_min: usize,
    online: Mlp,
    target: Mlp,
    eval: Mlp,
    opt: Optimizer,
    replay: ReplayBuffer<Stored<G::State>>,
    runner: EpisodeRunner<G>,
    rng: ChaCha8Rng,
    t: usize,
    eval_policy: HashMap<G::State, MixedStrategy>,
    target_value: HashMap<G::State, f64>,
    probes: Vec<Vec<f64>>,
    last_probe: f64,
    window: VecDeque<f64>,
    window_sum: f64,
    rows: Vec<LogRow>,
}

impl<'g, G: MarkovGame> Trainer<'g, G> {
    pub fn new(game: &'g G, cfg: AlgoConfig) -> Result<Self> {
        cfg.validate()?;
        let (n_max, n_min) = (game.n_max_actions(), game.n_min_actions());
        let mut sizes = vec![game.feature_len()];
        sizes.extend(&cfg.hidden);
        sizes.push(n_max * n_min);
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        init_rng.set_stream(1);
        let online = Mlp::new_uniform(&sizes, &mut init_rng)?;
        let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.probe_seed);
        probe_rng.set_stream(2);
        let probes = (0..cfg.probe_count)
            .map(|_| game.encode(&game.initial_state(&mut probe_rng)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let runner = EpisodeRunner::new(game, cfg.episode_cap, &mut rng);
        let mut trainer = Self {
            game,
            n_max,
            n_min,
            opt: Optimizer::new(cfg.optimizer, cfg.lr, &online)?,
            replay: ReplayBuffer::new(cfg.replay_capacity)?,
            target: online.clone(),
            eval: online.clone(),
            online,
            runner,
            rng,
            t: 0,
            eval_policy: HashMap::new(),
            target_value: HashMap::new(),
            probes,
            last_probe: f64::NAN,
            window: VecDeque::with_capacity(100),
            window_sum: 0.0,
            rows: Vec::new(),
            cfg,
        };
        trainer.last_probe = trainer.probe_value()?;
        Ok(trainer)
    }

    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn eval(&self) -> &Mlp {
        &self.eval
    }

    pub fn episodes(&self) -> usize {
        self.runner.episode
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    /// Mean LP value of the online network over the probe states.
    pub fn probe_value(&self) -> Result<f64> {
        if self.probes.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for x in &self.probes {
            let q = self.online.payoff(x, self.n_max, self.n_min)?;
            total += solve_matrix_game(&q, DEFAULT_TOL)?.value;
        }
        Ok(total / self.probes.len() as f64)
    }

    fn pi_eval(&mut self, s: &G::State, x: &[f64]) -> Result<MixedStrategy> {
        if let Some(pi) = self.eval_policy.get(s) {
            return Ok(pi.clone());
        }
        let q = self.eval.payoff(x, self.n_max, self.n_min)?;
        let pi = solve_matrix_game(&q, DEFAULT_TOL)?.strategy;
        self.eval_policy.insert(s.clone(), pi.clone());
        Ok(pi)
    }

    /// Fills `target_value` for every listed state not yet cached, running the
    /// target network on all of them as one batch.
    fn fill_target_values(&mut self, states: &[(&G::State, &[f64])]) -> Result<()> {
        let mut missing: Vec<(G::State, Vec<f64>)> = Vec::new();
        for (s, x) in states {
            if !self.target_value.contains_key(*s) && !missing.iter().any(|(m, _)| m == *s) {
                missing.push(((*s).clone(), x.to_vec()));
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let d = self.game.feature_len();
        let mut xs = Array2::zeros((missing.len(), d));
        for (i, (_, x)) in missing.iter().enumerate() {
            xs.row_mut(i).assign(&ndarray::ArrayView1::from(&x[..]));
        }
        let out = self.target.forward_batch(xs.view())?;
        for (i, (s, x)) in missing.into_iter().enumerate() {
            let q = PayoffMatrix::new(self.n_max, self.n_min, out.row(i).to_vec())?;
            let pi = self.pi_eval(&s, &x)?;
            self.target_value.insert(s, response_value(&pi, &q)?);
        }
        Ok(())
    }

    /// One environment step, one gradient step once the buffer holds a batch,
    /// then the periodic synchronizations.
    pub fn step(&mut self) -> Result<()> {
        let t = self.t;
        let eps = self.cfg.epsilon(t);
        let s = self.runner.state.clone();
        let x = self.game.encode(&s);
        let q_online = self.online.payoff(&x, self.n_max, self.n_min)?;
        let a = select_action(&q_online, eps, &mut self.rng)?;
        let pi = self.pi_eval(&s, &x)?;
        let o = opponent_action(&q_online, &pi)?;
        let tr = self.runner.advance(self.game, a, o, &mut self.rng)?;
        self.replay.push(Stored {
            x_next: self.game.encode(&tr.s_next),
            s: tr.s,
            x,
            action: a * self.n_min + o,
            r: tr.r,
            s_next: tr.s_next,
            terminal: tr.terminal,
        });

        let mut loss = None;
        if let Some(idx) = self.replay.sample_indices(self.cfg.batch, &mut self.rng) {
            loss = Some(self.gradient_step(&idx)?);
        }

        if t % self.cfg.target_period == 0 {
            self.target = self.online.clone();
            self.target_value.clear();
        }
        if t % (self.cfg.target_period * self.cfg.eval_loops) == 0 {
            self.eval = self.online.clone();
            self.eval_policy.clear();
            self.target_value.clear();
        }
        if t % self.cfg.probe_every == 0 || t + 1 == self.cfg.steps {
            self.last_probe = self.probe_value()?;
        }
        if let Some(l) = loss {
            if self.window.len() == 100 {
                self.window_sum -= self.window.pop_front().unwrap();
            }
            self.window.push_back(l);
            self.window_sum += l;
            self.rows.push(LogRow {
                step: t,
                episode: self.runner.episode,
                loss_raw: l,
                loss_ma100: self.window_sum / self.window.len() as f64,
                probe_minimax_q: self.last_probe,
                epsilon: eps,
                seed: self.cfg.seed,
                w: self.cfg.w,
            });
        }
        self.t += 1;
        Ok(())
    }

    fn gradient_step(&mut self, idx: &[usize]) -> Result<f64> {
        let batch: Vec<Stored<G::State>> = idx.iter().map(|&i| self.replay.get(i).unwrap().clone()).collect();
        let mut wanted: Vec<(&G::State, &[f64])> = Vec::with_capacity(2 * batch.len());
        for b in &batch {
            if self.cfg.target_rule == TargetRule::Sor {
                wanted.push((&b.s, &b.x));
            }
            if !b.terminal {
                wanted.push((&b.s_next, &b.x_next));
            }
        }
        self.fill_target_values(&wanted)?;
        let (w, gamma) = (self.cfg.w, self.cfg.gamma);
        let mut xs = Array2::zeros((batch.len(), self.game.feature_len()));
        let mut actions = Vec::with_capacity(batch.len());
        let mut ys = Vec::with_capacity(batch.len());
        for (k, b) in batch.iter().enumerate() {
            xs.row_mut(k).assign(&ndarray::ArrayView1::from(&b.x[..]));
            actions.push(b.action);
            let v_next = if b.terminal { 0.0 } else { self.target_value[&b.s_next] };
            ys.push(match self.cfg.target_rule {
                TargetRule::Minimax => b.r + gamma * v_next,
                TargetRule::Sor => w * (b.r + gamma * v_next) + (1.0 - w) * self.target_value[&b.s],
            });
        }
        let (loss, grads) = self.online.loss_and_gradient(xs.view(), &actions, &ys)?;
        if !loss.is_finite() || grads.layers.iter().any(|l| l.w.iter().any(|g| !g.is_finite())) {
            return Err(Error::Divergence { step: self.t, loss });
        }
        self.opt.step(&mut self.online, &grads);
        Ok(loss)
    }

    pub fn run(mut self) -> Result<(TrainingLog, Mlp)> {
        while self.t < self.cfg.steps {
            self.step()?;
        }
        let log = TrainingLog {
            episodes: self.runner.episode,
            steps: self.t,
            rows: self.rows,
        };
        Ok((log, self.online))
    }
}

/// Runs the relaxed learner for `cfg.steps` environment steps.
pub fn train<G: MarkovGame>(game: &G, cfg: &AlgoConfig) -> Result<(TrainingLog, Mlp)> {
    Trainer::new(game, cfg.clone())?.run()
}

/// The unrelaxed minimax learner (`w` is ignored by the target).
pub fn train_baseline<G: MarkovGame>(game: &G, cfg: &AlgoConfig) -> Result<(TrainingLog, Mlp)> {
    let cfg = AlgoConfig {
        w: 1.0,
        target_rule: TargetRule::Minimax,
        ..cfg.clone()
    };
    Trainer::new(game, cfg)?.run()
}
