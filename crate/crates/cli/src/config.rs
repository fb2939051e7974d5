//! Flat `key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated,
//! and seed lists also accept a half-open range `a..b`. Every key has a typed
//! default, unknown keys are rejected, and the resolved configuration (all
//! keys, sorted) is what gets fingerprinted and persisted next to results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sormq::deep::{AlgoConfig, OptimizerKind, TargetRule};
use sormq::env::{EnvKind, DEFAULT_EPISODE_CAP};
use sormq::{Error, Result};

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "SOR_SEED";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.entries.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn typed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{key} = {v}`"))),
        }
    }

    /// Sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Recognized keys with their one-line documentation.
pub const KEYS: &[(&str, &str)] = &[
    ("algorithm", "tabular-vi | tabular-ql | linear-fa | deep"),
    ("env", "guard-invader | soccer | random | self-loop"),
    ("grid", "grid side of the grid games"),
    ("states", "state count of random and self-loop models"),
    ("actions", "maximizer action count of random and self-loop models"),
    ("opponents", "minimizer action count of random and self-loop models"),
    ("floor", "minimum self-transition probability of random models"),
    ("model_seed", "seed of the random model generator"),
    ("w", "relaxation weights, comma separated"),
    ("seeds", "explicit seed list, `0,1,2` or `0..3`"),
    ("seed", "first seed when `seeds` is absent"),
    ("seed_count", "number of consecutive seeds when `seeds` is absent"),
    ("gamma", "discount factor"),
    ("steps", "step budget (iterations cap for tabular-vi)"),
    ("out", "output directory"),
    ("tol", "value-iteration tolerance"),
    ("h", "step-size numerator H"),
    ("t0", "step-size offset t0"),
    ("record_every", "curve sampling period"),
    ("tau", "mixing lag of the bound"),
    ("delta", "failure probability of the bound"),
    ("sigma", "visitation lower bound; 1/d when absent"),
    ("z", "projection radius; derived when absent"),
    ("target_period", "deep: target sync period T"),
    ("eval_loops", "deep: target syncs per evaluation sync n"),
    ("batch", "deep: minibatch size"),
    ("lr", "deep: learning rate"),
    ("eps_start", "deep: initial exploration rate"),
    ("eps_end", "deep: final exploration rate"),
    ("eps_decay", "deep: exploration decay constant"),
    ("optimizer", "deep: adam | sgd"),
    ("replay_capacity", "deep: replay buffer size"),
    ("hidden", "deep: hidden widths, comma separated"),
    ("episode_cap", "deep: steps before an episode is truncated"),
    ("probe_count", "deep: number of probe states"),
    ("probe_seed", "deep: seed of the probe states"),
    ("probe_every", "deep: probe evaluation period"),
    ("baseline_rule", "deep: use the unrelaxed target for w = 1 (true | false)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    TabularVi,
    TabularQl,
    LinearFa,
    Deep,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TabularVi => "tabular-vi",
            Self::TabularQl => "tabular-ql",
            Self::LinearFa => "linear-fa",
            Self::Deep => "deep",
        }
    }

    /// Name of the per-run metric reported in summaries.
    pub fn metric(self) -> &'static str {
        match self {
            Self::TabularVi => "iterations",
            Self::TabularQl => "sup_error",
            Self::LinearFa => "xi",
            Self::Deep => "converged_loss",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular-vi" => Ok(Self::TabularVi),
            "tabular-ql" => Ok(Self::TabularQl),
            "linear-fa" => Ok(Self::LinearFa),
            "deep" | "train-deep" => Ok(Self::Deep),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Grid { kind: EnvKind, side: usize },
    Random { states: usize, actions: usize, opponents: usize, floor: f64, model_seed: u64 },
    SelfLoop { states: usize, actions: usize, opponents: usize, model_seed: u64 },
}

impl EnvSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Grid { kind, side } => format!("{}-{side}", kind.as_str()),
            Self::Random { states, .. } => format!("random-{states}"),
            Self::SelfLoop { states, .. } => format!("self-loop-{states}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub env: EnvSpec,
    pub ws: Vec<f64>,
    pub seeds: Vec<u64>,
    pub gamma: f64,
    pub steps: usize,
    pub out: PathBuf,
    pub tol: f64,
    pub h: f64,
    pub t0: f64,
    pub record_every: usize,
    pub tau: f64,
    pub delta: f64,
    pub sigma: Option<f64>,
    pub z: Option<f64>,
    pub deep: AlgoConfig,
    pub baseline_rule: bool,
    /// The fully resolved key-value form.
    pub resolved: KvConfig,
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad element `{s}` in `{key}`"))))
        .collect()
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = v.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| Error::Config(format!("bad seed range `{v}`")))?,
            b.trim().parse().map_err(|_| Error::Config(format!("bad seed range `{v}`")))?,
        );
        return Ok((a..b).collect());
    }
    parse_list("seeds", v)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Resolves defaults, the seed fallback chain (`seeds`, then `seed` /
    /// `seed_count`, then `SOR_SEED`, then 0) and validates.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let algorithm: Algorithm = kv.typed("algorithm", Algorithm::TabularVi.as_str().to_string())?.parse()?;
        let env_name = kv.get("env").unwrap_or("guard-invader");
        let states = kv.typed("states", 3usize)?;
        let actions = kv.typed("actions", 2usize)?;
        let opponents = kv.typed("opponents", 2usize)?;
        let model_seed = kv.typed("model_seed", 0u64)?;
        let env = match env_name {
            "random" => EnvSpec::Random {
                states,
                actions,
                opponents,
                floor: kv.typed("floor", 0.0)?,
                model_seed,
            },
            "self-loop" => EnvSpec::SelfLoop { states, actions, opponents, model_seed },
            other => EnvSpec::Grid {
                kind: other.parse()?,
                side: kv.typed("grid", 7usize)?,
            },
        };
        let ws: Vec<f64> = parse_list("w", kv.get("w").unwrap_or("1.0"))?;
        let seeds = match kv.get("seeds") {
            Some(v) => parse_seeds(v)?,
            None => {
                let base = match kv.get("seed") {
                    Some(_) => kv.typed("seed", 0u64)?,
                    None => seed_from_env()?.unwrap_or(0),
                };
                let count = kv.typed("seed_count", 1u64)?;
                (base..base + count).collect()
            }
        };
        let defaults = AlgoConfig::default();
        let hidden = match kv.get("hidden") {
            Some(v) => parse_list("hidden", v)?,
            None => defaults.hidden.clone(),
        };
        let gamma = kv.typed("gamma", 0.95)?;
        let steps = kv.typed("steps", defaults.steps)?;
        let deep = AlgoConfig {
            w: 1.0,
            gamma,
            target_period: kv.typed("target_period", defaults.target_period)?,
            eval_loops: kv.typed("eval_loops", defaults.eval_loops)?,
            batch: kv.typed("batch", defaults.batch)?,
            lr: kv.typed("lr", defaults.lr)?,
            eps_start: kv.typed("eps_start", defaults.eps_start)?,
            eps_end: kv.typed("eps_end", defaults.eps_end)?,
            eps_decay: kv.typed("eps_decay", defaults.eps_decay)?,
            optimizer: kv.typed("optimizer", defaults.optimizer.as_str().to_string())?.parse::<OptimizerKind>()?,
            seed: 0,
            replay_capacity: kv.typed("replay_capacity", defaults.replay_capacity)?,
            hidden,
            steps,
            episode_cap: kv.typed("episode_cap", DEFAULT_EPISODE_CAP)?,
            probe_count: kv.typed("probe_count", defaults.probe_count)?,
            probe_seed: kv.typed("probe_seed", defaults.probe_seed)?,
            probe_every: kv.typed("probe_every", defaults.probe_every)?,
            target_rule: TargetRule::Sor,
        };
        let sigma = match kv.get("sigma") {
            Some(_) => Some(kv.typed("sigma", 0.0)?),
            None => None,
        };
        let z = match kv.get("z") {
            Some(_) => Some(kv.typed("z", 0.0)?),
            None => None,
        };
        let cfg = Self {
            algorithm,
            env,
            ws,
            seeds,
            gamma,
            steps,
            out: PathBuf::from(kv.get("out").unwrap_or("out")),
            tol: kv.typed("tol", sormq::tabular::DEFAULT_VI_TOL)?,
            h: kv.typed("h", 200.0)?,
            t0: kv.typed("t0", 2000.0)?,
            record_every: kv.typed("record_every", 1000usize)?,
            tau: kv.typed("tau", 1.0)?,
            delta: kv.typed("delta", 0.1)?,
            sigma,
            z,
            deep,
            baseline_rule: kv.typed("baseline_rule", true)?,
            resolved: KvConfig::default(),
        };
        cfg.validate()?;
        let resolved = cfg.to_kv();
        Ok(Self { resolved, ..cfg })
    }

    pub fn validate(&self) -> Result<()> {
        if self.ws.is_empty() {
            return Err(Error::Config("empty w list".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("empty seed list".into()));
        }
        if let Some(w) = self.ws.iter().find(|w| !(**w >= 1.0 && w.is_finite())) {
            return Err(Error::Config(format!("w = {w} must be >= 1")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma = {} not in (0, 1)", self.gamma)));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if self.algorithm == Algorithm::Deep {
            if !matches!(self.env, EnvSpec::Grid { .. }) {
                return Err(Error::Config("deep training needs a grid environment".into()));
            }
            self.deep.validate()?;
        }
        Ok(())
    }

    fn to_kv(&self) -> KvConfig {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("algorithm", self.algorithm.as_str().into());
        match &self.env {
            EnvSpec::Grid { kind, side } => {
                put("env", kind.as_str().into());
                put("grid", side.to_string());
            }
            EnvSpec::Random { states, actions, opponents, floor, model_seed } => {
                put("env", "random".into());
                put("states", states.to_string());
                put("actions", actions.to_string());
                put("opponents", opponents.to_string());
                put("floor", floor.to_string());
                put("model_seed", model_seed.to_string());
            }
            EnvSpec::SelfLoop { states, actions, opponents, model_seed } => {
                put("env", "self-loop".into());
                put("states", states.to_string());
                put("actions", actions.to_string());
                put("opponents", opponents.to_string());
                put("model_seed", model_seed.to_string());
            }
        }
        put("w", join(&self.ws));
        put("seeds", join(&self.seeds));
        put("gamma", self.gamma.to_string());
        put("steps", self.steps.to_string());
        put("out", self.out.display().to_string());
        match self.algorithm {
            Algorithm::TabularVi => put("tol", self.tol.to_string()),
            Algorithm::TabularQl | Algorithm::LinearFa => {
                put("tol", self.tol.to_string());
                put("h", self.h.to_string());
                put("t0", self.t0.to_string());
                put("record_every", self.record_every.to_string());
                if self.algorithm == Algorithm::LinearFa {
                    put("tau", self.tau.to_string());
                    put("delta", self.delta.to_string());
                    if let Some(s) = self.sigma {
                        put("sigma", s.to_string());
                    }
                    if let Some(z) = self.z {
                        put("z", z.to_string());
                    }
                }
            }
            Algorithm::Deep => {
                let d = &self.deep;
                put("target_period", d.target_period.to_string());
                put("eval_loops", d.eval_loops.to_string());
                put("batch", d.batch.to_string());
                put("lr", d.lr.to_string());
                put("eps_start", d.eps_start.to_string());
                put("eps_end", d.eps_end.to_string());
                put("eps_decay", d.eps_decay.to_string());
                put("optimizer", d.optimizer.as_str().into());
                put("replay_capacity", d.replay_capacity.to_string());
                put("hidden", join(&d.hidden));
                put("episode_cap", d.episode_cap.to_string());
                put("probe_count", d.probe_count.to_string());
                put("probe_seed", d.probe_seed.to_string());
                put("probe_every", d.probe_every.to_string());
                put("baseline_rule", self.baseline_rule.to_string());
            }
        }
        KvConfig { entries: m }
    }

    /// Deep-learner configuration of one `(w, seed)` cell.
    pub fn deep_for(&self, w: f64, seed: u64) -> AlgoConfig {
        let rule = if w == 1.0 && self.baseline_rule {
            TargetRule::Minimax
        } else {
            TargetRule::Sor
        };
        AlgoConfig {
            w,
            seed,
            target_rule: rule,
            ..self.deep.clone()
        }
    }
}

/// Reads `SOR_SEED` if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} = `{v}` is not an integer"))),
        Err(_) => Ok(None),
    }
}
