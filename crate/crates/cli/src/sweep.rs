//! One deterministic run per `(w, seed)` cell, aggregated into a table with
//! one row per relaxation weight.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sormq::deep::{converged_mean, train, LogRow};
use sormq::env::{enumerate_model, GuardInvader, MarkovGame, MarkovGameModel, Soccer, DEFAULT_STATE_CAP};
use sormq::env::EnvKind;
use sormq::linear::{run_linear_experiment, LinearExperimentConfig};
use sormq::tabular::{run_q_learning, value_iteration, SorConfig, StepSchedule, DEFAULT_MAX_ITERS};
use sormq::{Error, Result};

use crate::config::{Algorithm, EnvSpec, ExperimentConfig};
use crate::output::{fingerprint, fmt_f64, write_csv, existing_fingerprint, CsvTable, WriteOutcome};

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub jobs: usize,
    pub force: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { jobs: 1, force: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CellStatus {
    Ok,
    /// Outputs with a matching fingerprint already existed.
    Reused,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub w: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub status: CellStatus,
    pub metric: f64,
    pub steps: usize,
    /// Algorithm-specific extras such as the final residual or coverage.
    pub notes: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub w: f64,
    pub seeds: usize,
    pub completed: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two completed runs.
    pub std: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub metric: String,
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellResult>,
    pub seconds: f64,
}

impl RunSummary {
    /// Table rendered for the terminal.
    pub fn table(&self) -> String {
        let mut s = format!("{:<10} {:>6} {:>9} {:>16} {:>14} {:>12}\n", "label", "w", "runs", self.metric, "std", "steps");
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>6} {:>4}/{:<4} {:>16.6} {:>14.6} {:>12.1}\n",
                r.label, r.w, r.completed, r.seeds, r.mean, r.std, r.mean_steps
            );
        }
        s
    }
}

pub fn cell_dir(out: &Path, w: f64, seed: u64) -> PathBuf {
    out.join(format!("w{w}_s{seed}"))
}

fn primary_file(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::TabularVi => "residuals.csv",
        Algorithm::TabularQl => "errors.csv",
        Algorithm::LinearFa => "curves.csv",
        Algorithm::Deep => "log.csv",
    }
}

/// Fingerprint of one cell: the resolved configuration without the sweep
/// axes and output location, qualified by `w` and the seed.
pub fn cell_fingerprint(cfg: &ExperimentConfig, w: f64, seed: u64) -> String {
    fingerprint(&resolved_without(cfg, &["w", "seeds", "out"]), &[("w", fmt_f64(w)), ("seed", seed.to_string())])
}

fn resolved_without(cfg: &ExperimentConfig, keys: &[&str]) -> String {
    cfg.resolved
        .render()
        .lines()
        .filter(|l| !keys.iter().any(|k| l.starts_with(&format!("{k} ="))))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn build_model(env: &EnvSpec, gamma: f64) -> Result<MarkovGameModel> {
    match *env {
        EnvSpec::Grid { kind: EnvKind::GuardInvader, side } => enumerate_model(&GuardInvader::new(side)?, gamma, DEFAULT_STATE_CAP),
        EnvSpec::Grid { kind: EnvKind::Soccer, side } => enumerate_model(&Soccer::new(side)?, gamma, DEFAULT_STATE_CAP),
        EnvSpec::Random { states, actions, opponents, floor, model_seed } => {
            MarkovGameModel::random(&mut ChaCha8Rng::seed_from_u64(model_seed), states, actions, opponents, gamma, floor)
        }
        EnvSpec::SelfLoop { states, actions, opponents, model_seed } => {
            MarkovGameModel::self_loop(&mut ChaCha8Rng::seed_from_u64(model_seed), states, actions, opponents, gamma)
        }
    }
}

struct Cell<'a> {
    cfg: &'a ExperimentConfig,
    model: Option<&'a MarkovGameModel>,
    w: f64,
    seed: u64,
    dir: PathBuf,
    force: bool,
}

impl Cell<'_> {
    fn meta(&self) -> Vec<(&'static str, String)> {
        vec![
            ("fingerprint", cell_fingerprint(self.cfg, self.w, self.seed)),
            ("algorithm", self.cfg.algorithm.as_str().to_string()),
            ("env", self.cfg.env.label()),
            ("w", fmt_f64(self.w)),
            ("seed", self.seed.to_string()),
        ]
    }

    fn model(&self) -> Result<&MarkovGameModel> {
        self.model.ok_or_else(|| Error::Config("tabular algorithm without a model".into()))
    }

    fn write(&self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        write_csv(&self.dir.join(name), &self.meta(), header, rows, self.force).map(|_| ())
    }

    fn run(&self) -> Result<(f64, usize, BTreeMap<String, f64>)> {
        let cfg = self.cfg;
        let mut notes = BTreeMap::new();
        match cfg.algorithm {
            Algorithm::TabularVi => {
                let model = self.model()?;
                let sor = SorConfig::for_model(model, self.w)?;
                let vi = value_iteration(model, &sor, cfg.tol, cfg.steps.max(1))?;
                let q = &vi.q;
                let mut rows = Vec::with_capacity(q.as_slice().len());
                for s in 0..q.n_states() {
                    for a in 0..q.n_max_actions() {
                        for o in 0..q.n_min_actions() {
                            rows.push(vec![s.to_string(), a.to_string(), o.to_string(), fmt_f64(q.get(s, a, o))]);
                        }
                    }
                }
                self.write("qstar.csv", &["state", "max_action", "min_action", "q"], rows)?;
                let rows = vi
                    .residuals
                    .iter()
                    .enumerate()
                    .map(|(i, r)| vec![(i + 1).to_string(), fmt_f64(*r)])
                    .collect();
                self.write("residuals.csv", &["iteration", "residual"], rows)?;
                notes.insert("residual".into(), vi.residual);
                Ok((vi.iterations as f64, vi.iterations, notes))
            }
            Algorithm::TabularQl => {
                let model = self.model()?;
                let sor = SorConfig::for_model(model, self.w)?;
                let star = value_iteration(model, &sor, cfg.tol, DEFAULT_MAX_ITERS)?.q;
                let schedule = StepSchedule::new(cfg.h, cfg.t0)?;
                let run = run_q_learning(model, &sor, schedule, cfg.steps, self.seed, Some(&star), cfg.record_every)?;
                let rows = run.errors.iter().map(|(k, e)| vec![k.to_string(), fmt_f64(*e)]).collect();
                self.write("errors.csv", &["step", "error"], rows)?;
                let &(step, last) = run
                    .errors
                    .last()
                    .ok_or_else(|| Error::EmptySeries("no error was recorded".into()))?;
                Ok((last, step, notes))
            }
            Algorithm::LinearFa => {
                let model = self.model()?;
                let sor = SorConfig::for_model(model, self.w)?;
                let d = (model.n_states() * model.n_max_actions() * model.n_min_actions()) as f64;
                let lcfg = LinearExperimentConfig {
                    sor,
                    schedule: StepSchedule::new(cfg.h, cfg.t0)?,
                    steps: cfg.steps,
                    seeds: vec![self.seed],
                    delta: cfg.delta,
                    tau: cfg.tau,
                    sigma: cfg.sigma.unwrap_or(1.0 / d),
                    gamma_prime: None,
                    z: cfg.z,
                    record_every: cfg.record_every,
                };
                let out = run_linear_experiment(model, &lcfg)?;
                let curve = &out.curves[0];
                let rows = out
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        vec![
                            t.to_string(),
                            fmt_f64(curve.errors[i]),
                            fmt_f64(out.proof_bound[i]),
                            fmt_f64(out.statement_bound[i]),
                        ]
                    })
                    .collect();
                self.write("curves.csv", &["step", "xi", "proof_bound", "statement_bound"], rows)?;
                notes.insert("coverage".into(), out.coverage);
                notes.insert("certified".into(), if out.certified { 1.0 } else { 0.0 });
                notes.insert("proof_bound".into(), *out.proof_bound.last().unwrap());
                Ok((curve.final_error, cfg.steps, notes))
            }
            Algorithm::Deep => match cfg.env {
                EnvSpec::Grid { kind: EnvKind::GuardInvader, side } => self.run_deep(&GuardInvader::new(side)?),
                EnvSpec::Grid { kind: EnvKind::Soccer, side } => self.run_deep(&Soccer::new(side)?),
                _ => Err(Error::Config("deep training needs a grid environment".into())),
            },
        }
    }

    fn run_deep<G: MarkovGame>(&self, game: &G) -> Result<(f64, usize, BTreeMap<String, f64>)> {
        let algo = self.cfg.deep_for(self.w, self.seed);
        let (log, net) = train(game, &algo)?;
        let rows = log.rows.iter().map(log_row).collect();
        self.write("log.csv", &LOG_HEADER, rows)?;
        let config = serde_json::json!({
            "fingerprint": cell_fingerprint(self.cfg, self.w, self.seed),
            "env": self.cfg.env.label(),
            "algorithm": algo,
            "episodes": log.episodes,
            "steps": log.steps,
            "weights_sha256": net.digest(),
        });
        std::fs::write(self.dir.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
        net.save(&self.dir.join("weights.bin"), &self.dir.join("weights.json"))?;
        let mut notes = BTreeMap::new();
        notes.insert("episodes".into(), log.episodes as f64);
        let loss = log
            .converged_loss()
            .ok_or_else(|| Error::EmptySeries("no gradient step was taken".into()))?;
        Ok((loss, log.steps, notes))
    }
}

pub const LOG_HEADER: [&str; 8] = ["step", "episode", "loss_raw", "loss_ma100", "probe_minimax_q", "epsilon", "seed", "w"];

fn log_row(r: &LogRow) -> Vec<String> {
    vec![
        r.step.to_string(),
        r.episode.to_string(),
        fmt_f64(r.loss_raw),
        fmt_f64(r.loss_ma100),
        fmt_f64(r.probe_minimax_q),
        fmt_f64(r.epsilon),
        r.seed.to_string(),
        fmt_f64(r.w),
    ]
}

/// Metric and step count of one finished cell, read back from its CSVs.
pub fn metric_from_files(algorithm: Algorithm, dir: &Path) -> Result<(f64, usize)> {
    let t = CsvTable::read(&dir.join(primary_file(algorithm)))?;
    let last = |name: &str| -> Result<f64> {
        t.column(name)?
            .last()
            .copied()
            .ok_or_else(|| Error::EmptySeries(format!("{}", t.path.display())))
    };
    match algorithm {
        Algorithm::TabularVi => Ok((t.rows.len() as f64, t.rows.len())),
        Algorithm::TabularQl => Ok((last("error")?, last("step")? as usize)),
        Algorithm::LinearFa => Ok((last("xi")?, last("step")? as usize)),
        Algorithm::Deep => {
            let losses = t.column("loss_raw")?;
            let loss = converged_mean(losses.into_iter())
                .ok_or_else(|| Error::EmptySeries(format!("{}", t.path.display())))?;
            Ok((loss, last("step")? as usize + 1))
        }
    }
}

fn run_cell(cfg: &ExperimentConfig, model: Option<&MarkovGameModel>, w: f64, seed: u64, force: bool) -> CellResult {
    let dir = cell_dir(&cfg.out, w, seed);
    let start = Instant::now();
    let cell = Cell { cfg, model, w, seed, dir: dir.clone(), force };
    let fp = cell_fingerprint(cfg, w, seed);
    let primary = dir.join(primary_file(cfg.algorithm));
    let result = if !force && existing_fingerprint(&primary).as_deref() == Some(fp.as_str()) {
        metric_from_files(cfg.algorithm, &dir).map(|(m, s)| (CellStatus::Reused, m, s, BTreeMap::new()))
    } else {
        std::fs::create_dir_all(&dir)
            .map_err(Error::from)
            .and_then(|_| cell.run())
            .map(|(m, s, n)| (CellStatus::Ok, m, s, n))
    };
    let (status, metric, steps, notes) = match result {
        Ok(r) => r,
        Err(e) => (CellStatus::Failed(e.to_string()), f64::NAN, 0, BTreeMap::new()),
    };
    CellResult {
        w,
        seed,
        dir,
        status,
        metric,
        steps,
        notes,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Label of a summary row; `w = 1` is the unrelaxed baseline.
pub fn row_label(w: f64) -> String {
    if w == 1.0 {
        "baseline".into()
    } else {
        format!("w={w}")
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn summarize(ws: &[f64], seeds: usize, cells: &[(f64, Option<(f64, usize)>)]) -> Vec<SummaryRow> {
    ws.iter()
        .map(|&w| {
            let done: Vec<(f64, usize)> = cells.iter().filter(|c| c.0 == w).filter_map(|c| c.1).collect();
            let metrics: Vec<f64> = done.iter().map(|d| d.0).collect();
            let (mean, std) = mean_std(&metrics);
            let steps: Vec<f64> = done.iter().map(|d| d.1 as f64).collect();
            SummaryRow {
                label: row_label(w),
                w,
                seeds,
                completed: done.len(),
                mean,
                std,
                mean_steps: mean_std(&steps).0,
            }
        })
        .collect()
}

/// Runs every `(w, seed)` cell on a pool of `jobs` workers and writes
/// `cells.csv`, `summary.csv`, `resolved.cfg` and `timing.json` under the
/// output directory. Cell failures are recorded, not propagated.
pub fn run_sweep(cfg: &ExperimentConfig, opts: SweepOptions) -> Result<RunSummary> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("resolved.cfg"), cfg.resolved.render())?;
    let model = match cfg.algorithm {
        Algorithm::Deep => None,
        _ => Some(build_model(&cfg.env, cfg.gamma)?),
    };
    let pairs: Vec<(f64, u64)> = cfg.ws.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let cells: Vec<CellResult> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(w, s)| run_cell(cfg, model.as_ref(), w, s, opts.force))
            .collect()
    });

    let done: Vec<(f64, Option<(f64, usize)>)> = cells
        .iter()
        .map(|c| (c.w, (!matches!(c.status, CellStatus::Failed(_))).then_some((c.metric, c.steps))))
        .collect();
    let rows = summarize(&cfg.ws, cfg.seeds.len(), &done);
    let fp = fingerprint(&resolved_without(cfg, &["out"]), &[("file", "summary".into())]);
    let meta = [
        ("fingerprint", fp),
        ("algorithm", cfg.algorithm.as_str().to_string()),
        ("env", cfg.env.label()),
        ("metric", cfg.algorithm.metric().to_string()),
    ];
    let summary_rows = rows.iter().map(|r| {
        vec![
            r.label.clone(),
            fmt_f64(r.w),
            r.seeds.to_string(),
            r.completed.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(r.mean_steps),
        ]
    });
    let summary_out = write_csv(
        &cfg.out.join("summary.csv"),
        &meta,
        &["label", "w", "seeds", "completed", "mean", "std", "mean_steps"],
        summary_rows,
        opts.force,
    )?;
    let cell_rows = cells.iter().map(|c| {
        let status = match &c.status {
            CellStatus::Ok | CellStatus::Reused => "ok".to_string(),
            CellStatus::Failed(msg) => format!("failed: {msg}"),
        };
        vec![fmt_f64(c.w), c.seed.to_string(), status, fmt_f64(c.metric), c.steps.to_string()]
    });
    if summary_out == WriteOutcome::Written || opts.force {
        write_csv(&cfg.out.join("cells.csv"), &meta, &["w", "seed", "status", "metric", "steps"], cell_rows, true)?;
    }
    let timing = serde_json::json!({
        "total_seconds": start.elapsed().as_secs_f64(),
        "cells": cells.iter().map(|c| serde_json::json!({"w": c.w, "seed": c.seed, "seconds": c.seconds})).collect::<Vec<_>>(),
    });
    std::fs::write(cfg.out.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(RunSummary {
        algorithm: cfg.algorithm.as_str().into(),
        metric: cfg.algorithm.metric().into(),
        rows,
        cells,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Rebuilds the summary table from the per-cell CSVs alone.
pub fn recompute_summary(out: &Path) -> Result<Vec<SummaryRow>> {
    let summary = CsvTable::read(&out.join("summary.csv"))?;
    let algorithm: Algorithm = summary
        .meta
        .get("algorithm")
        .ok_or_else(|| Error::Config("summary without algorithm".into()))?
        .parse()?;
    let ws = summary.column("w")?;
    let seeds = summary.column("seeds")?.first().copied().unwrap_or(0.0) as usize;
    let cells = CsvTable::read(&out.join("cells.csv"))?;
    let (w_col, s_col) = (cells.column("w")?, cells.column("seed")?);
    let done = w_col
        .iter()
        .zip(&s_col)
        .map(|(&w, &s)| (w, metric_from_files(algorithm, &cell_dir(out, w, s as u64)).ok()))
        .collect::<Vec<_>>();
    Ok(summarize(&ws, seeds, &done))
}
