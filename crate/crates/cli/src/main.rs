use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sormq::game::DEFAULT_TOL;
use sormq::linear::{lemma_sequence_check, finite_time_bound, BoundParams, BoundVariant};
use sormq::{solve_matrix_game, Error, PayoffMatrix, Result};
use sormq_cli::config::seed_from_env;
use sormq_cli::sweep::CellStatus;
use sormq_cli::{emit_plot, run_sweep, validate_suite, ExperimentConfig, KvConfig, SuiteOptions, SweepOptions};

#[derive(Parser)]
#[command(name = "sormq", version, about = "Relaxed minimax Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a matrix game read from CSV (rows are maximizer actions).
    SolveMatrix {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Relaxed value iteration; writes Q* and the residual curve.
    TabularVi(RunArgs),
    /// Online tabular Q-learning; writes the sup-norm error curve.
    TabularQl(RunArgs),
    /// Projected linear recursion; writes error and bound curves.
    LinearFa(RunArgs),
    /// Check the step-size sequence inequalities and evaluate the bound.
    BoundCheck(BoundArgs),
    /// Train the deep learner; writes log.csv, config.json and weights.
    TrainDeep(RunArgs),
    /// Run every (w, seed) cell of a configuration file.
    Sweep(RunArgs),
    /// Plot CSV columns as an SVG line chart.
    Plot {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "step")]
        x: String,
        #[arg(long = "y", required = true)]
        fields: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suite and print a JSON report.
    Validate {
        /// Include a strict-mode check with w above w*, expected to fail.
        #[arg(long)]
        canary: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct RunArgs {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    /// Comma-separated relaxation weights.
    #[arg(long)]
    w: Option<String>,
    /// Number of consecutive seeds.
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed; falls back to SOR_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, alias = "T")]
    steps: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long = "H", alias = "h")]
    h: Option<f64>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overwrite outputs whose fingerprint matches.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long = "H", alias = "h")]
    h: f64,
    #[arg(long)]
    t0: f64,
    #[arg(long, default_value_t = 1)]
    tau: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma_prime: f64,
    /// Exponent used by the weighted-sum inequality.
    #[arg(long, default_value_t = 0.5)]
    big_gamma: f64,
    #[arg(long, default_value_t = 10_000)]
    horizon: usize,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    m_tilde: f64,
    #[arg(long, default_value_t = 10.0)]
    z: f64,
    #[arg(long, default_value_t = 8.0)]
    d: f64,
    #[arg(long)]
    sigma: Option<f64>,
}

impl RunArgs {
    fn resolve(&self, algorithm: Option<&str>) -> Result<ExperimentConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::load(p)?,
            None => KvConfig::default(),
        };
        if let Some(a) = algorithm {
            kv.set("algorithm", a)?;
        }
        for o in &self.overrides {
            kv.set_pair(o)?;
        }
        let mut put = |k: &str, v: Option<String>| -> Result<()> {
            match v {
                Some(v) => kv.set(k, &v),
                None => Ok(()),
            }
        };
        put("env", self.env.clone())?;
        put("grid", self.grid.map(|v| v.to_string()))?;
        put("w", self.w.clone())?;
        put("steps", self.steps.map(|v| v.to_string()))?;
        put("gamma", self.gamma.map(|v| v.to_string()))?;
        put("tol", self.tol.map(|v| v.to_string()))?;
        put("h", self.h.map(|v| v.to_string()))?;
        put("t0", self.t0.map(|v| v.to_string()))?;
        put("tau", self.tau.map(|v| v.to_string()))?;
        put("delta", self.delta.map(|v| v.to_string()))?;
        put("sigma", self.sigma.map(|v| v.to_string()))?;
        put("record_every", self.record_every.map(|v| v.to_string()))?;
        put("out", self.out.as_ref().map(|p| p.display().to_string()))?;
        if self.seeds.is_some() || self.seed.is_some() {
            kv.remove("seeds");
            if let Some(b) = self.seed {
                kv.set("seed", &b.to_string())?;
            }
            if let Some(n) = self.seeds {
                kv.set("seed_count", &n.to_string())?;
            }
        }
        ExperimentConfig::from_kv(&kv)
    }

    fn run(&self, algorithm: Option<&str>) -> Result<i32> {
        let cfg = self.resolve(algorithm)?;
        let jobs = self
            .jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let summary = run_sweep(&cfg, SweepOptions { jobs, force: self.force })?;
        for c in &summary.cells {
            let status = match &c.status {
                CellStatus::Ok => "ok".to_string(),
                CellStatus::Reused => "reused (fingerprint matches, use --force to rerun)".to_string(),
                CellStatus::Failed(m) => format!("failed: {m}"),
            };
            let notes: String = c.notes.iter().map(|(k, v)| format!(" {k}={v}")).collect();
            println!(
                "w={} seed={} {}={} steps={}{} [{status}] -> {}",
                c.w,
                c.seed,
                summary.metric,
                c.metric,
                c.steps,
                notes,
                c.dir.display()
            );
        }
        print!("{}", summary.table());
        let failed = summary.cells.iter().any(|c| matches!(c.status, CellStatus::Failed(_)));
        Ok(if failed { 1 } else { 0 })
    }
}

fn read_matrix(path: &Path) -> Result<PayoffMatrix> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::NonFiniteInput(format!("`{v}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    PayoffMatrix::from_rows(&rows)
}

fn bound_check(a: &BoundArgs) -> Result<i32> {
    let report = lemma_sequence_check(a.h, a.t0, a.tau, a.gamma_prime, a.big_gamma, a.horizon)?;
    let params = BoundParams {
        m_tilde: a.m_tilde,
        h: a.h,
        t0: a.t0,
        tau: a.tau as f64,
        delta: a.delta,
        gamma_prime: a.gamma_prime,
        z: a.z,
        d: a.d,
        sigma: a.sigma.unwrap_or(1.0 / a.d),
    };
    params.validate()?;
    let t = a.horizon as f64;
    let out = serde_json::json!({
        "lemma": report,
        "all_hold": report.all_hold(),
        "params": params,
        "certified": params.certified(),
        "horizon": a.horizon,
        "statement_bound": finite_time_bound(&params, t, BoundVariant::Statement)?,
        "proof_bound": finite_time_bound(&params, t, BoundVariant::Proof)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(if report.all_hold() { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::SolveMatrix { input, tol } => {
            let q = read_matrix(&input)?;
            let sol = solve_matrix_game(&q, tol)?;
            let out = serde_json::json!({
                "rows": q.rows(),
                "cols": q.cols(),
                "value": sol.value,
                "strategy": sol.strategy.probabilities(),
                "column_strategy": sol.column_strategy,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(0)
        }
        Command::TabularVi(a) => a.run(Some("tabular-vi")),
        Command::TabularQl(a) => a.run(Some("tabular-ql")),
        Command::LinearFa(a) => a.run(Some("linear-fa")),
        Command::TrainDeep(a) => a.run(Some("deep")),
        Command::Sweep(a) => a.run(None),
        Command::BoundCheck(a) => bound_check(&a),
        Command::Plot { inputs, x, fields, out } => {
            let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let fields: Vec<&str> = fields.iter().map(String::as_str).collect();
            emit_plot(&paths, &x, &fields, &out)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Validate { canary, seed, out } => {
            let seed = match seed {
                Some(s) => s,
                None => seed_from_env()?.unwrap_or(0),
            };
            let report = validate_suite(SuiteOptions { canary, seed });
            let text = serde_json::to_string_pretty(&report)? + "\n";
            if let Some(p) = out {
                std::fs::write(p, &text)?;
            }
            print!("{text}");
            Ok(if report.all_pass { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
