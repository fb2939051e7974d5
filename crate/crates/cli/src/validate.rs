//! Property suite run by the `validate` subcommand. Each property reports
//! pass, fail or skip together with the slack against its tolerance.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sormq::deep::Mlp;
use sormq::env::{MarkovGameModel, Transition};
use sormq::linear::{lemma_sequence_check, sor_linear_update, FeatureMap, LinearParams};
use sormq::tabular::{sor_q_learning_step, value_iteration, w_star, QTable, SorConfig, DEFAULT_MAX_ITERS};
use sormq::game::DEFAULT_TOL;
use sormq::{response_value, solve_matrix_game, PayoffMatrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub property: String,
    pub status: Status,
    /// Tolerance minus the worst measured violation; negative on failure.
    pub slack: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub entries: Vec<Entry>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Adds a contraction check run with `w > w*` in strict mode, which must
    /// be reported as a violation.
    pub canary: bool,
    pub seed: u64,
}

fn graded(property: &str, slack: f64, detail: String) -> Entry {
    Entry {
        property: property.into(),
        status: if slack >= 0.0 { Status::Pass } else { Status::Fail },
        slack: Some(slack),
        detail,
    }
}

fn failed(property: &str, err: impl std::fmt::Display) -> Entry {
    Entry {
        property: property.into(),
        status: Status::Fail,
        slack: None,
        detail: err.to_string(),
    }
}

fn entry(property: &str, run: impl FnOnce() -> Result<Entry>) -> Entry {
    run().unwrap_or_else(|e| failed(property, e))
}

fn lp_duality(rng: &mut ChaCha8Rng) -> Result<Entry> {
    let tol = 1e-8;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let (m, n) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let q = PayoffMatrix::new(m, n, (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let sol = solve_matrix_game(&q, DEFAULT_TOL)?;
        let row_guarantee = response_value(&sol.strategy, &q)?;
        let y = &sol.column_strategy;
        let col_guarantee = (0..m)
            .map(|a| (0..n).map(|o| q.get(a, o) * y[o]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        for v in [
            q.pure_maximin() - sol.value,
            sol.value - q.pure_minimax(),
            sol.value - row_guarantee,
            col_guarantee - sol.value,
        ] {
            worst = worst.max(v);
        }
    }
    Ok(graded("lp_duality", tol - worst, format!("200 matrices, worst duality violation {worst:e}")))
}

fn fixed_point_invariance(rng: &mut ChaCha8Rng) -> Result<Entry> {
    let tol = 1e-7;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = rng.gen_range(3..=5);
        let model = MarkovGameModel::random(rng, n, 2, 2, 0.9, 0.3)?;
        let w = f64::min(1.3, w_star(&model));
        let base = value_iteration(&model, &SorConfig::for_model(&model, 1.0)?, 1e-12, DEFAULT_MAX_ITERS)?;
        let relaxed = value_iteration(&model, &SorConfig::for_model(&model, w)?, 1e-12, DEFAULT_MAX_ITERS)?;
        for (a, b) in base.q.values()?.iter().zip(relaxed.q.values()?) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(graded("fixed_point_invariance", tol - worst, format!("10 models, max value gap {worst:e}")))
}

/// Largest per-sweep error ratio of relaxed value iteration.
fn worst_ratio(model: &MarkovGameModel, cfg: &SorConfig) -> Result<f64> {
    let star = value_iteration(model, cfg, 1e-13, DEFAULT_MAX_ITERS)?.q;
    let mut q = QTable::for_model(model);
    let mut prev = q.sup_distance(&star);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        q = sormq::tabular::sor_bellman_apply(model, &q, cfg)?;
        let err = q.sup_distance(&star);
        if prev > 1e-9 {
            worst = worst.max(err / prev);
        }
        prev = err;
    }
    Ok(worst)
}

fn contraction(rng: &mut ChaCha8Rng) -> Result<Entry> {
    let model = MarkovGameModel::self_loop(rng, 4, 3, 3, 0.95)?;
    let cfg = SorConfig::for_model(&model, 1.5)?.strict();
    let ratio = worst_ratio(&model, &cfg)?;
    let bound = cfg.contraction_factor() + 1e-6;
    Ok(graded("contraction", bound - ratio, format!("w = 1.5, ratio {ratio:.9} vs factor {:.6}", cfg.contraction_factor())))
}

fn canary(rng: &mut ChaCha8Rng) -> Entry {
    let property = "canary_strict_w_above_w_star";
    let mut run = || -> Result<Entry> {
        let model = MarkovGameModel::random(rng, 3, 2, 2, 0.9, 0.2)?;
        let cfg = SorConfig::for_model(&model, w_star(&model) + 1.0)?.strict();
        let ratio = worst_ratio(&model, &cfg)?;
        Ok(graded(property, cfg.contraction_factor() + 1e-6 - ratio, format!("ratio {ratio}")))
    };
    run().unwrap_or_else(|e| failed(property, format!("violation: {e}")))
}

fn lemma_checks() -> Result<Entry> {
    let r = lemma_sequence_check(40.0, 160.0, 1, 0.9, 0.5, 2000)?;
    let slack = r.product_slack.min(r.square_sum_slack).min(r.weighted_sum_slack);
    Ok(graded("lemma_inequalities", slack, format!("{} pairs up to t = {}", r.pairs_checked, r.horizon)))
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Result<Entry> {
    let tol = 1e-4;
    let net = Mlp::new_uniform(&[6, 16, 12, 25], rng)?;
    let x = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0));
    let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..25)).collect();
    let y: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, g) = net.loss_and_gradient(x.view(), &idx, &y)?;
    let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied().collect::<Vec<_>>()).collect();
    let flat = net.to_flat();
    let sizes = net.sizes();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for i in 0..flat.len() {
        let mut p = flat.clone();
        p[i] += h;
        probe.set_flat(&p)?;
        let up = probe.loss_and_gradient(x.view(), &idx, &y)?.0;
        p[i] -= 2.0 * h;
        probe.set_flat(&p)?;
        let down = probe.loss_and_gradient(x.view(), &idx, &y)?.0;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(graded("gradient_check", tol - worst, format!("{sizes:?}, max relative error {worst:e}")))
}

fn linear_tabular_equivalence(rng: &mut ChaCha8Rng) -> Result<Entry> {
    let model = MarkovGameModel::random(rng, 3, 2, 2, 0.9, 0.2)?;
    let cfg = SorConfig::for_model(&model, 1.2)?;
    let phi = FeatureMap::for_model_one_hot(&model);
    let mut q = QTable::for_model(&model);
    let mut p = LinearParams::zeros(phi.dim(), 1e6)?;
    let mut worst = 0.0f64;
    for k in 0..2000 {
        let (s, a, o) = (rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..2));
        let t = Transition {
            s,
            a,
            o,
            r: model.reward(s, a, o),
            s_next: model.sample_next(s, a, o, rng),
            terminal: false,
            truncated: false,
        };
        let alpha = 20.0 / (k as f64 + 100.0);
        sor_q_learning_step(&mut q, &t, alpha.min(1.0), &cfg)?;
        sor_linear_update(&mut p, &t, alpha.min(1.0), &cfg, &phi)?;
        for (x, y) in q.as_slice().iter().zip(&p.theta) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(graded("linear_tabular_equivalence", 1e-12 - worst, format!("2000 steps, max gap {worst:e}")))
}

fn empty_model() -> Result<Entry> {
    let model = MarkovGameModel::new(2, 1, 1, 0.9, vec![0.0, 0.0], vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![true, true])?;
    if model.live_states().next().is_none() {
        return Ok(Entry {
            property: "empty_model".into(),
            status: Status::Skipped,
            slack: None,
            detail: "model has no live states".into(),
        });
    }
    Ok(graded("empty_model", 0.0, "model has live states".into()))
}

/// Runs every property; failures become report entries.
pub fn validate_suite(opts: SuiteOptions) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut entries = vec![
        entry("lp_duality", || lp_duality(&mut rng)),
        entry("fixed_point_invariance", || fixed_point_invariance(&mut rng)),
        entry("contraction", || contraction(&mut rng)),
        entry("lemma_inequalities", lemma_checks),
        entry("gradient_check", || gradient_check(&mut rng)),
        entry("linear_tabular_equivalence", || linear_tabular_equivalence(&mut rng)),
        entry("empty_model", empty_model),
    ];
    if opts.canary {
        entries.push(canary(&mut rng));
    }
    let all_pass = entries.iter().all(|e| e.status != Status::Fail);
    Report { entries, all_pass }
}
