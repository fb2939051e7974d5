use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sormq::env::MarkovGameModel;
use sormq::tabular::{
    run_q_learning, value_iteration, w_star, QTable, SorConfig, StepSchedule, DEFAULT_MAX_ITERS,
};

fn values(q: &QTable) -> Vec<f64> {
    q.values().unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn value_functions_agree_across_weights(seed in any::<u64>(), n in 2usize..5, floor in 0.0..0.8f64, t in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MarkovGameModel::random(&mut rng, n, 2, 3, 0.9, floor).unwrap();
        let ws = w_star(&model);
        let w = 1.0 + t * (ws - 1.0);
        let tol = 1e-10;
        let a = value_iteration(&model, &SorConfig::for_model(&model, 1.0).unwrap(), tol, DEFAULT_MAX_ITERS).unwrap();
        let b = value_iteration(&model, &SorConfig::for_model(&model, w).unwrap().strict(), tol, DEFAULT_MAX_ITERS).unwrap();
        prop_assert!(sup(&values(&a.q), &values(&b.q)) <= 10.0 * tol);
    }
}

#[test]
fn iteration_counts_do_not_increase_with_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(2..6);
        let floor = rng.gen_range(0.05..0.9);
        let model = MarkovGameModel::random(&mut rng, n, 2, 2, 0.9, floor).unwrap();
        let ws = w_star(&model);
        let mut last = usize::MAX;
        for k in 0..=5 {
            let w = 1.0 + (ws - 1.0) * k as f64 / 5.0;
            let cfg = SorConfig::for_model(&model, w).unwrap().strict();
            let iters = value_iteration(&model, &cfg, 1e-8, DEFAULT_MAX_ITERS).unwrap().iterations;
            assert!(iters <= last, "w = {w}: {iters} > {last} (w* = {ws})");
            last = iters;
        }
    }
}

#[test]
fn q_learning_reaches_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = MarkovGameModel::random(&mut rng, 3, 2, 2, 0.9, 0.0).unwrap();
    let cfg = SorConfig::for_model(&model, 1.0).unwrap();
    let star = value_iteration(&model, &cfg, 1e-12, DEFAULT_MAX_ITERS).unwrap().q;
    let schedule = StepSchedule::new(200.0, 2000.0).unwrap();
    let mut hits = 0;
    for seed in 0..10 {
        let run = run_q_learning(&model, &cfg, schedule, 200_000, seed, Some(&star), 50_000).unwrap();
        let err = run.errors.last().unwrap().1;
        hits += (err < 0.05) as usize;
    }
    assert!(hits >= 9);
}
