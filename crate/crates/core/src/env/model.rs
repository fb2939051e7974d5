use rand::Rng;
use serde::Serialize;

use super::MarkovGame;
use crate::error::{Error, Result};

pub const DEFAULT_STATE_CAP: usize = 100_000;

/// Explicit `(S, A, O, P, R, γ)` with sparse transition rows.
///
/// Row `(s, a, o)` lives at index `(s·|A| + a)·|O| + o`. States flagged
/// `absorbing` loop to themselves (or to the sink) with zero reward.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovGameModel {
    n_states: usize,
    n_max: usize,
    n_min: usize,
    gamma: f64,
    rewards: Vec<f64>,
    transitions: Vec<Vec<(usize, f64)>>,
    absorbing: Vec<bool>,
}

impl MarkovGameModel {
    pub fn new(
        n_states: usize,
        n_max: usize,
        n_min: usize,
        gamma: f64,
        rewards: Vec<f64>,
        transitions: Vec<Vec<(usize, f64)>>,
        absorbing: Vec<bool>,
    ) -> Result<Self> {
        let rows = n_states * n_max * n_min;
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("discount {gamma} not in (0, 1)")));
        }
        if n_max == 0 || n_min == 0 {
            return Err(Error::InvalidModel("action sets must be nonempty".into()));
        }
        if rewards.len() != rows || transitions.len() != rows || absorbing.len() != n_states {
            return Err(Error::InvalidModel(format!(
                "expected {rows} rows and {n_states} states, got {} rewards, {} rows, {} flags",
                rewards.len(),
                transitions.len(),
                absorbing.len()
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("non-finite reward".into()));
        }
        for (i, row) in transitions.iter().enumerate() {
            let mut sum = 0.0;
            for &(next, p) in row {
                if next >= n_states || !(p >= 0.0) {
                    return Err(Error::InvalidModel(format!("bad entry ({next}, {p}) in row {i}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self {
            n_states,
            n_max,
            n_min,
            gamma,
            rewards,
            transitions,
            absorbing,
        })
    }

    /// Random dense model. Every row puts at least `self_loop_floor` mass on
    /// its own state; the rest is a random distribution over all states.
    /// Rewards are uniform on `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_max: usize,
        n_min: usize,
        gamma: f64,
        self_loop_floor: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&self_loop_floor) {
            return Err(Error::InvalidParams(format!("self-loop floor {self_loop_floor}")));
        }
        let rows = n_states * n_max * n_min;
        let mut rewards = Vec::with_capacity(rows);
        let mut transitions = Vec::with_capacity(rows);
        for row in 0..rows {
            let s = row / (n_max * n_min);
            rewards.push(rng.gen_range(-1.0..=1.0));
            let weights: Vec<f64> = (0..n_states).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
            let total: f64 = weights.iter().sum();
            let mut probs: Vec<f64> = weights
                .iter()
                .map(|w| (1.0 - self_loop_floor) * w / total)
                .collect();
            probs[s] += self_loop_floor;
            fix_row_sum(&mut probs, s);
            transitions.push(probs.into_iter().enumerate().filter(|(_, p)| *p > 0.0).collect());
        }
        Self::new(n_states, n_max, n_min, gamma, rewards, transitions, vec![false; n_states])
    }

    /// Every `(s, a, o)` returns to `s`. Rewards uniform on `[-1, 1]`.
    pub fn self_loop<R: Rng + ?Sized>(
        rng: &mut R,
        n_states: usize,
        n_max: usize,
        n_min: usize,
        gamma: f64,
    ) -> Result<Self> {
        let rows = n_states * n_max * n_min;
        let rewards = (0..rows).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let transitions = (0..rows).map(|row| vec![(row / (n_max * n_min), 1.0)]).collect();
        Self::new(n_states, n_max, n_min, gamma, rewards, transitions, vec![false; n_states])
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

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidModel(format!("discount {gamma} not in (0, 1)")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    pub fn row_index(&self, s: usize, a: usize, o: usize) -> usize {
        (s * self.n_max + a) * self.n_min + o
    }

    pub fn reward(&self, s: usize, a: usize, o: usize) -> f64 {
        self.rewards[self.row_index(s, a, o)]
    }

    pub fn next_states(&self, s: usize, a: usize, o: usize) -> &[(usize, f64)] {
        &self.transitions[self.row_index(s, a, o)]
    }

    pub fn prob(&self, s: usize, a: usize, o: usize, next: usize) -> f64 {
        self.next_states(s, a, o)
            .iter()
            .filter(|(n, _)| *n == next)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing[s]
    }

    /// States that a learner may sample from.
    pub fn live_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.absorbing[s])
    }

    /// `min_{s,a,o} P(s | s, a, o)`.
    pub fn min_self_transition(&self) -> f64 {
        let mut min = f64::INFINITY;
        for s in 0..self.n_states {
            for a in 0..self.n_max {
                for o in 0..self.n_min {
                    min = min.min(self.prob(s, a, o, s));
                }
            }
        }
        if min.is_finite() {
            min
        } else {
            0.0
        }
    }

    /// Samples `s'` from `P(· | s, a, o)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, o: usize, rng: &mut R) -> usize {
        let row = self.next_states(s, a, o);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(next, p) in row {
            acc += p;
            if u < acc {
                return next;
            }
        }
        row.last().map(|(n, _)| *n).unwrap_or(s)
    }
}

fn fix_row_sum(probs: &mut [f64], into: usize) {
    let residue = 1.0 - probs.iter().sum::<f64>();
    probs[into] += residue;
}

/// Enumerates the exact tabular model of a grid game.
///
/// Joint configurations keep their natural index; one extra absorbing sink
/// at index `joint_state_count()` receives every transition that ends the
/// game. Invalid and terminal configurations are absorbing and feed the
/// sink with zero reward.
pub fn enumerate_model<G: MarkovGame>(game: &G, gamma: f64, cap: usize) -> Result<MarkovGameModel> {
    let joint = game.joint_state_count();
    let n_states = joint + 1;
    if n_states > cap {
        return Err(Error::StateSpaceTooLarge { states: n_states, cap });
    }
    let sink = joint;
    let (na, no) = (game.n_max_actions(), game.n_min_actions());
    let rows = n_states * na * no;
    let mut rewards = vec![0.0; rows];
    let mut transitions = Vec::with_capacity(rows);
    let mut absorbing = vec![true; n_states];

    for idx in 0..n_states {
        let live = game.state_at(idx).filter(|s| !game.is_terminal(s));
        match live {
            None => {
                for _ in 0..na * no {
                    transitions.push(vec![(sink, 1.0)]);
                }
            }
            Some(s) => {
                absorbing[idx] = false;
                for a in 0..na {
                    for o in 0..no {
                        let mut row: Vec<(usize, f64)> = Vec::with_capacity(2);
                        let mut expected_reward = 0.0;
                        for (p, r, next) in game.outcomes(&s, a, o)? {
                            expected_reward += p * r;
                            let j = next.map(|n| game.state_index(&n)).unwrap_or(sink);
                            match row.iter_mut().find(|(k, _)| *k == j) {
                                Some(e) => e.1 += p,
                                None => row.push((j, p)),
                            }
                        }
                        rewards[(idx * na + a) * no + o] = expected_reward;
                        transitions.push(row);
                    }
                }
            }
        }
    }
    MarkovGameModel::new(n_states, na, no, gamma, rewards, transitions, absorbing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GuardInvader, Soccer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn guard_invader_3x3_is_deterministic() {
        let g = GuardInvader::new(3).unwrap();
        let m = enumerate_model(&g, 0.95, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(m.n_states(), 82);
        for s in 0..m.n_states() {
            for a in 0..5 {
                for o in 0..5 {
                    let row = m.next_states(s, a, o);
                    assert_eq!(row.len(), 1);
                    assert_eq!(row[0].1, 1.0);
                }
            }
        }
        assert!(m.is_absorbing(81));
    }

    #[test]
    fn soccer_3x3_rows_mix_two_orders() {
        let g = Soccer::new(3).unwrap();
        let m = enumerate_model(&g, 0.95, DEFAULT_STATE_CAP).unwrap();
        assert_eq!(m.n_states(), 163);
        let mut saw_split = false;
        for s in m.live_states() {
            for a in 0..5 {
                for o in 0..5 {
                    let row = m.next_states(s, a, o);
                    assert!(row.len() <= 2);
                    assert!(row.iter().all(|&(_, p)| p == 0.5 || p == 1.0));
                    assert_eq!(row.iter().map(|e| e.1).sum::<f64>(), 1.0);
                    saw_split |= row.len() == 2;
                }
            }
        }
        assert!(saw_split);
    }

    #[test]
    fn state_cap() {
        let g = GuardInvader::new(7).unwrap();
        assert!(matches!(
            enumerate_model(&g, 0.95, 1000),
            Err(Error::StateSpaceTooLarge { states: 2402, cap: 1000 })
        ));
    }

    #[test]
    fn validation() {
        assert!(MarkovGameModel::new(1, 1, 1, 0.9, vec![0.0], vec![vec![(0, 0.9)]], vec![false]).is_err());
        assert!(MarkovGameModel::new(1, 1, 1, 1.0, vec![0.0], vec![vec![(0, 1.0)]], vec![false]).is_err());
        assert!(MarkovGameModel::new(1, 1, 1, 0.9, vec![0.0], vec![vec![(0, 1.0)]], vec![false]).is_ok());
    }

    #[test]
    fn random_models_respect_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = MarkovGameModel::random(&mut rng, 4, 2, 3, 0.9, 0.3).unwrap();
        assert!(m.min_self_transition() >= 0.3 - 1e-12);
        let l = MarkovGameModel::self_loop(&mut rng, 3, 2, 2, 0.95).unwrap();
        assert_eq!(l.min_self_transition(), 1.0);
    }
}
