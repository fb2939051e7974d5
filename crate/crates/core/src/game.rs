//! One-shot matrix games: the `val` operator and the LP policy operator.
//!
//! The maximizer picks a row, the minimizer a column. [`solve_matrix_game`]
//! returns the maximizer's optimal mixed strategy together with the game
//! value, computed with a dense primal simplex on the reciprocal-form LP.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

const PIVOT_EPS: f64 = 1e-12;

/// Dense payoff table `Q(s, ·, ·)` at one state, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParams(format!(
                "payoff matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput(format!(
                "entry ({}, {}) = {}",
                i / cols,
                i % cols,
                data[i]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(n_rows, n_cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, a: usize, o: usize) -> f64 {
        self.data[a * self.cols + o]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.cols..(a + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// The game seen from the other side: `-Qᵀ`.
    pub fn negated_transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..self.cols {
            for a in 0..self.rows {
                data.push(-self.get(a, o));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    /// Best pure-strategy guarantee of the maximizer, `max_a min_o Q(a, o)`.
    pub fn pure_maximin(&self) -> f64 {
        (0..self.rows)
            .map(|a| self.row(a).iter().copied().fold(f64::INFINITY, f64::min))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best pure-strategy guarantee of the minimizer, `min_o max_a Q(a, o)`.
    pub fn pure_minimax(&self) -> f64 {
        (0..self.cols)
            .map(|o| {
                (0..self.rows)
                    .map(|a| self.get(a, o))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Probability distribution over the maximizer's actions.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MixedStrategy(Vec<f64>);

impl MixedStrategy {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidParams("empty strategy".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParams(format!(
                "strategy entries must be finite and nonnegative: {probabilities:?}"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "strategy sums to {sum}, not 1"
            )));
        }
        Ok(Self(probabilities))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut p = vec![0.0; n];
        p[action] = 1.0;
        Self(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    /// Draws an action by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the final partial sum
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(self.0.len() - 1)
    }
}

/// Optimal maximizer strategy and value of a matrix game.
#[derive(Debug, Clone, Serialize)]
pub struct GameSolution {
    pub strategy: MixedStrategy,
    pub value: f64,
    /// The minimizer's optimal mixed strategy, read off the same tableau.
    pub column_strategy: Vec<f64>,
}

fn check_finite(q: &PayoffMatrix) -> Result<()> {
    if let Some(i) = q.data.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput(format!("entry index {i}")));
    }
    Ok(())
}

/// Solves `max ζ s.t. Σ_a ρ(a) Q(a, o) ≥ ζ ∀o, ρ ∈ Δ(A)`.
///
/// Entries are shifted by `Δ = 1 + max(0, -min Q)` so the game value is
/// strictly positive, after which the minimizer's reciprocal LP
/// `max Σ y  s.t. (Q + Δ) y ≤ 1, y ≥ 0` is feasible at the origin and
/// bounded. The maximizer's strategy comes from the dual prices of the
/// row constraints. Pivoting follows Bland's rule.
///
/// `tol` bounds the duality gap of the returned pair of strategies,
/// relative to the magnitude of the entries.
pub fn solve_matrix_game(q: &PayoffMatrix, tol: f64) -> Result<GameSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tol must be positive, got {tol}")));
    }
    check_finite(q)?;
    let (m, n) = (q.rows, q.cols);

    if m == 1 {
        let o = argmin_lowest(q.row(0).iter().copied());
        return Ok(GameSolution {
            strategy: MixedStrategy::pure(1, 0),
            value: q.get(0, o),
            column_strategy: MixedStrategy::pure(n, o).0,
        });
    }
    if n == 1 {
        let a = argmax_lowest((0..m).map(|a| q.get(a, 0)));
        return Ok(GameSolution {
            strategy: MixedStrategy::pure(m, a),
            value: q.get(a, 0),
            column_strategy: vec![1.0],
        });
    }

    let magnitude = q.data.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let (x, y) = if magnitude > 1.0 {
        simplex_strategies(&q.map(|v| v / magnitude)?)?
    } else {
        simplex_strategies(q)?
    };

    let strategy = MixedStrategy(x);
    let lower = response_value_unchecked(strategy.probabilities(), q);
    let upper = (0..m)
        .map(|a| q.row(a).iter().zip(&y).map(|(v, p)| v * p).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    if upper - lower > tol * (1.0 + magnitude) {
        return Err(Error::SolverFailure(format!(
            "duality gap {:e} exceeds tolerance",
            upper - lower
        )));
    }
    Ok(GameSolution {
        strategy,
        value: lower,
        column_strategy: y,
    })
}

/// Both players' strategies from the reciprocal LP on a matrix with entries
/// of order one.
fn simplex_strategies(q: &PayoffMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = (q.rows, q.cols);
    let shift = 1.0 + f64::max(0.0, -q.min_entry());
    let width = n + m + 1;
    let rhs = width - 1;
    // constraint rows followed by the reduced-cost row
    let mut t = vec![0.0; (m + 1) * width];
    for i in 0..m {
        for j in 0..n {
            t[i * width + j] = q.get(i, j) + shift;
        }
        t[i * width + n + i] = 1.0;
        t[i * width + rhs] = 1.0;
    }
    let obj = m * width;
    for j in 0..n {
        t[obj + j] = 1.0;
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let max_iters = 100 * (m + n) + 1000;
    let mut iters = 0;
    loop {
        let Some(enter) = (0..n + m).find(|&j| t[obj + j] > PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let a = t[i * width + enter];
            if a > PIVOT_EPS {
                let ratio = t[i * width + rhs] / a;
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best_ratio - PIVOT_EPS
                            || (ratio <= best_ratio + PIVOT_EPS && basis[i] < basis[l])
                    }
                };
                if better {
                    best_ratio = best_ratio.min(ratio);
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            return Err(Error::SolverFailure("unbounded reciprocal LP".into()));
        };
        pivot(&mut t, width, m + 1, r, enter);
        basis[r] = enter;
        iters += 1;
        if iters > max_iters {
            return Err(Error::SolverFailure(format!(
                "iteration cap {max_iters} exceeded"
            )));
        }
    }

    let mut y = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            y[b] = t[i * width + rhs].max(0.0);
        }
    }
    let duals: Vec<f64> = (0..m).map(|i| (-t[obj + n + i]).max(0.0)).collect();
    Ok((normalize(&duals)?, normalize(&y)?))
}

fn pivot(t: &mut [f64], width: usize, rows: usize, r: usize, c: usize) {
    let p = t[r * width + c];
    for j in 0..width {
        t[r * width + j] /= p;
    }
    t[r * width + c] = 1.0;
    for i in 0..rows {
        if i == r {
            continue;
        }
        let f = t[i * width + c];
        if f == 0.0 {
            continue;
        }
        for j in 0..width {
            t[i * width + j] -= f * t[r * width + j];
        }
        t[i * width + c] = 0.0;
    }
}

fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::SolverFailure(format!(
            "degenerate strategy weights {v:?}"
        )));
    }
    let mut out: Vec<f64> = v.iter().map(|p| p / sum).collect();
    // absorb the rounding residue into the largest entry
    let residue = 1.0 - out.iter().sum::<f64>();
    let i = argmax_lowest(out.iter().copied());
    out[i] += residue;
    Ok(out)
}

/// `val(Q)`: the maximin value of the matrix game.
pub fn game_value(q: &PayoffMatrix, tol: f64) -> Result<f64> {
    solve_matrix_game(q, tol).map(|s| s.value)
}

/// `min_o Σ_a π(a) Q(a, o)`, the value the minimizer can hold `π` to.
pub fn response_value(pi: &MixedStrategy, q: &PayoffMatrix) -> Result<f64> {
    check_dims(pi, q)?;
    Ok(response_value_unchecked(pi.probabilities(), q))
}

/// The minimizer's best pure reply to `π`; ties go to the lowest index.
pub fn best_response_column(pi: &MixedStrategy, q: &PayoffMatrix) -> Result<usize> {
    check_dims(pi, q)?;
    Ok(argmin_lowest(column_payoffs(pi.probabilities(), q)))
}

fn check_dims(pi: &MixedStrategy, q: &PayoffMatrix) -> Result<()> {
    if pi.len() != q.rows {
        return Err(Error::DimensionMismatch {
            expected: q.rows,
            got: pi.len(),
        });
    }
    Ok(())
}

fn column_payoffs<'a>(pi: &'a [f64], q: &'a PayoffMatrix) -> impl Iterator<Item = f64> + 'a {
    (0..q.cols).map(move |o| (0..q.rows).map(|a| pi[a] * q.get(a, o)).sum())
}

fn response_value_unchecked(pi: &[f64], q: &PayoffMatrix) -> f64 {
    column_payoffs(pi, q).fold(f64::INFINITY, f64::min)
}

pub(crate) fn argmin_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub(crate) fn argmax_lowest(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
