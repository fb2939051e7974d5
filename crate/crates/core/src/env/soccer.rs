use rand::Rng;
use serde::Serialize;

use super::{GridPos, MarkovGame, Move, Transition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SoccerState {
    pub pos_a: GridPos,
    pub pos_b: GridPos,
    pub ball_with_a: bool,
    pub grid_side: u8,
}

/// Two-player grid soccer. Player A (maximizer) attacks the right column,
/// player B (minimizer) the left one.
///
/// Each goal occupies the middle `⌈n/2⌉` cells of its column. The two moves
/// execute in a uniformly random order; a move into the opponent's cell is
/// aborted and flips ball possession. A goal is scored as soon as the ball
/// carrier stands in the opponent's goal.
#[derive(Debug, Clone)]
pub struct Soccer {
    n: usize,
    goal_rows: std::ops::Range<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Player {
    A,
    B,
}

impl Soccer {
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=250).contains(&n) {
            return Err(Error::InvalidParams(format!("grid side {n} out of range")));
        }
        let k = n.div_ceil(2);
        let start = (n - k) / 2;
        Ok(Self {
            n,
            goal_rows: start..start + k,
        })
    }

    pub fn goal_rows(&self) -> std::ops::Range<usize> {
        self.goal_rows.clone()
    }

    pub fn state(&self, pos_a: GridPos, pos_b: GridPos, ball_with_a: bool) -> SoccerState {
        SoccerState {
            pos_a,
            pos_b,
            ball_with_a,
            grid_side: self.n as u8,
        }
    }

    fn in_goal_of_b(&self, p: GridPos) -> bool {
        p.col as usize == self.n - 1 && self.goal_rows.contains(&(p.row as usize))
    }

    fn in_goal_of_a(&self, p: GridPos) -> bool {
        p.col == 0 && self.goal_rows.contains(&(p.row as usize))
    }

    /// +1 if A scored, -1 if B scored.
    fn score(&self, s: &SoccerState) -> Option<f64> {
        if s.ball_with_a && self.in_goal_of_b(s.pos_a) {
            Some(1.0)
        } else if !s.ball_with_a && self.in_goal_of_a(s.pos_b) {
            Some(-1.0)
        } else {
            None
        }
    }

    fn resolve(&self, s: &SoccerState, a: usize, o: usize, a_first: bool) -> Result<(f64, bool, SoccerState)> {
        let moves = [(Player::A, Move::from_index(a)?), (Player::B, Move::from_index(o)?)];
        let order = if a_first { [moves[0], moves[1]] } else { [moves[1], moves[0]] };
        let mut st = *s;
        for (player, mv) in order {
            let (me, other) = match player {
                Player::A => (st.pos_a, st.pos_b),
                Player::B => (st.pos_b, st.pos_a),
            };
            let target = me.step(mv, self.n);
            if target == other {
                st.ball_with_a = !st.ball_with_a;
            } else {
                match player {
                    Player::A => st.pos_a = target,
                    Player::B => st.pos_b = target,
                }
            }
            if let Some(r) = self.score(&st) {
                return Ok((r, true, st));
            }
        }
        Ok((0.0, false, st))
    }
}

impl MarkovGame for Soccer {
    type State = SoccerState;

    fn name(&self) -> &'static str {
        "soccer"
    }

    fn grid_side(&self) -> usize {
        self.n
    }

    fn feature_len(&self) -> usize {
        5
    }

    fn is_terminal(&self, s: &SoccerState) -> bool {
        s.pos_a == s.pos_b || self.score(s).is_some()
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> SoccerState {
        let cells = self.n * self.n;
        loop {
            let a = rng.gen_range(0..cells);
            let b = rng.gen_range(0..cells);
            let ball = rng.gen_bool(0.5);
            if a == b {
                continue;
            }
            let s = self.state(GridPos::from_index(a, self.n), GridPos::from_index(b, self.n), ball);
            if !self.is_terminal(&s) {
                return s;
            }
        }
    }

    fn step<R: Rng + ?Sized>(
        &self,
        s: &SoccerState,
        a: usize,
        o: usize,
        rng: &mut R,
    ) -> Result<Transition<SoccerState>> {
        if a >= super::N_MOVES {
            return Err(Error::InvalidAction(a));
        }
        if o >= super::N_MOVES {
            return Err(Error::InvalidAction(o));
        }
        if self.is_terminal(s) {
            return Err(Error::SteppingTerminalState);
        }
        let a_first = rng.gen_bool(0.5);
        let (r, terminal, s_next) = self.resolve(s, a, o, a_first)?;
        Ok(Transition {
            s: *s,
            a,
            o,
            r,
            s_next,
            terminal,
            truncated: false,
        })
    }

    fn encode_into(&self, s: &SoccerState, out: &mut [f64]) {
        let k = (self.n - 1) as f64;
        out[0] = s.pos_a.row as f64 / k;
        out[1] = s.pos_a.col as f64 / k;
        out[2] = s.pos_b.row as f64 / k;
        out[3] = s.pos_b.col as f64 / k;
        out[4] = if s.ball_with_a { 1.0 } else { 0.0 };
    }

    fn joint_state_count(&self) -> usize {
        let cells = self.n * self.n;
        cells * cells * 2
    }

    fn state_index(&self, s: &SoccerState) -> usize {
        let cells = self.n * self.n;
        (s.pos_a.index(self.n) * cells + s.pos_b.index(self.n)) * 2 + s.ball_with_a as usize
    }

    fn state_at(&self, index: usize) -> Option<SoccerState> {
        let cells = self.n * self.n;
        if index >= cells * cells * 2 {
            return None;
        }
        let ball = index % 2 == 1;
        let pair = index / 2;
        let s = self.state(
            GridPos::from_index(pair / cells, self.n),
            GridPos::from_index(pair % cells, self.n),
            ball,
        );
        (s.pos_a != s.pos_b).then_some(s)
    }

    fn outcomes(
        &self,
        s: &SoccerState,
        a: usize,
        o: usize,
    ) -> Result<Vec<(f64, f64, Option<SoccerState>)>> {
        if self.is_terminal(s) {
            return Err(Error::SteppingTerminalState);
        }
        let mut out: Vec<(f64, f64, Option<SoccerState>)> = Vec::with_capacity(2);
        for a_first in [true, false] {
            let (r, terminal, next) = self.resolve(s, a, o, a_first)?;
            let next = (!terminal).then_some(next);
            match out.iter_mut().find(|(_, rr, nn)| *nn == next && *rr == r) {
                Some(entry) => entry.0 += 0.5,
                None => out.push((0.5, r, next)),
            }
        }
        Ok(out)
    }
}
