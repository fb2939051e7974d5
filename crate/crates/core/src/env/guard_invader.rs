use rand::Rng;
use serde::Serialize;

use super::{GridPos, MarkovGame, Move, Transition};
use crate::error::{Error, Result};

/// Raw reward for a successful invasion, from the guard's side.
const INVASION_REWARD: f64 = -10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct GuardInvaderState {
    pub guard: GridPos,
    pub invader: GridPos,
    pub door: GridPos,
    pub grid_side: u8,
}

/// Guard (maximizer) versus invader (minimizer) on an `n × n` grid.
///
/// The door sits in the middle of the left edge. Both moves resolve at
/// once; a capture happens when both end up on the same cell. Reaching the
/// door wins for the invader even if the guard arrives there too.
#[derive(Debug, Clone)]
pub struct GuardInvader {
    n: usize,
    door: GridPos,
}

impl GuardInvader {
    pub fn new(n: usize) -> Result<Self> {
        if !(2..=250).contains(&n) {
            return Err(Error::InvalidParams(format!("grid side {n} out of range")));
        }
        Ok(Self {
            n,
            door: GridPos::new(n / 2, 0),
        })
    }

    pub fn door(&self) -> GridPos {
        self.door
    }

    /// Reward normalizer `max(10, 2(n - 1))`.
    pub fn reward_scale(&self) -> f64 {
        f64::max(10.0, 2.0 * (self.n as f64 - 1.0))
    }

    pub fn state(&self, guard: GridPos, invader: GridPos) -> GuardInvaderState {
        GuardInvaderState {
            guard,
            invader,
            door: self.door,
            grid_side: self.n as u8,
        }
    }

    fn resolve(&self, s: &GuardInvaderState, a: usize, o: usize) -> Result<(f64, bool, GuardInvaderState)> {
        let guard = s.guard.step(Move::from_index(a)?, self.n);
        let invader = s.invader.step(Move::from_index(o)?, self.n);
        let next = self.state(guard, invader);
        let raw = if invader == self.door {
            Some(INVASION_REWARD)
        } else if guard == invader {
            Some(invader.manhattan(self.door) as f64)
        } else {
            None
        };
        Ok(match raw {
            Some(r) => (r / self.reward_scale(), true, next),
            None => (0.0, false, next),
        })
    }
}

impl MarkovGame for GuardInvader {
    type State = GuardInvaderState;

    fn name(&self) -> &'static str {
        "guard-invader"
    }

    fn grid_side(&self) -> usize {
        self.n
    }

    fn feature_len(&self) -> usize {
        6
    }

    fn is_terminal(&self, s: &GuardInvaderState) -> bool {
        s.invader == s.door || s.guard == s.invader
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> GuardInvaderState {
        let cells = self.n * self.n;
        let door = self.door.index(self.n);
        let mut draw = |exclude: usize| loop {
            let c = rng.gen_range(0..cells);
            if c != door && c != exclude {
                return c;
            }
        };
        let g = draw(door);
        let i = draw(g);
        self.state(GridPos::from_index(g, self.n), GridPos::from_index(i, self.n))
    }

    fn step<R: Rng + ?Sized>(
        &self,
        s: &GuardInvaderState,
        a: usize,
        o: usize,
        _rng: &mut R,
    ) -> Result<Transition<GuardInvaderState>> {
        if self.is_terminal(s) {
            return Err(Error::SteppingTerminalState);
        }
        let (r, terminal, s_next) = self.resolve(s, a, o)?;
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

    fn encode_into(&self, s: &GuardInvaderState, out: &mut [f64]) {
        let k = (self.n - 1) as f64;
        for (i, p) in [s.guard, s.invader, s.door].into_iter().enumerate() {
            out[2 * i] = p.row as f64 / k;
            out[2 * i + 1] = p.col as f64 / k;
        }
    }

    fn joint_state_count(&self) -> usize {
        let cells = self.n * self.n;
        cells * cells
    }

    fn state_index(&self, s: &GuardInvaderState) -> usize {
        s.guard.index(self.n) * self.n * self.n + s.invader.index(self.n)
    }

    fn state_at(&self, index: usize) -> Option<GuardInvaderState> {
        let cells = self.n * self.n;
        (index < cells * cells).then(|| {
            self.state(
                GridPos::from_index(index / cells, self.n),
                GridPos::from_index(index % cells, self.n),
            )
        })
    }

    fn outcomes(
        &self,
        s: &GuardInvaderState,
        a: usize,
        o: usize,
    ) -> Result<Vec<(f64, f64, Option<GuardInvaderState>)>> {
        if self.is_terminal(s) {
            return Err(Error::SteppingTerminalState);
        }
        let (r, terminal, next) = self.resolve(s, a, o)?;
        Ok(vec![(1.0, r, (!terminal).then_some(next))])
    }
}
