//! Simultaneous-move two-player zero-sum grid games.
//!
//! Rewards are stored from the maximizer's perspective only; the minimizer
//! receives the negation.

mod guard_invader;
mod model;
mod soccer;

use std::fmt::Debug;
use std::hash::Hash;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub use guard_invader::{GuardInvader, GuardInvaderState};
pub use model::{enumerate_model, MarkovGameModel, DEFAULT_STATE_CAP};
pub use soccer::{Soccer, SoccerState};

/// Number of moves available to each player on the grid.
pub const N_MOVES: usize = 5;

/// Episode length cap shared by both games.
pub const DEFAULT_EPISODE_CAP: usize = 500;

/// Grid moves; `Up`/`Down`/`Left`/`Right`/`Stay` double as N/S/W/E/stand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Move {
    pub const ALL: [Move; N_MOVES] = [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or(Error::InvalidAction(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct GridPos {
    pub row: u8,
    pub col: u8,
}

impl GridPos {
    pub fn new(row: usize, col: usize) -> Self {
        Self {
            row: row as u8,
            col: col as u8,
        }
    }

    pub fn on_grid(self, n: usize) -> bool {
        (self.row as usize) < n && (self.col as usize) < n
    }

    /// Applies a move; moves that would leave the grid become `Stay`.
    pub fn step(self, mv: Move, n: usize) -> Self {
        let (r, c) = (self.row as usize, self.col as usize);
        let (r, c) = match mv {
            Move::Up if r > 0 => (r - 1, c),
            Move::Down if r + 1 < n => (r + 1, c),
            Move::Left if c > 0 => (r, c - 1),
            Move::Right if c + 1 < n => (r, c + 1),
            _ => (r, c),
        };
        Self::new(r, c)
    }

    pub fn manhattan(self, other: Self) -> usize {
        (self.row as isize - other.row as isize).unsigned_abs()
            + (self.col as isize - other.col as isize).unsigned_abs()
    }

    pub fn index(self, n: usize) -> usize {
        self.row as usize * n + self.col as usize
    }

    pub fn from_index(i: usize, n: usize) -> Self {
        Self::new(i / n, i % n)
    }
}

/// One `(s, a, o, r, s', terminal)` record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transition<S> {
    pub s: S,
    pub a: usize,
    pub o: usize,
    pub r: f64,
    pub s_next: S,
    /// The game ended; `s_next` must not be bootstrapped from.
    pub terminal: bool,
    /// The episode hit its length cap. Bootstrapping still applies.
    pub truncated: bool,
}

/// A finite two-player zero-sum game with a tabular enumeration.
pub trait MarkovGame: Send + Sync {
    type State: Clone + Eq + Hash + Debug + Serialize + Send + Sync;

    fn name(&self) -> &'static str;
    fn grid_side(&self) -> usize;
    fn n_max_actions(&self) -> usize {
        N_MOVES
    }
    fn n_min_actions(&self) -> usize {
        N_MOVES
    }
    fn feature_len(&self) -> usize;

    fn is_terminal(&self, s: &Self::State) -> bool;
    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn step<R: Rng + ?Sized>(
        &self,
        s: &Self::State,
        a: usize,
        o: usize,
        rng: &mut R,
    ) -> Result<Transition<Self::State>>;
    fn encode_into(&self, s: &Self::State, out: &mut [f64]);

    fn encode(&self, s: &Self::State) -> Vec<f64> {
        let mut v = vec![0.0; self.feature_len()];
        self.encode_into(s, &mut v);
        v
    }

    /// Size of the joint configuration space, valid or not.
    fn joint_state_count(&self) -> usize;
    fn state_index(&self, s: &Self::State) -> usize;
    /// `None` for index values that encode no valid configuration.
    fn state_at(&self, index: usize) -> Option<Self::State>;
    /// Exact outcome distribution `(probability, reward, next state)` of a
    /// non-terminal step. Next-state `None` means the game ended.
    fn outcomes(
        &self,
        s: &Self::State,
        a: usize,
        o: usize,
    ) -> Result<Vec<(f64, f64, Option<Self::State>)>>;
}

/// Which benchmark game to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    GuardInvader,
    Soccer,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::GuardInvader => "guard-invader",
            EnvKind::Soccer => "soccer",
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guard-invader" | "gi" => Ok(EnvKind::GuardInvader),
            "soccer" => Ok(EnvKind::Soccer),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

/// Tracks one episode and applies the length cap.
#[derive(Debug, Clone)]
pub struct EpisodeRunner<G: MarkovGame> {
    pub state: G::State,
    pub steps: usize,
    pub episode: usize,
    pub cap: usize,
}

impl<G: MarkovGame> EpisodeRunner<G> {
    pub fn new<R: Rng + ?Sized>(game: &G, cap: usize, rng: &mut R) -> Self {
        Self {
            state: game.initial_state(rng),
            steps: 0,
            episode: 0,
            cap,
        }
    }

    /// Steps the game, resetting the episode when it ends or is truncated.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        game: &G,
        a: usize,
        o: usize,
        rng: &mut R,
    ) -> Result<Transition<G::State>> {
        let mut tr = game.step(&self.state, a, o, rng)?;
        self.steps += 1;
        if !tr.terminal && self.steps >= self.cap {
            tr.truncated = true;
        }
        if tr.terminal || tr.truncated {
            self.state = game.initial_state(rng);
            self.steps = 0;
            self.episode += 1;
        } else {
            self.state = tr.s_next.clone();
        }
        Ok(tr)
    }
}
