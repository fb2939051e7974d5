pub mod error;
pub mod game;

pub use error::{Error, Result};
pub use game::{
    best_response_column, game_value, response_value, solve_matrix_game, GameSolution,
    MixedStrategy, PayoffMatrix,
};
pub mod env;
pub mod tabular;
pub mod linear;
pub mod deep;
