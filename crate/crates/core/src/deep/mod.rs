//! Deep relaxed minimax Q-learning with online, target and evaluation networks.

mod agent;
mod mlp;
mod optim;
mod replay;

pub use agent::{
    compute_target, converged_mean, opponent_action, select_action, train, train_baseline, AlgoConfig, LogRow,
    TargetRule, Trainer, TrainingLog,
};
pub use mlp::{Gradients, Layer, Mlp, WeightManifest};
pub use optim::{Optimizer, OptimizerKind};
pub use replay::{ReplayBuffer, DEFAULT_REPLAY_CAPACITY};
