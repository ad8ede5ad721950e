//! PPO search over control-point placements.

mod env;
pub mod nn;
pub mod ppo;

use thiserror::Error;

pub use env::{extract_movements, BanditEnv, ClipMovements, OpcEnv, OpcEnvConfig, PointEncoder};
pub use nn::{policy_forward_count, ActorCritic, Adam, Mlp};
pub use ppo::{discounted_returns, gae, ppo_losses, train, PolicyCheckpoint, PpoConfig, PpoLosses, Sample, UpdateStats};

use crate::opc::OpcError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("environment: {0}")]
    Env(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Opc(#[from] OpcError),
    #[error(transparent)]
    Features(#[from] crate::features::FeatureError),
}

/// What the agent sees: the policy input and a (possibly richer) critic input.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

/// A set of episodes that can be replayed from scratch by index.
pub trait Environment: Sync {
    fn policy_dim(&self) -> usize;
    fn value_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn num_episodes(&self) -> usize;
    fn start(&self, episode: usize) -> Result<Box<dyn Episode + '_>, RlError>;
}

pub trait Episode: Send {
    fn observe(&self) -> Observation;
    fn step(&mut self, action: usize) -> Result<StepOutcome, RlError>;
}
