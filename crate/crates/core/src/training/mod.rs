//! Replay, TD learning with target networks, concept supervision and
//! interventions during training, and the episode loop.

mod gradcheck;
mod inspect;
mod learner;
mod model;
mod optim;
mod replay;
mod rollout;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{pipeline_grad_check, TinyPipeline};
pub use inspect::{Decision, Inspector, StepView};
pub use learner::{
    intervention_mix, loss_graph, sample_overrides, td_targets, train_step, BatchLayout,
    LossNodes, StepStats,
};
pub use model::{Model, ModelConfig};
pub use optim::{clip_grad_norm, global_norm, OptimState};
pub use replay::{Episode, ReplayBuffer};
pub use rollout::{
    act_batch, collect_episode, concept_accuracy, evaluate, predict_concepts, Actor, EvalSummary,
};
pub use trainer::{eval_seeds, MetricsRow, RngState, Trainer, TrainerState};

use crate::agents::{AgentError, EpsilonSchedule};
use crate::autodiff::AutodiffError;
use crate::env::EnvError;
use crate::mixer::MixerError;
use crate::nets::NetError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("malformed episode: {0}")]
    MalformedEpisode(String),
    #[error("requested {requested} episodes but the buffer holds {available}")]
    InsufficientEpisodes { requested: usize, available: usize },
    #[error("non-finite loss caused by batch index {batch_index}: {detail}")]
    NonFiniteLoss { batch_index: usize, detail: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mixer(#[from] MixerError),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Net(e.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub buffer_episodes: usize,
    /// Episodes between target network copies.
    pub target_interval: u64,
    pub warmup_episodes: u64,
    pub epsilon: EpsilonSchedule,
    /// Probability of replacing a supervised concept by its label.
    pub p_tilde: f64,
    /// Weight of the concept cross-entropy term.
    pub lambda_c: f64,
    /// Environment steps between evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub total_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            batch_size: 32,
            buffer_episodes: 5000,
            target_interval: 200,
            warmup_episodes: 100,
            epsilon: EpsilonSchedule::default(),
            p_tilde: 0.25,
            lambda_c: 0.1,
            eval_interval: 2000,
            eval_episodes: 32,
            total_steps: 200_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.rms_alpha) || !(self.rms_eps > 0.0) {
            return bad("rmsprop alpha must lie in [0, 1) and eps be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        if self.batch_size == 0 || self.buffer_episodes < self.batch_size {
            return bad("need 1 <= batch_size <= buffer_episodes");
        }
        if self.target_interval == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("intervals and eval_episodes must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.p_tilde) {
            return bad("p_tilde must lie in [0, 1]");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return bad("lambda_c must be non-negative");
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return bad("epsilon endpoints must lie in [0, 1]");
        }
        Ok(())
    }
}
