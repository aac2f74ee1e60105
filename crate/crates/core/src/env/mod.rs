//! Seeded cooperative environments and their ground-truth concept labels.
//!
//! [`lbf`] holds the pure foraging dynamics; [`Env`] wraps either a
//! foraging world or a one-step matrix game behind the small interface the
//! rollout code needs.

pub mod concepts;
pub mod lbf;
pub mod matrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use concepts::{lbf_concept_labels, LBF_CONCEPTS, LBF_CONCEPT_NAMES};
pub use lbf::{
    encode_state, lbf_observe, lbf_reset, lbf_step, Action, AgentCell, FoodCell, JointObservation,
    LbfConfig, LbfState, LbfStep,
};
pub use matrix::{matrix_game_payoff, MatrixGame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("grid has {cells} cells but {needed} entities must be placed")]
    GridTooSmall { needed: usize, cells: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("expected {expected} actions, got {actual}")]
    WrongActionCount { expected: usize, actual: usize },
    #[error("episode already finished")]
    EpisodeOver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvConfig {
    Lbf(LbfConfig),
    Matrix(MatrixGame),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Lbf(LbfConfig::default())
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::Lbf(c) => c.validate(),
            EnvConfig::Matrix(g) => g.validate(),
        }
    }

    pub fn info(&self) -> EnvInfo {
        match self {
            EnvConfig::Lbf(c) => EnvInfo {
                n_agents: c.n_agents,
                n_actions: Action::ALL.len(),
                obs_dim: c.obs_dim(),
                state_dim: c.state_dim(),
                n_concepts: LBF_CONCEPTS,
                episode_limit: c.episode_limit,
            },
            EnvConfig::Matrix(g) => EnvInfo {
                n_agents: 2,
                n_actions: g.n_actions(),
                obs_dim: 1,
                state_dim: 1,
                n_concepts: 0,
                episode_limit: 1,
            },
        }
    }
}

/// Static dimensions of an environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    /// Number of ground-truth concept labels (0 when unlabeled).
    pub n_concepts: usize,
    pub episode_limit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
}

/// A live environment instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Lbf {
        cfg: LbfConfig,
        state: LbfState,
        obs: JointObservation,
    },
    Matrix {
        game: MatrixGame,
        done: bool,
    },
}

impl Env {
    /// Builds the environment and resets it with `seed`.
    pub fn new(cfg: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(match cfg {
            EnvConfig::Lbf(c) => {
                let (state, obs) = lbf_reset(c, seed)?;
                Env::Lbf {
                    cfg: c.clone(),
                    state,
                    obs,
                }
            }
            EnvConfig::Matrix(g) => Env::Matrix {
                game: g.clone(),
                done: false,
            },
        })
    }

    pub fn config(&self) -> EnvConfig {
        match self {
            Env::Lbf { cfg, .. } => EnvConfig::Lbf(cfg.clone()),
            Env::Matrix { game, .. } => EnvConfig::Matrix(game.clone()),
        }
    }

    pub fn info(&self) -> EnvInfo {
        self.config().info()
    }

    pub fn reset(&mut self, seed: u64) -> Result<(), EnvError> {
        match self {
            Env::Lbf { cfg, state, obs } => {
                (*state, *obs) = lbf_reset(cfg, seed)?;
            }
            Env::Matrix { done, .. } => *done = false,
        }
        Ok(())
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<Transition, EnvError> {
        match self {
            Env::Lbf { cfg, state, obs } => {
                let out = lbf_step(cfg, state, actions)?;
                *state = out.state;
                *obs = out.obs;
                Ok(Transition {
                    reward: out.reward,
                    done: out.done,
                })
            }
            Env::Matrix { game, done } => {
                if *done {
                    return Err(EnvError::EpisodeOver);
                }
                let reward = matrix_game_payoff(game, actions)?;
                *done = true;
                Ok(Transition { reward, done: true })
            }
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::Lbf { cfg, state, .. } => state.is_done(cfg),
            Env::Matrix { done, .. } => *done,
        }
    }

    pub fn observations(&self) -> Vec<Vec<f64>> {
        match self {
            Env::Lbf { obs, .. } => obs.agents.clone(),
            Env::Matrix { .. } => vec![vec![1.0]; 2],
        }
    }

    pub fn state(&self) -> Vec<f64> {
        match self {
            Env::Lbf { cfg, state, .. } => encode_state(cfg, state),
            Env::Matrix { .. } => vec![1.0],
        }
    }

    pub fn concept_labels(&self) -> Vec<f64> {
        match self {
            Env::Lbf { state, .. } => lbf_concept_labels(state).to_vec(),
            Env::Matrix { .. } => Vec::new(),
        }
    }

    /// Per-agent availability mask; every action is always available here.
    pub fn avail_actions(&self) -> Vec<Vec<bool>> {
        let info = self.info();
        vec![vec![true; info.n_actions]; info.n_agents]
    }

    pub fn lbf_state(&self) -> Option<&LbfState> {
        match self {
            Env::Lbf { state, .. } => Some(state),
            Env::Matrix { .. } => None,
        }
    }
}
