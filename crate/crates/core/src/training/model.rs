use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::agents::{init_agent_params, AgentConfig};
use crate::env::EnvInfo;
use crate::mixer::{init_mixer_params, MixerConfig, MixerKind};
use crate::nets::ParamSet;

/// Architecture choices independent of the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: MixerKind,
    pub concepts: usize,
    pub embed: usize,
    pub attn: usize,
    pub bias_hidden: usize,
    pub agent_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: MixerKind::Cmq,
            concepts: 16,
            embed: 64,
            attn: 64,
            bias_hidden: 32,
            agent_hidden: 64,
        }
    }
}

/// Agent network plus mixer, sized for a particular environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub kind: MixerKind,
    pub agent: AgentConfig,
    pub mixer: MixerConfig,
    /// Leading concepts that receive ground-truth labels.
    pub supervised: usize,
}

impl Model {
    pub fn new(cfg: &ModelConfig, info: &EnvInfo) -> Result<Self, TrainError> {
        let agent = AgentConfig {
            hidden: cfg.agent_hidden,
            ..AgentConfig::new(info.n_agents, info.n_actions, info.obs_dim)
        };
        let mixer = MixerConfig {
            concepts: cfg.concepts,
            embed: cfg.embed,
            attn: cfg.attn,
            bias_hidden: cfg.bias_hidden,
            ..MixerConfig::new(info.n_agents, info.state_dim)
        };
        if cfg.agent_hidden == 0 {
            return Err(TrainError::InvalidConfig("agent_hidden must be at least 1".into()));
        }
        if cfg.kind == MixerKind::Cmq {
            mixer.validate()?;
        }
        let supervised = match cfg.kind {
            MixerKind::Cmq => info.n_concepts.min(cfg.concepts),
            MixerKind::Vdn => 0,
        };
        Ok(Self {
            kind: cfg.kind,
            agent,
            mixer,
            supervised,
        })
    }

    /// Fresh parameters; agent and mixer draw from separate seeds.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet, TrainError> {
        let mut p = init_agent_params(&self.agent, seed)?;
        if self.kind == MixerKind::Cmq {
            p.merge(init_mixer_params(&self.mixer, seed ^ 0x6d69_7865_7200_0000)?)?;
        }
        Ok(p)
    }
}
