//! TOML run configuration.
//!
//! ```toml
//! [env]
//! kind = "lbf"          # or "matrix" with `payoff = [[8, 3], [3, 0]]`
//! grid_w = 8
//!
//! [mixer]
//! kind = "cmq"          # or "vdn"
//! concepts = 16
//!
//! [agent]
//! hidden = 64
//!
//! [training]
//! lr = 0.0005
//! seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Every key is optional; absent keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunIoError;
use crate::agents::EpsilonSchedule;
use crate::env::{EnvConfig, LbfConfig, MatrixGame};
use crate::mixer::MixerKind;
use crate::training::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: Option<RawEnv>,
    mixer: Option<RawMixer>,
    agent: Option<RawAgent>,
    training: Option<RawTraining>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    kind: Option<String>,
    grid_w: Option<i64>,
    grid_h: Option<i64>,
    n_agents: Option<i64>,
    n_foods: Option<i64>,
    max_agent_level: Option<i64>,
    episode_limit: Option<i64>,
    view_range: Option<i64>,
    coop_penalty: Option<f64>,
    force_coop: Option<bool>,
    payoff: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMixer {
    kind: Option<String>,
    concepts: Option<i64>,
    embed: Option<i64>,
    attn: Option<i64>,
    bias_hidden: Option<i64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    hidden: Option<i64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    gamma: Option<f64>,
    lr: Option<f64>,
    rms_alpha: Option<f64>,
    rms_eps: Option<f64>,
    grad_clip: Option<f64>,
    batch_size: Option<i64>,
    buffer_episodes: Option<i64>,
    target_interval: Option<i64>,
    warmup_episodes: Option<i64>,
    epsilon_start: Option<f64>,
    epsilon_end: Option<f64>,
    epsilon_decay_steps: Option<i64>,
    p_tilde: Option<f64>,
    lambda_c: Option<f64>,
    eval_interval: Option<i64>,
    eval_episodes: Option<i64>,
    total_steps: Option<i64>,
    seeds: Option<Vec<i64>>,
}

fn range(key: &str, message: impl Into<String>) -> RunIoError {
    RunIoError::Range {
        key: key.to_string(),
        message: message.into(),
    }
}

fn count(key: &str, v: Option<i64>, default: usize, min: i64) -> Result<usize, RunIoError> {
    match v {
        None => Ok(default),
        Some(v) if v < min => Err(range(key, format!("{v} is below the minimum {min}"))),
        Some(v) => usize::try_from(v).map_err(|_| range(key, format!("{v} too large"))),
    }
}

fn real(key: &str, v: Option<f64>, default: f64, lo: f64, hi: f64) -> Result<f64, RunIoError> {
    let v = v.unwrap_or(default);
    if !v.is_finite() || v < lo || v > hi {
        return Err(range(key, format!("{v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

fn positive(key: &str, v: Option<f64>, default: f64) -> Result<f64, RunIoError> {
    let v = v.unwrap_or(default);
    if !v.is_finite() || v <= 0.0 {
        return Err(range(key, format!("{v} must be positive")));
    }
    Ok(v)
}

fn build_env(raw: RawEnv) -> Result<EnvConfig, RunIoError> {
    let kind = raw.kind.as_deref().unwrap_or("lbf");
    match kind {
        "lbf" => {
            if raw.payoff.is_some() {
                return Err(range("env.payoff", "only valid when env.kind = \"matrix\""));
            }
            let d = LbfConfig::default();
            let cfg = LbfConfig {
                grid_w: count("env.grid_w", raw.grid_w, d.grid_w, 4)?,
                grid_h: count("env.grid_h", raw.grid_h, d.grid_h, 4)?,
                n_agents: count("env.n_agents", raw.n_agents, d.n_agents, 1)?,
                n_foods: count("env.n_foods", raw.n_foods, d.n_foods, 1)?,
                max_agent_level: count(
                    "env.max_agent_level",
                    raw.max_agent_level,
                    d.max_agent_level as usize,
                    1,
                )?
                .try_into()
                .map_err(|_| range("env.max_agent_level", "too large"))?,
                episode_limit: count("env.episode_limit", raw.episode_limit, d.episode_limit, 1)?,
                view_range: count("env.view_range", raw.view_range, d.view_range, 0)?,
                coop_penalty: real("env.coop_penalty", raw.coop_penalty, d.coop_penalty, -1.0, 0.0)?,
                force_coop: raw.force_coop.unwrap_or(d.force_coop),
            };
            cfg.validate().map_err(|e| range("env", e.to_string()))?;
            Ok(EnvConfig::Lbf(cfg))
        }
        "matrix" => {
            let lbf_keys = [
                ("env.grid_w", raw.grid_w.is_some()),
                ("env.grid_h", raw.grid_h.is_some()),
                ("env.n_agents", raw.n_agents.is_some()),
                ("env.n_foods", raw.n_foods.is_some()),
                ("env.max_agent_level", raw.max_agent_level.is_some()),
                ("env.episode_limit", raw.episode_limit.is_some()),
                ("env.view_range", raw.view_range.is_some()),
                ("env.coop_penalty", raw.coop_penalty.is_some()),
                ("env.force_coop", raw.force_coop.is_some()),
            ];
            if let Some((key, _)) = lbf_keys.iter().find(|(_, set)| *set) {
                return Err(range(key, "not valid when env.kind = \"matrix\""));
            }
            let payoff = raw
                .payoff
                .ok_or_else(|| range("env.payoff", "required when env.kind = \"matrix\""))?;
            let game = MatrixGame::new(payoff).map_err(|e| range("env.payoff", e.to_string()))?;
            Ok(EnvConfig::Matrix(game))
        }
        other => Err(range("env.kind", format!("unknown kind {other:?}"))),
    }
}

fn build(raw: RawConfig) -> Result<RunConfig, RunIoError> {
    let env = build_env(raw.env.unwrap_or_default())?;

    let m = raw.mixer.unwrap_or_default();
    let a = raw.agent.unwrap_or_default();
    let dm = ModelConfig::default();
    let kind = match m.kind.as_deref() {
        None => dm.kind,
        Some(s) => s
            .parse::<MixerKind>()
            .map_err(|_| range("mixer.kind", format!("unknown kind {s:?}")))?,
    };
    let model = ModelConfig {
        kind,
        concepts: count("mixer.concepts", m.concepts, dm.concepts, 1)?,
        embed: count("mixer.embed", m.embed, dm.embed, 1)?,
        attn: count("mixer.attn", m.attn, dm.attn, 1)?,
        bias_hidden: count("mixer.bias_hidden", m.bias_hidden, dm.bias_hidden, 1)?,
        agent_hidden: count("agent.hidden", a.hidden, dm.agent_hidden, 1)?,
    };

    let t = raw.training.unwrap_or_default();
    let dt = TrainConfig::default();
    let de = dt.epsilon;
    let train = TrainConfig {
        gamma: real("training.gamma", t.gamma, dt.gamma, 0.0, 1.0)?,
        lr: positive("training.lr", t.lr, dt.lr)?,
        rms_alpha: real("training.rms_alpha", t.rms_alpha, dt.rms_alpha, 0.0, 0.999_999)?,
        rms_eps: positive("training.rms_eps", t.rms_eps, dt.rms_eps)?,
        grad_clip: positive("training.grad_clip", t.grad_clip, dt.grad_clip)?,
        batch_size: count("training.batch_size", t.batch_size, dt.batch_size, 1)?,
        buffer_episodes: count("training.buffer_episodes", t.buffer_episodes, dt.buffer_episodes, 1)?,
        target_interval: count("training.target_interval", t.target_interval, dt.target_interval as usize, 1)? as u64,
        warmup_episodes: count("training.warmup_episodes", t.warmup_episodes, dt.warmup_episodes as usize, 0)? as u64,
        epsilon: EpsilonSchedule {
            start: real("training.epsilon_start", t.epsilon_start, de.start, 0.0, 1.0)?,
            end: real("training.epsilon_end", t.epsilon_end, de.end, 0.0, 1.0)?,
            decay_steps: count("training.epsilon_decay_steps", t.epsilon_decay_steps, de.decay_steps as usize, 0)? as u64,
        },
        p_tilde: real("training.p_tilde", t.p_tilde, dt.p_tilde, 0.0, 1.0)?,
        lambda_c: real("training.lambda_c", t.lambda_c, dt.lambda_c, 0.0, f64::MAX)?,
        eval_interval: count("training.eval_interval", t.eval_interval, dt.eval_interval as usize, 1)? as u64,
        eval_episodes: count("training.eval_episodes", t.eval_episodes, dt.eval_episodes, 1)?,
        total_steps: count("training.total_steps", t.total_steps, dt.total_steps as usize, 1)? as u64,
    };
    if train.batch_size > train.buffer_episodes {
        return Err(range("training.batch_size", "larger than training.buffer_episodes"));
    }
    let seeds = match t.seeds {
        None => RunConfig::default().seeds,
        Some(v) => {
            if v.is_empty() {
                return Err(range("training.seeds", "must list at least one seed"));
            }
            v.into_iter()
                .map(|s| u64::try_from(s).map_err(|_| range("training.seeds", format!("{s} is negative"))))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(RunConfig {
        env,
        model,
        train,
        seeds,
    })
}

/// Parses and validates configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, RunIoError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| RunIoError::Parse(e.to_string()))?;
    build(raw)
}

pub fn load_config(path: &Path) -> Result<RunConfig, RunIoError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunIoError::io(path, e))?;
    parse_config(&text).map_err(|e| e.in_file(path))
}

fn as_i64(v: usize) -> i64 {
    i64::try_from(v).unwrap_or(i64::MAX)
}

/// Writes every field explicitly, so the output loads back to `cfg`.
pub fn config_to_toml(cfg: &RunConfig) -> Result<String, RunIoError> {
    let env = match &cfg.env {
        EnvConfig::Lbf(c) => RawEnv {
            kind: Some("lbf".into()),
            grid_w: Some(as_i64(c.grid_w)),
            grid_h: Some(as_i64(c.grid_h)),
            n_agents: Some(as_i64(c.n_agents)),
            n_foods: Some(as_i64(c.n_foods)),
            max_agent_level: Some(i64::from(c.max_agent_level)),
            episode_limit: Some(as_i64(c.episode_limit)),
            view_range: Some(as_i64(c.view_range)),
            coop_penalty: Some(c.coop_penalty),
            force_coop: Some(c.force_coop),
            payoff: None,
        },
        EnvConfig::Matrix(g) => RawEnv {
            kind: Some("matrix".into()),
            payoff: Some(g.payoff.clone()),
            ..RawEnv::default()
        },
    };
    let m = &cfg.model;
    let t = &cfg.train;
    let raw = RawConfig {
        env: Some(env),
        mixer: Some(RawMixer {
            kind: Some(m.kind.to_string()),
            concepts: Some(as_i64(m.concepts)),
            embed: Some(as_i64(m.embed)),
            attn: Some(as_i64(m.attn)),
            bias_hidden: Some(as_i64(m.bias_hidden)),
        }),
        agent: Some(RawAgent {
            hidden: Some(as_i64(m.agent_hidden)),
        }),
        training: Some(RawTraining {
            gamma: Some(t.gamma),
            lr: Some(t.lr),
            rms_alpha: Some(t.rms_alpha),
            rms_eps: Some(t.rms_eps),
            grad_clip: Some(t.grad_clip),
            batch_size: Some(as_i64(t.batch_size)),
            buffer_episodes: Some(as_i64(t.buffer_episodes)),
            target_interval: Some(t.target_interval as i64),
            warmup_episodes: Some(t.warmup_episodes as i64),
            epsilon_start: Some(t.epsilon.start),
            epsilon_end: Some(t.epsilon.end),
            epsilon_decay_steps: Some(t.epsilon.decay_steps as i64),
            p_tilde: Some(t.p_tilde),
            lambda_c: Some(t.lambda_c),
            eval_interval: Some(t.eval_interval as i64),
            eval_episodes: Some(as_i64(t.eval_episodes)),
            total_steps: Some(t.total_steps as i64),
            seeds: Some(cfg.seeds.iter().map(|&s| s as i64).collect()),
        }),
    };
    toml::to_string(&raw).map_err(|e| RunIoError::Parse(e.to_string()))
}
