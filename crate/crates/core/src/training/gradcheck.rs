//! Finite-difference check of the complete training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::learner::{loss_graph, sample_overrides, td_targets};
use super::replay::Episode;
use super::{Model, ModelConfig, TrainError};
use crate::autodiff::{grad_check, GradCheckReport};
use crate::env::EnvInfo;
use crate::mixer::MixerKind;

/// Shape of a randomly drawn pipeline check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyPipeline {
    pub agents: usize,
    pub concepts: usize,
    pub embed: usize,
}

impl Default for TinyPipeline {
    fn default() -> Self {
        Self {
            agents: 3,
            concepts: 4,
            embed: 8,
        }
    }
}

/// Draws random tiny dimensions, parameters and a two-episode batch from
/// `seed`, then checks the gradient of the full loss (agents, concept
/// mixer, TD term, concept term, random label overrides).
pub fn pipeline_grad_check(
    shape: TinyPipeline,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let info = EnvInfo {
        n_agents: shape.agents,
        n_actions: rng.gen_range(2..=4),
        obs_dim: rng.gen_range(2..=4),
        state_dim: rng.gen_range(3..=5),
        n_concepts: rng.gen_range(1..=shape.concepts),
        episode_limit: 3,
    };
    let cfg = ModelConfig {
        kind: MixerKind::Cmq,
        concepts: shape.concepts,
        embed: shape.embed,
        attn: rng.gen_range(3..=6),
        bias_hidden: rng.gen_range(3..=6),
        agent_hidden: rng.gen_range(3..=6),
    };
    let model = Model::new(&cfg, &info)?;
    let mut params = model.init_params(seed)?;
    for (_, t) in params.iter_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let episodes: Vec<Episode> = [(2, true), (3, false)]
        .iter()
        .map(|&(len, term)| random_episode(&info, &mut rng, len, term))
        .collect();
    let batch: Vec<&Episode> = episodes.iter().collect();
    let y = td_targets(&model, &params, &batch, 0.99)?;
    let overrides = sample_overrides(&model, &batch, 0.5, &mut rng);
    let report = grad_check(
        |tape, bound| loss_graph(tape, bound, &model, &batch, &y, Some(&overrides), 0.1).map(|n| n.total),
        &params,
        eps,
    )?;
    Ok(report)
}

fn random_episode(info: &EnvInfo, rng: &mut ChaCha8Rng, len: usize, terminated: bool) -> Episode {
    let n = info.n_agents;
    let mut e = Episode::empty(n, info.n_actions, info.obs_dim, info.state_dim, info.n_concepts);
    let avail = vec![vec![true; info.n_actions]; n];
    for t in 0..=len {
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..info.obs_dim).map(|_| rng.gen()).collect())
            .collect();
        let s: Vec<f64> = (0..info.state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..info.n_concepts)
            .map(|_| f64::from(rng.gen_range(0..2u8)))
            .collect();
        e.push_view(&obs, &s, &c, &avail);
        if t < len {
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..info.n_actions)).collect();
            e.push_transition(&a, rng.gen_range(-1.0..1.0), terminated && t + 1 == len);
        }
    }
    e
}
