//! Acting in environments with the current parameters.

use rand::Rng;

use super::replay::Episode;
use super::{Model, TrainError};
use crate::agents::{agent_forward, encode_agent_input, greedy_action, select_action};
use crate::autodiff::{Tape, Tensor};
use crate::env::{Env, EnvConfig};
use crate::mixer::{concept_embeddings, concept_probs, MixerKind};
use crate::nets::ParamSet;

/// Recurrent state for a group of agents acting together.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub hidden: Vec<f64>,
    pub last: Vec<Option<usize>>,
}

impl Actor {
    pub fn new(model: &Model) -> Self {
        Self {
            hidden: vec![0.0; model.agent.n_agents * model.agent.hidden],
            last: vec![None; model.agent.n_agents],
        }
    }
}

/// Utilities for several actors at once. Each actor contributes `n` rows;
/// hidden states are advanced in place. Returns per-agent `q` rows.
pub fn act_batch(
    model: &Model,
    params: &ParamSet,
    actors: &mut [&mut Actor],
    obs: &[Vec<Vec<f64>>],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let cfg = &model.agent;
    let rows = actors.len() * cfg.n_agents;
    let mut x = Vec::with_capacity(rows * cfg.input_dim());
    let mut h = Vec::with_capacity(rows * cfg.hidden);
    for (actor, o) in actors.iter().zip(obs) {
        for i in 0..cfg.n_agents {
            encode_agent_input(cfg, i, &o[i], actor.last[i], &mut x);
        }
        h.extend_from_slice(&actor.hidden);
    }
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let xn = tape.constant(Tensor::matrix(rows, cfg.input_dim(), x)?);
    let hn = tape.constant(Tensor::matrix(rows, cfg.hidden, h)?);
    let (q, h) = agent_forward(&mut tape, &bound, cfg, xn, hn)?;
    let hv = tape.value(h).data();
    let per = cfg.n_agents * cfg.hidden;
    for (j, actor) in actors.iter_mut().enumerate() {
        actor.hidden.copy_from_slice(&hv[j * per..(j + 1) * per]);
    }
    let qv = tape.value(q);
    Ok((0..rows).map(|r| qv.row(r).to_vec()).collect())
}

/// Runs one ε-greedy episode from the environment's current state.
pub fn collect_episode(
    model: &Model,
    params: &ParamSet,
    env: &mut Env,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<Episode, TrainError> {
    let info = env.info();
    let mut ep = Episode::empty(
        info.n_agents,
        info.n_actions,
        info.obs_dim,
        info.state_dim,
        info.n_concepts,
    );
    let mut actor = Actor::new(model);
    loop {
        let obs = env.observations();
        let avail = env.avail_actions();
        ep.push_view(&obs, &env.state(), &env.concept_labels(), &avail);
        if env.is_done() {
            break;
        }
        let q = act_batch(model, params, &mut [&mut actor], &[obs])?;
        let actions = q
            .iter()
            .zip(&avail)
            .map(|(q, m)| select_action(q, eps, rng, m))
            .collect::<Result<Vec<_>, _>>()?;
        let tr = env.step(&actions)?;
        actor.last = actions.iter().map(|&a| Some(a)).collect();
        ep.push_transition(&actions, tr.reward, tr.done);
    }
    Ok(ep)
}

/// Outcome of a set of greedy test episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    /// Every visited global state, including terminal ones.
    pub states: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
}

/// Greedy episodes, one per seed, advanced in lockstep.
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    env_cfg: &EnvConfig,
    seeds: &[u64],
) -> Result<EvalSummary, TrainError> {
    let mut envs = seeds
        .iter()
        .map(|&s| Env::new(env_cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut actors: Vec<Actor> = envs.iter().map(|_| Actor::new(model)).collect();
    let mut returns = vec![0.0; envs.len()];
    let mut states = Vec::new();
    let mut labels = Vec::new();
    for env in &envs {
        states.push(env.state());
        labels.push(env.concept_labels());
    }
    loop {
        let active: Vec<usize> = (0..envs.len()).filter(|&j| !envs[j].is_done()).collect();
        if active.is_empty() {
            break;
        }
        let obs: Vec<_> = active.iter().map(|&j| envs[j].observations()).collect();
        let mut group: Vec<&mut Actor> = actors
            .iter_mut()
            .enumerate()
            .filter(|(j, _)| !envs[*j].is_done())
            .map(|(_, a)| a)
            .collect();
        let q = act_batch(model, params, &mut group, &obs)?;
        let n = model.agent.n_agents;
        for (slot, &j) in active.iter().enumerate() {
            let avail = envs[j].avail_actions();
            let actions = (0..n)
                .map(|i| greedy_action(&q[slot * n + i], &avail[i]))
                .collect::<Result<Vec<_>, _>>()?;
            let tr = envs[j].step(&actions)?;
            group[slot].last = actions.iter().map(|&a| Some(a)).collect();
            returns[j] += tr.reward;
            states.push(envs[j].state());
            labels.push(envs[j].concept_labels());
        }
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    Ok(EvalSummary {
        returns,
        mean_return,
        states,
        labels,
    })
}

/// Predicted concept probabilities `p̂` for each state (no interventions).
pub fn predict_concepts(
    model: &Model,
    params: &ParamSet,
    states: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, TrainError> {
    if model.kind != MixerKind::Cmq || states.is_empty() {
        return Ok(vec![Vec::new(); states.len()]);
    }
    let k = model.mixer.concepts;
    let dim = model.mixer.state_dim;
    let flat: Vec<f64> = states.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let s = tape.constant(Tensor::matrix(states.len(), dim, flat)?);
    let (pos, neg) = concept_embeddings(&mut tape, &bound, &model.mixer, s)?;
    let (_, p) = concept_probs(&mut tape, &bound, pos, neg)?;
    let p = tape.value(p).data();
    Ok(p.chunks(k).map(<[f64]>::to_vec).collect())
}

/// Fraction of `(state, supervised concept)` pairs where thresholding `p̂`
/// at 0.5 reproduces the label.
pub fn concept_accuracy(model: &Model, probs: &[Vec<f64>], labels: &[Vec<f64>]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, c) in probs.iter().zip(labels) {
        for k in 0..model.supervised.min(p.len()).min(c.len()) {
            total += 1;
            if (p[k] > 0.5) == (c[k] > 0.5) {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
