//! Shared recurrent utility network and ε-greedy action selection.
//!
//! Every agent runs the same parameters; its input is the local
//! observation followed by a one-hot of its previous action and a one-hot
//! of its own index. The network is `dense(relu) -> GRU -> dense`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, AutodiffError, NodeId, Tape, Tensor};
use crate::nets::{
    dense_forward, gru_step, init_params, BoundParams, DenseSpec, GruSpec, LayerSpec, NetError,
    NetSpec, ParamSet,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("no available action")]
    NoAvailableAction,
    #[error("q has {q} entries but the mask has {mask}")]
    MaskLength { q: usize, mask: usize },
    #[error("epsilon {0} outside [0, 1]")]
    InvalidEpsilon(f64),
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<AutodiffError> for AgentError {
    fn from(e: AutodiffError) -> Self {
        AgentError::Net(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub hidden: usize,
}

impl AgentConfig {
    pub fn new(n_agents: usize, n_actions: usize, obs_dim: usize) -> Self {
        Self {
            n_agents,
            n_actions,
            obs_dim,
            hidden: 64,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    fn fc1(&self) -> DenseSpec {
        DenseSpec {
            name: "agent.fc1".into(),
            input: self.input_dim(),
            output: self.hidden,
            activation: Activation::Relu,
        }
    }

    fn gru(&self) -> GruSpec {
        GruSpec {
            name: "agent.gru".into(),
            input: self.hidden,
            hidden: self.hidden,
        }
    }

    fn fc2(&self) -> DenseSpec {
        DenseSpec {
            name: "agent.fc2".into(),
            input: self.hidden,
            output: self.n_actions,
            activation: Activation::Identity,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            layers: vec![
                LayerSpec::Dense(self.fc1()),
                LayerSpec::Gru(self.gru()),
                LayerSpec::Dense(self.fc2()),
            ],
        }
    }
}

pub fn init_agent_params(cfg: &AgentConfig, seed: u64) -> Result<ParamSet, AgentError> {
    if cfg.n_agents == 0 || cfg.n_actions == 0 || cfg.obs_dim == 0 {
        return Err(AgentError::InvalidConfig(format!("{cfg:?}")));
    }
    Ok(init_params(&cfg.net_spec(), seed)?)
}

/// Writes the network input for agent `i` into `out`.
///
/// `last_action` is `None` at the first step of an episode.
pub fn encode_agent_input(
    cfg: &AgentConfig,
    agent: usize,
    obs: &[f64],
    last_action: Option<usize>,
    out: &mut Vec<f64>,
) {
    out.extend_from_slice(obs);
    let start = out.len();
    out.resize(start + cfg.n_actions + cfg.n_agents, 0.0);
    if let Some(a) = last_action {
        out[start + a] = 1.0;
    }
    out[start + cfg.n_actions + agent] = 1.0;
}

/// Runs the network on a batch of rows.
///
/// `x` is `[rows × input_dim]` and `h_prev` is `[rows × hidden]`; returns
/// the utilities `[rows × n_actions]` and the next hidden state.
pub fn agent_forward(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &AgentConfig,
    x: NodeId,
    h_prev: NodeId,
) -> Result<(NodeId, NodeId), AgentError> {
    let xv = tape.value(x);
    if xv.cols() != cfg.input_dim() {
        return Err(AutodiffError::ShapeMismatch {
            op: "agent.input",
            expected: vec![xv.rows(), cfg.input_dim()],
            actual: xv.shape().to_vec(),
        }
        .into());
    }
    let e = dense_forward(tape, params, &cfg.fc1(), x)?;
    let h = gru_step(tape, params, &cfg.gru(), e, h_prev)?;
    let q = dense_forward(tape, params, &cfg.fc2(), h)?;
    Ok((q, h))
}

/// Single-agent convenience wrapper: `(q, h)` for one encoded input.
pub fn agent_q(
    params: &ParamSet,
    cfg: &AgentConfig,
    input: &Tensor,
    h_prev: &Tensor,
) -> Result<(Tensor, Tensor), AgentError> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let x = tape.constant(input.reshaped(&[1, input.numel()])?);
    let h = tape.constant(h_prev.reshaped(&[1, h_prev.numel()])?);
    let (q, h) = agent_forward(&mut tape, &bound, cfg, x, h)?;
    Ok((
        Tensor::vector(tape.value(q).data().to_vec()),
        Tensor::vector(tape.value(h).data().to_vec()),
    ))
}

/// Index of the largest available entry; ties go to the lowest index.
pub fn greedy_action(q: &[f64], avail: &[bool]) -> Result<usize, AgentError> {
    if q.len() != avail.len() {
        return Err(AgentError::MaskLength {
            q: q.len(),
            mask: avail.len(),
        });
    }
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.map_or(true, |b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or(AgentError::NoAvailableAction)
}

/// ε-greedy choice restricted to available actions.
pub fn select_action(
    q: &[f64],
    eps: f64,
    rng: &mut impl Rng,
    avail: &[bool],
) -> Result<usize, AgentError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(AgentError::InvalidEpsilon(eps));
    }
    let greedy = greedy_action(q, avail)?;
    if rng.gen::<f64>() < eps {
        let n = avail.iter().filter(|&&a| a).count();
        let pick = rng.gen_range(0..n);
        return Ok(avail
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .nth(pick)
            .map(|(i, _)| i)
            .expect("pick < n"));
    }
    Ok(greedy)
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}
