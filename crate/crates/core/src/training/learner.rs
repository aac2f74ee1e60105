//! Batched TD targets, the training loss and one optimizer step.

use std::collections::BTreeMap;

use rand::Rng;

use super::optim::{clip_grad_norm, OptimState};
use super::replay::Episode;
use super::{Model, TrainConfig, TrainError};
use crate::agents::{agent_forward, encode_agent_input, greedy_action};
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::mixer::{mix, vdn_mix, MixerKind, RowOverrides};
use crate::nets::{BoundParams, ParamSet};

/// Time-major padding of a batch: row `t·B + b` is step `t` of episode `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLayout {
    pub steps: usize,
    pub batch: usize,
    /// 1 for real transitions, 0 for padding.
    pub mask: Vec<f64>,
    pub rewards: Vec<f64>,
    /// 1 where the transition ends the episode.
    pub done: Vec<f64>,
}

impl BatchLayout {
    pub fn new(batch: &[&Episode]) -> Self {
        let steps = batch.iter().map(|e| e.len).max().unwrap_or(0);
        let b = batch.len();
        let mut layout = Self {
            steps,
            batch: b,
            mask: vec![0.0; steps * b],
            rewards: vec![0.0; steps * b],
            done: vec![0.0; steps * b],
        };
        for (j, e) in batch.iter().enumerate() {
            for t in 0..e.len {
                let r = t * b + j;
                layout.mask[r] = 1.0;
                layout.rewards[r] = e.rewards[t];
                if t + 1 == e.len && e.terminated {
                    layout.done[r] = 1.0;
                }
            }
        }
        layout
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    pub fn valid(&self) -> f64 {
        self.mask.iter().sum()
    }
}

/// Agent utilities at steps `0..steps`, each `[B·n × |A|]`.
fn unroll(
    tape: &mut Tape,
    params: &BoundParams,
    model: &Model,
    batch: &[&Episode],
    steps: usize,
) -> Result<Vec<NodeId>, TrainError> {
    let cfg = &model.agent;
    let n = cfg.n_agents;
    let rows = batch.len() * n;
    let mut h = tape.constant(Tensor::zeros(&[rows, cfg.hidden]));
    let mut out = Vec::with_capacity(steps);
    let zeros = vec![0.0; cfg.obs_dim];
    for t in 0..steps {
        let mut x = Vec::with_capacity(rows * cfg.input_dim());
        for e in batch {
            for i in 0..n {
                let (obs, last) = if t <= e.len {
                    let last = (t > 0).then(|| e.action_at(t - 1, i));
                    (e.obs_at(t, i), last)
                } else {
                    (zeros.as_slice(), None)
                };
                encode_agent_input(cfg, i, obs, last, &mut x);
            }
        }
        let x = tape.constant(Tensor::matrix(rows, cfg.input_dim(), x)?);
        let (q, h_next) = agent_forward(tape, params, cfg, x, h)?;
        out.push(q);
        h = h_next;
    }
    Ok(out)
}

fn states_matrix(batch: &[&Episode], steps: std::ops::Range<usize>, dim: usize) -> Vec<f64> {
    let mut s = Vec::with_capacity(steps.len() * batch.len() * dim);
    for t in steps {
        for e in batch {
            if t <= e.len {
                s.extend_from_slice(e.state_at(t));
            } else {
                s.extend(std::iter::repeat(0.0).take(dim));
            }
        }
    }
    s
}

fn mixed_total(
    tape: &mut Tape,
    params: &BoundParams,
    model: &Model,
    q: NodeId,
    s: NodeId,
    overrides: Option<&RowOverrides>,
) -> Result<(NodeId, Option<NodeId>), TrainError> {
    Ok(match model.kind {
        MixerKind::Vdn => (vdn_mix(tape, q)?, None),
        MixerKind::Cmq => {
            let nodes = mix(tape, params, &model.mixer, q, s, overrides)?;
            (nodes.q_tot, Some(nodes.p_logit))
        }
    })
}

/// `y = r + γ (1 - done) Q_tot(s', argmax-per-agent q'; θ⁻)` for every row
/// of the layout; padded rows get 0.
pub fn td_targets(
    model: &Model,
    target: &ParamSet,
    batch: &[&Episode],
    gamma: f64,
) -> Result<Vec<f64>, TrainError> {
    let layout = BatchLayout::new(batch);
    let (steps, b, n) = (layout.steps, layout.batch, model.agent.n_agents);
    let mut tape = Tape::new();
    let bound = target.bind_frozen(&mut tape);
    let qs = unroll(&mut tape, &bound, model, batch, steps + 1)?;

    let mut q_next = Vec::with_capacity(steps * b * n);
    for (t, &qt) in qs.iter().enumerate().skip(1) {
        let v = tape.value(qt);
        for (j, e) in batch.iter().enumerate() {
            for i in 0..n {
                let row = v.row(j * n + i);
                if t <= e.len {
                    let a = greedy_action(row, e.avail_at(t, i))?;
                    q_next.push(row[a]);
                } else {
                    q_next.push(0.0);
                }
            }
        }
    }
    let q_next = tape.constant(Tensor::matrix(steps * b, n, q_next)?);
    let s_next = states_matrix(batch, 1..steps + 1, model.mixer.state_dim);
    let s_next = tape.constant(Tensor::matrix(steps * b, model.mixer.state_dim, s_next)?);
    let (q_tot, _) = mixed_total(&mut tape, &bound, model, q_next, s_next, None)?;
    let boot = tape.value(q_tot).data();
    Ok((0..layout.rows())
        .map(|r| {
            if layout.mask[r] == 0.0 {
                0.0
            } else {
                layout.rewards[r] + gamma * (1.0 - layout.done[r]) * boot[r]
            }
        })
        .collect())
}

/// Replaces each supervised `p̂_k` by its label with probability `p_tilde`.
pub fn intervention_mix(
    p_hat: &[f64],
    labels: &[f64],
    p_tilde: f64,
    rng: &mut impl Rng,
) -> Vec<f64> {
    p_hat
        .iter()
        .enumerate()
        .map(|(k, &p)| match labels.get(k) {
            Some(&c) if rng.gen::<f64>() < p_tilde => c,
            _ => p,
        })
        .collect()
}

/// Random label overrides for every valid row and supervised concept.
pub fn sample_overrides(
    model: &Model,
    batch: &[&Episode],
    p_tilde: f64,
    rng: &mut impl Rng,
) -> RowOverrides {
    let layout = BatchLayout::new(batch);
    let k = model.mixer.concepts;
    let mut o = RowOverrides::none(layout.rows(), k);
    if p_tilde <= 0.0 {
        return o;
    }
    for t in 0..layout.steps {
        for (j, e) in batch.iter().enumerate() {
            if t >= e.len {
                continue;
            }
            let labels = e.concepts_at(t);
            for (c, &label) in labels.iter().enumerate().take(model.supervised) {
                if rng.gen::<f64>() < p_tilde {
                    o.force((t * layout.batch + j) * k + c, label);
                }
            }
        }
    }
    o
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub td: NodeId,
    pub concept: Option<NodeId>,
    pub q_tot: NodeId,
}

/// Builds `mean_valid (Q_tot - y)² + λ_c · mean BCE(p̂, c)` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn loss_graph(
    tape: &mut Tape,
    params: &BoundParams,
    model: &Model,
    batch: &[&Episode],
    y: &[f64],
    overrides: Option<&RowOverrides>,
    lambda_c: f64,
) -> Result<LossNodes, TrainError> {
    let layout = BatchLayout::new(batch);
    let (steps, b, n) = (layout.steps, layout.batch, model.agent.n_agents);
    let rows = layout.rows();
    if y.len() != rows {
        return Err(TrainError::InvalidConfig(format!(
            "{} targets for {rows} rows",
            y.len()
        )));
    }
    let qs = unroll(tape, params, model, batch, steps)?;
    let mut chosen = Vec::with_capacity(steps);
    for (t, &qt) in qs.iter().enumerate() {
        let mut idx = Vec::with_capacity(b * n);
        for e in batch {
            for i in 0..n {
                idx.push(if t < e.len { e.action_at(t, i) } else { 0 });
            }
        }
        let picked = tape.gather(qt, &idx)?;
        chosen.push(tape.reshape(picked, &[b, n])?);
    }
    let q = tape.concat_rows(&chosen)?;
    let s = states_matrix(batch, 0..steps, model.mixer.state_dim);
    let s = tape.constant(Tensor::matrix(rows, model.mixer.state_dim, s)?);
    let (q_tot, p_logit) = mixed_total(tape, params, model, q, s, overrides)?;

    let y = tape.constant(Tensor::vector(y.to_vec()));
    let mask = tape.constant(Tensor::vector(layout.mask.clone()));
    let diff = tape.sub(q_tot, y)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.mul(sq, mask)?;
    let td = tape.sum(sq);
    let td = tape.scale(td, 1.0 / layout.valid().max(1.0));

    let concept = match p_logit {
        Some(logit) if model.supervised > 0 && lambda_c > 0.0 => {
            let k = model.mixer.concepts;
            let mut target = vec![0.0; rows * k];
            let mut weight = vec![0.0; rows * k];
            for t in 0..steps {
                for (j, e) in batch.iter().enumerate() {
                    if t >= e.len {
                        continue;
                    }
                    let r = t * b + j;
                    for (c, &label) in e.concepts_at(t).iter().enumerate().take(model.supervised) {
                        target[r * k + c] = label;
                        weight[r * k + c] = 1.0;
                    }
                }
            }
            let count: f64 = weight.iter().sum();
            let bce = tape.bce_with_logits(logit, &target)?;
            let weight = tape.constant(Tensor::vector(weight));
            let bce = tape.mul(bce, weight)?;
            let bce = tape.sum(bce);
            Some(tape.scale(bce, 1.0 / count.max(1.0)))
        }
        _ => None,
    };
    let total = match concept {
        Some(c) => {
            let weighted = tape.scale(c, lambda_c);
            tape.add(td, weighted)?
        }
        None => td,
    };
    Ok(LossNodes {
        total,
        td,
        concept,
        q_tot,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub td_loss: f64,
    pub concept_loss: Option<f64>,
    pub grad_norm: f64,
}

/// One gradient step on `batch`; `params` and `opt` are updated in place.
pub fn train_step(
    model: &Model,
    cfg: &TrainConfig,
    params: &mut ParamSet,
    target: &ParamSet,
    opt: &mut OptimState,
    batch: &[&Episode],
    rng: &mut impl Rng,
) -> Result<StepStats, TrainError> {
    let y = td_targets(model, target, batch, cfg.gamma)?;
    let overrides = match model.kind {
        MixerKind::Cmq => Some(sample_overrides(model, batch, cfg.p_tilde, rng)),
        MixerKind::Vdn => None,
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let nodes = loss_graph(
        &mut tape,
        &bound,
        model,
        batch,
        &y,
        overrides.as_ref(),
        cfg.lambda_c,
    )?;
    let loss = tape.value(nodes.total).item();
    if !loss.is_finite() {
        let layout = BatchLayout::new(batch);
        let q_tot = tape.value(nodes.q_tot).data();
        let bad_row = (0..layout.rows())
            .find(|&r| !q_tot[r].is_finite() || !y[r].is_finite())
            .unwrap_or(0);
        let batch_index = bad_row % layout.batch.max(1);
        return Err(TrainError::NonFiniteLoss {
            batch_index,
            detail: format!(
                "step {} q_tot {} target {} reward {}",
                bad_row / layout.batch.max(1),
                q_tot[bad_row],
                y[bad_row],
                layout.rewards[bad_row]
            ),
        });
    }
    let grads = tape.backward(nodes.total)?;
    let mut grads: BTreeMap<String, Tensor> = bound.gradients(&tape, &grads);
    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
    opt.update(params, &grads);
    Ok(StepStats {
        loss,
        td_loss: tape.value(nodes.td).item(),
        concept_loss: nodes.concept.map(|c| tape.value(c).item()),
        grad_norm,
    })
}
