//! Concept-bottleneck mixing network and the additive baseline.
//!
//! For each of `K` concepts the global state is embedded twice, once for
//! "concept present" and once for "concept absent". A scorer shared by all
//! concepts turns the pair into a probability `p̂_k`, and the concept's value
//! is the `p̂_k`-weighted blend of two non-negative combinations of the agent
//! utilities. An attention step over the blended embeddings produces the
//! credits `α`, and
//!
//! ```text
//! Q_tot = Σ_k α_k · (p̂_k Q̃⁺_k + (1 - p̂_k) Q̃⁻_k) + f(s)
//! ```
//!
//! All tape-level functions are batched: `R` rows of `(q, s)` go in, and
//! per-concept quantities come back flattened with row `r·K + k` holding
//! concept `k` of input row `r`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, AutodiffError, NodeId, Tape, Tensor};
use crate::nets::{mlp_forward, BoundParams, NetError, NetSpec, ParamSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixerError {
    #[error("invalid mixer config: {0}")]
    InvalidConfig(String),
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl From<AutodiffError> for MixerError {
    fn from(e: AutodiffError) -> Self {
        MixerError::Net(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Cmq,
    Vdn,
}

impl FromStr for MixerKind {
    type Err = MixerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cmq" => Ok(MixerKind::Cmq),
            "vdn" => Ok(MixerKind::Vdn),
            other => Err(MixerError::InvalidConfig(format!("unknown mixer kind {other:?}"))),
        }
    }
}

impl fmt::Display for MixerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixerKind::Cmq => "cmq",
            MixerKind::Vdn => "vdn",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub n_agents: usize,
    pub state_dim: usize,
    /// Number of concepts `K`.
    pub concepts: usize,
    /// Concept embedding width `m`.
    pub embed: usize,
    /// Attention key width.
    pub attn: usize,
    pub bias_hidden: usize,
}

impl MixerConfig {
    pub fn new(n_agents: usize, state_dim: usize) -> Self {
        Self {
            n_agents,
            state_dim,
            concepts: 16,
            embed: 64,
            attn: 64,
            bias_hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<(), MixerError> {
        let fields = [
            ("n_agents", self.n_agents),
            ("state_dim", self.state_dim),
            ("concepts", self.concepts),
            ("embed", self.embed),
            ("attn", self.attn),
            ("bias_hidden", self.bias_hidden),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(MixerError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    fn bias_spec(&self) -> NetSpec {
        NetSpec::mlp(
            "mixer.bias",
            &[self.state_dim, self.bias_hidden, 1],
            &[Activation::Relu, Activation::Identity],
        )
    }
}

/// Parameters for one concept-bottleneck mixer.
///
/// Per-concept layers are stored stacked: rows `k·m .. (k+1)·m` of
/// `mixer.pos.w` belong to concept `k`, and likewise rows `k·n .. (k+1)·n`
/// of the hypernetwork weights.
pub fn init_mixer_params(cfg: &MixerConfig, seed: u64) -> Result<ParamSet, MixerError> {
    cfg.validate()?;
    let (k, m, n, s, d) = (cfg.concepts, cfg.embed, cfg.n_agents, cfg.state_dim, cfg.attn);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.init_dense("mixer.pos", s, k * m, true, &mut rng)?;
    p.init_dense("mixer.neg", s, k * m, true, &mut rng)?;
    p.init_dense("mixer.score", 2 * m, 1, true, &mut rng)?;
    p.init_dense("mixer.hyper_pos", s, k * n, true, &mut rng)?;
    p.init_dense("mixer.hyper_neg", s, k * n, true, &mut rng)?;
    p.init_dense("mixer.attn.key", s, d, false, &mut rng)?;
    p.init_dense("mixer.attn.query", m, d, false, &mut rng)?;
    p.init_dense("mixer.bias.l0", s, cfg.bias_hidden, true, &mut rng)?;
    p.init_dense("mixer.bias.l1", cfg.bias_hidden, 1, true, &mut rng)?;
    Ok(p)
}

/// Forced concept probabilities, keyed by concept index.
///
/// Text form is a comma-separated list of `k=value`, e.g. `"0=1,3=0.5"`;
/// the empty string is the empty mask.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionMask {
    values: BTreeMap<usize, f64>,
}

impl InterventionMask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, concept: usize, value: f64) -> Result<(), MixerError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(MixerError::InvalidIntervention(format!(
                "value {value} for concept {concept} outside [0, 1]"
            )));
        }
        self.values.insert(concept, value);
        Ok(())
    }

    pub fn remove(&mut self, concept: usize) -> Option<f64> {
        self.values.remove(&concept)
    }

    pub fn get(&self, concept: usize) -> Option<f64> {
        self.values.get(&concept).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clear(&mut self) {
        self.values.clear();
    }

    /// Checks values and that every index is below `concepts`.
    pub fn validate(&self, concepts: usize) -> Result<(), MixerError> {
        for (k, v) in self.iter() {
            if k >= concepts {
                return Err(MixerError::InvalidIntervention(format!(
                    "concept {k} out of range for {concepts} concepts"
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(MixerError::InvalidIntervention(format!(
                    "value {v} for concept {k} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for InterventionMask {
    type Err = MixerError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut mask = InterventionMask::new();
        let text = text.trim();
        if text.is_empty() {
            return Ok(mask);
        }
        for item in text.split(',') {
            let bad = || MixerError::InvalidIntervention(format!("cannot parse {item:?} as k=value"));
            let (k, v) = item.split_once('=').ok_or_else(bad)?;
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            if mask.values.contains_key(&k) {
                return Err(MixerError::InvalidIntervention(format!("concept {k} given twice")));
            }
            mask.set(k, v)?;
        }
        Ok(mask)
    }
}

impl fmt::Display for InterventionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// `p̂` with masked entries replaced by their forced values.
pub fn apply_intervention(p: &[f64], iv: &InterventionMask) -> Result<Vec<f64>, MixerError> {
    iv.validate(p.len())?;
    let mut out = p.to_vec();
    for (k, v) in iv.iter() {
        out[k] = v;
    }
    Ok(out)
}

/// Per-row overrides for a batch: entry `r·K + k` forces concept `k` of
/// row `r` to `value` where `mask` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RowOverrides {
    pub mask: Vec<f64>,
    pub value: Vec<f64>,
}

impl RowOverrides {
    pub fn none(rows: usize, concepts: usize) -> Self {
        Self {
            mask: vec![0.0; rows * concepts],
            value: vec![0.0; rows * concepts],
        }
    }

    pub fn broadcast(
        iv: &InterventionMask,
        rows: usize,
        concepts: usize,
    ) -> Result<Self, MixerError> {
        iv.validate(concepts)?;
        let mut o = Self::none(rows, concepts);
        for r in 0..rows {
            for (k, v) in iv.iter() {
                o.force(r * concepts + k, v);
            }
        }
        Ok(o)
    }

    pub fn force(&mut self, index: usize, value: f64) {
        self.mask[index] = 1.0;
        self.value[index] = value;
    }

    pub fn is_active(&self) -> bool {
        self.mask.iter().any(|&m| m != 0.0)
    }
}

/// Node handles for one batched mixer pass.
#[derive(Debug, Clone, Copy)]
pub struct MixNodes {
    /// `[R]`
    pub q_tot: NodeId,
    /// Scorer logits before any override, `[R·K]`.
    pub p_logit: NodeId,
    /// Predicted probabilities, `[R·K]`.
    pub p_pred: NodeId,
    /// Probabilities after overrides, `[R·K]`.
    pub p: NodeId,
    /// `[R·K × m]`
    pub pos: NodeId,
    pub neg: NodeId,
    pub mixed: NodeId,
    /// `[R·K]`
    pub q_pos: NodeId,
    pub q_neg: NodeId,
    pub q_hat: NodeId,
    /// `[R × K]`
    pub alpha: NodeId,
    /// `[R]`
    pub bias: NodeId,
}

fn check_rows(
    tape: &Tape,
    x: NodeId,
    cols: usize,
    op: &'static str,
) -> Result<usize, MixerError> {
    let v = tape.value(x);
    if v.rank() != 2 || v.cols() != cols {
        return Err(AutodiffError::ShapeMismatch {
            op,
            expected: vec![v.rows(), cols],
            actual: v.shape().to_vec(),
        }
        .into());
    }
    Ok(v.rows())
}

/// `(ĉ⁺, ĉ⁻)`, each `[R·K × m]`, from states `s: [R × S]`.
pub fn concept_embeddings(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &MixerConfig,
    s: NodeId,
) -> Result<(NodeId, NodeId), MixerError> {
    let rows = check_rows(tape, s, cfg.state_dim, "mixer.state")?;
    let shape = [rows * cfg.concepts, cfg.embed];
    let mut embed = |name: &str| -> Result<NodeId, MixerError> {
        let w = params.get(&format!("{name}.w"))?;
        let b = params.get(&format!("{name}.b"))?;
        let pre = tape.linear(w, s, Some(b))?;
        let act = tape.relu(pre);
        Ok(tape.reshape(act, &shape)?)
    };
    let pos = embed("mixer.pos")?;
    let neg = embed("mixer.neg")?;
    Ok((pos, neg))
}

/// Shared scorer: `(logit, p̂)`, each `[R·K]`.
pub fn concept_probs(
    tape: &mut Tape,
    params: &BoundParams,
    pos: NodeId,
    neg: NodeId,
) -> Result<(NodeId, NodeId), MixerError> {
    let rows = tape.value(pos).rows();
    let both = tape.concat_cols(&[pos, neg])?;
    let w = params.get("mixer.score.w")?;
    let b = params.get("mixer.score.b")?;
    let logit = tape.linear(w, both, Some(b))?;
    let logit = tape.reshape(logit, &[rows])?;
    let p = tape.sigmoid(logit);
    Ok((logit, p))
}

/// Replaces overridden entries of `p` by constants; other entries pass
/// through bit-exactly and keep their gradient.
pub fn override_probs(
    tape: &mut Tape,
    p: NodeId,
    overrides: &RowOverrides,
) -> Result<NodeId, MixerError> {
    let n = tape.value(p).numel();
    if overrides.mask.len() != n || overrides.value.len() != n {
        return Err(AutodiffError::ShapeMismatch {
            op: "mixer.overrides",
            expected: vec![n],
            actual: vec![overrides.mask.len()],
        }
        .into());
    }
    if !overrides.is_active() {
        return Ok(p);
    }
    let keep: Vec<f64> = overrides.mask.iter().map(|m| 1.0 - m).collect();
    let forced: Vec<f64> = overrides
        .mask
        .iter()
        .zip(&overrides.value)
        .map(|(m, v)| m * v)
        .collect();
    let keep = tape.constant(Tensor::vector(keep));
    let forced = tape.constant(Tensor::vector(forced));
    let kept = tape.mul(p, keep)?;
    Ok(tape.add(kept, forced)?)
}

/// `ĉ_k = p_k ĉ⁺_k + (1 - p_k) ĉ⁻_k`, `[R·K × m]`.
pub fn mixed_embeddings(
    tape: &mut Tape,
    p: NodeId,
    pos: NodeId,
    neg: NodeId,
) -> Result<NodeId, MixerError> {
    let a = tape.scale_rows(p, pos)?;
    let q = tape.one_minus(p);
    let b = tape.scale_rows(q, neg)?;
    Ok(tape.add(a, b)?)
}

fn tile_cols(tape: &mut Tape, x: NodeId, times: usize) -> Result<NodeId, MixerError> {
    if times == 1 {
        return Ok(x);
    }
    Ok(tape.concat_cols(&vec![x; times])?)
}

/// `(Q̃⁺, Q̃⁻)`, each `[R·K]`: non-negative state-conditioned weightings of
/// the utilities `q: [R × n]`.
pub fn temporal_q(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &MixerConfig,
    s: NodeId,
    q: NodeId,
) -> Result<(NodeId, NodeId), MixerError> {
    let rows = check_rows(tape, s, cfg.state_dim, "mixer.state")?;
    let q_rows = check_rows(tape, q, cfg.n_agents, "mixer.utilities")?;
    if q_rows != rows {
        return Err(AutodiffError::ShapeMismatch {
            op: "mixer.utilities",
            expected: vec![rows, cfg.n_agents],
            actual: vec![q_rows, cfg.n_agents],
        }
        .into());
    }
    let tiled = tile_cols(tape, q, cfg.concepts)?;
    let mut project = |name: &str| -> Result<NodeId, MixerError> {
        let w = params.get(&format!("{name}.w"))?;
        let b = params.get(&format!("{name}.b"))?;
        let h = tape.linear(w, s, Some(b))?;
        let h = tape.abs(h);
        let prod = tape.mul(h, tiled)?;
        let prod = tape.reshape(prod, &[rows * cfg.concepts, cfg.n_agents])?;
        Ok(tape.row_sum(prod)?)
    };
    let pos = project("mixer.hyper_pos")?;
    let neg = project("mixer.hyper_neg")?;
    Ok((pos, neg))
}

/// `Q̂ = p Q̃⁺ + (1 - p) Q̃⁻`, elementwise.
pub fn concept_q(
    tape: &mut Tape,
    p: NodeId,
    q_pos: NodeId,
    q_neg: NodeId,
) -> Result<NodeId, MixerError> {
    let a = tape.mul(p, q_pos)?;
    let not_p = tape.one_minus(p);
    let b = tape.mul(not_p, q_neg)?;
    Ok(tape.add(a, b)?)
}

/// Scalar form of [`concept_q`].
pub fn concept_q_value(p: f64, q_pos: f64, q_neg: f64) -> f64 {
    p * q_pos + (1.0 - p) * q_neg
}

/// Attention credits `α: [R × K]` from mixed embeddings `[R·K × m]`.
pub fn credits(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &MixerConfig,
    mixed: NodeId,
    s: NodeId,
) -> Result<NodeId, MixerError> {
    let rows = check_rows(tape, s, cfg.state_dim, "mixer.state")?;
    let (k, m) = (cfg.concepts, cfg.embed);
    let key_w = params.get("mixer.attn.key.w")?;
    let key = tape.linear(key_w, s, None)?;
    let key = tape.relu(key);
    let query_w = params.get("mixer.attn.query.w")?;
    let projected = tape.matmul(key, query_w)?;
    let tiled = tile_cols(tape, projected, k)?;
    let flat = tape.reshape(mixed, &[rows, k * m])?;
    let prod = tape.mul(flat, tiled)?;
    let prod = tape.reshape(prod, &[rows * k, m])?;
    let logits = tape.row_sum(prod)?;
    let logits = tape.reshape(logits, &[rows, k])?;
    Ok(tape.softmax(logits)?)
}

/// Full concept-bottleneck pass over `R` rows.
pub fn mix(
    tape: &mut Tape,
    params: &BoundParams,
    cfg: &MixerConfig,
    q: NodeId,
    s: NodeId,
    overrides: Option<&RowOverrides>,
) -> Result<MixNodes, MixerError> {
    cfg.validate()?;
    let rows = check_rows(tape, s, cfg.state_dim, "mixer.state")?;
    let (pos, neg) = concept_embeddings(tape, params, cfg, s)?;
    let (p_logit, p_pred) = concept_probs(tape, params, pos, neg)?;
    let p = match overrides {
        Some(o) => override_probs(tape, p_pred, o)?,
        None => p_pred,
    };
    let mixed = mixed_embeddings(tape, p, pos, neg)?;
    let (q_pos, q_neg) = temporal_q(tape, params, cfg, s, q)?;
    let q_hat = concept_q(tape, p, q_pos, q_neg)?;
    let alpha = credits(tape, params, cfg, mixed, s)?;
    let q_hat_rows = tape.reshape(q_hat, &[rows, cfg.concepts])?;
    let weighted = tape.mul(alpha, q_hat_rows)?;
    let mixed_q = tape.row_sum(weighted)?;
    let bias = mlp_forward(tape, params, &cfg.bias_spec(), s)?;
    let bias = tape.reshape(bias, &[rows])?;
    let q_tot = tape.add(mixed_q, bias)?;
    Ok(MixNodes {
        q_tot,
        p_logit,
        p_pred,
        p,
        pos,
        neg,
        mixed,
        q_pos,
        q_neg,
        q_hat,
        alpha,
        bias,
    })
}

/// Additive baseline: `Q_tot = Σ_i q_i` per row.
pub fn vdn_mix(tape: &mut Tape, q: NodeId) -> Result<NodeId, MixerError> {
    let v = tape.value(q);
    if v.rank() != 2 || v.cols() == 0 {
        return Err(MixerError::InvalidConfig("vdn needs [rows × n] with n >= 1".into()));
    }
    Ok(tape.row_sum(q)?)
}

pub fn vdn_mix_value(q: &[f64]) -> Result<f64, MixerError> {
    if q.is_empty() {
        return Err(MixerError::InvalidConfig("vdn needs at least one agent".into()));
    }
    Ok(q.iter().sum())
}

/// Interpretable snapshot of one mixer row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptState {
    pub pos: Vec<Vec<f64>>,
    pub neg: Vec<Vec<f64>>,
    pub p_pred: Vec<f64>,
    /// Probabilities actually used, after interventions.
    pub p: Vec<f64>,
    pub mixed: Vec<Vec<f64>>,
    pub q_pos: Vec<f64>,
    pub q_neg: Vec<f64>,
    pub q_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub q_tot: f64,
}

/// Reads per-row [`ConceptState`]s out of a finished pass.
pub fn concept_states(tape: &Tape, nodes: &MixNodes, cfg: &MixerConfig) -> Vec<ConceptState> {
    let k = cfg.concepts;
    let rows = tape.value(nodes.q_tot).numel();
    let slice = |id: NodeId, r: usize| tape.value(id).data()[r * k..(r + 1) * k].to_vec();
    let embeds = |id: NodeId, r: usize| {
        let t = tape.value(id);
        (0..k).map(|j| t.row(r * k + j).to_vec()).collect::<Vec<_>>()
    };
    (0..rows)
        .map(|r| ConceptState {
            pos: embeds(nodes.pos, r),
            neg: embeds(nodes.neg, r),
            p_pred: slice(nodes.p_pred, r),
            p: slice(nodes.p, r),
            mixed: embeds(nodes.mixed, r),
            q_pos: slice(nodes.q_pos, r),
            q_neg: slice(nodes.q_neg, r),
            q_hat: slice(nodes.q_hat, r),
            alpha: tape.value(nodes.alpha).row(r).to_vec(),
            bias: tape.value(nodes.bias).data()[r],
            q_tot: tape.value(nodes.q_tot).data()[r],
        })
        .collect()
}

/// Evaluates the mixer on a single `(q, s)` pair without tracking gradients.
pub fn mix_values(
    params: &ParamSet,
    cfg: &MixerConfig,
    q: &[f64],
    s: &[f64],
    iv: &InterventionMask,
) -> Result<ConceptState, MixerError> {
    iv.validate(cfg.concepts)?;
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let qn = tape.constant(Tensor::matrix(1, q.len(), q.to_vec())?);
    let sn = tape.constant(Tensor::matrix(1, s.len(), s.to_vec())?);
    let overrides = RowOverrides::broadcast(iv, 1, cfg.concepts)?;
    let nodes = mix(&mut tape, &bound, cfg, qn, sn, Some(&overrides))?;
    Ok(concept_states(&tape, &nodes, cfg).remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny() -> MixerConfig {
        MixerConfig {
            n_agents: 3,
            state_dim: 5,
            concepts: 4,
            embed: 6,
            attn: 7,
            bias_hidden: 8,
        }
    }

    fn randomized(cfg: &MixerConfig, seed: u64) -> ParamSet {
        let mut p = init_mixer_params(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        p
    }

    fn draw(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    fn zero_all(p: &mut ParamSet) {
        for (_, t) in p.iter_mut() {
            t.data_mut().fill(0.0);
        }
    }

    fn fill(p: &mut ParamSet, name: &str, v: f64) {
        p.get_mut(name).unwrap().data_mut().fill(v);
    }

    // Independent per-concept evaluation with explicit loops.
    struct Oracle {
        pos: Vec<Vec<f64>>,
        neg: Vec<Vec<f64>>,
        p: Vec<f64>,
        q_pos: Vec<f64>,
        q_neg: Vec<f64>,
        alpha: Vec<f64>,
        q_tot: f64,
    }

    fn affine(w: &Tensor, b: Option<&Tensor>, row0: usize, rows: usize, x: &[f64]) -> Vec<f64> {
        (row0..row0 + rows)
            .map(|r| {
                let mut acc = b.map_or(0.0, |b| b.data()[r]);
                for (c, xv) in x.iter().enumerate() {
                    acc += w.at(r, c) * xv;
                }
                acc
            })
            .collect()
    }

    fn oracle(p: &ParamSet, cfg: &MixerConfig, q: &[f64], s: &[f64], iv: &InterventionMask) -> Oracle {
        let g = |n: &str| p.get(n).unwrap();
        let (k, m, n) = (cfg.concepts, cfg.embed, cfg.n_agents);
        let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let mut o = Oracle {
            pos: vec![],
            neg: vec![],
            p: vec![],
            q_pos: vec![],
            q_neg: vec![],
            alpha: vec![],
            q_tot: 0.0,
        };
        let key = relu(affine(g("mixer.attn.key.w"), None, 0, cfg.attn, s));
        let mut logits = Vec::new();
        let mut q_hat = Vec::new();
        for c in 0..k {
            let pos = relu(affine(g("mixer.pos.w"), Some(g("mixer.pos.b")), c * m, m, s));
            let neg = relu(affine(g("mixer.neg.w"), Some(g("mixer.neg.b")), c * m, m, s));
            let both: Vec<f64> = pos.iter().chain(&neg).copied().collect();
            let z = affine(g("mixer.score.w"), Some(g("mixer.score.b")), 0, 1, &both)[0];
            let mut pk = 1.0 / (1.0 + (-z).exp());
            if let Some(v) = iv.get(c) {
                pk = v;
            }
            let hp = affine(g("mixer.hyper_pos.w"), Some(g("mixer.hyper_pos.b")), c * n, n, s);
            let hn = affine(g("mixer.hyper_neg.w"), Some(g("mixer.hyper_neg.b")), c * n, n, s);
            let qp: f64 = hp.iter().zip(q).map(|(w, q)| w.abs() * q).sum();
            let qn: f64 = hn.iter().zip(q).map(|(w, q)| w.abs() * q).sum();
            let mixed: Vec<f64> = pos.iter().zip(&neg).map(|(a, b)| pk * a + (1.0 - pk) * b).collect();
            let wq = g("mixer.attn.query.w");
            let mut logit = 0.0;
            for (i, kv) in key.iter().enumerate() {
                let proj: f64 = (0..m).map(|j| wq.at(i, j) * mixed[j]).sum();
                logit += proj * kv;
            }
            logits.push(logit);
            q_hat.push(pk * qp + (1.0 - pk) * qn);
            o.pos.push(pos);
            o.neg.push(neg);
            o.p.push(pk);
            o.q_pos.push(qp);
            o.q_neg.push(qn);
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        o.alpha = e.iter().map(|v| v / z).collect();
        let h = relu(affine(g("mixer.bias.l0.w"), Some(g("mixer.bias.l0.b")), 0, cfg.bias_hidden, s));
        let f = affine(g("mixer.bias.l1.w"), Some(g("mixer.bias.l1.b")), 0, 1, &h)[0];
        o.q_tot = o.alpha.iter().zip(&q_hat).map(|(a, q)| a * q).sum::<f64>() + f;
        o
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_params_give_zero_embeddings_and_half_probs() {
        let cfg = tiny();
        let mut p = init_mixer_params(&cfg, 0).unwrap();
        zero_all(&mut p);
        let st = mix_values(&p, &cfg, &[1.0, 2.0, 3.0], &[0.3; 5], &InterventionMask::new()).unwrap();
        assert!(st.pos.iter().chain(&st.neg).flatten().all(|&v| v == 0.0));
        assert_eq!(st.p_pred, vec![0.5; 4]);
        assert_eq!(st.alpha, vec![0.25; 4]);
        assert_eq!(st.q_tot, 0.0);
    }

    #[test]
    fn saturated_scorer_bias() {
        let cfg = tiny();
        let mut p = randomized(&cfg, 1);
        fill(&mut p, "mixer.score.w", 0.0);
        fill(&mut p, "mixer.score.b", 20.0);
        let st = mix_values(&p, &cfg, &[0.0; 3], &[0.5; 5], &InterventionMask::new()).unwrap();
        assert!(st.p_pred.iter().all(|&v| v > 1.0 - 1e-8));
    }

    #[test]
    fn matches_loop_oracle() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let p = randomized(&cfg, seed);
            let q = draw(&mut rng, 3, -2.0, 2.0);
            let s = draw(&mut rng, 5, -1.0, 1.0);
            let mut iv = InterventionMask::new();
            if seed % 2 == 0 {
                iv.set(1, 1.0).unwrap();
                iv.set(3, 0.0).unwrap();
            }
            let st = mix_values(&p, &cfg, &q, &s, &iv).unwrap();
            let o = oracle(&p, &cfg, &q, &s, &iv);
            for c in 0..4 {
                assert!(close(&st.pos[c], &o.pos[c], 1e-12));
                assert!(close(&st.neg[c], &o.neg[c], 1e-12));
                assert!(st.pos[c].iter().all(|&v| v >= 0.0));
            }
            assert!(close(&st.p, &o.p, 1e-12));
            assert!(close(&st.q_pos, &o.q_pos, 1e-12));
            assert!(close(&st.q_neg, &o.q_neg, 1e-12));
            assert!(close(&st.alpha, &o.alpha, 1e-10));
            assert!((st.q_tot - o.q_tot).abs() < 1e-10);
        }
    }

    #[test]
    fn hypernet_constant_outputs() {
        let cfg = tiny();
        let mut p = randomized(&cfg, 2);
        fill(&mut p, "mixer.hyper_pos.w", 0.0);
        fill(&mut p, "mixer.hyper_pos.b", 1.0);
        fill(&mut p, "mixer.hyper_neg.w", 0.0);
        fill(&mut p, "mixer.hyper_neg.b", 0.0);
        let st = mix_values(&p, &cfg, &[1.0, 2.0, 3.0], &[0.2; 5], &InterventionMask::new()).unwrap();
        assert_eq!(st.q_pos, vec![6.0; 4]);
        assert_eq!(st.q_neg, vec![0.0; 4]);
    }

    #[test]
    fn concept_q_endpoints() {
        assert_eq!(concept_q_value(1.0, 3.5, -2.0), 3.5);
        assert_eq!(concept_q_value(0.5, 2.0, 0.0), 1.0);
        assert_eq!(concept_q_value(0.0, 3.5, -2.0), -2.0);
    }

    #[test]
    fn single_concept_has_unit_credit() {
        let cfg = MixerConfig {
            concepts: 1,
            ..tiny()
        };
        let p = randomized(&cfg, 4);
        let st = mix_values(&p, &cfg, &[1.0, 0.0, 2.0], &[0.1; 5], &InterventionMask::new()).unwrap();
        assert_eq!(st.alpha, vec![1.0]);
    }

    #[test]
    fn identical_concepts_share_credit_evenly() {
        let cfg = tiny();
        let mut p = randomized(&cfg, 5);
        for name in ["mixer.pos.w", "mixer.pos.b", "mixer.neg.w", "mixer.neg.b"] {
            let t = p.get_mut(name).unwrap();
            let per = t.numel() / cfg.concepts;
            let first = t.data()[..per].to_vec();
            for chunk in t.data_mut().chunks_mut(per) {
                chunk.copy_from_slice(&first);
            }
        }
        let st = mix_values(&p, &cfg, &[1.0, 2.0, 3.0], &[0.4; 5], &InterventionMask::new()).unwrap();
        assert!(close(&st.alpha, &[0.25; 4], 1e-12));
    }

    #[test]
    fn reduces_to_sum_with_single_forced_concept() {
        let cfg = MixerConfig {
            concepts: 1,
            ..tiny()
        };
        let mut p = randomized(&cfg, 6);
        fill(&mut p, "mixer.hyper_pos.w", 0.0);
        fill(&mut p, "mixer.hyper_pos.b", 1.0);
        fill(&mut p, "mixer.bias.l1.w", 0.0);
        fill(&mut p, "mixer.bias.l1.b", 0.0);
        let iv: InterventionMask = "0=1".parse().unwrap();
        let st = mix_values(&p, &cfg, &[1.5, -2.0, 4.0], &[0.3; 5], &iv).unwrap();
        assert_eq!(st.q_tot, 3.5);
    }

    #[test]
    fn noop_intervention_leaves_value_unchanged() {
        let cfg = tiny();
        let p = randomized(&cfg, 7);
        let q = [0.3, -0.7, 1.1];
        let s = [0.1, 0.2, -0.3, 0.4, 0.0];
        let free = mix_values(&p, &cfg, &q, &s, &InterventionMask::new()).unwrap();
        let mut iv = InterventionMask::new();
        iv.set(2, free.p_pred[2]).unwrap();
        let forced = mix_values(&p, &cfg, &q, &s, &iv).unwrap();
        assert!((free.q_tot - forced.q_tot).abs() <= 1e-12);
    }

    #[test]
    fn vdn_examples() {
        assert_eq!(vdn_mix_value(&[1.0, 2.0, 3.0]).unwrap(), 6.0);
        assert_eq!(vdn_mix_value(&[-4.25]).unwrap(), -4.25);
        assert!(vdn_mix_value(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::new();
        let data = draw(&mut rng, 12, -5.0, 5.0);
        let q = tape.constant(Tensor::matrix(4, 3, data.clone()).unwrap());
        let out = vdn_mix(&mut tape, q).unwrap();
        for r in 0..4 {
            let expect = data[3 * r] + data[3 * r + 1] + data[3 * r + 2];
            assert_eq!(tape.value(out).data()[r], expect);
        }
    }

    #[test]
    fn intervention_application() {
        let iv: InterventionMask = "0=1.0".parse().unwrap();
        assert_eq!(apply_intervention(&[0.1, 0.9], &iv).unwrap(), vec![1.0, 0.9]);
        assert_eq!(
            apply_intervention(&[0.1, 0.9], &InterventionMask::new()).unwrap(),
            vec![0.1, 0.9]
        );
        let iv: InterventionMask = "0=0.5,1=0.5".parse().unwrap();
        assert_eq!(apply_intervention(&[0.1, 0.9], &iv).unwrap(), vec![0.5, 0.5]);
        let iv: InterventionMask = "2=1".parse().unwrap();
        assert!(apply_intervention(&[0.1, 0.9], &iv).is_err());
    }

    #[test]
    fn intervention_text_form() {
        let iv: InterventionMask = " 3 = 0 , 0=1,7=0.25".parse().unwrap();
        assert_eq!(iv.to_string(), "0=1,3=0,7=0.25");
        assert_eq!(iv.to_string().parse::<InterventionMask>().unwrap(), iv);
        assert!("".parse::<InterventionMask>().unwrap().is_empty());
        for bad in ["0", "x=1", "0=2", "0=-0.1", "1=0.5,1=0.5", "0=nan", ","] {
            assert!(bad.parse::<InterventionMask>().is_err(), "{bad}");
        }
    }

    #[test]
    fn batched_rows_match_single_rows() {
        let cfg = tiny();
        let p = randomized(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let qs = draw(&mut rng, 4 * 3, -1.0, 1.0);
        let ss = draw(&mut rng, 4 * 5, -1.0, 1.0);
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let q = tape.constant(Tensor::matrix(4, 3, qs.clone()).unwrap());
        let s = tape.constant(Tensor::matrix(4, 5, ss.clone()).unwrap());
        let nodes = mix(&mut tape, &bound, &cfg, q, s, None).unwrap();
        let rows = concept_states(&tape, &nodes, &cfg);
        for r in 0..4 {
            let one = mix_values(&p, &cfg, &qs[3 * r..3 * r + 3], &ss[5 * r..5 * r + 5], &InterventionMask::new()).unwrap();
            assert!((rows[r].q_tot - one.q_tot).abs() < 1e-12);
            assert!(close(&rows[r].alpha, &one.alpha, 1e-12));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = tiny();
        for seed in 0..3 {
            let p = randomized(&cfg, 20 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q0 = Tensor::matrix(2, 3, draw(&mut rng, 6, -1.0, 1.0)).unwrap();
            let s0 = Tensor::matrix(2, 5, draw(&mut rng, 10, -1.0, 1.0)).unwrap();
            let report = grad_check(
                |tape, bound| {
                    let q = tape.constant(q0.clone());
                    let s = tape.constant(s0.clone());
                    let nodes = mix(tape, bound, &cfg, q, s, None)?;
                    Ok::<_, MixerError>(tape.sum(nodes.q_tot))
                },
                &p,
                1e-6,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monotone_and_simplex(seed in any::<u64>()) {
            let cfg = tiny();
            let p = randomized(&cfg, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = draw(&mut rng, 3, -3.0, 3.0);
            let s = draw(&mut rng, 5, -1.0, 1.0);

            let mut tape = Tape::new();
            let bound = p.bind_frozen(&mut tape);
            let qn = tape.param(Tensor::matrix(1, 3, q.clone()).unwrap());
            let sn = tape.constant(Tensor::matrix(1, 5, s.clone()).unwrap());
            let nodes = mix(&mut tape, &bound, &cfg, qn, sn, None).unwrap();
            let total = tape.sum(nodes.q_tot);
            let grads = tape.backward(total).unwrap();
            prop_assert!(grads.get(qn).unwrap().data().iter().all(|&g| g >= 0.0));

            let st = &concept_states(&tape, &nodes, &cfg)[0];
            prop_assert!((st.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(st.alpha.iter().all(|&a| a > 0.0));
            for c in 0..cfg.concepts {
                let lo = st.q_pos[c].min(st.q_neg[c]);
                let hi = st.q_pos[c].max(st.q_neg[c]);
                prop_assert!(lo - 1e-12 <= st.q_hat[c] && st.q_hat[c] <= hi + 1e-12);
                prop_assert!((0.0..=1.0).contains(&st.p[c]));
                for j in 0..cfg.embed {
                    let expect = st.p[c] * st.pos[c][j] + (1.0 - st.p[c]) * st.neg[c][j];
                    prop_assert!((st.mixed[c][j] - expect).abs() < 1e-12);
                }
            }
        }
    }
}
