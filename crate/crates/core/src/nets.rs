//! Learnable parameter storage and the building blocks shared by the agent
//! and mixer networks: dense layers, MLPs and a gated recurrent cell.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, AutodiffError, Gradients, NodeId, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("layer {name} has a zero-sized dimension")]
    ZeroSizedLayer { name: String },
    #[error("layer {name} expects input {expected}, previous layer produces {actual}")]
    NonConforming {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("layer {0} is not a dense layer")]
    NotDense(String),
    #[error("parameter decode failed: {0}")]
    Decode(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Named, ordered collection of parameter tensors.
///
/// Cloning yields an independent deep copy, which is how target networks
/// are made.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    seed: Option<u64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NetError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NetError::DuplicateParam(name));
        }
        self.tensors.insert(name, value);
        Ok(())
    }

    /// Moves every tensor of `other` into `self`; names must not collide.
    pub fn merge(&mut self, other: ParamSet) -> Result<(), NetError> {
        for (name, t) in other.tensors {
            self.insert(name, t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Records every tensor as a gradient-tracked leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let ids = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(t.clone())))
            .collect();
        BoundParams { ids }
    }

    /// Records every tensor as a constant; used for frozen target networks.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        let ids = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect();
        BoundParams { ids }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("in-memory serialization")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NetError> {
        bincode::deserialize(bytes).map_err(|e| NetError::Decode(e.to_string()))
    }

    /// Glorot-free PyTorch-style init: weights uniform in ±1/√fan_in, zero bias.
    pub fn init_dense(
        &mut self,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<(), NetError> {
        if input == 0 || output == 0 {
            return Err(NetError::ZeroSizedLayer {
                name: name.to_string(),
            });
        }
        let bound = 1.0 / (input as f64).sqrt();
        let w = (0..input * output)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.insert(format!("{name}.w"), Tensor::matrix(output, input, w)?)?;
        if bias {
            self.insert(format!("{name}.b"), Tensor::zeros(&[output]))?;
        }
        Ok(())
    }
}

/// Tape handles for a [`ParamSet`], looked up by name.
#[derive(Debug, Clone)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId, NetError> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn try_get(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    /// Gradient tensors keyed by parameter name (zeros where unreached).
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.ids
            .iter()
            .map(|(name, id)| (name.clone(), grads.get_or_zeros(tape, *id)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruSpec {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense(DenseSpec),
    Gru(GruSpec),
}

impl LayerSpec {
    fn name(&self) -> &str {
        match self {
            LayerSpec::Dense(d) => &d.name,
            LayerSpec::Gru(g) => &g.name,
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            LayerSpec::Dense(d) => (d.input, d.output),
            LayerSpec::Gru(g) => (g.input, g.hidden),
        }
    }
}

/// A stack of layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    /// Dense stack `sizes[0] -> sizes[1] -> ...` named `{prefix}.l{i}`.
    pub fn mlp(prefix: &str, sizes: &[usize], activations: &[Activation]) -> Self {
        let layers = sizes
            .windows(2)
            .zip(activations)
            .enumerate()
            .map(|(i, (w, act))| {
                LayerSpec::Dense(DenseSpec {
                    name: format!("{prefix}.l{i}"),
                    input: w[0],
                    output: w[1],
                    activation: *act,
                })
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let mut prev: Option<usize> = None;
        for layer in &self.layers {
            let (input, output) = layer.dims();
            if input == 0 || output == 0 {
                return Err(NetError::ZeroSizedLayer {
                    name: layer.name().to_string(),
                });
            }
            if let Some(p) = prev {
                if p != input {
                    return Err(NetError::NonConforming {
                        name: layer.name().to_string(),
                        expected: input,
                        actual: p,
                    });
                }
            }
            prev = Some(output);
        }
        Ok(())
    }
}

/// Deterministic initialization of every layer in `spec` from `seed`.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ParamSet, NetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet {
        tensors: BTreeMap::new(),
        seed: Some(seed),
    };
    for layer in &spec.layers {
        match layer {
            LayerSpec::Dense(d) => params.init_dense(&d.name, d.input, d.output, true, &mut rng)?,
            LayerSpec::Gru(g) => init_gru(&mut params, g, &mut rng)?,
        }
    }
    Ok(params)
}

pub(crate) fn init_gru(
    params: &mut ParamSet,
    spec: &GruSpec,
    rng: &mut impl Rng,
) -> Result<(), NetError> {
    if spec.input == 0 || spec.hidden == 0 {
        return Err(NetError::ZeroSizedLayer {
            name: spec.name.clone(),
        });
    }
    for gate in ["z", "r", "h"] {
        params.init_dense(&format!("{}.x{gate}", spec.name), spec.input, spec.hidden, true, rng)?;
        params.init_dense(&format!("{}.h{gate}", spec.name), spec.hidden, spec.hidden, false, rng)?;
    }
    Ok(())
}

pub fn dense_forward(
    tape: &mut Tape,
    params: &BoundParams,
    spec: &DenseSpec,
    x: NodeId,
) -> Result<NodeId, NetError> {
    let w = params.get(&format!("{}.w", spec.name))?;
    let b = params.get(&format!("{}.b", spec.name))?;
    let y = tape.linear(w, x, Some(b))?;
    Ok(tape.activation(spec.activation, y))
}

/// Runs the dense layers of `spec` in order.
pub fn mlp_forward(
    tape: &mut Tape,
    params: &BoundParams,
    spec: &NetSpec,
    x: NodeId,
) -> Result<NodeId, NetError> {
    let mut h = x;
    for layer in &spec.layers {
        match layer {
            LayerSpec::Dense(d) => h = dense_forward(tape, params, d, h)?,
            LayerSpec::Gru(g) => return Err(NetError::NotDense(g.name.clone())),
        }
    }
    Ok(h)
}

/// One gated recurrent update.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h̃
/// ```
///
/// Works row-wise, so `x: [rows × input]` with `h_prev: [rows × hidden]`
/// advances a whole batch at once.
pub fn gru_step(
    tape: &mut Tape,
    params: &BoundParams,
    spec: &GruSpec,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, NetError> {
    let p = |suffix: &str| params.get(&format!("{}.{suffix}", spec.name));
    let hv = tape.value(h_prev);
    if hv.cols() != spec.hidden || hv.rows() != tape.value(x).rows() {
        return Err(AutodiffError::ShapeMismatch {
            op: "gru_step.hidden",
            expected: vec![tape.value(x).rows(), spec.hidden],
            actual: hv.shape().to_vec(),
        }
        .into());
    }
    let gate = |tape: &mut Tape, g: &str, h_in: NodeId| -> Result<NodeId, NetError> {
        let xw = tape.linear(p(&format!("x{g}.w"))?, x, Some(p(&format!("x{g}.b"))?))?;
        let hu = tape.linear(p(&format!("h{g}.w"))?, h_in, None)?;
        Ok(tape.add(xw, hu)?)
    };
    let z_pre = gate(tape, "z", h_prev)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, "r", h_prev)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h_prev)?;
    let cand_pre = gate(tape, "h", rh)?;
    let cand = tape.tanh(cand_pre);
    let keep = tape.one_minus(z);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, cand)?;
    Ok(tape.add(kept, fresh)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn zero(params: &mut ParamSet) {
        for (_, t) in params.iter_mut() {
            t.data_mut().fill(0.0);
        }
    }

    fn gru_spec() -> GruSpec {
        GruSpec {
            name: "gru".into(),
            input: 3,
            hidden: 4,
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let spec = NetSpec::mlp("m", &[4, 5, 2], &[Activation::Relu, Activation::Identity]);
        let a = init_params(&spec, 7).unwrap();
        let b = init_params(&spec, 7).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.get("m.l0.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(a.get("m.l1.b").unwrap().data().iter().all(|&v| v == 0.0));
        let c = init_params(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = NetSpec::mlp("m", &[4, 250], &[Activation::Identity]);
        let p = init_params(&spec, 1).unwrap();
        let w = p.get("m.l0.w").unwrap();
        assert_eq!(w.numel(), 1000);
        assert!(w.data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn zero_sized_layer_rejected() {
        let spec = NetSpec::mlp("m", &[4, 0, 2], &[Activation::Relu, Activation::Relu]);
        assert!(matches!(
            init_params(&spec, 0),
            Err(NetError::ZeroSizedLayer { .. })
        ));
    }

    #[test]
    fn nonconforming_layers_rejected() {
        let mut spec = NetSpec::mlp("m", &[4, 5, 2], &[Activation::Relu, Activation::Relu]);
        if let LayerSpec::Dense(d) = &mut spec.layers[1] {
            d.input = 6;
        }
        assert!(matches!(spec.validate(), Err(NetError::NonConforming { .. })));
    }

    #[test]
    fn zero_mlp_outputs_zero() {
        let spec = NetSpec::mlp("m", &[3, 4, 2], &[Activation::Relu, Activation::Identity]);
        let mut p = init_params(&spec, 3).unwrap();
        zero(&mut p);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 5.0]));
        let y = mlp_forward(&mut tape, &bound, &spec, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_echoes_input() {
        let spec = NetSpec::mlp("m", &[3, 3], &[Activation::Identity]);
        let mut p = init_params(&spec, 3).unwrap();
        let w = p.get_mut("m.l0.w").unwrap();
        w.data_mut().fill(0.0);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![0.3, -1.5, 2.0]));
        let y = mlp_forward(&mut tape, &bound, &spec, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, -1.5, 2.0]);
    }

    #[test]
    fn mlp_matches_hand_rolled_math() {
        let spec = NetSpec::mlp("m", &[3, 4, 2], &[Activation::Tanh, Activation::Identity]);
        let p = init_params(&spec, 11).unwrap();
        let x = [0.2, -0.7, 1.1];
        let layer = |w: &Tensor, b: &Tensor, x: &[f64]| -> Vec<f64> {
            (0..w.shape()[0])
                .map(|i| {
                    let mut acc = b.data()[i];
                    for j in 0..x.len() {
                        acc += w.at(i, j) * x[j];
                    }
                    acc
                })
                .collect()
        };
        let h: Vec<f64> = layer(p.get("m.l0.w").unwrap(), p.get("m.l0.b").unwrap(), &x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let expected = layer(p.get("m.l1.w").unwrap(), p.get("m.l1.b").unwrap(), &h);

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let xn = tape.constant(Tensor::vector(x.to_vec()));
        let y = mlp_forward(&mut tape, &bound, &spec, xn).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_input_mismatch_errors() {
        let spec = NetSpec::mlp("m", &[3, 2], &[Activation::Identity]);
        let p = init_params(&spec, 0).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(mlp_forward(&mut tape, &bound, &spec, x).is_err());
    }

    fn gru_params(seed: u64) -> ParamSet {
        let spec = NetSpec {
            layers: vec![LayerSpec::Gru(gru_spec())],
        };
        init_params(&spec, seed).unwrap()
    }

    #[test]
    fn zero_gru_halves_hidden() {
        let mut p = gru_params(1);
        zero(&mut p);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![0.5, 1.0, -1.0]));
        let h = tape.constant(Tensor::vector(vec![0.2, -0.4, 0.8, 0.0]));
        let out = gru_step(&mut tape, &bound, &gru_spec(), x, h).unwrap();
        assert_eq!(tape.value(out).data(), &[0.1, -0.2, 0.4, 0.0]);

        let h0 = tape.constant(Tensor::zeros(&[4]));
        let out = gru_step(&mut tape, &bound, &gru_spec(), x, h0).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_matches_hand_rolled_gates() {
        let p = gru_params(5);
        let x = [0.3, -0.2, 0.9];
        let h = [0.1, -0.5, 0.25, 0.7];
        let aff = |name: &str, input: &[f64], bias: bool| -> Vec<f64> {
            let w = p.get(&format!("gru.{name}.w")).unwrap();
            (0..4)
                .map(|i| {
                    let mut acc = if bias {
                        p.get(&format!("gru.{name}.b")).unwrap().data()[i]
                    } else {
                        0.0
                    };
                    for (j, v) in input.iter().enumerate() {
                        acc += w.at(i, j) * v;
                    }
                    acc
                })
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = aff("xz", &x, true)
            .iter()
            .zip(aff("hz", &h, false))
            .map(|(a, b)| sig(a + b))
            .collect();
        let r: Vec<f64> = aff("xr", &x, true)
            .iter()
            .zip(aff("hr", &h, false))
            .map(|(a, b)| sig(a + b))
            .collect();
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = aff("xh", &x, true)
            .iter()
            .zip(aff("hh", &rh, false))
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let expected: Vec<f64> = (0..4)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i])
            .collect();

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let xn = tape.constant(Tensor::vector(x.to_vec()));
        let hn = tape.constant(Tensor::vector(h.to_vec()));
        let out = gru_step(&mut tape, &bound, &gru_spec(), xn, hn).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn gru_hidden_mismatch_errors() {
        let p = gru_params(1);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(Tensor::vector(vec![0.0; 3]));
        let h = tape.constant(Tensor::vector(vec![0.0; 5]));
        assert!(gru_step(&mut tape, &bound, &gru_spec(), x, h).is_err());
    }

    #[test]
    fn gradients_pass_grad_check() {
        let spec = NetSpec::mlp("m", &[3, 4, 2], &[Activation::Tanh, Activation::Sigmoid]);
        let p = init_params(&spec, 2).unwrap();
        let report = grad_check(
            |tape: &mut Tape, bound: &BoundParams| -> Result<NodeId, NetError> {
                let x = tape.constant(Tensor::vector(vec![0.4, -1.2, 0.7]));
                let y = mlp_forward(tape, bound, &spec, x)?;
                Ok(tape.sum(y))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");

        let g = gru_params(9);
        let report = grad_check(
            |tape: &mut Tape, bound: &BoundParams| -> Result<NodeId, NetError> {
                let x = tape.constant(Tensor::matrix(2, 3, vec![0.4, -1.2, 0.7, 1.0, 0.1, -0.3])?);
                let h = tape.constant(Tensor::matrix(2, 4, vec![0.2, -0.1, 0.5, 0.3, 0.0, 0.9, -0.6, 0.1])?);
                let h1 = gru_step(tape, bound, &gru_spec(), x, h)?;
                let h2 = gru_step(tape, bound, &gru_spec(), x, h1)?;
                let sq = tape.mul(h2, h2)?;
                Ok(tape.sum(sq))
            },
            &g,
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn deep_copy_is_independent() {
        let p = gru_params(4);
        let mut q = p.clone();
        assert_eq!(p, q);
        q.get_mut("gru.xz.w").unwrap().data_mut()[0] += 1.0;
        assert_ne!(p, q);
        assert_eq!(p, gru_params(4));
    }

    #[test]
    fn params_roundtrip_bit_exact() {
        let p = gru_params(12);
        let back = ParamSet::from_bytes(&p.to_bytes()).unwrap();
        for ((na, a), (nb, b)) in p.iter().zip(back.iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gru_output_bounded(
                seed in 0u64..1000,
                x in proptest::collection::vec(-5.0f64..5.0, 3),
                h in proptest::collection::vec(-0.999f64..0.999, 4),
            ) {
                let p = gru_params(seed);
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape);
                let xn = tape.constant(Tensor::vector(x));
                let hn = tape.constant(Tensor::vector(h));
                let out = gru_step(&mut tape, &bound, &gru_spec(), xn, hn).unwrap();
                prop_assert!(tape.value(out).data().iter().all(|v| v.abs() < 1.0));
            }
        }
    }
}
