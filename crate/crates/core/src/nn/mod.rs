//! Small fixed-topology networks over flat `f64` parameter vectors.
//!
//! A network is an optional stack of LSTM layers (the trunk) followed by one
//! or more dense heads that all read the trunk output. Parameters live in one
//! flat vector whose layout is a pure function of the [`ArchitectureSpec`]:
//!
//! * per LSTM layer: `W` (4H × (I+H), row-major, gate blocks `i, f, g, o`),
//!   then `b` (4H);
//! * per head, per dense layer: `W` (out × in, row-major), then `b` (out).
//!
//! Forward passes are pure given `(params, state, input)`. Gradients exist
//! for the pooled-sequence regressor used by the estimators (see
//! [`backward`]).

mod adam;
mod backward;
mod checkpoint;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use backward::{mse_loss, SequenceGradient};
pub use checkpoint::Checkpoint;

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax applied independently to consecutive groups of this size.
    SoftmaxGrouped(usize),
}

impl Activation {
    pub(crate) fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => v.iter_mut().for_each(|x| {
                if *x < 0.0 {
                    *x = 0.0
                }
            }),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::SoftmaxGrouped(k) => v.chunks_mut(k).for_each(softmax_in_place),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Activation::Identity,
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            other => Activation::SoftmaxGrouped(other.strip_prefix("softmax/")?.parse().ok()?),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => f.write_str("identity"),
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::SoftmaxGrouped(k) => write!(f, "softmax/{k}"),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseSpec {
    pub units: usize,
    pub activation: Activation,
}

impl DenseSpec {
    pub const fn new(units: usize, activation: Activation) -> Self {
        Self { units, activation }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub layers: Vec<DenseSpec>,
}

impl HeadSpec {
    /// ReLU hidden layers followed by an output layer.
    pub fn mlp(hidden: &[usize], outputs: usize, output_activation: Activation) -> Self {
        let mut layers: Vec<_> = hidden.iter().map(|&u| DenseSpec::new(u, Activation::Relu)).collect();
        layers.push(DenseSpec::new(outputs, output_activation));
        Self { layers }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.units)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    /// Hidden size of each stacked LSTM layer; empty for a pure feed-forward net.
    pub lstm_hidden: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidArchitecture(m.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.lstm_hidden.contains(&0) {
            return bad("LSTM hidden sizes must be >= 1");
        }
        if self.heads.is_empty() {
            return bad("at least one head is required");
        }
        for h in &self.heads {
            if h.layers.is_empty() || h.layers.iter().any(|l| l.units == 0) {
                return bad("every head needs >= 1 layer of >= 1 unit");
            }
            for l in &h.layers {
                if let Activation::SoftmaxGrouped(k) = l.activation {
                    if k == 0 || l.units % k != 0 {
                        return bad("softmax group size must divide the layer width");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn trunk_dim(&self) -> usize {
        self.lstm_hidden.last().copied().unwrap_or(self.input_dim)
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LstmLayout {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub hidden: usize,
}

impl LstmLayout {
    pub fn cols(&self) -> usize {
        self.input + self.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DenseLayout {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub units: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub lstm: Vec<LstmLayout>,
    pub heads: Vec<Vec<DenseLayout>>,
    pub total: usize,
}

impl Layout {
    fn new(spec: &ArchitectureSpec) -> Self {
        let mut offset = 0;
        let mut input = spec.input_dim;
        let mut lstm = Vec::with_capacity(spec.lstm_hidden.len());
        for &hidden in &spec.lstm_hidden {
            let w = offset;
            offset += 4 * hidden * (input + hidden);
            let b = offset;
            offset += 4 * hidden;
            lstm.push(LstmLayout { w, b, input, hidden });
            input = hidden;
        }
        let trunk = input;
        let heads = spec
            .heads
            .iter()
            .map(|head| {
                let mut fan_in = trunk;
                head.layers
                    .iter()
                    .map(|l| {
                        let w = offset;
                        offset += l.units * fan_in;
                        let b = offset;
                        offset += l.units;
                        let d = DenseLayout { w, b, fan_in, units: l.units, activation: l.activation };
                        fan_in = l.units;
                        d
                    })
                    .collect()
            })
            .collect();
        Self { lstm, heads, total: offset }
    }
}

/// Flat parameter vector of one network (or a concatenation of several).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Weights of one LSTM layer, unpacked from the flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// 4H rows, each of length I+H; gate blocks in order i, f, g, o.
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub lstm: Vec<LstmWeights>,
    pub heads: Vec<Vec<DenseWeights>>,
}

/// Recurrent state: `(h, c)` per LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).flatten().all(|x| x.is_finite())
    }
}

/// A network topology with its parameter layout resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ArchitectureSpec,
    layout: Layout,
}

impl Network {
    pub fn new(spec: ArchitectureSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn head_output_dim(&self, head: usize) -> usize {
        self.spec.heads[head].output_dim()
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]` per layer; biases included.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = vec![0.0; self.layout.total];
        self.init_into(&mut p, rng);
        ParamVector(p)
    }

    pub fn init_into<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            p[range].iter_mut().for_each(|x| *x = rng.random_range(-a..=a));
        };
        for l in &self.layout.lstm {
            fill(l.w..l.b + 4 * l.hidden, l.cols());
        }
        for d in self.layout.heads.iter().flatten() {
            fill(d.w..d.b + d.units, d.fan_in);
        }
    }

    pub fn zero_state(&self) -> LstmState {
        let h: Vec<Vec<f64>> = self.spec.lstm_hidden.iter().map(|&n| vec![0.0; n]).collect();
        LstmState { c: h.clone(), h }
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.layout.total {
            return Err(NnError::DimensionMismatch { what: "parameter vector", expected: self.layout.total, got: params.len() });
        }
        Ok(())
    }

    pub fn unflatten(&self, params: &[f64]) -> Result<NetworkWeights, NnError> {
        self.check_params(params)?;
        let rows = |off: usize, n_rows: usize, n_cols: usize| -> Vec<Vec<f64>> {
            (0..n_rows).map(|r| params[off + r * n_cols..off + (r + 1) * n_cols].to_vec()).collect()
        };
        let lstm = self
            .layout
            .lstm
            .iter()
            .map(|l| LstmWeights { w: rows(l.w, 4 * l.hidden, l.cols()), b: params[l.b..l.b + 4 * l.hidden].to_vec() })
            .collect();
        let heads = self
            .layout
            .heads
            .iter()
            .map(|h| h.iter().map(|d| DenseWeights { w: rows(d.w, d.units, d.fan_in), b: params[d.b..d.b + d.units].to_vec() }).collect())
            .collect();
        Ok(NetworkWeights { lstm, heads })
    }

    pub fn flatten(&self, weights: &NetworkWeights) -> Result<ParamVector, NnError> {
        let mut out = Vec::with_capacity(self.layout.total);
        for l in &weights.lstm {
            l.w.iter().for_each(|r| out.extend_from_slice(r));
            out.extend_from_slice(&l.b);
        }
        for d in weights.heads.iter().flatten() {
            d.w.iter().for_each(|r| out.extend_from_slice(r));
            out.extend_from_slice(&d.b);
        }
        self.check_params(&out)?;
        Ok(ParamVector(out))
    }

    /// Advances every LSTM layer by one step in place and returns the top
    /// layer's new hidden vector. With no LSTM layers the input is returned.
    pub fn lstm_step_mut<'a>(&self, params: &[f64], state: &'a mut LstmState, input: &'a [f64]) -> Result<&'a [f64], NnError> {
        self.check_params(params)?;
        if input.len() != self.spec.input_dim {
            return Err(NnError::DimensionMismatch { what: "input", expected: self.spec.input_dim, got: input.len() });
        }
        if state.h.len() != self.layout.lstm.len() || state.h.iter().zip(&self.layout.lstm).any(|(h, l)| h.len() != l.hidden) {
            return Err(NnError::DimensionMismatch { what: "LSTM state", expected: self.layout.lstm.len(), got: state.h.len() });
        }
        let mut z = Vec::new();
        let mut xh = Vec::new();
        for (k, l) in self.layout.lstm.iter().enumerate() {
            xh.clear();
            if k == 0 {
                xh.extend_from_slice(input);
            } else {
                xh.extend_from_slice(&state.h[k - 1]);
            }
            xh.extend_from_slice(&state.h[k]);
            lstm_cell(params, l, &xh, &mut z, &mut state.h[k], &mut state.c[k]);
        }
        Ok(match state.h.last() {
            Some(h) => h.as_slice(),
            None => input,
        })
    }

    /// Pure form of [`Network::lstm_step_mut`]: returns `(output, new state)`.
    pub fn lstm_step(&self, params: &[f64], state: &LstmState, input: &[f64]) -> Result<(Vec<f64>, LstmState), NnError> {
        let mut next = state.clone();
        let out = self.lstm_step_mut(params, &mut next, input)?.to_vec();
        Ok((out, next))
    }

    /// Runs one dense head on a trunk output.
    pub fn head_forward(&self, params: &[f64], head: usize, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_params(params)?;
        let layers = self.layout.heads.get(head).ok_or(NnError::InvalidArchitecture(format!("no head {head}")))?;
        if input.len() != self.spec.trunk_dim() {
            return Err(NnError::DimensionMismatch { what: "head input", expected: self.spec.trunk_dim(), got: input.len() });
        }
        let mut x = input.to_vec();
        for d in layers {
            x = dense_forward(params, d, &x);
        }
        Ok(x)
    }

    /// LSTM over a flat sequence (`T × input_dim`), mean of the per-step top
    /// outputs, then head `head`. Without LSTM layers the sequence must be a
    /// single step and pooling is the identity.
    pub fn forward_pooled(&self, params: &[f64], sequence: &[f64], head: usize) -> Result<Vec<f64>, NnError> {
        let pooled = self.pool_sequence(params, sequence)?;
        self.head_forward(params, head, &pooled)
    }

    pub fn pool_sequence(&self, params: &[f64], sequence: &[f64]) -> Result<Vec<f64>, NnError> {
        let dim = self.spec.input_dim;
        if sequence.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if !sequence.len().is_multiple_of(dim) {
            return Err(NnError::DimensionMismatch { what: "sequence", expected: dim, got: sequence.len() % dim });
        }
        if self.layout.lstm.is_empty() {
            if sequence.len() != dim {
                return Err(NnError::DimensionMismatch { what: "feed-forward input", expected: dim, got: sequence.len() });
            }
            return Ok(sequence.to_vec());
        }
        let steps = sequence.len() / dim;
        let mut state = self.zero_state();
        let mut acc = vec![0.0; self.spec.trunk_dim()];
        for x in sequence.chunks(dim) {
            let h = self.lstm_step_mut(params, &mut state, x)?;
            acc.iter_mut().zip(h).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= steps as f64);
        Ok(acc)
    }
}

/// `z = W·xh + b`, gates, and the state update for one layer.
pub(crate) fn lstm_cell(params: &[f64], l: &LstmLayout, xh: &[f64], z: &mut Vec<f64>, h: &mut [f64], c: &mut [f64]) {
    let hidden = l.hidden;
    affine(params, l.w, l.b, 4 * hidden, xh, z);
    for j in 0..hidden {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[hidden + j]);
        let g = z[2 * hidden + j].tanh();
        let o = sigmoid(z[3 * hidden + j]);
        c[j] = f * c[j] + i * g;
        h[j] = o * c[j].tanh();
    }
}

/// `out = W·x + b` with `W` stored row-major at `w_off`.
pub(crate) fn affine(params: &[f64], w_off: usize, b_off: usize, rows: usize, x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend((0..rows).map(|r| {
        let row = &params[w_off + r * cols..w_off + (r + 1) * cols];
        params[b_off + r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

pub(crate) fn dense_forward(params: &[f64], d: &DenseLayout, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d.units);
    affine(params, d.w, d.b, d.units, x, &mut out);
    d.activation.apply(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn sample_spec() -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim: 2,
            lstm_hidden: vec![5, 4],
            heads: vec![HeadSpec::mlp(&[6], 3, Activation::Identity), HeadSpec::mlp(&[2], 1, Activation::Tanh)],
        }
    }

    /// Scalar reference LSTM cell, written against the unflattened matrices.
    fn oracle_lstm(w: &NetworkWeights, state: &mut LstmState, input: &[f64]) -> Vec<f64> {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut x = input.to_vec();
        for (k, layer) in w.lstm.iter().enumerate() {
            let hdim = layer.b.len() / 4;
            let mut xh = x.clone();
            xh.extend_from_slice(&state.h[k]);
            let mut pre = vec![0.0; 4 * hdim];
            for (r, out) in pre.iter_mut().enumerate() {
                *out = layer.b[r] + layer.w[r].iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>();
            }
            for j in 0..hdim {
                let (i, f, g, o) = (sig(pre[j]), sig(pre[hdim + j]), pre[2 * hdim + j].tanh(), sig(pre[3 * hdim + j]));
                state.c[k][j] = f * state.c[k][j] + i * g;
                state.h[k][j] = o * state.c[k][j].tanh();
            }
            x = state.h[k].clone();
        }
        x
    }

    fn oracle_dense(layers: &[DenseWeights], acts: &[Activation], input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for (l, act) in layers.iter().zip(acts) {
            let mut y: Vec<f64> = l.w.iter().zip(&l.b).map(|(row, b)| b + row.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()).collect();
            for v in y.iter_mut() {
                *v = match act {
                    Activation::Identity => *v,
                    Activation::Relu => {
                        if *v > 0.0 {
                            *v
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => v.tanh(),
                    Activation::Sigmoid => 1.0 / (1.0 + (-*v).exp()),
                    Activation::SoftmaxGrouped(_) => unreachable!(),
                };
            }
            x = y;
        }
        x
    }

    #[test]
    fn param_count_formula() {
        let spec = sample_spec();
        let expected = 4 * 5 * (2 + 5) + 4 * 5 + 4 * 4 * (5 + 4) + 4 * 4 + (4 * 6 + 6) + (6 * 3 + 3) + (4 * 2 + 2) + (2 + 1);
        assert_eq!(spec.param_count(), expected);
    }

    #[test]
    fn relu_passes_nan_through() {
        let mut v = [-1.0, 0.5, f64::NAN];
        Activation::Relu.apply(&mut v);
        assert_eq!(&v[..2], &[0.0, 0.5]);
        assert!(v[2].is_nan());
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let net = Network::new(sample_spec()).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let w = net.unflatten(&p.0).unwrap();
        assert_eq!(net.flatten(&w).unwrap(), p);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let net = Network::new(sample_spec()).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let w = net.unflatten(&p.0).unwrap();
        let bound = 1.0 / 7f64.sqrt();
        assert!(w.lstm[0].w.iter().flatten().all(|x| x.abs() <= bound));
        assert!(w.heads[0][1].b.iter().all(|x| x.abs() <= 1.0 / 6f64.sqrt()));
    }

    #[test]
    fn zero_params_give_half_gates_and_zero_state() {
        let net = Network::new(sample_spec()).unwrap();
        let params = vec![0.0; net.param_count()];
        let (out, state) = net.lstm_step(&params, &net.zero_state(), &[3.0, -1.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(state.c.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_lstm_output() {
        let spec = ArchitectureSpec { input_dim: 1, lstm_hidden: vec![1], heads: vec![HeadSpec::mlp(&[], 1, Activation::Identity)] };
        let net = Network::new(spec).unwrap();
        let mut params = vec![0.0; net.param_count()];
        // b = (i, f, g, o) = (0.3, -0.2, 0.5, 1.1); W unused at zero input/state
        params[8..12].copy_from_slice(&[0.3, -0.2, 0.5, 1.1]);
        let (out, _) = net.lstm_step(&params, &net.zero_state(), &[0.0]).unwrap();
        let c = sigmoid(0.3) * 0.5f64.tanh();
        assert!((out[0] - sigmoid(1.1) * c.tanh()).abs() < 1e-15);
    }

    #[test]
    fn lstm_matches_scalar_oracle() {
        let net = Network::new(sample_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = net.init_params(&mut rng);
            let w = net.unflatten(&p.0).unwrap();
            let (mut s1, mut s2) = (net.zero_state(), net.zero_state());
            for _ in 0..6 {
                let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let a = net.lstm_step_mut(&p.0, &mut s1, &x).unwrap().to_vec();
                let b = oracle_lstm(&w, &mut s2, &x);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn dense_matches_scalar_oracle() {
        let net = Network::new(sample_spec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let p = net.init_params(&mut rng);
            let w = net.unflatten(&p.0).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            for head in 0..2 {
                let acts: Vec<_> = net.spec().heads[head].layers.iter().map(|l| l.activation).collect();
                let a = net.head_forward(&p.0, head, &x).unwrap();
                let b = oracle_dense(&w.heads[head], &acts, &x);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn dense_bias_and_relu() {
        let spec = ArchitectureSpec {
            input_dim: 2,
            lstm_hidden: vec![],
            heads: vec![HeadSpec::mlp(&[], 2, Activation::Identity), HeadSpec::mlp(&[], 2, Activation::Relu)],
        };
        let net = Network::new(spec).unwrap();
        let mut p = vec![0.0; net.param_count()];
        p[4] = 0.7;
        p[5] = -1.3;
        assert_eq!(net.head_forward(&p, 0, &[5.0, 6.0]).unwrap(), vec![0.7, -1.3]);
        p[6..10].copy_from_slice(&[-1.0, 0.0, 0.0, -1.0]);
        assert_eq!(net.head_forward(&p, 1, &[2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn grouped_softmax_sums_to_one() {
        let mut v = vec![0.1, 2.0, -3.0, 5.0, 5.0, 5.0];
        Activation::SoftmaxGrouped(3).apply(&mut v);
        assert!((v[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_errors() {
        let net = Network::new(sample_spec()).unwrap();
        let p = vec![0.0; net.param_count()];
        assert!(matches!(net.lstm_step(&p, &net.zero_state(), &[1.0]), Err(NnError::DimensionMismatch { .. })));
        assert!(matches!(net.lstm_step(&p[1..], &net.zero_state(), &[1.0, 2.0]), Err(NnError::DimensionMismatch { .. })));
        assert!(matches!(net.forward_pooled(&p, &[], 0), Err(NnError::EmptySequence)));
    }

    #[test]
    fn activation_text_round_trip() {
        for a in [Activation::Identity, Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::SoftmaxGrouped(4)] {
            assert_eq!(Activation::parse(&a.to_string()), Some(a));
        }
    }
}
