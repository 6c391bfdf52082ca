//! The BS policy network, the UE power network and the position estimator,
//! plus the decoding of raw network outputs into RIS profiles, feedback
//! messages, bounded transmit powers and positions.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{PhaseSet, Position, RisProfile, UeRegion};
use crate::error::NnError;
use crate::nn::{sigmoid, softmax_in_place, Activation, ArchitectureSpec, HeadSpec, LstmState, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObservationFormat {
    /// `[Re y, Im y]`.
    #[default]
    Stacked,
    /// `[|y|²]`.
    Rss,
}

impl ObservationFormat {
    pub fn dim(self) -> usize {
        match self {
            ObservationFormat::Stacked => 2,
            ObservationFormat::Rss => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObservationFormat::Stacked => "stacked",
            ObservationFormat::Rss => "rss",
        }
    }
}

pub fn observation_encode(y: Complex64, format: ObservationFormat) -> Vec<f64> {
    match format {
        ObservationFormat::Stacked => vec![y.re, y.im],
        ObservationFormat::Rss => vec![y.norm_sqr()],
    }
}

/// Scales raw observations by `1/σ_noise` before encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationEncoder {
    pub format: ObservationFormat,
    pub scale: f64,
}

impl ObservationEncoder {
    pub fn new(format: ObservationFormat, noise_watt: f64) -> Self {
        Self { format, scale: 1.0 / noise_watt.sqrt() }
    }

    pub fn encode(&self, y: Complex64) -> Vec<f64> {
        observation_encode(y * self.scale, self.format)
    }

    pub fn encode_into(&self, y: Complex64, out: &mut Vec<f64>) {
        let s = y * self.scale;
        match self.format {
            ObservationFormat::Stacked => out.extend_from_slice(&[s.re, s.im]),
            ObservationFormat::Rss => out.push(s.norm_sqr()),
        }
    }

    pub fn encode_sequence(&self, ys: &[Complex64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(ys.len() * self.format.dim());
        ys.iter().for_each(|&y| self.encode_into(y, &mut out));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Draw each element's phase index from its softmax distribution.
    #[default]
    Sample,
    /// Most probable index per element; ties go to the lowest index.
    Argmax,
}

/// One-bit feedback: `true` asks the UE to boost its power, `false` to reduce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackBit(bool);

impl FeedbackBit {
    pub const REDUCE: FeedbackBit = FeedbackBit(false);
    pub const BOOST: FeedbackBit = FeedbackBit(true);

    /// `sign(tanh(x))`, with +1 ↦ 1, −1 ↦ 0 and sign(0) ↦ 1.
    pub fn from_preactivation(x: f64) -> Self {
        FeedbackBit(x.tanh() >= 0.0 || x.is_nan())
    }

    pub fn value(self) -> u8 {
        self.0 as u8
    }

    pub fn as_input(self) -> f64 {
        if self.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// How the BS tells the UE which power to use next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// One bit per frame, interpreted by the UE power network.
    #[default]
    OneBit,
    /// The exact power value, computed at the BS.
    ExactPower,
}

/// Payload sent from the BS to the UE after a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeedbackMessage {
    Bit(FeedbackBit),
    Exact(f64),
    /// Open-loop schemes send nothing.
    None,
}

/// Raw policy-network output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `N_ris·|Θ|` logits, grouped per element.
    pub ris_logits: Vec<f64>,
    pub bit_preactivation: f64,
}

/// Per-element softmax over consecutive groups of `levels` logits.
pub fn ris_distribution(logits: &[f64], levels: usize) -> Vec<f64> {
    let mut p = logits.to_vec();
    p.chunks_mut(levels).for_each(softmax_in_place);
    p
}

pub fn decode_profile<R: Rng + ?Sized>(probs: &[f64], phase_set: &PhaseSet, mode: DecodeMode, rng: &mut R) -> RisProfile {
    let levels = phase_set.len();
    let indices = probs
        .chunks(levels)
        .map(|group| {
            let idx = match mode {
                DecodeMode::Argmax => group.iter().enumerate().fold(0, |best, (i, &p)| if p > group[best] { i } else { best }),
                DecodeMode::Sample => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    group
                        .iter()
                        .position(|&p| {
                            acc += p;
                            u < acc
                        })
                        .unwrap_or(levels - 1)
                }
            };
            idx as u8
        })
        .collect();
    RisProfile::new(indices, phase_set).expect("decoded indices are below |Θ|")
}

/// Sizes of the three agent networks and the feed-forward baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSizes {
    pub policy_lstm: Vec<usize>,
    pub policy_ris_hidden: usize,
    pub policy_bit_hidden: usize,
    pub power_lstm: Vec<usize>,
    pub power_hidden: usize,
    pub estimator_lstm: Vec<usize>,
    pub estimator_hidden: Vec<usize>,
    pub supervised_hidden: Vec<usize>,
}

impl AgentSizes {
    pub fn paper() -> Self {
        Self {
            policy_lstm: vec![512, 512],
            policy_ris_hidden: 128,
            policy_bit_hidden: 32,
            power_lstm: vec![512, 512],
            power_hidden: 64,
            estimator_lstm: vec![512, 512],
            estimator_hidden: vec![128, 128],
            supervised_hidden: vec![400, 400, 400, 400],
        }
    }

    pub fn desk() -> Self {
        Self {
            policy_lstm: vec![32, 32],
            policy_ris_hidden: 16,
            policy_bit_hidden: 8,
            power_lstm: vec![32, 32],
            power_hidden: 16,
            estimator_lstm: vec![32, 32],
            estimator_hidden: vec![16, 16],
            supervised_hidden: vec![32, 32, 32, 32],
        }
    }
}

/// BS policy network: LSTM trunk, a RIS branch producing `N_ris·|Θ|` logits
/// and a feedback branch producing one preactivation.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub net: Network,
    pub phase_set: PhaseSet,
    pub n_ris: usize,
    pub feedback: FeedbackMode,
    pub max_power: f64,
}

impl PolicyNet {
    pub fn new(
        sizes: &AgentSizes,
        n_ris: usize,
        phase_set: PhaseSet,
        format: ObservationFormat,
        feedback: FeedbackMode,
        max_power: f64,
    ) -> Result<Self, NnError> {
        let spec = ArchitectureSpec {
            input_dim: format.dim(),
            lstm_hidden: sizes.policy_lstm.clone(),
            heads: vec![
                HeadSpec::mlp(&[sizes.policy_ris_hidden], n_ris * phase_set.len(), Activation::Identity),
                HeadSpec::mlp(&[sizes.policy_bit_hidden], 1, Activation::Identity),
            ],
        };
        Ok(Self { net: Network::new(spec)?, phase_set, n_ris, feedback, max_power })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn forward(&self, params: &[f64], state: &mut LstmState, observation: &[f64]) -> Result<PolicyOutput, NnError> {
        let trunk = self.net.lstm_step_mut(params, state, observation)?.to_vec();
        let ris_logits = self.net.head_forward(params, 0, &trunk)?;
        let bit_preactivation = self.net.head_forward(params, 1, &trunk)?[0];
        Ok(PolicyOutput { ris_logits, bit_preactivation })
    }

    /// One BS decision: the next profile and the feedback for the UE.
    pub fn step<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        state: &mut LstmState,
        observation: &[f64],
        mode: DecodeMode,
        rng: &mut R,
    ) -> Result<(RisProfile, FeedbackMessage), NnError> {
        let out = self.forward(params, state, observation)?;
        if !out.bit_preactivation.is_finite() || out.ris_logits.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFinite("policy output"));
        }
        let probs = ris_distribution(&out.ris_logits, self.phase_set.len());
        let profile = decode_profile(&probs, &self.phase_set, mode, rng);
        let feedback = match self.feedback {
            FeedbackMode::OneBit => FeedbackMessage::Bit(FeedbackBit::from_preactivation(out.bit_preactivation)),
            FeedbackMode::ExactPower => FeedbackMessage::Exact(sigmoid(out.bit_preactivation) * self.max_power),
        };
        Ok((profile, feedback))
    }
}

/// UE power network: LSTM over the received bits, ReLU layer, sigmoid·P_max.
#[derive(Debug, Clone)]
pub struct PowerNet {
    pub net: Network,
    pub max_power: f64,
}

impl PowerNet {
    pub fn new(sizes: &AgentSizes, max_power: f64) -> Result<Self, NnError> {
        let spec = ArchitectureSpec {
            input_dim: 1,
            lstm_hidden: sizes.power_lstm.clone(),
            heads: vec![HeadSpec::mlp(&[sizes.power_hidden], 1, Activation::Identity)],
        };
        Ok(Self { net: Network::new(spec)?, max_power })
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn step(&self, params: &[f64], state: &mut LstmState, bit: FeedbackBit) -> Result<f64, NnError> {
        let input = [bit.as_input()];
        let trunk = self.net.lstm_step_mut(params, state, &input)?.to_vec();
        let pre = self.net.head_forward(params, 0, &trunk)?[0];
        if pre.is_nan() {
            return Err(NnError::NonFinite("power output"));
        }
        Ok(sigmoid(pre) * self.max_power)
    }
}

/// Maps network outputs to meters: `p̂ = center + scale ⊙ raw`, with the
/// region center and `max(half-width, 1 m)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNormalization {
    pub center: [f64; 3],
    pub scale: [f64; 3],
}

impl TargetNormalization {
    pub fn for_region(region: &UeRegion) -> Self {
        Self { center: [region.x_center, region.y_center, region.z], scale: [region.x_half.max(1.0), region.y_half.max(1.0), 1.0] }
    }

    pub fn normalize(&self, p: &Position) -> [f64; 3] {
        let a = p.to_array();
        std::array::from_fn(|i| (a[i] - self.center[i]) / self.scale[i])
    }

    pub fn denormalize(&self, raw: &[f64]) -> Position {
        Position::from_array(std::array::from_fn(|i| self.center[i] + self.scale[i] * raw[i]))
    }
}

/// Position regressor. Recurrent estimators pool LSTM outputs over time;
/// the feed-forward baseline takes the whole encoded sequence as one vector.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub net: Network,
    pub target: TargetNormalization,
}

impl Estimator {
    pub fn recurrent(sizes: &AgentSizes, format: ObservationFormat, target: TargetNormalization) -> Result<Self, NnError> {
        let spec = ArchitectureSpec {
            input_dim: format.dim(),
            lstm_hidden: sizes.estimator_lstm.clone(),
            heads: vec![HeadSpec::mlp(&sizes.estimator_hidden, 3, Activation::Identity)],
        };
        Ok(Self { net: Network::new(spec)?, target })
    }

    pub fn feed_forward(
        sizes: &AgentSizes,
        format: ObservationFormat,
        horizon: usize,
        target: TargetNormalization,
    ) -> Result<Self, NnError> {
        let spec = ArchitectureSpec {
            input_dim: format.dim() * horizon,
            lstm_hidden: Vec::new(),
            heads: vec![HeadSpec::mlp(&sizes.supervised_hidden, 3, Activation::Identity)],
        };
        Ok(Self { net: Network::new(spec)?, target })
    }

    pub fn from_network(net: Network, target: TargetNormalization) -> Self {
        Self { net, target }
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Estimate from an encoded observation sequence (`T × dim`, flat).
    pub fn estimate(&self, params: &[f64], encoded: &[f64]) -> Result<Position, NnError> {
        let raw = self.net.forward_pooled(params, encoded, 0)?;
        Ok(self.target.denormalize(&raw))
    }
}
