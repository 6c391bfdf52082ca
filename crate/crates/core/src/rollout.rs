//! The T-frame active-sensing loop.
//!
//! Frame `t` transmits with the current `(P(t), Φ(t))`, the BS observes
//! `y(t)`, its policy emits `Φ(t+1)` and the feedback `b(t)`, and the UE maps
//! `b(t)` to `P(t+1)`. Environment randomness (UE position, fading, noise)
//! and policy randomness (profile sampling) come from separate streams, so
//! two controllers evaluated on the same episode seed see identical
//! positions, channels and noise.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{DecodeMode, FeedbackBit, FeedbackMessage, ObservationEncoder, ObservationFormat, PolicyNet, PowerNet};
use crate::channel::{sample_ue_position, PhaseSet, Position, RisProfile, Scenario};
use crate::error::{Error, NnError, Result};
use crate::nn::LstmState;
use crate::util::{derive_seed, rng_from, streams, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    /// P(1) in watts.
    pub initial_power: f64,
    /// Φ(1); `None` is the all-zeros profile.
    pub initial_profile: Option<Vec<u8>>,
    pub format: ObservationFormat,
    pub decode: DecodeMode,
    /// Hold one fading realization for the whole episode instead of
    /// redrawing per frame.
    pub static_channel: bool,
}

impl RolloutConfig {
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be >= 1".into()));
        }
        let p_max = scenario.max_power_watt();
        if !(0.0..=p_max).contains(&self.initial_power) {
            return Err(Error::Invalid(format!("initial power {} outside [0, {p_max}]", self.initial_power)));
        }
        self.first_profile(scenario)?;
        Ok(())
    }

    pub fn first_profile(&self, scenario: &Scenario) -> Result<RisProfile> {
        match &self.initial_profile {
            None => Ok(RisProfile::zeros(scenario.n_ris())),
            Some(v) if v.len() != scenario.n_ris() => {
                Err(Error::Invalid(format!("initial profile has {} entries, RIS has {}", v.len(), scenario.n_ris())))
            }
            Some(v) => Ok(RisProfile::new(v.clone(), &scenario.phase_set)?),
        }
    }
}

/// Transmission settings for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameControl {
    pub profile: RisProfile,
    pub power: f64,
}

/// Anything that picks `(Φ, P)` frame by frame from past observations.
pub trait SensingController {
    /// Settings for frame 1.
    fn start(&mut self, rng: &mut SimRng) -> Result<FrameControl>;
    /// Reacts to `y(t)`: returns the feedback sent after frame t and the
    /// settings for frame t+1.
    fn react(&mut self, y: Complex64, rng: &mut SimRng) -> Result<(FeedbackMessage, FrameControl)>;
}

/// The UE side of the one-bit scheme. Its only input is a [`FeedbackBit`].
pub struct UeAgent<'a> {
    net: &'a PowerNet,
    params: &'a [f64],
    state: LstmState,
    bits_received: usize,
}

impl<'a> UeAgent<'a> {
    pub fn new(net: &'a PowerNet, params: &'a [f64]) -> Self {
        Self { net, params, state: net.net.zero_state(), bits_received: 0 }
    }

    pub fn receive(&mut self, bit: FeedbackBit) -> Result<f64, NnError> {
        self.bits_received += 1;
        self.net.step(self.params, &mut self.state, bit)
    }

    pub fn bits_received(&self) -> usize {
        self.bits_received
    }
}

/// BS side: the policy network plus its recurrent state.
pub struct BsAgent<'a> {
    net: &'a PolicyNet,
    params: &'a [f64],
    state: LstmState,
    encoder: ObservationEncoder,
    mode: DecodeMode,
}

impl<'a> BsAgent<'a> {
    pub fn new(net: &'a PolicyNet, params: &'a [f64], encoder: ObservationEncoder, mode: DecodeMode) -> Self {
        Self { net, params, state: net.net.zero_state(), encoder, mode }
    }

    pub fn decide(&mut self, y: Complex64, rng: &mut SimRng) -> Result<(RisProfile, FeedbackMessage), NnError> {
        let obs = self.encoder.encode(y);
        self.net.step(self.params, &mut self.state, &obs, self.mode, rng)
    }
}

/// BS policy plus UE power network, coupled only through one bit per frame.
pub struct MultiAgentController<'a> {
    bs: BsAgent<'a>,
    ue: UeAgent<'a>,
    first: FrameControl,
}

impl<'a> MultiAgentController<'a> {
    pub fn new(bs: BsAgent<'a>, ue: UeAgent<'a>, first: FrameControl) -> Self {
        Self { bs, ue, first }
    }

    pub fn ue(&self) -> &UeAgent<'a> {
        &self.ue
    }
}

impl SensingController for MultiAgentController<'_> {
    fn start(&mut self, _rng: &mut SimRng) -> Result<FrameControl> {
        Ok(self.first.clone())
    }

    fn react(&mut self, y: Complex64, rng: &mut SimRng) -> Result<(FeedbackMessage, FrameControl)> {
        let (profile, msg) = self.bs.decide(y, rng)?;
        let FeedbackMessage::Bit(bit) = msg else {
            return Err(Error::Invalid("multi-agent controller needs a one-bit policy".into()));
        };
        let power = self.ue.receive(bit)?;
        Ok((msg, FrameControl { profile, power }))
    }
}

/// Single-agent variant: the BS sends the exact next power.
pub struct SingleAgentController<'a> {
    bs: BsAgent<'a>,
    first: FrameControl,
}

impl<'a> SingleAgentController<'a> {
    pub fn new(bs: BsAgent<'a>, first: FrameControl) -> Self {
        Self { bs, first }
    }
}

impl SensingController for SingleAgentController<'_> {
    fn start(&mut self, _rng: &mut SimRng) -> Result<FrameControl> {
        Ok(self.first.clone())
    }

    fn react(&mut self, y: Complex64, rng: &mut SimRng) -> Result<(FeedbackMessage, FrameControl)> {
        let (profile, msg) = self.bs.decide(y, rng)?;
        let FeedbackMessage::Exact(power) = msg else {
            return Err(Error::Invalid("single-agent controller needs an exact-power policy".into()));
        };
        Ok((msg, FrameControl { profile, power }))
    }
}

/// Uniformly random profiles and i.i.d. `U[0, P_max]` powers.
pub struct RandomController<'a> {
    phase_set: &'a PhaseSet,
    n_ris: usize,
    max_power: f64,
}

impl<'a> RandomController<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self { phase_set: &scenario.phase_set, n_ris: scenario.n_ris(), max_power: scenario.max_power_watt() }
    }

    fn draw(&self, rng: &mut SimRng) -> FrameControl {
        let profile = RisProfile::random(self.n_ris, self.phase_set, rng);
        let power = rng.random::<f64>() * self.max_power;
        FrameControl { profile, power }
    }
}

impl SensingController for RandomController<'_> {
    fn start(&mut self, rng: &mut SimRng) -> Result<FrameControl> {
        Ok(self.draw(rng))
    }

    fn react(&mut self, _y: Complex64, rng: &mut SimRng) -> Result<(FeedbackMessage, FrameControl)> {
        Ok((FeedbackMessage::None, self.draw(rng)))
    }
}

/// Power law of a non-adaptive profile sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "watts")]
pub enum FixedPowerMode {
    Uniform,
    Constant(f64),
}

/// A predetermined profile sequence, as used by fingerprinting.
pub struct FixedSequenceController<'a> {
    profiles: &'a [RisProfile],
    power: FixedPowerMode,
    max_power: f64,
    t: usize,
}

impl<'a> FixedSequenceController<'a> {
    pub fn new(profiles: &'a [RisProfile], power: FixedPowerMode, max_power: f64) -> Self {
        Self { profiles, power, max_power, t: 0 }
    }

    fn next(&mut self, rng: &mut SimRng) -> FrameControl {
        let profile = self.profiles[self.t.min(self.profiles.len() - 1)].clone();
        self.t += 1;
        let power = match self.power {
            FixedPowerMode::Uniform => rng.random::<f64>() * self.max_power,
            FixedPowerMode::Constant(p) => p,
        };
        FrameControl { profile, power }
    }
}

impl SensingController for FixedSequenceController<'_> {
    fn start(&mut self, rng: &mut SimRng) -> Result<FrameControl> {
        self.t = 0;
        Ok(self.next(rng))
    }

    fn react(&mut self, _y: Complex64, rng: &mut SimRng) -> Result<(FeedbackMessage, FrameControl)> {
        Ok((FeedbackMessage::None, self.next(rng)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub true_position: Position,
    pub observations: Vec<Complex64>,
    pub profiles: Vec<RisProfile>,
    pub powers: Vec<f64>,
    pub feedback: Vec<FeedbackMessage>,
    pub estimate: Option<Position>,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    pub fn rss(&self) -> Vec<f64> {
        self.observations.iter().map(|y| y.norm_sqr()).collect()
    }
}

/// `Σ_t P(t)` over the episode.
pub fn episode_power_total(episode: &Episode) -> f64 {
    episode.powers.iter().sum()
}

/// Environment and policy RNG streams for one episode seed.
pub fn episode_rngs(seed: u64) -> (SimRng, SimRng) {
    (rng_from(derive_seed(seed, streams::EPISODE_ENV, 0)), rng_from(derive_seed(seed, streams::EPISODE_POLICY, 0)))
}

/// Runs one episode for a UE at `position` (drawn by the caller).
pub fn run_episode_at<C: SensingController + ?Sized>(
    controller: &mut C,
    cfg: &RolloutConfig,
    scenario: &Scenario,
    position: Position,
    env: &mut SimRng,
    policy_rng: &mut SimRng,
) -> Result<Episode> {
    let links = scenario.link_geometry(&position)?;
    let t_max = cfg.horizon;
    let mut ep = Episode {
        true_position: position,
        observations: Vec::with_capacity(t_max),
        profiles: Vec::with_capacity(t_max),
        powers: Vec::with_capacity(t_max),
        feedback: Vec::with_capacity(t_max),
        estimate: None,
    };
    let p_max = scenario.max_power_watt();
    let mut frame = controller.start(policy_rng)?;
    let mut fixed = cfg.static_channel.then(|| scenario.draw_channel(&links, env));
    for _ in 0..t_max {
        let realization = match &mut fixed {
            Some(h) => h.clone(),
            None => scenario.draw_channel(&links, env),
        };
        let power = frame.power.clamp(0.0, p_max);
        let y = scenario.synthesize_observation(&realization, &frame.profile, power, env)?;
        let (msg, next) = controller.react(y, policy_rng)?;
        ep.observations.push(y);
        ep.profiles.push(frame.profile);
        ep.powers.push(power);
        ep.feedback.push(msg);
        frame = next;
    }
    Ok(ep)
}

/// Runs one episode from a single seed; the UE position is the first draw
/// of the environment stream.
pub fn run_episode_seeded<C: SensingController + ?Sized>(
    controller: &mut C,
    cfg: &RolloutConfig,
    scenario: &Scenario,
    seed: u64,
) -> Result<Episode> {
    let (mut env, mut pol) = episode_rngs(seed);
    let position = sample_ue_position(&scenario.geometry, &mut env);
    run_episode_at(controller, cfg, scenario, position, &mut env, &mut pol)
}

/// Policy and power networks bound to their parameters.
#[derive(Clone, Copy)]
pub struct MultiAgent<'a> {
    pub policy: &'a PolicyNet,
    pub policy_params: &'a [f64],
    pub power: &'a PowerNet,
    pub power_params: &'a [f64],
}

/// Either closed-loop scheme, as evaluated by the pipeline.
#[derive(Clone, Copy)]
pub enum Agents<'a> {
    MultiAgent(MultiAgent<'a>),
    SingleAgent { policy: &'a PolicyNet, params: &'a [f64] },
}

impl<'a> Agents<'a> {
    pub fn controller(&self, cfg: &RolloutConfig, scenario: &Scenario, mode: DecodeMode) -> Result<Box<dyn SensingController + Send + 'a>> {
        let encoder = ObservationEncoder::new(cfg.format, scenario.params.noise_watt());
        let first = FrameControl { profile: cfg.first_profile(scenario)?, power: cfg.initial_power };
        Ok(match *self {
            Agents::MultiAgent(m) => Box::new(MultiAgentController::new(
                BsAgent::new(m.policy, m.policy_params, encoder, mode),
                UeAgent::new(m.power, m.power_params),
                first,
            )),
            Agents::SingleAgent { policy, params } => {
                Box::new(SingleAgentController::new(BsAgent::new(policy, params, encoder, mode), first))
            }
        })
    }
}

/// `run_episode` with the learned agents: samples `p`, zero-initializes both
/// recurrent states and rolls out `T` frames.
pub fn run_episode(agents: &MultiAgent<'_>, cfg: &RolloutConfig, scenario: &Scenario, seed: u64) -> Result<Episode> {
    let mut c = Agents::MultiAgent(*agents).controller(cfg, scenario, cfg.decode)?;
    run_episode_seeded(c.as_mut(), cfg, scenario, seed)
}

/// Random profiles and uniform powers, no agents.
pub fn run_random_episode(cfg: &RolloutConfig, scenario: &Scenario, seed: u64) -> Result<Episode> {
    run_episode_seeded(&mut RandomController::new(scenario), cfg, scenario, seed)
}

/// Aggregate accuracy and power over a block of episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub rmse: f64,
    pub mean_distance: f64,
    pub mean_power: f64,
}

impl EvalSummary {
    /// Order-fixed reduction over `(squared error, distance, power)` triples.
    pub fn from_samples(samples: &[(f64, f64, f64)]) -> Self {
        let n = samples.len() as f64;
        let (se, d, p) = samples.iter().fold((0.0, 0.0, 0.0), |a, s| (a.0 + s.0, a.1 + s.1, a.2 + s.2));
        Self { episodes: samples.len(), rmse: (se / n).sqrt(), mean_distance: d / n, mean_power: p / n }
    }
}

/// Seed of episode `index` in the block `block_seed`.
pub fn episode_seed(block_seed: u64, index: usize) -> u64 {
    derive_seed(block_seed, streams::EVAL, index as u64)
}

/// Runs `n` episodes (in parallel, reduced in index order) with a fresh
/// controller per episode and scores each with `locate`.
pub fn evaluate_block<'a, F, L>(
    n: usize,
    block_seed: u64,
    cfg: &RolloutConfig,
    scenario: &Scenario,
    make: F,
    locate: L,
) -> Result<EvalSummary>
where
    F: Fn() -> Result<Box<dyn SensingController + Send + 'a>> + Sync,
    L: Fn(&Episode) -> Result<Position> + Sync,
{
    if n == 0 {
        return Err(Error::Invalid("need at least one evaluation episode".into()));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = make()?;
            let ep = run_episode_seeded(c.as_mut(), cfg, scenario, episode_seed(block_seed, i))?;
            let est = locate(&ep)?;
            let d2 = est.squared_distance(&ep.true_position);
            Ok((d2, d2.sqrt(), episode_power_total(&ep)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::FeedbackMode;
    use crate::testutil::{scenario, tiny_sizes};

    struct Nets {
        policy: PolicyNet,
        power: PowerNet,
        wp: Vec<f64>,
        wm: Vec<f64>,
    }

    fn nets(s: &Scenario, seed: u64) -> Nets {
        let sizes = tiny_sizes();
        let policy =
            PolicyNet::new(&sizes, s.n_ris(), s.phase_set.clone(), ObservationFormat::Stacked, FeedbackMode::OneBit, s.max_power_watt())
                .unwrap();
        let power = PowerNet::new(&sizes, s.max_power_watt()).unwrap();
        let mut rng = rng_from(seed);
        let wp = policy.net.init_params(&mut rng).0;
        let wm = power.net.init_params(&mut rng).0;
        Nets { policy, power, wp, wm }
    }

    impl Nets {
        fn agents(&self) -> MultiAgent<'_> {
            MultiAgent { policy: &self.policy, policy_params: &self.wp, power: &self.power, power_params: &self.wm }
        }
    }

    fn cfg(s: &Scenario, horizon: usize) -> RolloutConfig {
        RolloutConfig {
            horizon,
            initial_power: s.max_power_watt(),
            initial_profile: None,
            format: ObservationFormat::Stacked,
            decode: DecodeMode::Sample,
            static_channel: false,
        }
    }

    #[test]
    fn single_frame_episode() {
        let s = scenario(3, true);
        let n = nets(&s, 1);
        let ep = run_episode(&n.agents(), &cfg(&s, 1), &s, 7).unwrap();
        assert_eq!((ep.observations.len(), ep.profiles.len(), ep.powers.len(), ep.feedback.len()), (1, 1, 1, 1));
        assert_eq!(ep.powers[0], s.max_power_watt());
        assert_eq!(ep.profiles[0], RisProfile::zeros(9));
    }

    #[test]
    fn replay_is_bit_identical() {
        let s = scenario(3, true);
        let n = nets(&s, 2);
        let a = run_episode(&n.agents(), &cfg(&s, 10), &s, 99).unwrap();
        let b = run_episode(&n.agents(), &cfg(&s, 10), &s, 99).unwrap();
        assert_eq!(a, b);
        let c = run_episode(&n.agents(), &cfg(&s, 10), &s, 100).unwrap();
        assert_ne!(a.true_position, c.true_position);
    }

    #[test]
    fn zero_power_silences_later_frames() {
        let s = scenario(3, false);
        let mut n = nets(&s, 3);
        let out = n.power.net.layout().heads[0][1];
        n.wm[out.w..out.w + out.fan_in].fill(0.0);
        n.wm[out.b] = -1e3;
        let ep = run_episode(&n.agents(), &cfg(&s, 10), &s, 5).unwrap();
        assert!(ep.observations[0].norm() > 0.0);
        assert!(ep.observations[1..].iter().all(|y| *y == Complex64::new(0.0, 0.0)));
        assert!(ep.powers[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn random_episode_power_and_phase_frequencies() {
        let s = scenario(4, true);
        let c = cfg(&s, 10);
        let episodes = 10_000;
        let mut total = 0.0;
        let mut ones = vec![0usize; s.n_ris()];
        for i in 0..episodes {
            let ep = run_random_episode(&c, &s, i).unwrap();
            assert!(ep.powers.iter().all(|p| (0.0..=s.max_power_watt()).contains(p)));
            total += episode_power_total(&ep);
            for prof in &ep.profiles {
                for (k, &idx) in prof.indices().iter().enumerate() {
                    ones[k] += idx as usize;
                }
            }
        }
        let mean = total / episodes as f64;
        assert!((mean - 5.0).abs() < 0.05, "mean episodic power {mean}");
        let frames = (episodes * 10) as f64;
        for k in ones {
            assert!((k as f64 / frames - 0.5).abs() < 0.01);
        }
        let a = run_random_episode(&c, &s, 3).unwrap();
        assert_eq!(a, run_random_episode(&c, &s, 3).unwrap());
    }

    #[test]
    fn power_total_arithmetic() {
        let mut ep = run_random_episode(&cfg(&scenario(1, true), 10), &scenario(1, true), 0).unwrap();
        ep.powers = vec![0.0; 10];
        assert_eq!(episode_power_total(&ep), 0.0);
        ep.powers = vec![1.0; 10];
        assert_eq!(episode_power_total(&ep), 10.0);
    }

    #[test]
    fn decisions_ignore_future_observations() {
        let s = scenario(3, true);
        let n = nets(&s, 4);
        let enc = ObservationEncoder::new(ObservationFormat::Stacked, s.params.noise_watt());
        let ys: Vec<Complex64> = (0..8).map(|i| Complex64::new(1e-5 * i as f64, -2e-5 * i as f64)).collect();
        let decide_all = |ys: &[Complex64]| {
            let mut bs = BsAgent::new(&n.policy, &n.wp, enc, DecodeMode::Sample);
            let mut rng = rng_from(11);
            ys.iter().map(|&y| bs.decide(y, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        let base = decide_all(&ys);
        for t in 0..ys.len() - 1 {
            let mut alt = ys.clone();
            alt[t + 1] = Complex64::new(3e-4, 7e-4);
            let other = decide_all(&alt);
            assert_eq!(base[..=t], other[..=t]);
        }
    }

    #[test]
    fn ue_powers_are_a_function_of_the_bits() {
        let s = scenario(3, true);
        let n = nets(&s, 5);
        let c = cfg(&s, 10);
        let mut ctrl = MultiAgentController::new(
            BsAgent::new(&n.policy, &n.wp, ObservationEncoder::new(c.format, s.params.noise_watt()), c.decode),
            UeAgent::new(&n.power, &n.wm),
            FrameControl { profile: c.first_profile(&s).unwrap(), power: c.initial_power },
        );
        let ep = run_episode_seeded(&mut ctrl, &c, &s, 42).unwrap();
        assert_eq!(ctrl.ue().bits_received(), 10);
        let mut ue = UeAgent::new(&n.power, &n.wm);
        for t in 1..10 {
            let FeedbackMessage::Bit(b) = ep.feedback[t - 1] else { panic!("expected a bit") };
            assert_eq!(ue.receive(b).unwrap(), ep.powers[t]);
        }
    }

    #[test]
    fn static_channel_repeats_observations() {
        let s = scenario(2, false);
        let mut c = cfg(&s, 5);
        c.static_channel = true;
        let profiles = vec![RisProfile::zeros(4)];
        let mut ctrl = FixedSequenceController::new(&profiles, FixedPowerMode::Constant(0.5), s.max_power_watt());
        let ep = run_episode_seeded(&mut ctrl, &c, &s, 8).unwrap();
        assert!(ep.observations.iter().all(|y| *y == ep.observations[0]));
        c.static_channel = false;
        let ep = run_episode_seeded(&mut ctrl, &c, &s, 8).unwrap();
        assert!(ep.observations[1] != ep.observations[0]);
    }

    #[test]
    fn oracle_and_constant_estimators() {
        let s = scenario(1, true);
        let c = cfg(&s, 2);
        let make = || -> Result<Box<dyn SensingController + Send>> { Ok(Box::new(RandomController::new(&s))) };
        let oracle = evaluate_block(200, 1, &c, &s, make, |ep| Ok(ep.true_position)).unwrap();
        assert_eq!(oracle.rmse, 0.0);
        let center = s.geometry.ue_region.center();
        let constant = evaluate_block(20_000, 2, &c, &s, make, |_| Ok(center)).unwrap();
        let expected = ((30.0f64.powi(2) + 40.0f64.powi(2)) / 12.0).sqrt();
        assert!((constant.rmse - expected).abs() / expected < 0.02, "rmse {}", constant.rmse);
        assert_eq!(constant, evaluate_block(20_000, 2, &c, &s, make, |_| Ok(center)).unwrap());
        assert!((constant.mean_power - 1.0).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_config() {
        let s = scenario(2, true);
        let mut c = cfg(&s, 0);
        assert!(c.validate(&s).is_err());
        c.horizon = 3;
        c.initial_power = 2.0;
        assert!(c.validate(&s).is_err());
        c.initial_power = 0.5;
        c.initial_profile = Some(vec![0, 1, 0]);
        assert!(c.validate(&s).is_err());
        c.initial_profile = Some(vec![0, 1, 0, 1]);
        assert!(c.validate(&s).is_ok());
    }
}
