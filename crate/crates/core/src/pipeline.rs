//! Three-stage training and evaluation.
//!
//! 1. An initial estimator is fit to episodes with random profiles and
//!    uniform powers.
//! 2. Policy and power networks are evolved with that estimator frozen
//!    inside the fitness.
//! 3. A final estimator is fit to episodes collected under the evolved
//!    agents.
//!
//! Every stage draws its randomness from `derive_seed(master, stage, ·)`, so
//! stages can be rerun in isolation and in any order.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{DecodeMode, Estimator, FeedbackMode, ObservationEncoder, PolicyNet, PowerNet, TargetNormalization};
use crate::baselines;
use crate::channel::Scenario;
use crate::config::{ExperimentConfig, Method, TrainingPlan};
use crate::cosyne::{evolve, Evolution, FitnessReport, GenerationView, NeProblem};
use crate::dataset::{Dataset, TrainingSet};
use crate::error::{Error, NnError, Result};
use crate::nn::{Adam, ArchitectureSpec, Checkpoint, Network, ParamVector, SequenceGradient};
use crate::rollout::{
    episode_power_total, episode_seed, evaluate_block, run_episode_seeded, Agents, Episode, EvalSummary, MultiAgent, RandomController,
    RolloutConfig, SensingController,
};
use crate::util::{derive_seed, rng_from, sha256_hex, streams, SimRng};

/// Mean episodic power may exceed the budget by this factor before a
/// result is flagged, to absorb Monte-Carlo error.
pub const BUDGET_SLACK: f64 = 1.05;

/// Upper bound on the number of partial gradients per minibatch. Chunking
/// depends only on the batch size, so results do not depend on thread count.
const GRAD_CHUNKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub best_epoch: usize,
    /// Validation RMSE in meters of the kept parameters.
    pub val_rmse: f64,
}

fn batch_gradient(net: &Network, params: &[f64], set: &TrainingSet, idx: &[usize]) -> Result<(Vec<f64>, f64)> {
    let chunk = idx.len().div_ceil(GRAD_CHUNKS).max(1);
    let w = 1.0 / idx.len() as f64;
    let parts = idx
        .par_chunks(chunk)
        .map(|c| {
            let g = SequenceGradient::new(net);
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for &i in c {
                loss += g.accumulate(params, set.input(i), set.target(i), w, &mut grad)?;
            }
            Ok((grad, loss))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (g, l) in parts {
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
        loss += l;
    }
    Ok((total, loss))
}

fn mean_loss(net: &Network, params: &[f64], set: &TrainingSet, idx: &[usize]) -> Result<f64> {
    let losses = idx.par_iter().map(|&i| net.pooled_loss(params, set.input(i), set.target(i))).collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / idx.len() as f64)
}

fn rmse_meters(estimator: &Estimator, params: &[f64], set: &TrainingSet, idx: &[usize]) -> Result<f64> {
    let d2 = idx
        .par_iter()
        .map(|&i| Ok(estimator.estimate(params, set.input(i))?.squared_distance(&set.positions[i])))
        .collect::<Result<Vec<_>>>()?;
    Ok((d2.iter().sum::<f64>() / idx.len() as f64).sqrt())
}

fn diverged(e: Error) -> Error {
    match e {
        Error::Nn(NnError::NonFinite(what)) => Error::Diverged(format!("non-finite {what}")),
        e => e,
    }
}

/// Minibatch Adam on MSE over normalized targets. A random
/// `validation_fraction` of the set is held out and the parameters with the
/// lowest validation loss are returned.
pub fn train_regressor(
    estimator: &Estimator,
    init: Vec<f64>,
    set: &TrainingSet,
    plan: &TrainingPlan,
    seed: u64,
) -> Result<(Vec<f64>, TrainReport)> {
    let net = &estimator.net;
    if init.len() != net.param_count() {
        return Err(Error::Invalid(format!("initial parameters have length {}, network needs {}", init.len(), net.param_count())));
    }
    if set.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((plan.validation_fraction * set.len() as f64).round() as usize).min(set.len() - 1);
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    let val = if val.is_empty() { train.clone() } else { val.to_vec() };

    let mut params = init;
    let mut adam = Adam::new(plan.learning_rate, params.len());
    let mut best = (f64::INFINITY, params.clone(), 0);
    let mut epochs = Vec::with_capacity(plan.epochs);
    for epoch in 1..=plan.epochs {
        train.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train.chunks(plan.batch_size) {
            let (grad, loss) = batch_gradient(net, &params, set, batch).map_err(diverged)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            loss_sum += loss;
            adam.step(&mut params, &grad);
        }
        let val_loss = mean_loss(net, &params, set, &val).map_err(diverged)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite validation loss in epoch {epoch}")));
        }
        epochs.push(EpochStats { epoch, train_loss: loss_sum / train.len() as f64, val_loss });
        if val_loss < best.0 {
            best = (val_loss, params.clone(), epoch);
        }
    }
    let (_, params, best_epoch) = best;
    let val_rmse = rmse_meters(estimator, &params, set, &val)?;
    Ok((params, TrainReport { epochs, best_epoch, val_rmse }))
}

#[derive(Debug, Clone)]
pub struct TrainedEstimator {
    pub estimator: Estimator,
    pub params: Vec<f64>,
    pub report: Option<TrainReport>,
}

impl TrainedEstimator {
    /// Checkpoint carrying everything needed to apply the estimator: the
    /// observation scale and the target normalization.
    pub fn checkpoint(&self, encoder: &ObservationEncoder) -> Checkpoint {
        let t = &self.estimator.target;
        let mut c = Checkpoint::new(self.estimator.net.spec().clone(), ParamVector(self.params.clone()))
            .with_meta("role", "estimator")
            .with_meta("format", encoder.format.name())
            .with_meta("input_scale", encoder.scale);
        for (i, axis) in ["x", "y", "z"].iter().enumerate() {
            c = c.with_meta(&format!("center_{axis}"), t.center[i]).with_meta(&format!("scale_{axis}"), t.scale[i]);
        }
        if let Some(r) = &self.report {
            c = c.with_meta("val_rmse", r.val_rmse);
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut target = TargetNormalization { center: [0.0; 3], scale: [0.0; 3] };
        for (i, axis) in ["x", "y", "z"].iter().enumerate() {
            target.center[i] = c.meta_f64(&format!("center_{axis}"))?;
            target.scale[i] = c.meta_f64(&format!("scale_{axis}"))?;
        }
        let net = Network::new(c.spec.clone())?;
        Ok(Self { estimator: Estimator::from_network(net, target), params: c.params.0.clone(), report: None })
    }
}

/// Which closed-loop scheme is evolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Policy plus UE power network, one feedback bit per frame.
    MultiAgent,
    /// Policy only; it sends the exact next power.
    SingleAgent,
}

impl Scheme {
    pub fn method(self) -> Method {
        match self {
            Scheme::MultiAgent => Method::MultiAgent,
            Scheme::SingleAgent => Method::SingleAgent,
        }
    }

    pub fn feedback(self) -> FeedbackMode {
        match self {
            Scheme::MultiAgent => FeedbackMode::OneBit,
            Scheme::SingleAgent => FeedbackMode::ExactPower,
        }
    }
}

/// The evolved networks of one scheme.
#[derive(Debug, Clone)]
pub struct TrainedAgents {
    pub scheme: Scheme,
    pub policy: PolicyNet,
    pub policy_params: Vec<f64>,
    pub power: Option<PowerNet>,
    pub power_params: Vec<f64>,
}

impl TrainedAgents {
    pub fn agents(&self) -> Agents<'_> {
        match &self.power {
            Some(power) => Agents::MultiAgent(MultiAgent {
                policy: &self.policy,
                policy_params: &self.policy_params,
                power,
                power_params: &self.power_params,
            }),
            None => Agents::SingleAgent { policy: &self.policy, params: &self.policy_params },
        }
    }

    /// `[w_policy, w_power]`.
    pub fn genome(&self) -> Vec<f64> {
        [self.policy_params.as_slice(), self.power_params.as_slice()].concat()
    }

    pub fn policy_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.policy.net.spec().clone(), ParamVector(self.policy_params.clone())).with_meta("role", "policy")
    }

    pub fn power_checkpoint(&self) -> Option<Checkpoint> {
        self.power
            .as_ref()
            .map(|p| Checkpoint::new(p.net.spec().clone(), ParamVector(self.power_params.clone())).with_meta("role", "power"))
    }
}

/// Fitness of a joint individual: `N_EP` closed-loop episodes scored with a
/// frozen estimator.
pub struct AgentProblem<'a> {
    pub policy: &'a PolicyNet,
    pub power: Option<&'a PowerNet>,
    pub estimator: &'a Estimator,
    pub estimator_params: &'a [f64],
    pub rollout: &'a RolloutConfig,
    pub scenario: &'a Scenario,
    pub episodes: usize,
    pub budget: f64,
}

impl<'a> AgentProblem<'a> {
    pub fn split<'g>(&self, genome: &'g [f64]) -> (&'g [f64], &'g [f64]) {
        genome.split_at(self.policy.param_count())
    }

    pub fn agents<'g>(&'g self, genome: &'g [f64]) -> Agents<'g> {
        let (wp, wm) = self.split(genome);
        match self.power {
            Some(power) => Agents::MultiAgent(MultiAgent { policy: self.policy, policy_params: wp, power, power_params: wm }),
            None => Agents::SingleAgent { policy: self.policy, params: wp },
        }
    }

    /// The block's episodes, each carrying the frozen estimator's output.
    pub fn episodes(&self, genome: &[f64], block_seed: u64) -> Result<Vec<Episode>> {
        let agents = self.agents(genome);
        let encoder = ObservationEncoder::new(self.rollout.format, self.scenario.params.noise_watt());
        (0..self.episodes)
            .map(|i| {
                let mut c = agents.controller(self.rollout, self.scenario, self.rollout.decode)?;
                let mut ep = run_episode_seeded(c.as_mut(), self.rollout, self.scenario, episode_seed(block_seed, i))?;
                ep.estimate = Some(self.estimator.estimate(self.estimator_params, &encoder.encode_sequence(&ep.observations))?);
                Ok(ep)
            })
            .collect()
    }

    /// Mean episodic power and mean Euclidean error over the block.
    pub fn episode_means(&self, genome: &[f64], block_seed: u64) -> Result<(f64, f64)> {
        episode_means(&self.episodes(genome, block_seed)?)
    }
}

/// Mean of `Σ_t P(t)` and of `‖p̂ − p‖` over estimated episodes.
pub fn episode_means(episodes: &[Episode]) -> Result<(f64, f64)> {
    if episodes.is_empty() {
        return Err(Error::Invalid("no episodes".into()));
    }
    let (mut power, mut dist) = (0.0, 0.0);
    for ep in episodes {
        let est = ep.estimate.ok_or_else(|| Error::Invalid("episode has no estimate".into()))?;
        power += episode_power_total(ep);
        dist += est.distance(&ep.true_position);
    }
    let n = episodes.len() as f64;
    Ok((power / n, dist / n))
}

/// Budget-penalized fitness of a block of estimated episodes.
pub fn block_fitness(episodes: &[Episode], budget: f64) -> Result<FitnessReport> {
    let (p, d) = episode_means(episodes)?;
    Ok(FitnessReport::new(p, d, budget))
}

impl NeProblem for AgentProblem<'_> {
    fn dimension(&self) -> usize {
        self.policy.param_count() + self.power.map_or(0, PowerNet::param_count)
    }

    fn random_individual(&self, rng: &mut SimRng) -> Vec<f64> {
        let mut g = self.policy.net.init_params(rng).0;
        if let Some(p) = self.power {
            g.extend(p.net.init_params(rng).0);
        }
        g
    }

    /// Any failure inside an episode (non-finite network output) culls the
    /// individual.
    fn evaluate(&self, genome: &[f64], block_seed: u64) -> FitnessReport {
        match self.episode_means(genome, block_seed) {
            Ok((p, d)) => FitnessReport::new(p, d, self.budget),
            Err(_) => FitnessReport::culled(),
        }
    }
}

/// Resolved experiment: config plus the derived scenario and rollout settings.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub scenario: Scenario,
    pub rollout: RolloutConfig,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let scenario = cfg.build_scenario()?;
        let rollout = cfg.rollout_config();
        rollout.validate(&scenario)?;
        Ok(Self { cfg, scenario, rollout })
    }

    pub fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.cfg.seed, stream, 0)
    }

    pub fn encoder(&self) -> ObservationEncoder {
        ObservationEncoder::new(self.rollout.format, self.scenario.params.noise_watt())
    }

    pub fn recurrent_estimator(&self) -> Result<Estimator> {
        Ok(Estimator::recurrent(&self.cfg.networks, self.rollout.format, self.cfg.target_normalization())?)
    }

    pub fn supervised_estimator(&self) -> Result<Estimator> {
        Ok(Estimator::feed_forward(&self.cfg.networks, self.rollout.format, self.rollout.horizon, self.cfg.target_normalization())?)
    }

    pub fn policy_net(&self, scheme: Scheme) -> Result<PolicyNet> {
        Ok(PolicyNet::new(
            &self.cfg.networks,
            self.scenario.n_ris(),
            self.scenario.phase_set.clone(),
            self.rollout.format,
            scheme.feedback(),
            self.scenario.max_power_watt(),
        )?)
    }

    pub fn power_net(&self) -> Result<PowerNet> {
        Ok(PowerNet::new(&self.cfg.networks, self.scenario.max_power_watt())?)
    }

    /// Random profiles and uniform powers.
    pub fn random_dataset(&self, n: usize, stream: u64) -> Result<Dataset> {
        Dataset::generate(n, self.seed(stream), &self.rollout, &self.scenario, false, || {
            Ok(Box::new(RandomController::new(&self.scenario)))
        })
    }

    pub fn stage1_dataset(&self) -> Result<Dataset> {
        self.random_dataset(self.cfg.training.stage1_episodes, streams::STAGE1_DATA)
    }

    /// Fits `estimator` to `data`. Without `warm`, parameters start from a
    /// fresh initialization drawn from `stream`.
    pub fn train_estimator(&self, estimator: Estimator, data: &Dataset, stream: u64, warm: Option<Vec<f64>>) -> Result<TrainedEstimator> {
        if data.format != self.rollout.format || data.horizon != self.rollout.horizon {
            return Err(Error::Invalid("dataset format or horizon does not match the configuration".into()));
        }
        let set = TrainingSet::from_episodes(&data.episodes, &self.encoder(), &estimator.target);
        let init = warm.unwrap_or_else(|| estimator.net.init_params(&mut rng_from(derive_seed(self.cfg.seed, stream, 0))).0);
        let (params, report) = train_regressor(&estimator, init, &set, &self.cfg.training, derive_seed(self.cfg.seed, stream, 1))?;
        Ok(TrainedEstimator { estimator, params, report: Some(report) })
    }

    /// Stage 1: the initial estimator.
    pub fn stage1(&self, data: &Dataset) -> Result<TrainedEstimator> {
        self.train_estimator(self.recurrent_estimator()?, data, streams::STAGE1_TRAIN, None)
    }

    /// Stage 2: evolve the agents of `scheme` against the frozen estimator.
    pub fn stage2(
        &self,
        scheme: Scheme,
        initial: &TrainedEstimator,
        on_generation: impl FnMut(&GenerationView<'_>) -> Result<()>,
    ) -> Result<(TrainedAgents, Evolution)> {
        let policy = self.policy_net(scheme)?;
        let power = match scheme {
            Scheme::MultiAgent => Some(self.power_net()?),
            Scheme::SingleAgent => None,
        };
        let ne = self.cfg.ne_config();
        let problem = AgentProblem {
            policy: &policy,
            power: power.as_ref(),
            estimator: &initial.estimator,
            estimator_params: &initial.params,
            rollout: &self.rollout,
            scenario: &self.scenario,
            episodes: ne.episodes_per_eval,
            budget: ne.power_budget,
        };
        let run = evolve(&problem, &ne, self.seed(streams::NE_INIT), on_generation)?;
        let (wp, wm) = problem.split(&run.best);
        let (policy_params, power_params) = (wp.to_vec(), wm.to_vec());
        Ok((TrainedAgents { scheme, policy, policy_params, power, power_params }, run))
    }

    /// Episodes collected under the evolved agents (sampled decoding).
    pub fn stage3_dataset(&self, agents: &TrainedAgents) -> Result<Dataset> {
        let a = agents.agents();
        Dataset::generate(self.cfg.training.stage3_episodes, self.seed(streams::STAGE3_DATA), &self.rollout, &self.scenario, false, || {
            a.controller(&self.rollout, &self.scenario, DecodeMode::Sample)
        })
    }

    /// Stage 3: the final estimator, fresh unless `training.warm_start`.
    pub fn stage3(&self, data: &Dataset, initial: &TrainedEstimator) -> Result<TrainedEstimator> {
        let warm = self.cfg.training.warm_start.then(|| initial.params.clone());
        self.train_estimator(self.recurrent_estimator()?, data, streams::STAGE3_TRAIN, warm)
    }

    /// Held-out block shared by every method, so comparisons are paired.
    pub fn eval_block(&self) -> u64 {
        self.seed(streams::EVAL)
    }

    pub fn evaluate_agents(&self, agents: &TrainedAgents, estimator: &TrainedEstimator, decode: DecodeMode) -> Result<EvalSummary> {
        let a = agents.agents();
        let encoder = self.encoder();
        evaluate_block(
            self.cfg.training.eval_episodes,
            self.eval_block(),
            &self.rollout,
            &self.scenario,
            || a.controller(&self.rollout, &self.scenario, decode),
            |ep| Ok(estimator.estimator.estimate(&estimator.params, &encoder.encode_sequence(&ep.observations))?),
        )
    }

    /// Random profiles, uniform powers, any estimator: the evaluation path of
    /// both the uniform reference and the supervised baseline.
    pub fn evaluate_random_sensing(&self, estimator: &TrainedEstimator) -> Result<EvalSummary> {
        let encoder = self.encoder();
        evaluate_block(
            self.cfg.training.eval_episodes,
            self.eval_block(),
            &self.rollout,
            &self.scenario,
            || -> Result<Box<dyn SensingController + Send>> { Ok(Box::new(RandomController::new(&self.scenario))) },
            |ep| Ok(estimator.estimator.estimate(&estimator.params, &encoder.encode_sequence(&ep.observations))?),
        )
    }

    /// Mean episodic power of `agents` over `10·N_EP` fresh episodes.
    pub fn budget_audit(&self, agents: &TrainedAgents) -> Result<f64> {
        let a = agents.agents();
        let n = 10 * self.cfg.ne.episodes_per_eval;
        let block = self.seed(streams::AUDIT);
        let powers = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut c = a.controller(&self.rollout, &self.scenario, self.rollout.decode)?;
                Ok(run_episode_seeded(c.as_mut(), &self.rollout, &self.scenario, episode_seed(block, i))?.powers.iter().sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(powers.iter().sum::<f64>() / n as f64)
    }

    pub fn row(&self, method: &str, summary: &EvalSummary) -> ResultRow {
        ResultRow {
            method: method.to_string(),
            n_ris: self.scenario.n_ris(),
            noise_dbm: self.scenario.params.noise_power_dbm,
            format: self.rollout.format.name().to_string(),
            rmse_m: summary.rmse,
            mean_power: summary.mean_power,
            budget_ok: summary.mean_power <= BUDGET_SLACK * self.cfg.power_budget(),
            seed: self.cfg.seed,
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub n_ris: usize,
    pub noise_dbm: f64,
    pub format: String,
    pub rmse_m: f64,
    pub mean_power: f64,
    pub budget_ok: bool,
    pub seed: u64,
}

impl ResultRow {
    pub const CSV_HEADER: &'static str = "method,n_ris,noise_dbm,format,rmse_m,mean_power,budget_ok,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method, self.n_ris, self.noise_dbm, self.format, self.rmse_m, self.mean_power, self.budget_ok, self.seed
        )
    }
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(ResultRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Everything produced for one configuration point.
#[derive(Debug, Clone, Default)]
pub struct PointOutcome {
    pub rows: Vec<ResultRow>,
    pub initial: Option<TrainedEstimator>,
    pub multi_agent: Option<SchemeOutcome>,
    pub single_agent: Option<SchemeOutcome>,
}

#[derive(Debug, Clone)]
pub struct SchemeOutcome {
    pub agents: TrainedAgents,
    pub evolution: Evolution,
    pub final_estimator: TrainedEstimator,
    pub audit_power: f64,
    pub summary: EvalSummary,
    /// The evolved agents with the stage-1 estimator, same held-out block.
    pub initial_summary: EvalSummary,
}

impl Pipeline {
    pub fn run_scheme(&self, scheme: Scheme, initial: &TrainedEstimator) -> Result<SchemeOutcome> {
        let (agents, evolution) = self.stage2(scheme, initial, |_| Ok(()))?;
        let data = self.stage3_dataset(&agents)?;
        let final_estimator = self.stage3(&data, initial)?;
        let audit_power = self.budget_audit(&agents)?;
        let summary = self.evaluate_agents(&agents, &final_estimator, self.rollout.decode)?;
        let initial_summary = self.evaluate_agents(&agents, initial, self.rollout.decode)?;
        Ok(SchemeOutcome { agents, evolution, final_estimator, audit_power, summary, initial_summary })
    }

    /// Runs `methods` at this configuration point and returns one row per method.
    pub fn run_methods(&self, methods: &[Method]) -> Result<PointOutcome> {
        let mut out = PointOutcome::default();
        let needs_initial = methods.iter().any(|m| matches!(m, Method::MultiAgent | Method::SingleAgent | Method::Uniform));
        if needs_initial {
            out.initial = Some(self.stage1(&self.stage1_dataset()?)?);
        }
        for &m in methods {
            let initial = out.initial.as_ref();
            let summary = match m {
                Method::MultiAgent | Method::SingleAgent => {
                    let scheme = if m == Method::MultiAgent { Scheme::MultiAgent } else { Scheme::SingleAgent };
                    let o = self.run_scheme(scheme, initial.expect("trained above"))?;
                    let s = o.summary;
                    if self.cfg.sweep.report_argmax {
                        let argmax = self.evaluate_agents(&o.agents, &o.final_estimator, DecodeMode::Argmax)?;
                        out.rows.push(self.row(&format!("{}/argmax", m.name()), &argmax));
                    }
                    match scheme {
                        Scheme::MultiAgent => out.multi_agent = Some(o),
                        Scheme::SingleAgent => out.single_agent = Some(o),
                    }
                    s
                }
                Method::Uniform => self.evaluate_random_sensing(initial.expect("trained above"))?,
                Method::Supervised => self.evaluate_random_sensing(&baselines::train_supervised(self)?)?,
                Method::Fingerprint => baselines::evaluate_fingerprint(self, &baselines::FingerprintDb::build(self)?)?,
            };
            out.rows.push(self.row(m.name(), &summary));
        }
        Ok(out)
    }
}

/// Every point of the sweep grid (n_ris × noise × format), methods in config order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &n in &cfg.sweep.n_ris {
        for &noise in &cfg.sweep.noise_dbm {
            for &format in &cfg.sweep.formats {
                let p = Pipeline::new(cfg.at_point(n, noise, format))?;
                rows.extend(p.run_methods(&cfg.sweep.methods)?.rows);
            }
        }
    }
    Ok(rows)
}

/// Digest of a parameter vector, for before/after comparisons.
pub fn params_digest(params: &[f64]) -> String {
    let bytes: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

/// Architecture of a checkpoint matches `net`.
pub fn check_spec(expected: &ArchitectureSpec, found: &Checkpoint, what: &str) -> Result<()> {
    if &found.spec != expected {
        return Err(Error::Invalid(format!("{what} checkpoint architecture does not match the configuration")));
    }
    Ok(())
}
