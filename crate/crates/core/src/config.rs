//! Experiment configuration: TOML text merged over a preset, validated with
//! field paths, and resolved into the runtime types of the other modules.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSizes, DecodeMode, ObservationFormat, TargetNormalization};
use crate::channel::{dbm_to_watt, ChannelParams, PhaseSet, Position, PowerScaling, Scenario, ScenarioGeometry, UeRegion};
use crate::cosyne::NeConfig;
use crate::error::{Error, Result};
use crate::rollout::{FixedPowerMode, RolloutConfig};
use crate::util::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::config("preset", format!("unknown preset {other:?}, expected paper or desk"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Total element count; the RIS is a square `√N × √N` grid.
    pub n_ris: usize,
    pub bs_position: [f64; 3],
    pub ris_origin: [f64; 3],
    /// Defaults to half a wavelength.
    pub element_spacing_m: Option<f64>,
    pub ue_region: UeRegion,
    pub phase_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub horizon: usize,
    /// Defaults to the maximum power.
    pub initial_power_dbm: Option<f64>,
    pub initial_profile: Option<Vec<u8>>,
    pub format: ObservationFormat,
    pub decode: DecodeMode,
    pub static_channel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeSection {
    pub population: usize,
    pub generations: usize,
    pub p_mut: f64,
    pub sigma_mut: f64,
    pub episodes_per_eval: usize,
    /// Watt-frames; defaults to `0.5·T·P_max`.
    pub power_budget: Option<f64>,
    pub elite_count: usize,
    /// Checkpoint the best individual every this many generations (0 = off).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    pub stage1_episodes: usize,
    pub stage3_episodes: usize,
    pub supervised_episodes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
    /// Start stage 3 from the stage-1 estimator instead of a fresh init.
    pub warm_start: bool,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintPower {
    /// Uniform random power per frame, as for the other random-sensing baselines.
    Uniform,
    /// Constant `P_max`.
    Max,
}

impl FingerprintPower {
    pub fn mode(self, max_power: f64) -> FixedPowerMode {
        match self {
            FingerprintPower::Uniform => FixedPowerMode::Uniform,
            FingerprintPower::Max => FixedPowerMode::Constant(max_power),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerprintConfig {
    pub samples_per_block: usize,
    pub neighbors: usize,
    pub db_power: FingerprintPower,
    pub query_power: FingerprintPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MultiAgent,
    SingleAgent,
    Supervised,
    Fingerprint,
    Uniform,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::MultiAgent, Method::SingleAgent, Method::Supervised, Method::Fingerprint, Method::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Method::MultiAgent => "multi-agent",
            Method::SingleAgent => "single-agent",
            Method::Supervised => "supervised",
            Method::Fingerprint => "fingerprint",
            Method::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_ris: Vec<usize>,
    pub noise_dbm: Vec<f64>,
    pub formats: Vec<ObservationFormat>,
    pub methods: Vec<Method>,
    /// Also report closed-loop schemes with argmax profile decoding.
    #[serde(default)]
    pub report_argmax: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub rollout: RolloutSection,
    pub ne: NeSection,
    pub training: TrainingPlan,
    pub networks: AgentSizes,
    pub fingerprint: FingerprintConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn paper() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioConfig {
                n_ris: 400,
                bs_position: [40.0, -40.0, 10.0],
                ris_origin: [0.0, 0.0, 0.0],
                element_spacing_m: None,
                ue_region: UeRegion { x_center: 20.0, x_half: 15.0, y_center: 20.0, y_half: 20.0, z: -20.0 },
                phase_levels: 2,
            },
            channel: ChannelParams {
                carrier_frequency_hz: 3.5e9,
                ricean_kappa_db: 10.0,
                direct_extra_attenuation_db: 10.0,
                noise_power_dbm: -60.0,
                noise_enabled: true,
                max_power_dbm: 30.0,
                power_scaling: PowerScaling::Sqrt,
            },
            rollout: RolloutSection {
                horizon: 10,
                initial_power_dbm: None,
                initial_profile: None,
                format: ObservationFormat::Stacked,
                decode: DecodeMode::Sample,
                static_channel: false,
            },
            ne: NeSection {
                population: 50,
                generations: 100,
                p_mut: 0.5,
                sigma_mut: 0.5,
                episodes_per_eval: 64,
                power_budget: None,
                elite_count: 2,
                checkpoint_every: 10,
            },
            training: TrainingPlan {
                stage1_episodes: 50_000,
                stage3_episodes: 50_000,
                supervised_episodes: 70_000,
                epochs: 30,
                batch_size: 256,
                learning_rate: 1e-3,
                validation_fraction: 0.05,
                warm_start: false,
                eval_episodes: 2000,
            },
            networks: AgentSizes::paper(),
            fingerprint: FingerprintConfig {
                samples_per_block: 5,
                neighbors: 5,
                db_power: FingerprintPower::Uniform,
                query_power: FingerprintPower::Uniform,
            },
            sweep: SweepConfig {
                n_ris: vec![225, 400, 625, 900, 1225, 1600],
                noise_dbm: vec![-60.0],
                formats: vec![ObservationFormat::Stacked, ObservationFormat::Rss],
                methods: Method::ALL.to_vec(),
                report_argmax: false,
            },
        }
    }

    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.scenario.n_ris = 16;
        c.rollout.horizon = 5;
        c.channel.noise_power_dbm = -80.0;
        c.ne.population = 20;
        c.ne.generations = 50;
        c.training.stage1_episodes = 5000;
        c.training.stage3_episodes = 5000;
        c.training.supervised_episodes = 5000;
        c.training.eval_episodes = 1000;
        c.networks = AgentSizes::desk();
        c.sweep.n_ris = vec![16];
        c.sweep.noise_dbm = vec![-80.0];
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Parses `text` as overrides of `preset`; an empty text yields the preset.
    pub fn from_toml_str(text: &str, preset: Preset) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        let mut base = toml::Value::try_from(Self::preset(preset)).map_err(|e| Error::Format(e.to_string()))?;
        merge(&mut base, toml::Value::Table(overrides));
        let cfg: Self = serde_path_to_error::deserialize(base).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: &str, msg: String| Err(Error::config(path, msg));
        check_square(self.scenario.n_ris, "scenario.n_ris")?;
        if !(2..=256).contains(&self.scenario.phase_levels) {
            return err("scenario.phase_levels", "must lie in 2..=256".into());
        }
        if let Some(s) = self.scenario.element_spacing_m {
            if !(s > 0.0 && s.is_finite()) {
                return err("scenario.element_spacing_m", "must be positive".into());
            }
        }
        self.channel.validate().map_err(|e| Error::config("channel", e.to_string()))?;
        self.geometry().validate().map_err(|e| Error::config("scenario", e.to_string()))?;

        let r = &self.rollout;
        if r.horizon == 0 {
            return err("rollout.horizon", "must be >= 1".into());
        }
        if let Some(p) = r.initial_power_dbm {
            if p.is_nan() || p > self.channel.max_power_dbm {
                return err("rollout.initial_power_dbm", format!("{p} dBm exceeds the maximum power"));
            }
        }
        if let Some(v) = &r.initial_profile {
            if v.len() != self.scenario.n_ris || v.iter().any(|&i| i as usize >= self.scenario.phase_levels) {
                return err("rollout.initial_profile", "needs n_ris entries below phase_levels".into());
            }
        }

        if let Some(b) = self.ne.power_budget {
            if !(b >= 0.0 && b.is_finite()) {
                return err("ne.power_budget", format!("must be finite and >= 0, got {b}"));
            }
        }
        self.ne_config().validate()?;

        let t = &self.training;
        if t.batch_size == 0 {
            return err("training.batch_size", "must be >= 1".into());
        }
        for (name, n) in [
            ("training.stage1_episodes", t.stage1_episodes),
            ("training.stage3_episodes", t.stage3_episodes),
            ("training.supervised_episodes", t.supervised_episodes),
        ] {
            if n < t.batch_size {
                return err(name, format!("{n} episodes is fewer than one batch of {}", t.batch_size));
            }
        }
        if t.epochs == 0 {
            return err("training.epochs", "must be >= 1".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return err("training.learning_rate", "must be positive".into());
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return err("training.validation_fraction", "must lie in [0, 1)".into());
        }
        if t.eval_episodes == 0 {
            return err("training.eval_episodes", "must be >= 1".into());
        }

        let f = &self.fingerprint;
        if f.samples_per_block == 0 {
            return err("fingerprint.samples_per_block", "must be >= 1".into());
        }
        if f.neighbors == 0 {
            return err("fingerprint.neighbors", "must be >= 1".into());
        }

        let s = &self.sweep;
        for (i, &n) in s.n_ris.iter().enumerate() {
            check_square(n, &format!("sweep.n_ris[{i}]"))?;
        }
        if let Some(i) = s.noise_dbm.iter().position(|x| !x.is_finite()) {
            return err(&format!("sweep.noise_dbm[{i}]"), "must be finite".into());
        }
        if s.n_ris.is_empty() || s.noise_dbm.is_empty() || s.formats.is_empty() || s.methods.is_empty() {
            return err("sweep", "every sweep axis needs at least one value".into());
        }
        Ok(())
    }

    pub fn ris_side(&self) -> usize {
        self.scenario.n_ris.isqrt()
    }

    pub fn geometry(&self) -> ScenarioGeometry {
        let side = self.ris_side();
        let s = &self.scenario;
        ScenarioGeometry {
            bs_position: Position::from_array(s.bs_position),
            ris_origin: Position::from_array(s.ris_origin),
            ris_rows: side,
            ris_cols: side,
            element_spacing: s.element_spacing_m.unwrap_or_else(|| self.channel.wavelength() / 2.0),
            ue_region: s.ue_region,
        }
    }

    pub fn phase_set(&self) -> PhaseSet {
        PhaseSet::uniform(self.scenario.phase_levels).expect("validated level count")
    }

    pub fn build_scenario(&self) -> Result<Scenario> {
        Ok(Scenario::new(self.geometry(), self.channel.clone(), self.phase_set())?)
    }

    pub fn max_power_watt(&self) -> f64 {
        self.channel.max_power_watt()
    }

    pub fn power_budget(&self) -> f64 {
        self.ne.power_budget.unwrap_or(0.5 * self.rollout.horizon as f64 * self.max_power_watt())
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        let r = &self.rollout;
        RolloutConfig {
            horizon: r.horizon,
            initial_power: r.initial_power_dbm.map_or(self.max_power_watt(), dbm_to_watt),
            initial_profile: r.initial_profile.clone(),
            format: r.format,
            decode: r.decode,
            static_channel: r.static_channel,
        }
    }

    pub fn ne_config(&self) -> NeConfig {
        let n = &self.ne;
        NeConfig {
            population: n.population,
            generations: n.generations,
            p_mut: n.p_mut,
            sigma_mut: n.sigma_mut,
            episodes_per_eval: n.episodes_per_eval,
            power_budget: self.power_budget(),
            elite_count: n.elite_count,
        }
    }

    pub fn target_normalization(&self) -> TargetNormalization {
        TargetNormalization::for_region(&self.scenario.ue_region)
    }

    /// Copy of this config at one sweep point.
    pub fn at_point(&self, n_ris: usize, noise_dbm: f64, format: ObservationFormat) -> Self {
        let mut c = self.clone();
        c.scenario.n_ris = n_ris;
        c.channel.noise_power_dbm = noise_dbm;
        c.rollout.format = format;
        if c.rollout.initial_profile.as_ref().is_some_and(|v| v.len() != n_ris) {
            c.rollout.initial_profile = None;
        }
        c
    }

    /// Stable digest of everything that affects results.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Run directory under `root`, named by the first 16 hex digits of the hash.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.hash()[..16])
    }
}

fn check_square(n: usize, path: &str) -> Result<()> {
    let side = n.isqrt();
    if n == 0 || side * side != n {
        return Err(Error::config(path, format!("{n} is not a positive perfect square")));
    }
    Ok(())
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_paper_preset() {
        let c = ExperimentConfig::from_toml_str("", Preset::Paper).unwrap();
        assert_eq!(c, ExperimentConfig::paper());
        assert_eq!(c.rollout.horizon, 10);
        assert!((c.max_power_watt() - 1.0).abs() < 1e-12);
        assert!((c.power_budget() - 5.0).abs() < 1e-12);
        assert!((c.channel.kappa_linear() - 10.0).abs() < 1e-12);
        assert!((c.channel.noise_watt() - 1e-9).abs() < 1e-24);
        assert_eq!(c.rollout_config().initial_power, c.max_power_watt());
    }

    #[test]
    fn desk_preset() {
        let c = ExperimentConfig::from_toml_str("", Preset::Desk).unwrap();
        assert_eq!(c.scenario.n_ris, 16);
        assert_eq!(c.ris_side(), 4);
        assert_eq!(c.rollout.horizon, 5);
        assert_eq!((c.ne.population, c.ne.generations, c.ne.episodes_per_eval), (20, 50, 64));
        assert_eq!(c.training.stage1_episodes, 5000);
        assert_eq!(c.channel.noise_power_dbm, -80.0);
        assert!((c.power_budget() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn overrides_merge_into_nested_tables() {
        let text = "seed = 9\n[ne]\npopulation = 12\n[scenario.ue_region]\nx_half = 2.0\n";
        let c = ExperimentConfig::from_toml_str(text, Preset::Desk).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.ne.population, 12);
        assert_eq!(c.ne.generations, 50);
        assert_eq!(c.scenario.ue_region.x_half, 2.0);
        assert_eq!(c.scenario.ue_region.y_half, 20.0);
    }

    fn path_of(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text, Preset::Paper) {
            Err(Error::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        assert_eq!(path_of("[scenario]\nn_ris = 226"), "scenario.n_ris");
        assert_eq!(path_of("[ne]\np_mut = 1.5"), "ne.p_mut");
        assert_eq!(path_of("[ne]\npower_budget = -1.0"), "ne.power_budget");
        assert_eq!(path_of("[ne]\npopulation = \"many\""), "ne.population");
        assert_eq!(path_of("[rollout]\nformat = \"iq\""), "rollout.format");
        assert_eq!(path_of("[rollout]\nhorizon = 0"), "rollout.horizon");
        assert_eq!(path_of("[training]\nstage1_episodes = 10"), "training.stage1_episodes");
        assert_eq!(path_of("[sweep]\nn_ris = [16, 17]"), "sweep.n_ris[1]");
        assert_eq!(path_of("bogus = 1"), "bogus");
        assert_eq!(path_of("[ne\n"), "<file>");
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = ExperimentConfig::desk();
        let back = ExperimentConfig::from_toml_str(&c.to_toml(), Preset::Paper).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn sweep_point_copy() {
        let c = ExperimentConfig::desk().at_point(25, -70.0, ObservationFormat::Rss);
        assert_eq!(c.geometry().n_ris(), 25);
        assert_eq!(c.channel.noise_power_dbm, -70.0);
        assert_eq!(c.rollout.format, ObservationFormat::Rss);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn default_spacing_is_half_wavelength() {
        let c = ExperimentConfig::paper();
        assert!((c.geometry().element_spacing - c.channel.wavelength() / 2.0).abs() < 1e-15);
        c.build_scenario().unwrap();
    }
}
