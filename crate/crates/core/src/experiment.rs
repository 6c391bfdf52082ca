//! On-disk run directories.
//!
//! A run lives under `<root>/<config-hash prefix>/` and holds the resolved
//! config, a JSON manifest and the artifacts of every stage:
//!
//! ```text
//! config.toml
//! manifest.json            config hash, artifact digests, logged metrics
//! stage1/data.bin          random-sensing episodes
//! stage1/estimator.ckpt
//! <scheme>/policy.ckpt     scheme is multi-agent or single-agent
//! <scheme>/power.ckpt      multi-agent only
//! <scheme>/generations.csv
//! <scheme>/checkpoints/gen-NNNN.{policy,power}.ckpt
//! <scheme>/data.bin        episodes under the evolved agents
//! <scheme>/estimator.ckpt
//! supervised/data.bin
//! supervised/estimator.ckpt
//! fingerprint/db.bin
//! <method>/eval-<decode>.csv
//! results.csv              every eval row logged so far
//! sweep/results.csv
//! ```
//!
//! The manifest has no timestamps, so two runs of the same config produce
//! byte-identical directories.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::DecodeMode;
use crate::baselines::{self, FingerprintDb};
use crate::config::{ExperimentConfig, Method};
use crate::cosyne::{Evolution, GenerationStats};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::pipeline::{check_spec, results_csv, run_sweep, Pipeline, ResultRow, Scheme, TrainedAgents, TrainedEstimator};
use crate::rollout::EvalSummary;
use crate::util::sha256_hex;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// Relative path to sha256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    /// Logged evaluation rows keyed by `<method>/<decode>`.
    pub evals: BTreeMap<String, ResultRow>,
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Lock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// An open, locked run directory.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: Manifest,
    _lock: Lock,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl RunDir {
    /// Opens (creating if needed) the run directory of `cfg` under `root`.
    /// An existing directory must carry the same config hash.
    pub fn open(cfg: &ExperimentConfig, root: &Path) -> Result<Self> {
        let path = cfg.run_dir(root);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let lock = Lock::acquire(&path)?;
        let hash = cfg.hash();
        let manifest_path = path.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{MANIFEST}: {e}")))?;
            if m.config_hash != hash {
                return Err(Error::ConfigMismatch { artifact: MANIFEST.into(), expected: hash, found: m.config_hash });
            }
            m
        } else {
            Manifest { config_hash: hash, seed: cfg.seed, ..Manifest::default() }
        };
        let dir = Self { path, manifest, _lock: lock };
        write_atomic(&dir.path.join(CONFIG), cfg.to_toml().as_bytes())?;
        dir.flush()?;
        Ok(dir)
    }

    pub fn hash(&self) -> &str {
        &self.manifest.config_hash
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    fn flush(&self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.file(MANIFEST), text.as_bytes())
    }

    /// Writes an artifact and records its digest.
    pub fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.file(name), bytes)?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        self.flush()
    }

    /// Reads an artifact, verifying it against the recorded digest.
    pub fn get(&self, name: &str) -> Result<Vec<u8>> {
        let expected = self.manifest.artifacts.get(name).ok_or_else(|| Error::MissingArtifact(name.to_string()))?;
        let path = self.file(name);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(name.to_string()),
            _ => Error::io(&path, e),
        })?;
        if &sha256_hex(&bytes) != expected {
            return Err(Error::Integrity(name.to_string()));
        }
        Ok(bytes)
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.artifacts.contains_key(name)
    }

    pub fn put_checkpoint(&mut self, name: &str, c: Checkpoint) -> Result<()> {
        let c = c.with_meta("config_hash", self.hash());
        self.put(name, &c.to_bytes())
    }

    pub fn get_checkpoint(&self, name: &str) -> Result<Checkpoint> {
        let c = Checkpoint::from_bytes(&self.get(name)?)?;
        match c.meta.get("config_hash") {
            Some(h) if h == self.hash() => Ok(c),
            found => Err(Error::ConfigMismatch {
                artifact: name.to_string(),
                expected: self.hash().to_string(),
                found: found.cloned().unwrap_or_else(|| "<none>".into()),
            }),
        }
    }

    pub fn put_dataset(&mut self, name: &str, d: &Dataset) -> Result<()> {
        self.put(name, &d.to_bytes())
    }

    pub fn get_dataset(&self, name: &str) -> Result<Dataset> {
        Dataset::from_bytes(&self.get(name)?)
    }

    pub fn log_metric(&mut self, key: &str, value: f64) -> Result<()> {
        self.manifest.metrics.insert(key.to_string(), value);
        self.flush()
    }

    /// Every artifact still matches its digest.
    pub fn verify(&self) -> Result<()> {
        for name in self.manifest.artifacts.keys() {
            self.get(name)?;
        }
        Ok(())
    }
}

pub mod names {
    pub const STAGE1_DATA: &str = "stage1/data.bin";
    pub const STAGE1_ESTIMATOR: &str = "stage1/estimator.ckpt";
    pub const SUPERVISED_DATA: &str = "supervised/data.bin";
    pub const SUPERVISED_ESTIMATOR: &str = "supervised/estimator.ckpt";
    pub const FINGERPRINT_DB: &str = "fingerprint/db.bin";
    pub const RESULTS: &str = "results.csv";
    pub const SWEEP_RESULTS: &str = "sweep/results.csv";

    pub fn scheme(scheme: super::Scheme, file: &str) -> String {
        format!("{}/{file}", scheme.method().name())
    }

    pub fn generation_checkpoint(scheme: super::Scheme, generation: usize, net: &str) -> String {
        format!("{}/checkpoints/gen-{generation:04}.{net}.ckpt", scheme.method().name())
    }
}

fn decode_name(d: DecodeMode) -> &'static str {
    match d {
        DecodeMode::Sample => "sample",
        DecodeMode::Argmax => "argmax",
    }
}

fn stats_csv(stats: &[GenerationStats]) -> String {
    let mut s = String::from(GenerationStats::CSV_HEADER);
    s.push('\n');
    for g in stats {
        s.push_str(&g.csv_row());
        s.push('\n');
    }
    s
}

/// A pipeline bound to its run directory; one method per CLI stage.
pub struct Experiment {
    pub pipeline: Pipeline,
    pub dir: RunDir,
}

impl Experiment {
    pub fn open(cfg: ExperimentConfig, root: &Path) -> Result<Self> {
        let dir = RunDir::open(&cfg, root)?;
        Ok(Self { pipeline: Pipeline::new(cfg)?, dir })
    }

    pub fn gen_stage1_data(&mut self) -> Result<Dataset> {
        let d = self.pipeline.stage1_dataset()?;
        self.dir.put_dataset(names::STAGE1_DATA, &d)?;
        Ok(d)
    }

    pub fn gen_supervised_data(&mut self) -> Result<Dataset> {
        let d = baselines::supervised_dataset(&self.pipeline)?;
        self.dir.put_dataset(names::SUPERVISED_DATA, &d)?;
        Ok(d)
    }

    fn save_estimator(&mut self, name: &str, t: &TrainedEstimator, metric: &str) -> Result<()> {
        self.dir.put_checkpoint(name, t.checkpoint(&self.pipeline.encoder()))?;
        if let Some(r) = &t.report {
            self.dir.log_metric(&format!("{metric}.val_rmse"), r.val_rmse)?;
        }
        Ok(())
    }

    fn load_estimator(&self, name: &str, supervised: bool) -> Result<TrainedEstimator> {
        let c = self.dir.get_checkpoint(name)?;
        let expected = if supervised { self.pipeline.supervised_estimator()? } else { self.pipeline.recurrent_estimator()? };
        check_spec(expected.net.spec(), &c, name)?;
        let t = TrainedEstimator::from_checkpoint(&c)?;
        if t.estimator.target != expected.target || c.meta_f64("input_scale")? != self.pipeline.encoder().scale {
            return Err(Error::Invalid(format!("{name}: normalization does not match the configuration")));
        }
        Ok(TrainedEstimator { estimator: expected, params: t.params, report: None })
    }

    pub fn initial_estimator(&self) -> Result<TrainedEstimator> {
        self.load_estimator(names::STAGE1_ESTIMATOR, false)
    }

    /// Stage 1 on the stored random-sensing dataset.
    pub fn train_estimator(&mut self) -> Result<TrainedEstimator> {
        let data = self.dir.get_dataset(names::STAGE1_DATA)?;
        let t = self.pipeline.stage1(&data)?;
        self.save_estimator(names::STAGE1_ESTIMATOR, &t, "stage1")?;
        Ok(t)
    }

    /// Stage 2. Writes the per-generation table and, every
    /// `ne.checkpoint_every` generations, the best-so-far networks.
    pub fn evolve(&mut self, scheme: Scheme) -> Result<(TrainedAgents, Evolution)> {
        let initial = self.initial_estimator()?;
        let every = self.pipeline.cfg.ne.checkpoint_every;
        let policy = self.pipeline.policy_net(scheme)?;
        let split = policy.param_count();
        let power = match scheme {
            Scheme::MultiAgent => Some(self.pipeline.power_net()?),
            Scheme::SingleAgent => None,
        };
        let mut snapshots: Vec<(usize, Vec<f64>)> = Vec::new();
        let (agents, run) = self.pipeline.stage2(scheme, &initial, |v| {
            let g = v.stats.generation;
            if every > 0 && g > 0 && g % every == 0 {
                snapshots.push((g, v.best_genome.to_vec()));
            }
            Ok(())
        })?;
        for (g, genome) in snapshots {
            let (wp, wm) = genome.split_at(split);
            let snap = TrainedAgents {
                scheme,
                policy: policy.clone(),
                policy_params: wp.to_vec(),
                power: power.clone(),
                power_params: wm.to_vec(),
            };
            self.dir.put_checkpoint(&names::generation_checkpoint(scheme, g, "policy"), snap.policy_checkpoint())?;
            if let Some(c) = snap.power_checkpoint() {
                self.dir.put_checkpoint(&names::generation_checkpoint(scheme, g, "power"), c)?;
            }
        }
        self.dir.put(&names::scheme(scheme, "generations.csv"), stats_csv(&run.stats).as_bytes())?;
        self.save_agents(&agents)?;
        let m = scheme.method().name();
        self.dir.log_metric(&format!("{m}.best_fitness"), run.best_report.fitness)?;
        self.dir.log_metric(&format!("{m}.generation0_best"), run.stats[0].best)?;
        let audit = self.pipeline.budget_audit(&agents)?;
        self.dir.log_metric(&format!("{m}.audit_power"), audit)?;
        Ok((agents, run))
    }

    fn save_agents(&mut self, agents: &TrainedAgents) -> Result<()> {
        self.dir.put_checkpoint(&names::scheme(agents.scheme, "policy.ckpt"), agents.policy_checkpoint())?;
        if let Some(c) = agents.power_checkpoint() {
            self.dir.put_checkpoint(&names::scheme(agents.scheme, "power.ckpt"), c)?;
        }
        Ok(())
    }

    pub fn load_agents(&self, scheme: Scheme) -> Result<TrainedAgents> {
        let policy = self.pipeline.policy_net(scheme)?;
        let name = names::scheme(scheme, "policy.ckpt");
        let c = self.dir.get_checkpoint(&name)?;
        check_spec(policy.net.spec(), &c, &name)?;
        let (power, power_params) = match scheme {
            Scheme::MultiAgent => {
                let net = self.pipeline.power_net()?;
                let name = names::scheme(scheme, "power.ckpt");
                let c = self.dir.get_checkpoint(&name)?;
                check_spec(net.net.spec(), &c, &name)?;
                (Some(net), c.params.0)
            }
            Scheme::SingleAgent => (None, Vec::new()),
        };
        Ok(TrainedAgents { scheme, policy, policy_params: c.params.0, power, power_params })
    }

    /// Stage 3: collect episodes under the evolved agents and fit the final
    /// estimator.
    pub fn retrain(&mut self, scheme: Scheme) -> Result<TrainedEstimator> {
        let agents = self.load_agents(scheme)?;
        let initial = self.initial_estimator()?;
        let data = self.pipeline.stage3_dataset(&agents)?;
        self.dir.put_dataset(&names::scheme(scheme, "data.bin"), &data)?;
        let t = self.pipeline.stage3(&data, &initial)?;
        self.save_estimator(&names::scheme(scheme, "estimator.ckpt"), &t, scheme.method().name())?;
        Ok(t)
    }

    pub fn final_estimator(&self, scheme: Scheme) -> Result<TrainedEstimator> {
        self.load_estimator(&names::scheme(scheme, "estimator.ckpt"), false)
    }

    fn summary_for(&self, method: Method, decode: DecodeMode) -> Result<EvalSummary> {
        let p = &self.pipeline;
        match method {
            Method::MultiAgent | Method::SingleAgent => {
                let scheme = if method == Method::MultiAgent { Scheme::MultiAgent } else { Scheme::SingleAgent };
                p.evaluate_agents(&self.load_agents(scheme)?, &self.final_estimator(scheme)?, decode)
            }
            Method::Uniform => p.evaluate_random_sensing(&self.initial_estimator()?),
            Method::Supervised => p.evaluate_random_sensing(&self.load_estimator(names::SUPERVISED_ESTIMATOR, true)?),
            Method::Fingerprint => {
                let db = FingerprintDb::from_bytes(&self.dir.get(names::FINGERPRINT_DB)?)?;
                db.check_profiles(&FingerprintDb::draw_profiles(p))?;
                baselines::evaluate_fingerprint(p, &db)
            }
        }
    }

    fn eval_key(method: Method, decode: DecodeMode) -> String {
        format!("{}/{}", method.name(), decode_name(decode))
    }

    /// Evaluates stored artifacts of `method` on the held-out block and logs
    /// the row.
    pub fn eval(&mut self, method: Method, decode: DecodeMode) -> Result<ResultRow> {
        let summary = self.summary_for(method, decode)?;
        let label = match (method, decode) {
            (Method::MultiAgent | Method::SingleAgent, DecodeMode::Argmax) => format!("{}/argmax", method.name()),
            _ => method.name().to_string(),
        };
        let row = self.pipeline.row(&label, &summary);
        self.dir.put(&format!("{}/eval-{}.csv", method.name(), decode_name(decode)), results_csv(std::slice::from_ref(&row)).as_bytes())?;
        self.dir.manifest.evals.insert(Self::eval_key(method, decode), row.clone());
        let all: Vec<ResultRow> = self.dir.manifest.evals.values().cloned().collect();
        self.dir.put(names::RESULTS, results_csv(&all).as_bytes())?;
        Ok(row)
    }

    pub fn baseline_fingerprint(&mut self) -> Result<ResultRow> {
        let db = FingerprintDb::build(&self.pipeline)?;
        self.dir.put(names::FINGERPRINT_DB, &db.to_bytes())?;
        self.eval(Method::Fingerprint, DecodeMode::Sample)
    }

    pub fn baseline_supervised(&mut self) -> Result<ResultRow> {
        let data = match self.dir.get_dataset(names::SUPERVISED_DATA) {
            Ok(d) => d,
            Err(Error::MissingArtifact(_)) => self.gen_supervised_data()?,
            Err(e) => return Err(e),
        };
        let t = baselines::train_supervised_on(&self.pipeline, &data)?;
        self.save_estimator(names::SUPERVISED_ESTIMATOR, &t, "supervised")?;
        self.eval(Method::Supervised, DecodeMode::Sample)
    }

    /// The exact-power scheme through stages 2 and 3, then evaluated.
    pub fn baseline_single_agent(&mut self) -> Result<ResultRow> {
        self.evolve(Scheme::SingleAgent)?;
        self.retrain(Scheme::SingleAgent)?;
        self.eval(Method::SingleAgent, self.pipeline.rollout.decode)
    }

    pub fn baseline_uniform(&mut self) -> Result<ResultRow> {
        self.eval(Method::Uniform, DecodeMode::Sample)
    }

    pub fn sweep(&mut self) -> Result<Vec<ResultRow>> {
        let rows = run_sweep(&self.pipeline.cfg)?;
        self.dir.put(names::SWEEP_RESULTS, results_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    /// Verifies every artifact digest, then re-evaluates every logged row
    /// and requires bit-identical metrics.
    pub fn replay(&self) -> Result<Vec<ResultRow>> {
        self.dir.verify()?;
        if self.dir.manifest.evals.is_empty() {
            return Err(Error::MissingArtifact("logged evaluation; run eval first".into()));
        }
        let mut out = Vec::new();
        for (key, logged) in &self.dir.manifest.evals {
            let (method, decode) = key.split_once('/').ok_or_else(|| Error::Format(format!("eval key {key}")))?;
            let method = Method::ALL.into_iter().find(|m| m.name() == method).ok_or_else(|| Error::Format(format!("eval key {key}")))?;
            let decode = if decode == "argmax" { DecodeMode::Argmax } else { DecodeMode::Sample };
            let again = self.pipeline.row(&logged.method, &self.summary_for(method, decode)?);
            if again.rmse_m.to_bits() != logged.rmse_m.to_bits() || again.mean_power.to_bits() != logged.mean_power.to_bits() {
                return Err(Error::ReplayMismatch {
                    logged: format!("{key}: rmse {} power {}", logged.rmse_m, logged.mean_power),
                    recomputed: format!("rmse {} power {}", again.rmse_m, again.mean_power),
                });
            }
            out.push(again);
        }
        Ok(out)
    }
}
