//! Comparison schemes: RSS fingerprinting with k-NN, a feed-forward
//! regressor on random sensing, the exact-power single-agent scheme, and
//! the uniform-power reference.

use std::path::Path;

use rayon::prelude::*;

use crate::channel::{Position, RisProfile, UeRegion};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{Pipeline, Scheme, SchemeOutcome, TrainedEstimator};
use crate::rollout::{episode_rngs, episode_seed, evaluate_block, run_episode_at, EvalSummary, FixedSequenceController, SensingController};
use crate::util::{derive_seed, rng_from, sha256_hex, streams};

const MAGIC: &[u8; 8] = b"RISLOCFP";
const VERSION: u32 = 1;

/// Stored RSS sequences on a 1 m grid over the UE region.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    pub horizon: usize,
    pub nx: usize,
    pub ny: usize,
    pub neighbors: usize,
    pub region: UeRegion,
    /// The one profile sequence used for every fingerprint and query.
    pub profiles: Vec<RisProfile>,
    /// `nx·ny × T`, block-major; block `iy·nx + ix`.
    pub fingerprints: Vec<f64>,
}

/// Block counts along x and y: `⌈extent⌉`, at least one.
pub fn grid_shape(region: &UeRegion) -> (usize, usize) {
    let n = |half: f64| ((2.0 * half).ceil() as usize).max(1);
    (n(region.x_half), n(region.y_half))
}

/// Center of 1 m block `(ix, iy)`, clamped to the region.
pub fn block_center(region: &UeRegion, ix: usize, iy: usize) -> Position {
    let x0 = region.x_center - region.x_half;
    let y0 = region.y_center - region.y_half;
    Position::new(
        (x0 + ix as f64 + 0.5).min(region.x_center + region.x_half),
        (y0 + iy as f64 + 0.5).min(region.y_center + region.y_half),
        region.z,
    )
}

pub fn profile_hash(profiles: &[RisProfile]) -> String {
    let bytes: Vec<u8> = profiles.iter().flat_map(|p| p.indices().iter().copied()).collect();
    sha256_hex(&bytes)
}

impl FingerprintDb {
    /// Random profile sequence drawn once from the fingerprint stream.
    pub fn draw_profiles(p: &Pipeline) -> Vec<RisProfile> {
        let mut rng = rng_from(p.seed(streams::FINGERPRINT));
        (0..p.rollout.horizon).map(|_| RisProfile::random(p.scenario.n_ris(), &p.scenario.phase_set, &mut rng)).collect()
    }

    pub fn build(p: &Pipeline) -> Result<Self> {
        Self::build_with(p, Self::draw_profiles(p))
    }

    /// Averages `samples_per_block` episodes at each block center.
    pub fn build_with(p: &Pipeline, profiles: Vec<RisProfile>) -> Result<Self> {
        let region = p.scenario.geometry.ue_region;
        let (nx, ny) = grid_shape(&region);
        let t = p.rollout.horizon;
        let samples = p.cfg.fingerprint.samples_per_block;
        let power = p.cfg.fingerprint.db_power.mode(p.scenario.max_power_watt());
        let block_seed = derive_seed(p.seed(streams::FINGERPRINT), 1, 0);
        let rows = (0..nx * ny)
            .into_par_iter()
            .map(|b| {
                let center = block_center(&region, b % nx, b / nx);
                let mut acc = vec![0.0; t];
                for s in 0..samples {
                    let (mut env, mut pol) = episode_rngs(episode_seed(block_seed, b * samples + s));
                    let mut c = FixedSequenceController::new(&profiles, power, p.scenario.max_power_watt());
                    let ep = run_episode_at(&mut c, &p.rollout, &p.scenario, center, &mut env, &mut pol)?;
                    acc.iter_mut().zip(ep.rss()).for_each(|(a, r)| *a += r);
                }
                acc.iter_mut().for_each(|a| *a /= samples as f64);
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { horizon: t, nx, ny, neighbors: p.cfg.fingerprint.neighbors, region, profiles, fingerprints: rows.concat() })
    }

    pub fn blocks(&self) -> usize {
        self.nx * self.ny
    }

    pub fn center(&self, block: usize) -> Position {
        block_center(&self.region, block % self.nx, block / self.nx)
    }

    pub fn fingerprint(&self, block: usize) -> &[f64] {
        &self.fingerprints[block * self.horizon..(block + 1) * self.horizon]
    }

    pub fn profile_hash(&self) -> String {
        profile_hash(&self.profiles)
    }

    /// The `k` blocks nearest to `rss`, nearest first, ties to the lower index.
    pub fn nearest(&self, rss: &[f64], k: usize) -> Result<Vec<usize>> {
        if rss.len() != self.horizon {
            return Err(Error::Invalid(format!("query has {} frames, database has {}", rss.len(), self.horizon)));
        }
        if self.blocks() < k {
            return Err(Error::Invalid(format!("database has {} entries, need at least {k}", self.blocks())));
        }
        let mut d: Vec<(f64, usize)> =
            (0..self.blocks()).map(|b| (self.fingerprint(b).iter().zip(rss).map(|(a, q)| (a - q) * (a - q)).sum::<f64>(), b)).collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < d.len() {
            d.select_nth_unstable_by(k, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        Ok(d.into_iter().map(|(_, b)| b).collect())
    }

    /// Mean of the centers of the nearest blocks.
    pub fn localize(&self, rss: &[f64]) -> Result<Position> {
        let nn = self.nearest(rss, self.neighbors)?;
        let mut s = [0.0; 3];
        for &b in &nn {
            let c = self.center(b).to_array();
            (0..3).for_each(|i| s[i] += c[i]);
        }
        Ok(Position::from_array(s.map(|v| v / nn.len() as f64)))
    }

    pub fn check_profiles(&self, profiles: &[RisProfile]) -> Result<()> {
        if profiles != self.profiles.as_slice() {
            return Err(Error::Invalid(format!(
                "query profile sequence {} differs from the database sequence {}",
                profile_hash(profiles),
                self.profile_hash()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let n_ris = self.profiles.first().map_or(0, RisProfile::len);
        for v in [VERSION, self.horizon as u32, n_ris as u32, self.nx as u32, self.ny as u32, self.neighbors as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let r = &self.region;
        for v in [r.x_center, r.x_half, r.y_center, r.y_half, r.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(self.profile_hash().as_bytes());
        for p in &self.profiles {
            out.extend_from_slice(p.indices());
        }
        for v in &self.fingerprints {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("fingerprint database: {m}"));
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u = [0usize; 6];
        for v in u.iter_mut() {
            *v = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        let [version, horizon, n_ris, nx, ny, neighbors] = u;
        if version != VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut f = [0.0; 5];
        for v in f.iter_mut() {
            *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        let region = UeRegion { x_center: f[0], x_half: f[1], y_center: f[2], y_half: f[3], z: f[4] };
        let hash = std::str::from_utf8(take(64)?).map_err(|_| bad("profile hash is not text"))?.to_string();
        let profiles: Vec<RisProfile> = (0..horizon).map(|_| Ok(RisProfile::from_raw(take(n_ris)?.to_vec()))).collect::<Result<_>>()?;
        let fingerprints =
            (0..nx * ny * horizon).map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")))).collect::<Result<Vec<_>>>()?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let db = Self { horizon, nx, ny, neighbors, region, profiles, fingerprints };
        if db.profile_hash() != hash {
            return Err(Error::Integrity("fingerprint database profile sequence".into()));
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Queries on the shared held-out block, sensed with the database's profile
/// sequence and the configured query power law.
pub fn evaluate_fingerprint(p: &Pipeline, db: &FingerprintDb) -> Result<EvalSummary> {
    let power = p.cfg.fingerprint.query_power.mode(p.scenario.max_power_watt());
    let max = p.scenario.max_power_watt();
    evaluate_block(
        p.cfg.training.eval_episodes,
        p.eval_block(),
        &p.rollout,
        &p.scenario,
        || -> Result<Box<dyn SensingController + Send>> { Ok(Box::new(FixedSequenceController::new(&db.profiles, power, max))) },
        |ep| {
            db.check_profiles(&ep.profiles)?;
            db.localize(&ep.rss())
        },
    )
}

pub fn supervised_dataset(p: &Pipeline) -> Result<Dataset> {
    p.random_dataset(p.cfg.training.supervised_episodes, streams::SUPERVISED_DATA)
}

/// Feed-forward regressor on flattened random-sensing sequences.
pub fn train_supervised_on(p: &Pipeline, data: &Dataset) -> Result<TrainedEstimator> {
    p.train_estimator(p.supervised_estimator()?, data, streams::SUPERVISED_TRAIN, None)
}

pub fn train_supervised(p: &Pipeline) -> Result<TrainedEstimator> {
    train_supervised_on(p, &supervised_dataset(p)?)
}

/// The exact-power scheme trained and evaluated like the multi-agent one.
pub fn single_agent_variant(p: &Pipeline, initial: &TrainedEstimator) -> Result<SchemeOutcome> {
    p.run_scheme(Scheme::SingleAgent, initial)
}

/// Random profiles and uniform powers read by the stage-1 estimator.
pub fn uniform_power_reference(p: &Pipeline, initial: &TrainedEstimator) -> Result<EvalSummary> {
    p.evaluate_random_sensing(initial)
}
