//! Episode datasets: generation, a fixed-width binary container, CSV export,
//! and conversion to regression tensors.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic "RISLOCEP" | version u32 | T u32 | N_ris u32 | |Θ| u32 | format u8 | flags u8 | count u64
//! record: position 3×f64 | T×(re f64, im f64) | T×power f64 | T×(tag u8, value f64)
//!         | has_estimate u8, 3×f64 | [T×N_ris u8 profile indices if flags & 1]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::agents::{FeedbackBit, FeedbackMessage, ObservationEncoder, ObservationFormat, TargetNormalization};
use crate::channel::{Position, RisProfile, Scenario};
use crate::error::{Error, Result};
use crate::rollout::{episode_seed, run_episode_seeded, Episode, RolloutConfig, SensingController};

const MAGIC: &[u8; 8] = b"RISLOCEP";
const VERSION: u32 = 1;
const FLAG_PROFILES: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub n_ris: usize,
    pub levels: usize,
    pub format: ObservationFormat,
    /// When false, every episode's `profiles` is empty.
    pub with_profiles: bool,
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// Runs `n` episodes from the seed block `block_seed`, one fresh
    /// controller per episode.
    pub fn generate<'a, F>(
        n: usize,
        block_seed: u64,
        cfg: &RolloutConfig,
        scenario: &Scenario,
        with_profiles: bool,
        make: F,
    ) -> Result<Self>
    where
        F: Fn() -> Result<Box<dyn SensingController + Send + 'a>> + Sync,
    {
        let episodes = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut c = make()?;
                let mut ep = run_episode_seeded(c.as_mut(), cfg, scenario, episode_seed(block_seed, i))?;
                if !with_profiles {
                    ep.profiles = Vec::new();
                }
                Ok(ep)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            horizon: cfg.horizon,
            n_ris: scenario.n_ris(),
            levels: scenario.phase_set.len(),
            format: cfg.format,
            with_profiles,
            episodes,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        self.episodes.iter().map(|e| e.powers.iter().sum::<f64>()).sum::<f64>() / self.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = self.horizon;
        let per = 24 + t * 16 + t * 8 + t * 9 + 25 + if self.with_profiles { t * self.n_ris } else { 0 };
        let mut out = Vec::with_capacity(34 + self.len() * per);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, t as u32, self.n_ris as u32, self.levels as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(format_tag(self.format));
        out.push(if self.with_profiles { FLAG_PROFILES } else { 0 });
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        let f = |out: &mut Vec<u8>, x: f64| out.extend_from_slice(&x.to_le_bytes());
        for ep in &self.episodes {
            ep.true_position.to_array().into_iter().for_each(|x| f(&mut out, x));
            for y in &ep.observations {
                f(&mut out, y.re);
                f(&mut out, y.im);
            }
            ep.powers.iter().for_each(|&p| f(&mut out, p));
            for m in &ep.feedback {
                let (tag, v) = match *m {
                    FeedbackMessage::None => (0u8, 0.0),
                    FeedbackMessage::Bit(b) => (1, b.value() as f64),
                    FeedbackMessage::Exact(p) => (2, p),
                };
                out.push(tag);
                f(&mut out, v);
            }
            match ep.estimate {
                Some(p) => {
                    out.push(1);
                    p.to_array().into_iter().for_each(|x| f(&mut out, x));
                }
                None => {
                    out.push(0);
                    (0..3).for_each(|_| f(&mut out, 0.0));
                }
            }
            for p in &ep.profiles {
                out.extend_from_slice(p.indices());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not an episode dataset (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let horizon = r.u32()? as usize;
        let n_ris = r.u32()? as usize;
        let levels = r.u32()? as usize;
        let format = match r.u8()? {
            0 => ObservationFormat::Stacked,
            1 => ObservationFormat::Rss,
            other => return Err(Error::Format(format!("unknown observation format tag {other}"))),
        };
        let with_profiles = r.u8()? & FLAG_PROFILES != 0;
        let count = r.u64()? as usize;
        let mut episodes = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let true_position = Position::from_array([r.f64()?, r.f64()?, r.f64()?]);
            let observations = (0..horizon).map(|_| Ok(Complex64::new(r.f64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
            let powers = (0..horizon).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let feedback = (0..horizon)
                .map(|_| {
                    let tag = r.u8()?;
                    let v = r.f64()?;
                    Ok(match tag {
                        0 => FeedbackMessage::None,
                        1 => FeedbackMessage::Bit(if v != 0.0 { FeedbackBit::BOOST } else { FeedbackBit::REDUCE }),
                        2 => FeedbackMessage::Exact(v),
                        other => return Err(Error::Format(format!("unknown feedback tag {other}"))),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let has = r.u8()? != 0;
            let est = Position::from_array([r.f64()?, r.f64()?, r.f64()?]);
            let profiles = if with_profiles {
                (0..horizon)
                    .map(|_| {
                        let idx = r.take(n_ris)?;
                        if idx.iter().any(|&i| i as usize >= levels) {
                            return Err(Error::Format("profile index outside the phase set".into()));
                        }
                        Ok(RisProfile::from_raw(idx.to_vec()))
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            episodes.push(Episode { true_position, observations, profiles, powers, feedback, estimate: has.then_some(est) });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last record", bytes.len() - r.pos)));
        }
        Ok(Self { horizon, n_ris, levels, format, with_profiles, episodes })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// One row per frame.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,t,x,y,z,re,im,power,feedback\n");
        for (i, ep) in self.episodes.iter().enumerate() {
            let p = ep.true_position;
            for t in 0..ep.horizon() {
                let fb = match ep.feedback[t] {
                    FeedbackMessage::None => String::new(),
                    FeedbackMessage::Bit(b) => b.value().to_string(),
                    FeedbackMessage::Exact(v) => v.to_string(),
                };
                let y = ep.observations[t];
                writeln!(s, "{i},{},{},{},{},{},{},{},{fb}", t + 1, p.x, p.y, p.z, y.re, y.im, ep.powers[t]).expect("writing to a String");
            }
        }
        s
    }
}

fn format_tag(f: ObservationFormat) -> u8 {
    match f {
        ObservationFormat::Stacked => 0,
        ObservationFormat::Rss => 1,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format("truncated dataset".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Encoded inputs and normalized targets, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<f64>,
    pub input_len: usize,
    pub targets: Vec<f64>,
    pub positions: Vec<Position>,
}

impl TrainingSet {
    pub fn from_episodes(episodes: &[Episode], encoder: &ObservationEncoder, target: &TargetNormalization) -> Self {
        let input_len = episodes.first().map_or(0, |e| e.horizon() * encoder.format.dim());
        let mut inputs = Vec::with_capacity(episodes.len() * input_len);
        let mut targets = Vec::with_capacity(episodes.len() * 3);
        for ep in episodes {
            inputs.extend(encoder.encode_sequence(&ep.observations));
            targets.extend(target.normalize(&ep.true_position));
        }
        Self { inputs, input_len, targets, positions: episodes.iter().map(|e| e.true_position).collect() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * 3..i * 3 + 3]
    }
}
