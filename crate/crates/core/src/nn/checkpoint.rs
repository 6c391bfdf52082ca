//! Portable checkpoint file for one network.
//!
//! Layout: a UTF-8 text header, one `key = value` per line, terminated by a
//! line `end`, followed by exactly `param_count` little-endian IEEE-754 f64
//! values in the flat parameter order.
//!
//! ```text
//! risloc-checkpoint v1
//! input_dim = 2
//! lstm = 32,32
//! head = 16:relu,16:relu,3:identity
//! param_count = 14819
//! payload_sha256 = <hex of the payload bytes>
//! meta.role = estimator
//! end
//! ```
//!
//! `head` repeats once per head, in head order. Keys under `meta.` carry
//! free-form strings (observation scale, config hash, ...).

use std::collections::BTreeMap;
use std::path::Path;

use super::{Activation, ArchitectureSpec, DenseSpec, HeadSpec, ParamVector};
use crate::error::{Error, Result};
use crate::util::sha256_hex;

const MAGIC: &str = "risloc-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ArchitectureSpec,
    pub params: ParamVector,
    pub meta: BTreeMap<String, String>,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn new(spec: ArchitectureSpec, params: ParamVector) -> Self {
        Self { spec, params, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks meta.{key}")))?
            .parse()
            .map_err(|_| Error::Format(format!("meta.{key} is not a number")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: Vec<u8> = self.params.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut header = format!("{MAGIC}\ninput_dim = {}\nlstm = {}\n", self.spec.input_dim, join(&self.spec.lstm_hidden));
        for head in &self.spec.heads {
            let layers: Vec<String> = head.layers.iter().map(|l| format!("{}:{}", l.units, l.activation)).collect();
            header.push_str(&format!("head = {}\n", layers.join(",")));
        }
        header.push_str(&format!("param_count = {}\npayload_sha256 = {}\n", self.params.len(), sha256_hex(&payload)));
        for (k, v) in &self.meta {
            header.push_str(&format!("meta.{k} = {v}\n"));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line);
        }
        if lines.first() != Some(&MAGIC) {
            return Err(bad("bad magic line"));
        }
        let mut input_dim = None;
        let mut lstm_hidden = Vec::new();
        let mut heads = Vec::new();
        let mut count = None;
        let mut digest = None;
        let mut meta = BTreeMap::new();
        for line in &lines[1..] {
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad("malformed header line"))?;
            match k {
                "input_dim" => input_dim = Some(v.parse::<usize>().map_err(|_| bad("input_dim"))?),
                "lstm" if v.is_empty() => {}
                "lstm" => {
                    lstm_hidden = v.split(',').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("lstm sizes"))?;
                }
                "head" => {
                    let layers = v
                        .split(',')
                        .map(|l| {
                            let (u, a) = l.split_once(':')?;
                            Some(DenseSpec::new(u.parse().ok()?, Activation::parse(a)?))
                        })
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("head layers"))?;
                    heads.push(HeadSpec { layers });
                }
                "param_count" => count = Some(v.parse::<usize>().map_err(|_| bad("param_count"))?),
                "payload_sha256" => digest = Some(v.to_string()),
                _ => match k.strip_prefix("meta.") {
                    Some(key) => {
                        meta.insert(key.to_string(), v.to_string());
                    }
                    None => return Err(bad(&format!("unknown key {k}"))),
                },
            }
        }
        let spec = ArchitectureSpec { input_dim: input_dim.ok_or_else(|| bad("missing input_dim"))?, lstm_hidden, heads };
        spec.validate()?;
        let count = count.ok_or_else(|| bad("missing param_count"))?;
        if count != spec.param_count() {
            return Err(bad("param_count disagrees with architecture"));
        }
        let payload = &bytes[pos..];
        if payload.len() != count * 8 {
            return Err(bad("payload length"));
        }
        if digest.as_deref() != Some(sha256_hex(payload).as_str()) {
            return Err(Error::Integrity("checkpoint payload digest".into()));
        }
        let params = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { spec, params: ParamVector(params), meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let spec = ArchitectureSpec {
            input_dim: 2,
            lstm_hidden: vec![3, 2],
            heads: vec![HeadSpec::mlp(&[4], 6, Activation::SoftmaxGrouped(2)), HeadSpec::mlp(&[2], 1, Activation::Identity)],
        };
        let net = Network::new(spec.clone()).unwrap();
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        Checkpoint::new(spec, params).with_meta("obs_scale", 31622.776601683792).with_meta("role", "policy")
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_f64("obs_scale").unwrap(), 31622.776601683792);
    }

    #[test]
    fn feed_forward_round_trip() {
        let spec = ArchitectureSpec { input_dim: 4, lstm_hidden: vec![], heads: vec![HeadSpec::mlp(&[3], 3, Activation::Identity)] };
        let ck = Checkpoint::new(spec.clone(), ParamVector(vec![0.5; spec.param_count()]));
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn payload_is_little_endian_f64() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(f64::from_le_bytes(tail.try_into().unwrap()), *ck.params.0.last().unwrap());
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    }
}
