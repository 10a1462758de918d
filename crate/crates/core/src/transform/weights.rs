//! Named-tensor weight store and its on-disk format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic      8  b"MBICWGT\0"
//! version    u32 (= 1)
//! config     13 x u32: n m k window lambda_index state_dim heads
//!                      analysis_widths[3] hyper_widths[2] agg_width
//! count      u32
//! records    name-sorted; each: name_len u16, name (UTF-8),
//!            dims 4 x u32, data f32 x product(dims)
//! checksum   u64, first 8 bytes of SHA-256 over everything above
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{manifest, Init, ModelConfig};
use crate::error::{Error, Result, WeightsError};
use crate::params::ParamScope;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MBICWGT\0";
const VERSION: u32 = 1;

/// All model parameters plus the configuration they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
    checksum: u64,
}

impl ModelWeights {
    /// Validates `params` against the architecture manifest.
    pub fn new(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        validate_against_manifest(&config, &params)?;
        let checksum = digest(&encode_weight_file(&config, &params));
        Ok(ModelWeights {
            config,
            params,
            checksum,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.scope("").get(name)
    }

    pub fn scope(&self, prefix: &str) -> ParamScope<'_> {
        ParamScope::new(&self.params, prefix)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Applies `f` to the parameter map, then re-validates and refreshes the
    /// checksum.
    pub fn modify(self, f: impl FnOnce(&mut BTreeMap<String, Tensor>)) -> Result<Self> {
        let mut params = self.params;
        f(&mut params);
        ModelWeights::new(self.config, params)
    }

    /// Same weights with a different rate-distortion preset index.
    pub fn with_lambda_index(self, index: usize) -> Result<Self> {
        ModelWeights::new(self.config.with_lambda_index(index), self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_weight_file(&self.config, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode_weight_file(bytes)
    }
}

fn validate_against_manifest(cfg: &ModelConfig, params: &BTreeMap<String, Tensor>) -> Result<()> {
    let specs = manifest(cfg);
    let known: BTreeMap<&str, [usize; 4]> = specs.iter().map(|s| (s.name.as_str(), s.shape)).collect();
    if let Some(name) = params.keys().find(|n| !known.contains_key(n.as_str())) {
        return Err(WeightsError::UnknownParameter(name.clone()).into());
    }
    for (name, shape) in known {
        let t = params
            .get(name)
            .ok_or_else(|| WeightsError::MissingParameter(name.to_string()))?;
        if t.shape() != shape {
            return Err(WeightsError::ParameterShape {
                name: name.to_string(),
                expected: shape,
                got: t.shape(),
            }
            .into());
        }
    }
    Ok(())
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Deterministic fan-in scaled random weights.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for spec in manifest(config) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = match spec.init {
            Init::Uniform(bound) => (0..n)
                .map(|_| rng.gen_range(-bound..bound) as f32)
                .collect(),
            Init::Const(v) => vec![v; n],
            Init::StateMatrix => {
                let state = spec.shape[1];
                (0..n).map(|i| -((i % state) as f32 + 1.0)).collect()
            }
            Init::StepBias => (0..n)
                .map(|_| {
                    let lo = 0.01f64.ln();
                    let hi = 0.1f64.ln();
                    inverse_softplus(rng.gen_range(lo..hi).exp()) as f32
                })
                .collect(),
        };
        params.insert(spec.name, Tensor::from_vec(spec.shape, data)?);
    }
    ModelWeights::new(*config, params)
}

fn digest(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("sha256 is 32 bytes"))
}

fn config_fields(c: &ModelConfig) -> [u32; 13] {
    [
        c.n,
        c.m,
        c.k,
        c.window,
        c.lambda_index,
        c.state_dim,
        c.heads,
        c.analysis_widths[0],
        c.analysis_widths[1],
        c.analysis_widths[2],
        c.hyper_widths[0],
        c.hyper_widths[1],
        c.agg_width,
    ]
    .map(|v| v as u32)
}

/// Serializes an arbitrary parameter map. No manifest validation happens
/// here; [`save_weights`] is the checked entry point.
pub fn encode_weight_file(config: &ModelConfig, params: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let payload: usize = params.iter().map(|(k, t)| 2 + k.len() + 16 + 4 * t.numel()).sum();
    let mut out = Vec::with_capacity(8 + 4 + 13 * 4 + 4 + payload + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in config_fields(config) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = digest(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| WeightsError::Malformed(format!("record overruns file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_weight_file(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() >= 8 && &bytes[..8] != MAGIC {
        return Err(WeightsError::BadMagic.into());
    }
    if bytes.len() >= 12 {
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(WeightsError::UnknownVersion(version).into());
        }
    }
    if bytes.len() < 20 {
        return Err(WeightsError::ChecksumMismatch {
            stored: 0,
            computed: digest(bytes),
        }
        .into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = digest(body);
    if stored != computed {
        return Err(WeightsError::ChecksumMismatch { stored, computed }.into());
    }

    let mut cur = Cursor { bytes: body, pos: 12 };
    let mut f = [0usize; 13];
    for v in &mut f {
        *v = cur.u32()? as usize;
    }
    let config = ModelConfig {
        n: f[0],
        m: f[1],
        k: f[2],
        window: f[3],
        lambda_index: f[4],
        state_dim: f[5],
        heads: f[6],
        analysis_widths: [f[7], f[8], f[9]],
        hyper_widths: [f[10], f[11]],
        agg_width: f[12],
    };
    config.validate()?;
    let count = cur.u32()? as usize;
    let mut params = BTreeMap::new();
    let mut last: Option<String> = None;
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| WeightsError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        if last.as_ref().is_some_and(|l| *l >= name) {
            return Err(WeightsError::Malformed(format!("record `{name}` out of order")).into());
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = cur.u32()? as usize;
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WeightsError::Malformed(format!("record `{name}` is too large")))?;
        let raw = cur.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name.clone(), Tensor::from_vec(shape, data)?);
        last = Some(name);
    }
    if cur.pos != body.len() {
        return Err(WeightsError::Malformed(format!(
            "{} trailing bytes after the last record",
            body.len() - cur.pos
        ))
        .into());
    }
    ModelWeights::new(config, params)
}

pub fn save_weights(weights: &ModelWeights, mut sink: impl Write) -> Result<()> {
    sink.write_all(&weights.to_bytes())?;
    Ok(())
}

pub fn load_weights(mut source: impl Read) -> Result<ModelWeights> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes).map_err(Error::Io)?;
    decode_weight_file(&bytes)
}
