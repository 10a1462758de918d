//! Range coding of the quantized latents and the encode/decode schedule.
//!
//! The hyper latent is coded first under its per-channel prior. The main
//! latent follows in `2K` substreams: for each chunk, anchors then
//! non-anchors, positions row-major and channels ascending within a
//! position. Every `(mu, sigma)` is snapped to the [`ScaleLattice`] before
//! a table is chosen, so encoder and decoder select identical tables
//! whenever they compute identical parameters.

mod container;
mod lattice;
mod range;

pub use container::{CodedImage, Header, DIGEST_LEN, FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use lattice::{
    build_cdf, residual_of, symbol_of, symbol_probabilities, CdfTable, ScaleLattice, SnappedMean,
    ALPHABET, ESCAPE, MU_STEPS, PRECISION, R_MAX, SCALE_LEVELS, SIGMA_MAX, TOTAL,
};
pub use range::{rc_decode, rc_encode, RangeCoderState, RangeDecoder, RangeEncoder};

use crate::entropy::{channel_context, EntropyParams, standard_interval, step_params, upper_tail, CheckerboardMask, HyperPrior, Phase};
use crate::error::{BitstreamError, Error, Result};
use crate::tensor::Tensor;
use crate::transform::{analyze, hyper_analyze, hyper_synthesize, synthesize, ModelWeights, MAIN_STRIDE, TOTAL_STRIDE};

/// Quantized values are kept inside `+-2^30` so that every one of them is
/// an exact `i32` and survives the raw escape path.
pub const VALUE_LIMIT: i64 = 1 << 30;

/// Smallest probability the coder can assign to a symbol.
const MIN_PROBABILITY: f64 = 1.0 / TOTAL as f64;

fn put(enc: &mut RangeEncoder, table: &CdfTable, value: i64) {
    let s = symbol_of(value);
    enc.encode_symbol(table, s);
    if s == ESCAPE {
        let u = value as i32 as u32;
        enc.encode_raw16((u >> 16) as u16);
        enc.encode_raw16(u as u16);
    }
}

fn get(dec: &mut RangeDecoder<'_>, table: &CdfTable) -> Result<i64> {
    let s = dec.decode_symbol(table);
    if s != ESCAPE {
        return Ok(residual_of(s));
    }
    let hi = dec.decode_raw16() as u32;
    let lo = dec.decode_raw16() as u32;
    let v = ((hi << 16) | lo) as i32 as i64;
    if v.abs() <= R_MAX || v.abs() > VALUE_LIMIT {
        return Err(BitstreamError::Corrupt(format!("escape carries in-range or oversized value {v}")).into());
    }
    Ok(v)
}

/// Model cost in bits of coding `value` for a variable `N(mu_frac, sigma)`
/// rounded to the integers, escape payload included.
pub fn model_bits(value: i64, mu_frac: f64, sigma: f64) -> f64 {
    let p = if value.abs() <= R_MAX {
        let r = value as f64 - mu_frac;
        standard_interval((r - 0.5) / sigma, (r + 0.5) / sigma)
    } else {
        let edge = R_MAX as f64 + 0.5;
        upper_tail((edge - mu_frac) / sigma) + upper_tail((edge + mu_frac) / sigma)
    };
    let raw = if value.abs() > R_MAX { 32.0 } else { 0.0 };
    -p.max(MIN_PROBABILITY).log2() + raw
}

fn clamp_value(v: f64) -> i64 {
    if v.is_nan() {
        0
    } else {
        v.clamp(-(VALUE_LIMIT as f64), VALUE_LIMIT as f64) as i64
    }
}

/// `round(z)`, clamped to the codable range.
pub fn quantize_hyper(z: &Tensor) -> Tensor {
    z.map(|v| clamp_value(v.round() as f64) as f32)
}

struct ChannelTable {
    floor: i64,
    frac: usize,
    scale: usize,
}

fn prior_tables(prior: &HyperPrior) -> Vec<ChannelTable> {
    let lattice = ScaleLattice::global();
    prior
        .mean
        .iter()
        .zip(&prior.sigma)
        .map(|(&m, &s)| {
            let mu = SnappedMean::new(m);
            ChannelTable {
                floor: mu.floor(),
                frac: mu.frac_index(),
                scale: lattice.snap_sigma(s),
            }
        })
        .collect()
}

/// A finished substream with the model's own cost estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct Substream {
    pub bytes: Vec<u8>,
    pub model_bits: f64,
}

/// Codes an integer-valued hyper latent, position by position.
pub fn encode_z(z_hat: &Tensor, prior: &HyperPrior) -> Result<Substream> {
    let [n, c, h, w] = z_hat.shape();
    if n != 1 || c != prior.channels() {
        return Err(Error::shape("encode_z", format!("{:?} against a {c}-channel prior", z_hat.shape())));
    }
    let lattice = ScaleLattice::global();
    let tables = prior_tables(prior);
    let mut enc = RangeEncoder::new();
    let mut bits = 0.0;
    for i in 0..h {
        for j in 0..w {
            for (ch, t) in tables.iter().enumerate() {
                let v = z_hat.at(0, ch, i, j);
                if v.fract() != 0.0 || (v as f64).abs() > VALUE_LIMIT as f64 {
                    return Err(Error::InvalidArgument(format!("hyper latent value {v} is not codable")));
                }
                let s = v as i64 - t.floor;
                put(&mut enc, lattice.table(t.frac, t.scale), s);
                bits += model_bits(s, t.frac as f64 / MU_STEPS as f64, lattice.scales()[t.scale]);
            }
        }
    }
    Ok(Substream {
        bytes: enc.finish(),
        model_bits: bits,
    })
}

pub fn decode_z(bytes: &[u8], prior: &HyperPrior, height: usize, width: usize) -> Result<Tensor> {
    let lattice = ScaleLattice::global();
    let tables = prior_tables(prior);
    let mut z = Tensor::zeros([1, tables.len(), height, width]);
    let mut dec = RangeDecoder::new(bytes);
    for i in 0..height {
        for j in 0..width {
            for (ch, t) in tables.iter().enumerate() {
                let s = get(&mut dec, lattice.table(t.frac, t.scale))?;
                z.set(0, ch, i, j, (s + t.floor) as f32);
            }
        }
    }
    dec.finish()?;
    Ok(z)
}

/// Smallest multiple of 64 that is at least `v`.
pub fn padded_extent(v: usize) -> usize {
    v.div_ceil(TOTAL_STRIDE) * TOTAL_STRIDE
}

/// Substream names in container order.
pub fn substream_labels(chunks: usize) -> Vec<String> {
    let mut labels = vec!["z".to_string()];
    for k in 0..chunks {
        for p in Phase::BOTH {
            labels.push(format!("y{k}.{}", p.name()));
        }
    }
    labels
}

/// Everything the encoder knows after coding an image.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub coded: CodedImage,
    pub y_hat: Tensor,
    pub z_hat: Tensor,
    /// Model estimate per substream, container order.
    pub model_bits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    /// Reconstruction cropped to the original extents.
    pub x_hat: Tensor,
    pub y_hat: Tensor,
    pub z_hat: Tensor,
}

/// Calls `f(table, scale, mu, index)` for every element of one
/// `(chunk, phase)` step in coding order; `index` addresses the latent data.
fn visit(
    shape: [usize; 4],
    chunk: usize,
    phase: Phase,
    params: &EntropyParams,
    mut f: impl FnMut(&CdfTable, f64, SnappedMean, usize) -> Result<()>,
) -> Result<()> {
    let lattice = ScaleLattice::global();
    let cw = params.mu.channels();
    let [_, _, h, w] = shape;
    let plane = h * w;
    for (i, j) in CheckerboardMask::positions(h, w, phase) {
        let site = i * w + j;
        for c in 0..cw {
            let mu = SnappedMean::new(params.mu.data()[c * plane + site] as f64);
            let scale = lattice.snap_sigma(params.sigma.data()[c * plane + site] as f64);
            let index = (chunk * cw + c) * plane + site;
            f(lattice.table(0, scale), lattice.scales()[scale], mu, index)?;
        }
    }
    Ok(())
}

/// Encodes an image already padded to multiples of 64; `width` and
/// `height` are the original extents recorded in the header.
pub fn encode_image(x: &Tensor, width: usize, height: usize, weights: &ModelWeights) -> Result<Encoded> {
    let [_, _, ph, pw] = x.shape();
    if width == 0 || height == 0 || width > u32::MAX as usize || height > u32::MAX as usize {
        return Err(Error::InvalidArgument(format!("image extents {width}x{height}")));
    }
    if ph != padded_extent(height) || pw != padded_extent(width) {
        return Err(Error::shape(
            "encode_image",
            format!(
                "{width}x{height} must be padded to {}x{}, got {pw}x{ph}",
                padded_extent(width),
                padded_extent(height)
            ),
        ));
    }
    let cfg = *weights.config();
    let cw = cfg.chunk_width();
    let y = analyze(x, weights)?;
    let z_hat = quantize_hyper(&hyper_analyze(&y, weights)?);
    let prior = HyperPrior::from_weights(weights)?;
    let z = encode_z(&z_hat, &prior)?;
    let hyper = hyper_synthesize(&z_hat, weights)?;

    let mut y_hat = Tensor::zeros(y.shape());
    let mut y_streams = Vec::with_capacity(2 * cfg.k);
    let mut bits = vec![z.model_bits];
    for k in 0..cfg.k {
        let f_c = channel_context(&y_hat.narrow_channels(0, k * cw)?, k, weights)?;
        for phase in Phase::BOTH {
            let params = step_params(&y_hat, &hyper, &f_c, k, phase, weights)?;
            let mut enc = RangeEncoder::new();
            let mut est = 0.0;
            visit(y.shape(), k, phase, &params, |table, sigma, mu, index| {
                let r = clamp_value((y.data()[index] as f64 - mu.value()).round());
                put(&mut enc, table, r);
                est += model_bits(r, 0.0, sigma);
                y_hat.data_mut()[index] = (r as f64 + mu.value()) as f32;
                Ok(())
            })?;
            y_streams.push(enc.finish());
            bits.push(est);
        }
    }

    let coded = CodedImage {
        header: Header {
            version: FORMAT_VERSION,
            width: width as u32,
            height: height as u32,
            lambda_index: cfg.lambda_index as u8,
            weight_checksum: weights.checksum(),
        },
        z_stream: z.bytes,
        y_streams,
    };
    Ok(Encoded {
        coded,
        y_hat,
        z_hat,
        model_bits: bits,
    })
}

/// Pads by edge replication and encodes.
pub fn compress(image: &Tensor, weights: &ModelWeights) -> Result<Encoded> {
    let (h, w) = (image.height(), image.width());
    let padded = image.pad_edge(padded_extent(h), padded_extent(w))?;
    encode_image(&padded, w, h, weights)
}

fn check_header(coded: &CodedImage, weights: &ModelWeights) -> Result<()> {
    let h = &coded.header;
    if h.version != FORMAT_VERSION {
        return Err(BitstreamError::UnsupportedVersion(h.version).into());
    }
    if h.weight_checksum != weights.checksum() {
        return Err(BitstreamError::WeightMismatch {
            expected: h.weight_checksum,
            loaded: weights.checksum(),
        }
        .into());
    }
    if h.width == 0 || h.height == 0 {
        return Err(BitstreamError::Corrupt("zero image extent".into()).into());
    }
    Ok(())
}

/// Decodes the hyper latent and the first `chunks` latent chunks; later
/// chunks stay zero and their substreams are not read.
pub fn decode_latents(coded: &CodedImage, weights: &ModelWeights, chunks: usize) -> Result<(Tensor, Tensor)> {
    check_header(coded, weights)?;
    let cfg = *weights.config();
    if chunks > cfg.k || coded.y_streams.len() < 2 * chunks {
        return Err(BitstreamError::Truncated(format!(
            "{chunks} chunks need {} latent substreams, found {}",
            2 * chunks,
            coded.y_streams.len()
        ))
        .into());
    }
    let ph = padded_extent(coded.header.height as usize);
    let pw = padded_extent(coded.header.width as usize);
    let (zh, zw) = (ph / TOTAL_STRIDE, pw / TOTAL_STRIDE);
    let prior = HyperPrior::from_weights(weights)?;
    let z_hat = decode_z(&coded.z_stream, &prior, zh, zw)?;
    let hyper = hyper_synthesize(&z_hat, weights)?;

    let cw = cfg.chunk_width();
    let mut y_hat = Tensor::zeros([1, cfg.m, ph / MAIN_STRIDE, pw / MAIN_STRIDE]);
    let mut streams = coded.y_streams.iter();
    for k in 0..chunks {
        let f_c = channel_context(&y_hat.narrow_channels(0, k * cw)?, k, weights)?;
        for phase in Phase::BOTH {
            let params = step_params(&y_hat, &hyper, &f_c, k, phase, weights)?;
            let mut dec = RangeDecoder::new(streams.next().expect("count checked"));
            let shape = y_hat.shape();
            visit(shape, k, phase, &params, |table, _, mu, index| {
                let r = get(&mut dec, table)?;
                y_hat.data_mut()[index] = (r as f64 + mu.value()) as f32;
                Ok(())
            })?;
            dec.finish()?;
        }
    }
    Ok((y_hat, z_hat))
}

pub fn decode_image(coded: &CodedImage, weights: &ModelWeights) -> Result<Decoded> {
    check_header(coded, weights)?;
    let expected = 2 * weights.config().k;
    if coded.y_streams.len() != expected {
        return Err(BitstreamError::Corrupt(format!(
            "expected {expected} latent substreams, found {}",
            coded.y_streams.len()
        ))
        .into());
    }
    let (y_hat, z_hat) = decode_latents(coded, weights, weights.config().k)?;
    let x = synthesize(&y_hat, weights)?;
    let x_hat = x.crop(coded.header.height as usize, coded.header.width as usize)?;
    Ok(Decoded { x_hat, y_hat, z_hat })
}
