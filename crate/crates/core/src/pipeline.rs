//! End-to-end evaluation built on the codec: encode, serialize, parse,
//! decode and measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{compress, decode_image, padded_extent, substream_labels, CodedImage, Encoded};
use crate::error::{Error, Result};
use crate::metrics::{bpp, ms_ssim, psnr, RdCurve, RdPoint};
use crate::tensor::Tensor;
use crate::transform::ModelWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct SubstreamReport {
    pub label: String,
    pub bytes: usize,
    pub model_bits: f64,
}

/// Per-substream sizes of a coded image; model estimates are included when
/// the encoder's [`Encoded`] is at hand.
pub fn substream_report(coded: &CodedImage, encoded: Option<&Encoded>) -> Vec<SubstreamReport> {
    let labels = substream_labels(coded.y_streams.len() / 2);
    coded
        .substreams()
        .enumerate()
        .map(|(i, s)| SubstreamReport {
            label: labels.get(i).cloned().unwrap_or_else(|| format!("stream{i}")),
            bytes: s.len(),
            model_bits: encoded.and_then(|e| e.model_bits.get(i).copied()).unwrap_or(f64::NAN),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub point: RdPoint,
    pub width: usize,
    pub height: usize,
    pub bitstream: Vec<u8>,
    pub substreams: Vec<SubstreamReport>,
    pub reconstruction: Tensor,
}

/// Codes `image` through a serialized bitstream and scores the
/// reconstruction at the original extents.
pub fn evaluate(image: &Tensor, weights: &ModelWeights) -> Result<Evaluation> {
    let encoded = compress(image, weights)?;
    let bitstream = encoded.coded.to_bytes();
    let coded = CodedImage::from_bytes(&bitstream)?;
    let decoded = decode_image(&coded, weights)?;
    if decoded.y_hat != encoded.y_hat || decoded.z_hat != encoded.z_hat {
        return Err(Error::InvalidArgument(
            "decoder latents differ from the encoder's".into(),
        ));
    }
    let (w, h) = (image.width(), image.height());
    let point = RdPoint {
        bpp: bpp(coded.total_bits(), w, h)?,
        psnr_db: psnr(image, &decoded.x_hat, 1.0)?,
        ms_ssim: ms_ssim(image, &decoded.x_hat)?,
    };
    Ok(Evaluation {
        point,
        width: w,
        height: h,
        substreams: substream_report(&coded, Some(&encoded)),
        bitstream,
        reconstruction: decoded.x_hat,
    })
}

/// Mean point over `images` for every weight set, one row per set labelled
/// by its rate-distortion preset.
pub fn rd_curve(images: &[Tensor], weights: &[ModelWeights]) -> Result<RdCurve> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no images to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(weights.len());
    for w in weights {
        let mut sum = RdPoint {
            bpp: 0.0,
            psnr_db: 0.0,
            ms_ssim: 0.0,
        };
        for img in images {
            let p = evaluate(img, w)?.point;
            sum.bpp += p.bpp;
            sum.psnr_db += p.psnr_db;
            sum.ms_ssim += p.ms_ssim;
        }
        let n = images.len() as f64;
        let mean = RdPoint {
            bpp: sum.bpp / n,
            psnr_db: sum.psnr_db / n,
            ms_ssim: sum.ms_ssim / n,
        };
        rows.push((format!("lambda{}", w.config().lambda_index), mean));
    }
    let in_preset_order: Vec<f64> = rows.iter().map(|r| r.1.bpp).collect();
    if in_preset_order.windows(2).any(|p| p[1] <= p[0]) {
        log::warn!("rates do not strictly increase with the preset index: {in_preset_order:?}");
    }
    Ok(RdCurve::new(rows))
}

/// Deterministic test card in `[0, 1]`: smooth gradients, a few discs and
/// mild noise.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.0..height as f64),
                rng.gen_range(4.0..(width.min(height) as f64 / 3.0).max(5.0)),
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect();
    let phase: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let noise: Vec<f64> = (0..3 * width * height).map(|_| rng.gen_range(-0.03..0.03)).collect();
    Tensor::from_fn([1, 3, height, width], |_, c, y, x| {
        let (fx, fy) = (x as f64 / width as f64, y as f64 / height as f64);
        let mut v = 0.5 + 0.3 * ((fx * 3.0 + phase[c]) * std::f64::consts::PI).sin() * (1.0 - fy);
        for &(cx, cy, r, col) in &discs {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r {
                v = 0.6 * v + 0.4 * col[c];
            }
        }
        (v + noise[(c * height + y) * width + x]).clamp(0.0, 1.0) as f32
    })
}

/// `(width, height)` after padding to multiples of 64.
pub fn padded_size(width: usize, height: usize) -> (usize, usize) {
    (padded_extent(width), padded_extent(height))
}
