//! Fast internal consistency checks run by the `selftest` command.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{
    compress, decode_image, rc_decode, rc_encode, symbol_probabilities, CdfTable, CodedImage, ScaleLattice,
    ALPHABET, MU_STEPS, SCALE_LEVELS,
};
use crate::entropy::{channel_context, step_params, CheckerboardMask, Phase};
use crate::error::Result;
use crate::params::ParamScope;
use crate::pipeline::synthetic_image;
use crate::ssm::{discretize, selective_scan, ss2d, SsmParams, SsmWeights};
use crate::tensor::Tensor;
use crate::transform::{analyze, synthesize, ModelWeights};

/// Side of the synthetic test image.
pub const IMAGE_SIDE: usize = 128;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<std::result::Result<String, String>>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    }
}

/// Runs every check against `weights`; `seed` drives the synthetic inputs.
pub fn run_selftest(weights: &ModelWeights, seed: u64) -> Vec<CheckOutcome> {
    let image = synthetic_image(IMAGE_SIDE, IMAGE_SIDE, seed);
    vec![
        check("coder round trip", || coder_round_trip(seed)),
        check("likelihood normalization", likelihood_normalization),
        check("scan oracle", || scan_oracle(seed)),
        check("channel causality", || channel_probe(&image, weights, seed)),
        check("checkerboard causality", || checkerboard_probe(&image, weights, seed)),
        check("latent round trip and parameter agreement", || round_trip(&image, weights)),
    ]
}

type Verdict = Result<std::result::Result<String, String>>;

fn coder_round_trip(seed: u64) -> Verdict {
    let lattice = ScaleLattice::global();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 20_000;
    let tables: Vec<&CdfTable> = (0..n)
        .map(|_| lattice.table(rng.gen_range(0..MU_STEPS as usize), rng.gen_range(0..SCALE_LEVELS)))
        .collect();
    let symbols: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ALPHABET)).collect();
    let bytes = rc_encode(&symbols, &tables);
    let back = rc_decode(&bytes, &tables)?;
    Ok(if back == symbols {
        Ok(format!("{n} symbols in {} bytes", bytes.len()))
    } else {
        Err("decoded symbols differ".into())
    })
}

fn likelihood_normalization() -> Verdict {
    let lattice = ScaleLattice::global();
    let mut worst: f64 = 0.0;
    for s in 0..SCALE_LEVELS {
        for f in 0..MU_STEPS as usize {
            let t = lattice.table(f, s);
            if CdfTable::from_cumulative(t.cumulative().to_vec()).is_err() {
                return Ok(Err(format!("table ({f}, {s}) is not a valid CDF")));
            }
            let total: f64 = symbol_probabilities(f as f64 / MU_STEPS as f64, lattice.scales()[s]).iter().sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok(if worst <= 1e-6 {
        Ok(format!("{} tables, max |sum p - 1| = {worst:.1e}", SCALE_LEVELS * MU_STEPS as usize))
    } else {
        Err(format!("probability mass off by {worst:e}"))
    })
}

fn scan_oracle(seed: u64) -> Verdict {
    let (dim, state, len) = (6, 4, 12);
    let p = SsmParams::random(dim, state, seed).to_f32_precision();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let x: Vec<f64> = (0..len * dim).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
    let fast = selective_scan(&x, &p)?;
    let slow = reference_scan(&x, &p)?;
    let d1 = max_diff(&fast, &slow);

    // On a single row the column-major flattening coincides with the
    // row-major one, so ss2d is twice the forward plus reverse row scans.
    let mut map = BTreeMap::new();
    for i in 0..4 {
        for (name, t) in p.to_tensors()? {
            map.insert(format!("p{i}.{name}"), t);
        }
    }
    let scopes: Vec<ParamScope<'_>> = (0..4).map(|i| ParamScope::new(&map, format!("p{i}"))).collect();
    let w = [
        SsmWeights::from_scope(&scopes[0])?,
        SsmWeights::from_scope(&scopes[1])?,
        SsmWeights::from_scope(&scopes[2])?,
        SsmWeights::from_scope(&scopes[3])?,
    ];
    let t = Tensor::from_fn([1, dim, 1, len], |_, c, _, j| x[j * dim + c] as f32);
    let out = ss2d(&t, &w)?;
    let rev: Vec<f64> = (0..len).rev().flat_map(|j| x[j * dim..(j + 1) * dim].to_vec()).collect();
    let back = reference_scan(&rev, &p)?;
    let mut d2: f64 = 0.0;
    for j in 0..len {
        for c in 0..dim {
            let expect = 2.0 * (slow[j * dim + c] + back[(len - 1 - j) * dim + c]);
            d2 = d2.max((out.at(0, c, 0, j) as f64 - expect).abs());
        }
    }
    Ok(if d1 <= 1e-9 && d2 <= 1e-5 {
        Ok(format!("1-D {d1:.1e}, single-row 2-D {d2:.1e}"))
    } else {
        Err(format!("1-D deviation {d1:e}, 2-D deviation {d2:e}"))
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Straight-line recurrence, one channel at a time.
fn reference_scan(x: &[f64], p: &SsmParams) -> Result<Vec<f64>> {
    let (d, n, r) = (p.dim, p.state_dim, p.dt_rank);
    let len = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut h = vec![0.0; d * n];
    for t in 0..len {
        let xt = &x[t * d..(t + 1) * d];
        let proj: Vec<f64> = (0..r + 2 * n)
            .map(|j| p.x_proj_b[j] + (0..d).map(|i| p.x_proj_w[j * d + i] * xt[i]).sum::<f64>())
            .collect();
        for c in 0..d {
            let pre = p.dt_bias[c] + (0..r).map(|k| p.dt_proj_w[c * r + k] * proj[k]).sum::<f64>();
            let delta = if pre > 30.0 { pre } else { pre.exp().ln_1p() };
            let mut acc = p.d_skip[c] * xt[c];
            for s in 0..n {
                let (a_bar, b_bar) = discretize(p.a[c * n + s], proj[r + s], delta)?;
                h[c * n + s] = a_bar * h[c * n + s] + b_bar * xt[c];
                acc += proj[r + n + s] * h[c * n + s];
            }
            y[t * d + c] = acc;
        }
    }
    Ok(y)
}

fn quantized_latent(image: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    Ok(analyze(image, weights)?.map(f32::round))
}

fn hyper_for(image: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let y = analyze(image, weights)?;
    let z = crate::codec::quantize_hyper(&crate::transform::hyper_analyze(&y, weights)?);
    crate::transform::hyper_synthesize(&z, weights)
}

fn perturb(t: &Tensor, rng: &mut ChaCha8Rng, keep: impl Fn(usize, usize, usize) -> bool) -> Tensor {
    let mut out = t.clone();
    let [_, c, h, w] = t.shape();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                if !keep(ch, i, j) {
                    out.set(0, ch, i, j, rng.gen_range(-20.0f32..20.0).round());
                }
            }
        }
    }
    out
}

fn all_params(y_hat: &Tensor, hyper: &Tensor, chunk: usize, weights: &ModelWeights) -> Result<Vec<Tensor>> {
    let cw = weights.config().chunk_width();
    let f_c = channel_context(&y_hat.narrow_channels(0, chunk * cw)?, chunk, weights)?;
    let mut out = Vec::new();
    for phase in Phase::BOTH {
        let p = step_params(y_hat, hyper, &f_c, chunk, phase, weights)?;
        out.push(p.mu);
        out.push(p.sigma);
    }
    Ok(out)
}

fn channel_probe(image: &Tensor, weights: &ModelWeights, seed: u64) -> Verdict {
    let y_hat = quantized_latent(image, weights)?;
    let hyper = hyper_for(image, weights)?;
    let cw = weights.config().chunk_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
    for k in 0..weights.config().k {
        let context = |y: &Tensor| channel_context(&y.narrow_channels(0, k * cw)?, k, weights);
        let f_c = context(&y_hat)?;
        let anchor = step_params(&y_hat, &hyper, &f_c, k, Phase::Anchor, weights)?;
        let non = step_params(&y_hat, &hyper, &f_c, k, Phase::NonAnchor, weights)?;
        // Chunks k.. may change freely before chunk k's anchors are decoded.
        let moved = perturb(&y_hat, &mut rng, |c, _, _| c < k * cw);
        let f_moved = context(&moved)?;
        if f_moved != f_c || step_params(&moved, &hyper, &f_moved, k, Phase::Anchor, weights)? != anchor {
            return Ok(Err(format!("chunk {k} anchor parameters depend on chunks >= {k}")));
        }
        let later = perturb(&y_hat, &mut rng, |c, _, _| c < (k + 1) * cw);
        let f_later = context(&later)?;
        if step_params(&later, &hyper, &f_later, k, Phase::NonAnchor, weights)? != non {
            return Ok(Err(format!("chunk {k} non-anchor parameters depend on chunks > {k}")));
        }
    }
    Ok(Ok(format!("{} chunks", weights.config().k)))
}

fn checkerboard_probe(image: &Tensor, weights: &ModelWeights, seed: u64) -> Verdict {
    let y_hat = quantized_latent(image, weights)?;
    let hyper = hyper_for(image, weights)?;
    let cw = weights.config().chunk_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
    for k in 0..weights.config().k {
        let chunk = k * cw..(k + 1) * cw;
        let f_c = channel_context(&y_hat.narrow_channels(0, k * cw)?, k, weights)?;
        let anchor = step_params(&y_hat, &hyper, &f_c, k, Phase::Anchor, weights)?;
        let non = step_params(&y_hat, &hyper, &f_c, k, Phase::NonAnchor, weights)?;
        let all_moved = perturb(&y_hat, &mut rng, |c, _, _| !chunk.contains(&c));
        if step_params(&all_moved, &hyper, &f_c, k, Phase::Anchor, weights)? != anchor {
            return Ok(Err(format!("chunk {k} anchor parameters depend on the chunk's own values")));
        }
        let non_moved = perturb(&y_hat, &mut rng, |c, i, j| !chunk.contains(&c) || CheckerboardMask::is_anchor(i, j));
        if step_params(&non_moved, &hyper, &f_c, k, Phase::NonAnchor, weights)? != non {
            return Ok(Err(format!("chunk {k} non-anchor parameters depend on non-anchor values")));
        }
    }
    Ok(Ok(format!("{} chunks", weights.config().k)))
}

fn round_trip(image: &Tensor, weights: &ModelWeights) -> Verdict {
    let enc = compress(image, weights)?;
    let bytes = enc.coded.to_bytes();
    let dec = decode_image(&CodedImage::from_bytes(&bytes)?, weights)?;
    if dec.y_hat != enc.y_hat || dec.z_hat != enc.z_hat {
        return Ok(Err("decoded latents differ from the encoder's".into()));
    }
    let direct = synthesize(&enc.y_hat, weights)?.crop(image.height(), image.width())?;
    if direct != dec.x_hat {
        return Ok(Err("reconstruction differs from a direct synthesis".into()));
    }
    let hyper = crate::transform::hyper_synthesize(&enc.z_hat, weights)?;
    for k in 0..weights.config().k {
        if all_params(&enc.y_hat, &hyper, k, weights)? != all_params(&dec.y_hat, &hyper, k, weights)? {
            return Ok(Err(format!("chunk {k} parameters disagree")));
        }
    }
    Ok(Ok(format!("{} bytes", bytes.len())))
}
