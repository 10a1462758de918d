#![allow(dead_code)]

use std::collections::BTreeMap;

use mambaic::ssm::SsmParams;
use mambaic::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: [usize; 4], bound: f32, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound))
}

/// Step-by-step recurrence written straight from the definitions.
pub fn reference_scan(x: &[f64], p: &SsmParams) -> Vec<f64> {
    let (d, n, r) = (p.dim, p.state_dim, p.dt_rank);
    let mut y = vec![0.0; x.len()];
    let mut h = vec![0.0; d * n];
    for (t, xt) in x.chunks(d).enumerate() {
        let mut proj = vec![0.0; r + 2 * n];
        for (j, v) in proj.iter_mut().enumerate() {
            *v = p.x_proj_b[j];
            for i in 0..d {
                *v += p.x_proj_w[j * d + i] * xt[i];
            }
        }
        for c in 0..d {
            let mut pre = p.dt_bias[c];
            for k in 0..r {
                pre += p.dt_proj_w[c * r + k] * proj[k];
            }
            let delta = (1.0 + pre.exp()).ln();
            let mut out = p.d_skip[c] * xt[c];
            for s in 0..n {
                let a = p.a[c * n + s];
                let a_bar = (delta * a).exp();
                let b_bar = (a_bar - 1.0) / a * proj[r + s];
                h[c * n + s] = a_bar * h[c * n + s] + b_bar * xt[c];
                out += proj[r + n + s] * h[c * n + s];
            }
            y[t * d + c] = out;
        }
    }
    y
}

/// Classical fourth-order Runge-Kutta for `h' = a h + b u` with constant
/// `u` over `[0, delta]`.
pub fn rk4(a: f64, b: f64, u: f64, h0: f64, delta: f64, steps: usize) -> f64 {
    let f = |h: f64| a * h + b * u;
    let dt = delta / steps as f64;
    let mut h = h0;
    for _ in 0..steps {
        let k1 = f(h);
        let k2 = f(h + dt / 2.0 * k1);
        let k3 = f(h + dt / 2.0 * k2);
        let k4 = f(h + dt * k3);
        h += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    h
}

/// Projection weights for one attention layer of width `c`.
pub fn attention_params(c: usize, rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let bound = 1.0 / (c as f32).sqrt();
    let mut m = BTreeMap::new();
    for p in ["q", "k", "v", "o"] {
        m.insert(format!("{p}.weight"), random_tensor([c, c, 1, 1], bound, rng));
        m.insert(format!("{p}.bias"), random_tensor([c, 1, 1, 1], 0.1, rng));
    }
    m
}

fn apply_linear(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let [o, i, _, _] = w.shape();
    (0..o)
        .map(|r| b.data()[r] as f64 + (0..i).map(|k| w.data()[r * i + k] as f64 * x[k]).sum::<f64>())
        .collect()
}

/// Dense multi-head attention over every token of `x` (`[1, C, H, W]`).
pub fn full_attention(x: &Tensor, params: &BTreeMap<String, Tensor>, heads: usize) -> Tensor {
    let [_, c, h, w] = x.shape();
    let t = h * w;
    let hd = c / heads;
    let tok = |s: usize| -> Vec<f64> { (0..c).map(|ch| x.plane(0, ch)[s] as f64).collect() };
    let get = |n: &str| &params[n];
    let proj = |p: &str| -> Vec<Vec<f64>> {
        (0..t)
            .map(|s| apply_linear(&tok(s), get(&format!("{p}.weight")), get(&format!("{p}.bias"))))
            .collect()
    };
    let (q, k, v) = (proj("q"), proj("k"), proj("v"));
    let mut mixed = vec![vec![0.0; c]; t];
    for head in 0..heads {
        let r = head * hd..(head + 1) * hd;
        for i in 0..t {
            let logits: Vec<f64> = (0..t)
                .map(|j| r.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in r.clone() {
                mixed[i][d] = (0..t).map(|j| e[j] / z * v[j][d]).sum();
            }
        }
    }
    let out: Vec<Vec<f64>> = mixed
        .iter()
        .map(|m| apply_linear(m, get("o.weight"), get("o.bias")))
        .collect();
    Tensor::from_fn([1, c, h, w], |_, ch, y, xx| out[y * w + xx][ch] as f32)
}
