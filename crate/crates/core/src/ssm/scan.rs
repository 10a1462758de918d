use super::{zoh, zoh_gain_partials, SsmParams};
use crate::error::{Error, Result};
use crate::tensor::ops::{sigmoid, softplus};

/// Hidden state of a selective scan: `dim x state_dim`, zero at sequence start.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanState {
    pub h: Vec<f64>,
    dim: usize,
    state_dim: usize,
}

impl ScanState {
    pub fn zeros(dim: usize, state_dim: usize) -> Self {
        ScanState {
            h: vec![0.0; dim * state_dim],
            dim,
            state_dim,
        }
    }

    /// Advances one token and writes `y_t` (length `dim`) into `y`, adding to
    /// its current contents when `accumulate` is set.
    #[allow(clippy::too_many_arguments)]
    #[inline]
    pub(crate) fn step(
        &mut self,
        x: &[f64],
        delta: &[f64],
        b: &[f64],
        c: &[f64],
        a: &[f64],
        d_skip: &[f64],
        y: &mut [f64],
        accumulate: bool,
    ) {
        let n = self.state_dim;
        let b = &b[..n];
        let c = &c[..n];
        for d in 0..self.dim {
            let xv = x[d];
            let dl = delta[d];
            let h = &mut self.h[d * n..(d + 1) * n];
            let ar = &a[d * n..(d + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                let (a_bar, gain) = zoh(ar[k], dl);
                let hv = a_bar * h[k] + gain * b[k] * xv;
                h[k] = hv;
                acc += c[k] * hv;
            }
            let out = acc + d_skip[d] * xv;
            if accumulate {
                y[d] += out;
            } else {
                y[d] = out;
            }
        }
    }
}

/// Token-level selection values, site-major: `delta` is `sites x dim`,
/// `b` and `c` are `sites x state_dim`.
pub(crate) struct Selection {
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Runs the recurrence over `order` (sequence position -> site).
pub(crate) fn scan_sites(
    order: &[usize],
    x: &[f64],
    sel: &Selection,
    params: &SsmParams,
    y: &mut [f64],
    accumulate: bool,
) {
    let (dim, n) = (params.dim, params.state_dim);
    let mut state = ScanState::zeros(dim, n);
    for &s in order {
        state.step(
            &x[s * dim..(s + 1) * dim],
            &sel.delta[s * dim..(s + 1) * dim],
            &sel.b[s * n..(s + 1) * n],
            &sel.c[s * n..(s + 1) * n],
            &params.a,
            &params.d_skip,
            &mut y[s * dim..(s + 1) * dim],
            accumulate,
        );
    }
}

/// Intermediate values of the selection projections for one token.
struct TokenProj {
    /// `dt_low`, `B`, `C` concatenated.
    proj: Vec<f64>,
    /// Pre-softplus step sizes.
    pre: Vec<f64>,
    delta: Vec<f64>,
}

fn project_token(x: &[f64], p: &SsmParams) -> TokenProj {
    let rows = p.proj_rows();
    let proj: Vec<f64> = (0..rows)
        .map(|j| {
            let w = &p.x_proj_w[j * p.dim..(j + 1) * p.dim];
            p.x_proj_b[j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let dt_low = &proj[..p.dt_rank];
    let pre: Vec<f64> = (0..p.dim)
        .map(|d| {
            let w = &p.dt_proj_w[d * p.dt_rank..(d + 1) * p.dt_rank];
            p.dt_bias[d] + w.iter().zip(dt_low).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let delta = pre.iter().map(|&s| softplus(s)).collect();
    TokenProj { proj, pre, delta }
}

fn check_sequence(x: &[f64], p: &SsmParams) -> Result<usize> {
    p.validate()?;
    if p.dim == 0 || !x.len().is_multiple_of(p.dim) {
        return Err(Error::shape(
            "selective_scan",
            format!("sequence of {} values is not a multiple of dim {}", x.len(), p.dim),
        ));
    }
    Ok(x.len() / p.dim)
}

/// Selective scan over a token-major sequence (`len x dim`).
///
/// `y_t = C_t h_t + D x_t`, `h_t = A_bar_t h_{t-1} + B_bar_t x_t`, `h_0 = 0`.
pub fn selective_scan(x: &[f64], params: &SsmParams) -> Result<Vec<f64>> {
    let len = check_sequence(x, params)?;
    let (dim, n, r) = (params.dim, params.state_dim, params.dt_rank);
    let mut sel = Selection {
        delta: Vec::with_capacity(len * dim),
        b: Vec::with_capacity(len * n),
        c: Vec::with_capacity(len * n),
    };
    for t in 0..len {
        let tp = project_token(&x[t * dim..(t + 1) * dim], params);
        sel.delta.extend_from_slice(&tp.delta);
        sel.b.extend_from_slice(&tp.proj[r..r + n]);
        sel.c.extend_from_slice(&tp.proj[r + n..]);
    }
    let order: Vec<usize> = (0..len).collect();
    let mut y = vec![0.0; len * dim];
    scan_sites(&order, x, &sel, params, &mut y, false);
    Ok(y)
}

/// Gradients of `sum_t <upstream_t, y_t>` with respect to the input sequence
/// and every parameter of the scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGradients {
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub x_proj_w: Vec<f64>,
    pub x_proj_b: Vec<f64>,
    pub dt_proj_w: Vec<f64>,
    pub dt_bias: Vec<f64>,
    pub d_skip: Vec<f64>,
}

/// Reverse-mode derivative of [`selective_scan`].
pub fn selective_scan_grad(x: &[f64], params: &SsmParams, upstream: &[f64]) -> Result<ScanGradients> {
    let len = check_sequence(x, params)?;
    if upstream.len() != x.len() {
        return Err(Error::shape(
            "selective_scan_grad",
            format!("upstream has {} values, sequence has {}", upstream.len(), x.len()),
        ));
    }
    let p = params;
    let (dim, n, r) = (p.dim, p.state_dim, p.dt_rank);
    let rows = p.proj_rows();

    // forward pass, keeping every hidden state
    let tokens: Vec<TokenProj> = (0..len)
        .map(|t| project_token(&x[t * dim..(t + 1) * dim], p))
        .collect();
    let mut hs = vec![0.0; (len + 1) * dim * n];
    for t in 0..len {
        let tp = &tokens[t];
        let b = &tp.proj[r..r + n];
        for d in 0..dim {
            let xv = x[t * dim + d];
            for k in 0..n {
                let (a_bar, gain) = zoh(p.a[d * n + k], tp.delta[d]);
                let prev = hs[(t * dim + d) * n + k];
                hs[((t + 1) * dim + d) * n + k] = a_bar * prev + gain * b[k] * xv;
            }
        }
    }

    let mut g = ScanGradients {
        x: vec![0.0; len * dim],
        a: vec![0.0; dim * n],
        x_proj_w: vec![0.0; rows * dim],
        x_proj_b: vec![0.0; rows],
        dt_proj_w: vec![0.0; dim * r],
        dt_bias: vec![0.0; dim],
        d_skip: vec![0.0; dim],
    };
    let mut gh = vec![0.0; dim * n];
    let mut g_proj = vec![0.0; rows];
    let mut g_delta = vec![0.0; dim];

    for t in (0..len).rev() {
        let tp = &tokens[t];
        let b = &tp.proj[r..r + n];
        let c = &tp.proj[r + n..];
        g_proj.fill(0.0);
        g_delta.fill(0.0);
        for d in 0..dim {
            let xv = x[t * dim + d];
            let gy = upstream[t * dim + d];
            let dl = tp.delta[d];
            g.d_skip[d] += gy * xv;
            g.x[t * dim + d] += gy * p.d_skip[d];
            for k in 0..n {
                let idx = d * n + k;
                let h_t = hs[((t + 1) * dim + d) * n + k];
                let h_prev = hs[(t * dim + d) * n + k];
                let a = p.a[idx];
                // y_t = sum_k C_k h_k
                g_proj[r + n + k] += gy * h_t;
                let gh_t = gh[idx] + gy * c[k];
                // h_t = a_bar h_prev + gain b x
                let (a_bar, gain) = zoh(a, dl);
                let (gain_dd, gain_da) = zoh_gain_partials(a, dl, a_bar);
                let g_abar = gh_t * h_prev;
                let g_gain = gh_t * b[k] * xv;
                g_proj[r + k] += gh_t * gain * xv;
                g.x[t * dim + d] += gh_t * gain * b[k];
                g_delta[d] += g_abar * a_bar * a + g_gain * gain_dd;
                g.a[idx] += g_abar * a_bar * dl + g_gain * gain_da;
                gh[idx] = gh_t * a_bar;
            }
        }
        // delta = softplus(dt_proj dt_low + dt_bias)
        for d in 0..dim {
            let gs = g_delta[d] * sigmoid(tp.pre[d]);
            g.dt_bias[d] += gs;
            for j in 0..r {
                g.dt_proj_w[d * r + j] += gs * tp.proj[j];
                g_proj[j] += gs * p.dt_proj_w[d * r + j];
            }
        }
        // proj = x_proj x + x_proj_b
        for j in 0..rows {
            let gp = g_proj[j];
            g.x_proj_b[j] += gp;
            for d in 0..dim {
                g.x_proj_w[j * dim + d] += gp * x[t * dim + d];
                g.x[t * dim + d] += gp * p.x_proj_w[j * dim + d];
            }
        }
    }
    Ok(g)
}
