use super::scan::{scan_sites, Selection};
use super::{SsmParams, SsmWeights};
use crate::error::{Error, Result};
use crate::tensor::ops::softplus;
use crate::tensor::{gemm_f64, Tensor};

/// One of the four traversal orders of a 2-D grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanPath {
    RowForward,
    RowReverse,
    ColumnForward,
    ColumnReverse,
}

impl ScanPath {
    pub const ALL: [ScanPath; 4] = [
        ScanPath::RowForward,
        ScanPath::RowReverse,
        ScanPath::ColumnForward,
        ScanPath::ColumnReverse,
    ];

    /// Site index (`y * width + x`) visited at each sequence position.
    pub fn order(self, height: usize, width: usize) -> Vec<usize> {
        let row_major = || 0..height * width;
        let col_major = move || (0..width).flat_map(move |x| (0..height).map(move |y| y * width + x));
        match self {
            ScanPath::RowForward => row_major().collect(),
            ScanPath::RowReverse => row_major().rev().collect(),
            ScanPath::ColumnForward => col_major().collect(),
            ScanPath::ColumnReverse => {
                let mut v: Vec<usize> = col_major().collect();
                v.reverse();
                v
            }
        }
    }

    /// Flattens a `height x width` plane into path order.
    pub fn gather<T: Copy>(self, plane: &[T], height: usize, width: usize) -> Vec<T> {
        self.order(height, width).into_iter().map(|s| plane[s]).collect()
    }

    /// Inverse of [`ScanPath::gather`].
    pub fn scatter<T: Copy + Default>(self, seq: &[T], height: usize, width: usize) -> Vec<T> {
        let mut plane = vec![T::default(); height * width];
        for (&s, &v) in self.order(height, width).iter().zip(seq) {
            plane[s] = v;
        }
        plane
    }
}

/// Channel-major `[dim][site]` f32 -> site-major `[site][dim]` f64.
fn to_site_major(x: &[f32], dim: usize, sites: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * sites];
    for d in 0..dim {
        let row = &x[d * sites..(d + 1) * sites];
        for (s, &v) in row.iter().enumerate() {
            out[s * dim + d] = v as f64;
        }
    }
    out
}

/// Selection values for every site, computed from the channel-major input.
fn select(x: &[f32], w: &SsmWeights<'_>, p: &SsmParams, sites: usize) -> Selection {
    let (dim, n, r) = (p.dim, p.state_dim, p.dt_rank);
    let rows = p.proj_rows();
    let mut proj = vec![0.0; rows * sites];
    gemm_f64(w.x_proj_w.data(), x, rows, dim, sites, &mut proj);
    for j in 0..rows {
        let b = p.x_proj_b[j];
        for v in &mut proj[j * sites..(j + 1) * sites] {
            *v += b;
        }
    }

    let mut pre = vec![0.0; dim * sites];
    for d in 0..dim {
        let dst = &mut pre[d * sites..(d + 1) * sites];
        dst.fill(p.dt_bias[d]);
        for j in 0..r {
            let wv = p.dt_proj_w[d * r + j];
            for (o, &v) in dst.iter_mut().zip(&proj[j * sites..(j + 1) * sites]) {
                *o += wv * v;
            }
        }
    }
    let mut delta = vec![0.0; sites * dim];
    for d in 0..dim {
        for s in 0..sites {
            delta[s * dim + d] = softplus(pre[d * sites + s]);
        }
    }
    let mut b = vec![0.0; sites * n];
    let mut c = vec![0.0; sites * n];
    for k in 0..n {
        for s in 0..sites {
            b[s * n + k] = proj[(r + k) * sites + s];
            c[s * n + k] = proj[(r + n + k) * sites + s];
        }
    }
    Selection { delta, b, c }
}

fn run_paths(x: &Tensor, paths: &[(ScanPath, SsmWeights<'_>)]) -> Result<Tensor> {
    let [batch, dim, h, w] = x.shape();
    let sites = h * w;
    let params = paths
        .iter()
        .map(|(_, pw)| pw.to_params())
        .collect::<Result<Vec<_>>>()?;
    for p in &params {
        if p.dim != dim {
            return Err(Error::shape(
                "ss2d",
                format!("scan parameters cover {} channels, input has {dim}", p.dim),
            ));
        }
    }
    let mut out = Tensor::zeros(x.shape());
    let mut y = vec![0.0; sites * dim];
    for item in 0..batch {
        let xi = x.item(item);
        let x_sm = to_site_major(xi, dim, sites);
        y.fill(0.0);
        for ((path, pw), p) in paths.iter().zip(&params) {
            let sel = select(xi, pw, p, sites);
            scan_sites(&path.order(h, w), &x_sm, &sel, p, &mut y, true);
        }
        let dst = out.item_mut(item);
        for d in 0..dim {
            for s in 0..sites {
                dst[d * sites + s] = y[s * dim + d] as f32;
            }
        }
    }
    Ok(out)
}

/// Four-direction selective scan; the per-path outputs are summed in the
/// fixed order of [`ScanPath::ALL`].
pub fn ss2d(x: &Tensor, weights: &[SsmWeights<'_>; 4]) -> Result<Tensor> {
    let paths: Vec<_> = ScanPath::ALL.into_iter().zip(weights.iter().copied()).collect();
    run_paths(x, &paths)
}

/// Output of a single traversal path of [`ss2d`].
pub fn ss2d_path(x: &Tensor, path: ScanPath, weights: &SsmWeights<'_>) -> Result<Tensor> {
    run_paths(x, &[(path, *weights)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_are_bijections() {
        for (h, w) in [(1, 1), (1, 7), (5, 1), (4, 6), (16, 16)] {
            let plane: Vec<u32> = (0..(h * w) as u32).collect();
            for path in ScanPath::ALL {
                let mut order = path.order(h, w);
                assert_eq!(path.scatter(&path.gather(&plane, h, w), h, w), plane);
                order.sort_unstable();
                assert_eq!(order, (0..h * w).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn reverse_paths_reverse_forward_ones() {
        let fwd = ScanPath::ColumnForward.order(3, 4);
        let mut rev = ScanPath::ColumnReverse.order(3, 4);
        rev.reverse();
        assert_eq!(fwd, rev);
        assert_eq!(ScanPath::ColumnForward.order(3, 4)[..3], [0, 4, 8]);
    }
}
