const COL_BLOCK: usize = 256;
const ROW_BLOCK: usize = 4;

/// `out[r][p] = sum_i w[r][i] * x[i][p]`, accumulated in f64 in increasing `i`.
///
/// `w` is `rows x inner`, `x` is `inner x cols`, `out` is `rows x cols`, all
/// row-major. The summation order per output element does not depend on the
/// blocking, so results are bitwise stable.
pub(crate) fn gemm_f64(w: &[f32], x: &[f32], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    assert_eq!(w.len(), rows * inner);
    assert_eq!(x.len(), inner * cols);
    assert_eq!(out.len(), rows * cols);

    let mut acc = [[0f64; COL_BLOCK]; ROW_BLOCK];
    let mut c0 = 0;
    while c0 < cols {
        let cb = (cols - c0).min(COL_BLOCK);
        let mut r = 0;
        while r + ROW_BLOCK <= rows {
            for a in acc.iter_mut() {
                a[..cb].fill(0.0);
            }
            let [a0, a1, a2, a3] = &mut acc;
            let (a0, a1, a2, a3) = (&mut a0[..cb], &mut a1[..cb], &mut a2[..cb], &mut a3[..cb]);
            for i in 0..inner {
                let xr = &x[i * cols + c0..i * cols + c0 + cb];
                let w0 = w[r * inner + i] as f64;
                let w1 = w[(r + 1) * inner + i] as f64;
                let w2 = w[(r + 2) * inner + i] as f64;
                let w3 = w[(r + 3) * inner + i] as f64;
                for p in 0..cb {
                    let v = xr[p] as f64;
                    a0[p] += w0 * v;
                    a1[p] += w1 * v;
                    a2[p] += w2 * v;
                    a3[p] += w3 * v;
                }
            }
            for (k, a) in [&*a0, &*a1, &*a2, &*a3].into_iter().enumerate() {
                let o = (r + k) * cols + c0;
                out[o..o + cb].copy_from_slice(a);
            }
            r += ROW_BLOCK;
        }
        while r < rows {
            let a0 = &mut acc[0][..cb];
            a0.fill(0.0);
            for i in 0..inner {
                let xr = &x[i * cols + c0..i * cols + c0 + cb];
                let w0 = w[r * inner + i] as f64;
                for p in 0..cb {
                    a0[p] += w0 * xr[p] as f64;
                }
            }
            let o = r * cols + c0;
            out[o..o + cb].copy_from_slice(a0);
            r += 1;
        }
        c0 += cb;
    }
}
