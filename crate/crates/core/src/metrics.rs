//! Distortion and rate metrics, rate-distortion curves and BD-rate.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    same_shape("mse", x, x_hat)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(sum / x.numel().max(1) as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// `10 log10(peak^2 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(x: &Tensor, x_hat: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, x_hat)?, peak))
}

pub fn bpp(total_bits: u64, width: usize, height: usize) -> Result<f64> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("bpp over a {width}x{height} image")));
    }
    Ok(total_bits as f64 / (width * height) as f64)
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Single-channel image in 64-bit.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    /// Valid-mode separable Gaussian filter.
    fn blur(&self, g: &[f64; WINDOW]) -> Plane {
        let ow = self.w - WINDOW + 1;
        let oh = self.h - WINDOW + 1;
        let mut rows = vec![0.0; self.h * ow];
        for y in 0..self.h {
            let src = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = g.iter().zip(&src[x..x + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = (0..WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
            }
        }
        Plane { h: oh, w: ow, v }
    }

    fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2x2 average pooling, odd edges dropped.
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let at = |dy: usize, dx: usize| self.v[(2 * y + dy) * self.w + 2 * x + dx];
                v.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
        Plane { h, w, v }
    }
}

/// Mean luminance and contrast-structure terms at one scale.
fn ssim_terms(x: &Plane, y: &Plane, g: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = x.blur(g);
    let my = y.blur(g);
    let xx = x.zip(x, |a, b| a * b).blur(g);
    let yy = y.zip(y, |a, b| a * b).blur(g);
    let xy = x.zip(y, |a, b| a * b).blur(g);
    let n = mx.v.len() as f64;
    let (mut lum, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = xx.v[i] - ux * ux;
        let vy = yy.v[i] - uy * uy;
        let cov = xy.v[i] - ux * uy;
        lum += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs += (2.0 * cov + c2) / (vx + vy + c2);
    }
    (lum / n, cs / n)
}

/// Number of scales that fit an image whose shorter side is `extent`.
pub fn ms_ssim_scales(extent: usize) -> usize {
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| extent >= WINDOW << (s - 1))
        .unwrap_or(0)
}

/// Multi-scale SSIM of images in `[0, 1]`, averaged over channels. Images
/// too small for five scales use fewer, with the weights renormalized.
pub fn ms_ssim(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    same_shape("ms_ssim", x, x_hat)?;
    let [n, c, h, w] = x.shape();
    let scales = ms_ssim_scales(h.min(w));
    if scales == 0 {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} is smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    if scales < MS_SSIM_WEIGHTS.len() {
        log::warn!("{w}x{h} image: MS-SSIM over {scales} scales instead of {}", MS_SSIM_WEIGHTS.len());
    }
    let total: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|v| v / total).collect();
    let g = gaussian_window();
    let mut acc = 0.0;
    for b in 0..n {
        for ch in 0..c {
            let plane = |t: &Tensor| Plane {
                h,
                w,
                v: t.plane(b, ch).iter().map(|&v| v as f64).collect(),
            };
            let (mut px, mut py) = (plane(x), plane(x_hat));
            let mut score = 1.0;
            for (s, &wt) in weights.iter().enumerate() {
                let (lum, cs) = ssim_terms(&px, &py, &g);
                let term = if s + 1 == scales { lum * cs } else { cs };
                score *= term.max(0.0).powf(wt);
                if s + 1 < scales {
                    px = px.downsample();
                    py = py.downsample();
                }
            }
            acc += score;
        }
    }
    Ok(acc / (n * c) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    label: String,
    bpp: f64,
    psnr_db: f64,
    ms_ssim: f64,
}

/// Labelled points kept in ascending bpp.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RdCurve {
    pub points: Vec<(String, RdPoint)>,
}

impl RdCurve {
    pub fn new(mut points: Vec<(String, RdPoint)>) -> Self {
        points.sort_by(|a, b| a.1.bpp.total_cmp(&b.1.bpp));
        RdCurve { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        for (label, p) in &self.points {
            w.serialize(CsvRow {
                label: label.clone(),
                bpp: p.bpp,
                psnr_db: p.psnr_db,
                ms_ssim: p.ms_ssim,
            })
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(source: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(source);
        let mut points = Vec::new();
        for row in r.deserialize::<CsvRow>() {
            let row = row.map_err(csv_error)?;
            points.push((
                row.label,
                RdPoint {
                    bpp: row.bpp,
                    psnr_db: row.psnr_db,
                    ms_ssim: row.ms_ssim,
                },
            ));
        }
        Ok(RdCurve::new(points))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("rate-distortion csv: {e}"))
}

/// Least-squares cubic `ln(rate) ~ poly(psnr - centre)`.
fn fit_cubic(curve: &RdCurve, centre: f64) -> Result<[f64; 4]> {
    let n = curve.len();
    let a = DMatrix::from_fn(n, 4, |i, j| (curve.points[i].1.psnr_db - centre).powi(j as i32));
    let b = DVector::from_iterator(n, curve.points.iter().map(|(_, p)| p.bpp.ln()));
    let c = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("cubic fit failed: {e}")))?;
    Ok([c[0], c[1], c[2], c[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

/// Bjontegaard rate difference of `test` against `anchor` in percent;
/// negative means `test` needs fewer bits for the same PSNR.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    for (name, c) in [("anchor", anchor), ("test", test)] {
        if c.len() < 4 {
            return Err(Error::InvalidArgument(format!("{name} curve has {} points, needs 4", c.len())));
        }
        if c.points.iter().any(|(_, p)| !(p.bpp > 0.0) || !p.psnr_db.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} curve has a non-positive rate")));
        }
    }
    let range = |c: &RdCurve| {
        c.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, p)| {
            (lo.min(p.psnr_db), hi.max(p.psnr_db))
        })
    };
    let (alo, ahi) = range(anchor);
    let (tlo, thi) = range(test);
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "PSNR ranges [{alo}, {ahi}] and [{tlo}, {thi}] do not overlap"
        )));
    }
    let centre = (lo + hi) / 2.0;
    let ca = fit_cubic(anchor, centre)?;
    let ct = fit_cubic(test, centre)?;
    let (l, h) = (lo - centre, hi - centre);
    let gap = (integral(&ct, l, h) - integral(&ca, l, h)) / (h - l);
    Ok((gap.exp() - 1.0) * 100.0)
}
