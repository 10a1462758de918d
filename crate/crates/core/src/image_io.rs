//! 8-bit RGB image files. Binary PPM is always available; PNG needs the
//! `png` feature.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(1, 3, H, W)` tensor from interleaved RGB bytes, scaled by `1/255`.
pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Image(format!(
            "{width}x{height} RGB needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    Ok(Tensor::from_fn([1, 3, height, width], |_, c, y, x| {
        rgb[(y * width + x) * 3 + c] as f32 / 255.0
    }))
}

/// Interleaved RGB bytes, rounding to nearest and clamping to `[0, 255]`.
pub fn to_rgb8(image: &Tensor) -> Result<Vec<u8>> {
    let [n, c, h, w] = image.shape();
    if n != 1 || c != 3 {
        return Err(Error::shape("to_rgb8", format!("expected (1, 3, H, W), got {:?}", image.shape())));
    }
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = (image.at(0, ch, y, x) as f64 * 255.0).round().clamp(0.0, 255.0);
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

/// Parses a binary (`P6`) PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |m: &str| Error::Image(format!("PPM: {m}"));
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 signature"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("malformed header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} is not supported")));
    }
    if w == 0 || h == 0 {
        return Err(bad("zero extent"));
    }
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(3)).ok_or_else(|| bad("extent overflow"))?;
    let data = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated raster"))?;
    from_rgb8(w, h, data)
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(to_rgb8(image)?);
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads an image, choosing the format from the file extension.
pub fn load_image(path: &Path) -> Result<Tensor> {
    if is_png(path) {
        return load_png(path);
    }
    decode_ppm(&fs::read(path)?)
}

pub fn save_image(image: &Tensor, path: &Path) -> Result<()> {
    if is_png(path) {
        return save_png(image, path);
    }
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

#[cfg(feature = "png")]
fn load_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

#[cfg(feature = "png")]
fn save_png(image: &Tensor, path: &Path) -> Result<()> {
    let rgb = to_rgb8(image)?;
    image::save_buffer(path, &rgb, image.width() as u32, image.height() as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::Image(e.to_string()))
}

#[cfg(not(feature = "png"))]
fn load_png(path: &Path) -> Result<Tensor> {
    Err(Error::Image(format!("{}: PNG support needs the `png` feature", path.display())))
}

#[cfg(not(feature = "png"))]
fn save_png(_: &Tensor, path: &Path) -> Result<()> {
    load_png(path).map(|_| ())
}
