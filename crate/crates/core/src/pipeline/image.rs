//! 8-bit RGB images: binary PPM always, PNG with the `png` feature.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} bytes for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Channels-first tensor in `[0, 1]`.
    pub fn to_tensor<F: Real>(&self) -> Tensor<F> {
        let plane = self.pixels();
        let scale = F::lit(1.0 / 255.0);
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            F::lit(self.data[p * 3 + c] as f64) * scale
        })
    }

    /// Quantize a `(3, H, W)` tensor in `[0, 1]` back to bytes.
    pub fn from_tensor<F: Real>(t: &Tensor<F>) -> Result<Self> {
        let (c, h, w) = t.dims3("from_tensor")?;
        if c != 3 {
            return Err(Error::shape("from_tensor", format!("{c} channels, expected 3")));
        }
        let plane = h * w;
        let mut data = vec![0u8; 3 * plane];
        for (i, v) in t.data().iter().enumerate() {
            let (c, p) = (i / plane, i % plane);
            let x = (v.as_f64() * 255.0).round();
            data[p * 3 + c] = if x.is_nan() { 0 } else { x.clamp(0.0, 255.0) as u8 };
        }
        RgbImage::new(w, h, data)
    }
}

/// Extend to multiples of `align` by replicating the last row and column.
pub fn pad_replicate<F: Real>(t: &Tensor<F>, align: usize) -> Result<Tensor<F>> {
    let (c, h, w) = t.dims3("pad_replicate")?;
    if h == 0 || w == 0 || align == 0 {
        return Err(Error::InvalidArgument("cannot pad an empty image".into()));
    }
    let (ph, pw) = (h.div_ceil(align) * align, w.div_ceil(align) * align);
    Ok(Tensor::from_fn(&[c, ph, pw], |i| {
        let (ch, r, col) = (i / (ph * pw), (i / pw) % ph, i % pw);
        t.data()[ch * h * w + r.min(h - 1) * w + col.min(w - 1)]
    }))
}

/// Top-left `h x w` window.
pub fn crop<F: Real>(t: &Tensor<F>, h: usize, w: usize) -> Result<Tensor<F>> {
    let (c, th, tw) = t.dims3("crop")?;
    if h > th || w > tw {
        return Err(Error::shape("crop", format!("{h}x{w} exceeds {th}x{tw}")));
    }
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, r, col) = (i / (h * w), (i / w) % h, i % w);
        t.data()[ch * th * tw + r * tw + col]
    }))
}

fn malformed(detail: impl Into<String>) -> Error {
    Error::Malformed { what: "PPM image", detail: detail.into() }
}

/// Parse a binary `P6` PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::BadMagic { expected: "P6" });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Truncated("PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("header not terminated by whitespace"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(malformed(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(malformed("empty image"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| malformed("extents overflow"))?;
    let pixels = bytes.get(pos..pos + need).ok_or(Error::Truncated("PPM pixel data"))?;
    RgbImage::new(width, height, pixels.to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Malformed { what: "PNG image", detail: e.to_string() })?
        .to_rgb8();
    RgbImage::new(img.width() as usize, img.height() as usize, img.into_raw())
}

#[cfg(not(feature = "png"))]
fn decode_png(_: &[u8]) -> Result<RgbImage> {
    Err(Error::Malformed { what: "image", detail: "PNG support not compiled in (enable the `png` feature)".into() })
}

#[cfg(feature = "png")]
fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    image::RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::InvalidArgument("image buffer size".into()))?
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(out.into_inner())
}

#[cfg(not(feature = "png"))]
fn encode_png(_: &RgbImage) -> Result<Vec<u8>> {
    Err(Error::InvalidArgument("PNG support not compiled in (enable the `png` feature)".into()))
}

/// Sniff the format from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else {
        decode_ppm(bytes)
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_image(&std::fs::read(path)?)
}

/// PNG when the extension is `.png`, PPM otherwise.
pub fn encode_image_for(path: impl AsRef<Path>, img: &RgbImage) -> Result<Vec<u8>> {
    let is_png = path.as_ref().extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        encode_png(img)
    } else {
        Ok(encode_ppm(img))
    }
}

pub fn write_image(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let bytes = encode_image_for(&path, img)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Smooth deterministic test pattern with some texture.
pub fn test_pattern(width: usize, height: usize, seed: u64) -> RgbImage {
    let phase = (seed % 997) as f64 * 0.01;
    let mut data = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f64 / height.max(1) as f64, c as f64 / width.max(1) as f64);
            for ch in 0..3 {
                let k = ch as f64;
                let v = 0.5
                    + 0.3 * ((6.0 + k) * x + 4.0 * y + phase + k).sin()
                    + 0.15 * (23.0 * x * y + 2.0 * k).cos()
                    + 0.05 * ((r * 7 + c * 13 + ch * 5) % 11) as f64 / 11.0;
                data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    RgbImage { width, height, data }
}
