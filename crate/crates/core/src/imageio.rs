//! 8-bit images and binary PGM (P5) / PPM (P6) files.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorgraph::{Scalar, Tensor};

/// Row-major 8-bit image with interleaved channels (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Input(format!(
                "{width}×{height}×{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels]).expect("consistent by construction")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// `[1, 3, H, W]` tensor with samples mapped to `[0, 1]`; gray images are
    /// replicated to three channels.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let scale = 1.0 / 255.0;
        Tensor::from_fn(&[1, 3, h, w], |i| {
            let c = i / (w * h);
            let p = i % (w * h);
            let src = if self.channels == 1 { p } else { p * 3 + c };
            T::lit(self.data[src] as f64 * scale)
        })
    }

    /// Copy padded with zeros on the right and bottom to `width×height`.
    pub fn padded(&self, width: usize, height: usize) -> Self {
        let mut out = Self::filled(width.max(self.width), height.max(self.height), self.channels, 0);
        for y in 0..self.height {
            let src = &self.data[y * self.width * self.channels..(y + 1) * self.width * self.channels];
            let start = y * out.width * self.channels;
            out.data[start..start + src.len()].copy_from_slice(src);
        }
        out
    }
}

/// Serializes as P5 (gray) or P6 (RGB) with maxval 255.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Parses binary PGM/PPM; `path` only labels errors, which carry the byte
/// offset of the offending token.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let err = |offset: usize, msg: &str| Error::parse(path, offset as u64, msg);
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(err(0, "missing P5/P6 magic"));
    }
    let channels = match bytes[1] {
        b'5' => 1,
        b'6' => 3,
        _ => return Err(err(1, "only binary P5 and P6 are supported")),
    };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        // whitespace and comments before every header field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(start, &format!("expected {name}")));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, &format!("{name} out of range")))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(pos, "only 8-bit samples (maxval 1..=255) are supported"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected a single whitespace byte before the raster")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| err(pos, "image extent overflows"))?;
    if bytes.len() - pos < need {
        return Err(err(
            bytes.len(),
            &format!("truncated raster: need {need} bytes, found {}", bytes.len() - pos),
        ));
    }
    let mut data = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for v in &mut data {
            *v = ((*v as usize).min(maxval) * 255 / maxval) as u8;
        }
    }
    Image::new(width, height, channels, data)
}
