//! Dense per-pixel network outputs.

use crate::error::{Error, Result};
use crate::tensorgraph::kernels::axis_taps;

/// Per-pixel keypoint probability, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Per-pixel descriptors stored channel-major (`dim × height × width`).
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorMap {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

fn bilinear(plane: &[f64], width: usize, height: usize, u: f64, v: f64) -> f64 {
    let (x0, x1, fx) = axis_taps(u, width);
    let (y0, y1, fy) = axis_taps(v, height);
    let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    let bot = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn check_domain(u: f64, v: f64, width: usize, height: usize) -> Result<()> {
    if u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "({u}, {v}) outside [0, {}]×[0, {}]",
            width - 1,
            height - 1
        )))
    }
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Input(format!(
                "score map {width}×{height} with {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Bilinear sample at pixel-center coordinates.
    pub fn sample(&self, u: f64, v: f64) -> Result<f64> {
        check_domain(u, v, self.width, self.height)?;
        Ok(bilinear(&self.data, self.width, self.height, u, v))
    }

    pub fn cropped(&self, width: usize, height: usize) -> Self {
        Self::from_fn(width.min(self.width), height.min(self.height), |x, y| self.get(x, y))
    }
}

impl DescriptorMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 || data.len() != width * height * dim {
            return Err(Error::Input(format!(
                "descriptor map {width}×{height}×{dim} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    /// Builds a map from a per-pixel descriptor function.
    pub fn from_fn(width: usize, height: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> Self {
        let mut data = vec![0.0; width * height * dim];
        for y in 0..height {
            for x in 0..width {
                let d = f(x, y);
                assert_eq!(d.len(), dim, "descriptor length");
                for (c, v) in d.into_iter().enumerate() {
                    data[(c * height + y) * width + x] = v;
                }
            }
        }
        Self {
            width,
            height,
            dim,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Channel-major storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn descriptor(&self, x: usize, y: usize) -> Vec<f64> {
        (0..self.dim).map(|c| self.plane(c)[y * self.width + x]).collect()
    }

    /// Bilinear interpolation of every channel, without re-normalization.
    pub fn sample_raw(&self, u: f64, v: f64) -> Result<Vec<f64>> {
        check_domain(u, v, self.width, self.height)?;
        Ok((0..self.dim)
            .map(|c| bilinear(self.plane(c), self.width, self.height, u, v))
            .collect())
    }

    pub fn cropped(&self, width: usize, height: usize) -> Self {
        let (w, h) = (width.min(self.width), height.min(self.height));
        Self::from_fn(w, h, self.dim, |x, y| self.descriptor(x, y))
    }
}
