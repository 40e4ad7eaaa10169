//! Synthetic image pairs related by a known homography.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::INPUT_MULTIPLE;
use crate::error::{Error, Result};
use crate::geometry::Mat3;
use crate::imageio::Image;

/// Rendering and warping options of [`generate_pair_with`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Brightness, contrast and noise jitter on image B.
    pub photometric: bool,
    /// Forces the identity homography.
    pub identity: bool,
}

impl SynthConfig {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            photometric: true,
            identity: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub image_a: Image,
    pub image_b: Image,
    /// Maps pixel coordinates of A to pixel coordinates of B.
    pub homography: Mat3,
    pub seed: u64,
}

const MAX_ROTATION_DEG: f64 = 25.0;
const SCALE_RANGE: (f64, f64) = (0.8, 1.25);
const MAX_TRANSLATION: f64 = 0.1;
const MAX_PERSPECTIVE: f64 = 1e-3;
const MAX_NOISE_SIGMA: f64 = 2.0 / 255.0;
const SUPERSAMPLE: usize = 3;

/// A pair with default options at `width×height`.
pub fn generate_pair(seed: u64, width: usize, height: usize) -> Result<SyntheticPair> {
    generate_pair_with(seed, &SynthConfig::new(width, height))
}

pub fn generate_pair_with(seed: u64, cfg: &SynthConfig) -> Result<SyntheticPair> {
    let (w, h) = (cfg.width, cfg.height);
    if w == 0 || h == 0 || w % INPUT_MULTIPLE != 0 || h % INPUT_MULTIPLE != 0 {
        return Err(Error::Input(format!(
            "synthetic size {w}×{h} must be a positive multiple of {INPUT_MULTIPLE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng, w, h);
    let image_a = scene.render(w, h);
    let homography = if cfg.identity {
        Mat3::identity()
    } else {
        random_homography(&mut rng, w, h)
    };
    let mut image_b = if cfg.identity {
        image_a.clone()
    } else {
        warp_image(&image_a, &homography)
    };
    if cfg.photometric {
        jitter(&mut image_b, &mut rng);
    }
    Ok(SyntheticPair {
        image_a,
        image_b,
        homography,
        seed,
    })
}

/// `T(c + t) · P · R · S · T(−c)` about the image center `c`.
pub(crate) fn random_homography(rng: &mut impl Rng, w: usize, h: usize) -> Mat3 {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let angle = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
    let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
    let tx = rng.gen_range(-MAX_TRANSLATION..=MAX_TRANSLATION) * w as f64;
    let ty = rng.gen_range(-MAX_TRANSLATION..=MAX_TRANSLATION) * h as f64;
    let px = rng.gen_range(-MAX_PERSPECTIVE..=MAX_PERSPECTIVE);
    let py = rng.gen_range(-MAX_PERSPECTIVE..=MAX_PERSPECTIVE);
    let (s, c) = angle.sin_cos();
    let to_origin = Mat3::new(1.0, 0.0, -cx, 0.0, 1.0, -cy, 0.0, 0.0, 1.0);
    let rs = Mat3::new(scale * c, -scale * s, 0.0, scale * s, scale * c, 0.0, 0.0, 0.0, 1.0);
    let persp = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, px, py, 1.0);
    let back = Mat3::new(1.0, 0.0, cx + tx, 0.0, 1.0, cy + ty, 0.0, 0.0, 1.0);
    let hm = back * persp * rs * to_origin;
    hm / hm[(2, 2)]
}

/// `out(q) = img(H⁻¹ q)`, bilinear with edge replication.
pub(crate) fn warp_image(img: &Image, h: &Mat3) -> Image {
    let inv = h.try_inverse().expect("sampled homographies are invertible");
    let (w, ht, ch) = (img.width(), img.height(), img.channels());
    let mut data = Vec::with_capacity(w * ht * ch);
    let fetch = |x: isize, y: isize, c: usize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, ht as isize - 1) as usize;
        img.pixel(x, y)[c] as f64
    };
    for y in 0..ht {
        for x in 0..w {
            let p = inv * nalgebra::Vector3::new(x as f64, y as f64, 1.0);
            let (u, v) = (p.x / p.z, p.y / p.z);
            let (x0, y0) = (u.floor(), v.floor());
            let (fx, fy) = (u - x0, v - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..ch {
                let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
                let bottom = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
                data.push(to_u8(top * (1.0 - fy) + bottom * fy));
            }
        }
    }
    Image::new(w, ht, ch, data).expect("sizes match")
}

fn to_u8(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// Gain and contrast in ±20% and Gaussian noise with σ up to 2/255.
fn jitter(img: &mut Image, rng: &mut impl Rng) {
    let gain = rng.gen_range(0.8..=1.2);
    let contrast = rng.gen_range(0.8..=1.2);
    let sigma = rng.gen_range(0.0..=MAX_NOISE_SIGMA) * 255.0;
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / img.data().len() as f64;
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            for v in img.pixel_mut(x, y) {
                let adjusted = gain * ((*v as f64 - mean) * contrast + mean);
                *v = to_u8(adjusted + noise.sample(rng));
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Polygon(Vec<[f64; 2]>),
    Ellipse {
        center: [f64; 2],
        radii: [f64; 2],
        angle: f64,
    },
    Checker {
        center: [f64; 2],
        half: [f64; 2],
        angle: f64,
        cell: f64,
        alt: [f64; 3],
    },
}

impl Shape {
    /// Color at `p` or `None` outside the shape.
    fn shade(&self, p: [f64; 2], color: [f64; 3]) -> Option<[f64; 3]> {
        match self {
            Shape::Polygon(vs) => point_in_polygon(p, vs).then_some(color),
            Shape::Ellipse { center, radii, angle } => {
                let [x, y] = rotate([p[0] - center[0], p[1] - center[1]], -angle);
                ((x / radii[0]).powi(2) + (y / radii[1]).powi(2) <= 1.0).then_some(color)
            }
            Shape::Checker {
                center,
                half,
                angle,
                cell,
                alt,
            } => {
                let [x, y] = rotate([p[0] - center[0], p[1] - center[1]], -angle);
                if x.abs() > half[0] || y.abs() > half[1] {
                    return None;
                }
                let parity = ((x + half[0]) / cell).floor() as i64 + ((y + half[1]) / cell).floor() as i64;
                Some(if parity % 2 == 0 { color } else { *alt })
            }
        }
    }
}

fn rotate([x, y]: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * x - s * y, s * x + c * y]
}

fn point_in_polygon(p: [f64; 2], vs: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = vs.len() - 1;
    for i in 0..vs.len() {
        let (a, b) = (vs[i], vs[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Smoothly varying background from bilinearly interpolated lattice noise.
#[derive(Clone, Debug)]
struct ValueNoise {
    cell: f64,
    cols: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn random(rng: &mut impl Rng, w: usize, h: usize, cell: f64) -> Self {
        let cols = (w as f64 / cell).ceil() as usize + 2;
        let rows = (h as f64 / cell).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cell, cols, values }
    }

    fn at(&self, [x, y]: [f64; 2]) -> f64 {
        let (gx, gy) = (x.max(0.0) / self.cell, y.max(0.0) / self.cell);
        let (i, j) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - i as f64, gy - j as f64);
        let v = |i: usize, j: usize| self.values[j * self.cols + i];
        let top = v(i, j) * (1.0 - fx) + v(i + 1, j) * fx;
        let bottom = v(i, j + 1) * (1.0 - fx) + v(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

#[derive(Clone, Debug)]
struct Scene {
    base: [f64; 3],
    coarse: ValueNoise,
    fine: ValueNoise,
    shapes: Vec<(Shape, [f64; 3])>,
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    let bright = rng.gen_bool(0.5);
    let level: f64 = if bright {
        rng.gen_range(0.65..1.0)
    } else {
        rng.gen_range(0.0..0.35)
    };
    [0, 1, 2].map(|_| (level + rng.gen_range(-0.15..0.15f64)).clamp(0.0, 1.0))
}

impl Scene {
    fn random(rng: &mut impl Rng, w: usize, h: usize) -> Self {
        let base = [0, 1, 2].map(|_| rng.gen_range(0.35..0.65));
        let coarse = ValueNoise::random(rng, w, h, 24.0);
        let fine = ValueNoise::random(rng, w, h, 6.0);
        let (wf, hf) = (w as f64, h as f64);
        let extent = wf.min(hf);
        let count = ((w * h) as f64 / 900.0).round().clamp(6.0, 200.0) as usize;
        let shapes = (0..count)
            .map(|_| {
                let center = [rng.gen_range(0.0..wf), rng.gen_range(0.0..hf)];
                let size = rng.gen_range(0.06..0.18) * extent;
                let angle = rng.gen_range(0.0..std::f64::consts::PI);
                let shape = match rng.gen_range(0..3) {
                    0 => {
                        let n = rng.gen_range(3..=6);
                        let step = std::f64::consts::TAU / n as f64;
                        let phase = rng.gen_range(0.0..step);
                        let vs = (0..n)
                            .map(|k| {
                                let a = phase + step * (k as f64 + rng.gen_range(-0.3..0.3));
                                let r = size * rng.gen_range(0.5..1.0);
                                [center[0] + r * a.cos(), center[1] + r * a.sin()]
                            })
                            .collect();
                        Shape::Polygon(vs)
                    }
                    1 => Shape::Ellipse {
                        center,
                        radii: [size * rng.gen_range(0.4..1.0), size * rng.gen_range(0.4..1.0)],
                        angle,
                    },
                    _ => Shape::Checker {
                        center,
                        half: [size * rng.gen_range(0.6..1.0), size * rng.gen_range(0.6..1.0)],
                        angle,
                        cell: size * rng.gen_range(0.3..0.6),
                        alt: random_color(rng),
                    },
                };
                (shape, random_color(rng))
            })
            .collect();
        Self {
            base,
            coarse,
            fine,
            shapes,
        }
    }

    fn color_at(&self, p: [f64; 2]) -> [f64; 3] {
        let shaded = self.shapes.iter().rev().find_map(|(s, c)| s.shade(p, *c));
        shaded.unwrap_or_else(|| {
            let t = 0.2 * self.coarse.at(p) + 0.06 * self.fine.at(p);
            self.base.map(|b| (b + t).clamp(0.0, 1.0))
        })
    }

    /// Box-filtered over a 3×3 subpixel grid.
    fn render(&self, w: usize, h: usize) -> Image {
        let mut data = Vec::with_capacity(w * h * 3);
        let n = SUPERSAMPLE as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let p = [
                            x as f64 + (sx as f64 + 0.5) / n - 0.5,
                            y as f64 + (sy as f64 + 0.5) / n - 0.5,
                        ];
                        let c = self.color_at(p);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                data.extend(acc.map(|v| to_u8(v / (n * n) * 255.0)));
            }
        }
        Image::new(w, h, 3, data).expect("sizes match")
    }
}
