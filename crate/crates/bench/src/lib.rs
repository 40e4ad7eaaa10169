//! Benchmark fixtures.

use alikekit::{DescriptorMap, ScoreMap};

/// Smooth pseudo-random field in [0, 1] with many local maxima.
pub fn score_map(width: usize, height: usize) -> ScoreMap {
    ScoreMap::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let v = (x * 0.37).sin() * (y * 0.29).cos() + (x * 0.11 + y * 0.13).sin();
        0.5 + 0.25 * v
    })
}

/// `n` unit descriptors of length `dim` from a hashed sequence.
pub fn descriptors(n: usize, dim: usize, salt: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|k| hashed(salt, (i * dim + k) as u64)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Unit descriptor map with hashed per-pixel vectors.
pub fn descriptor_map(width: usize, height: usize, dim: usize) -> DescriptorMap {
    let rows = descriptors(width * height, dim, 7);
    DescriptorMap::from_fn(width, height, dim, |x, y| rows[y * width + x].clone())
}

/// Value in [−1, 1) from a splitmix64 step.
pub fn hashed(salt: u64, i: u64) -> f64 {
    let mut z = salt
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(i)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}
