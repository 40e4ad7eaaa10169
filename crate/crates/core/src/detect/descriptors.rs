use super::Keypoint;
use crate::error::{Error, Result};
use crate::maps::DescriptorMap;
use crate::tensorgraph::{Graph, Scalar, Var};

const NORM_FLOOR: f64 = 1e-12;

/// Bilinearly interpolated descriptors at each keypoint, rescaled to unit
/// length.
pub fn sample_descriptors(map: &DescriptorMap, keypoints: &[Keypoint]) -> Result<Vec<Vec<f64>>> {
    keypoints
        .iter()
        .map(|kp| {
            let mut d = map.sample_raw(kp.u, kp.v)?;
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
            d.iter_mut().for_each(|x| *x /= n);
            Ok(d)
        })
        .collect()
}

/// Graph form: `desc [1,dim,H,W]` sampled at `coords [K,2]`, returns unit
/// rows `[K, dim]`.
pub fn sample_descriptors_graph<T: Scalar>(g: &mut Graph<T>, desc: Var, coords: Var) -> Result<Var> {
    let raw = g.sample_bilinear(desc, coords)?;
    g.l2_normalize(raw, 1)
}

/// Dot products of one descriptor with every pixel of a map, plus the
/// constant similarity of the outlier category.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMap {
    pub width: usize,
    pub height: usize,
    /// Row-major `height × width`.
    pub values: Vec<f64>,
    pub outlier_bin: f64,
}

pub fn similarity_map(descriptor: &[f64], map: &DescriptorMap, outlier_bin: f64) -> Result<SimilarityMap> {
    if descriptor.len() != map.dim() {
        return Err(Error::Usage(format!(
            "descriptor has {} channels, map has {}",
            descriptor.len(),
            map.dim()
        )));
    }
    let n = map.width() * map.height();
    let mut values = vec![0.0; n];
    for (c, &q) in descriptor.iter().enumerate() {
        for (v, &d) in values.iter_mut().zip(map.plane(c)) {
            *v += q * d;
        }
    }
    Ok(SimilarityMap {
        width: map.width(),
        height: map.height(),
        values,
        outlier_bin,
    })
}
