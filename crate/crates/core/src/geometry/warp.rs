use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::tensorgraph::kernels::axis_taps;
use crate::tensorgraph::{Graph, Scalar, Var};

pub type Mat3 = Matrix3<f64>;

const MIN_W: f64 = 1e-12;
/// Relative depth deviation tolerated before a rigid warp counts as occluded.
const DEPTH_TOLERANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    AToB,
    BToA,
}

/// Dense depth in scene units, row-major; non-positive values are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 || data.len() != width * height {
            return Err(Error::Input(format!(
                "depth map {width}×{height} with {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        in_bounds(p, (self.width, self.height))
    }

    /// Bilinear depth and its derivative along `(u, v)`. The four taps must
    /// all be valid.
    fn sample(&self, [u, v]: [f64; 2]) -> Option<(f64, [f64; 2])> {
        let (x0, x1, fx) = axis_taps(u, self.width);
        let (y0, y1, fy) = axis_taps(v, self.height);
        let at = |x: usize, y: usize| self.data[y * self.width + x];
        let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        if [a, b, c, d].iter().any(|z| !(z.is_finite() && *z > 0.0)) {
            return None;
        }
        let top = a * (1.0 - fx) + b * fx;
        let bot = c * (1.0 - fx) + d * fx;
        let z = top * (1.0 - fy) + bot * fy;
        let dz_du = (1.0 - fy) * (b - a) + fy * (d - c);
        Some((z, [dz_du, bot - top]))
    }
}

/// Relative pose of camera B with respect to camera A (`X_B = R·X_A + t`),
/// pinhole intrinsics and per-view depth.
#[derive(Clone, Debug, PartialEq)]
pub struct Rigid3d {
    pub rotation: Mat3,
    pub translation: Vector3<f64>,
    pub k_a: Mat3,
    pub k_b: Mat3,
    pub depth_a: DepthMap,
    pub depth_b: DepthMap,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WarpSpec {
    Homography {
        /// Maps A pixels to B pixels.
        h: Mat3,
        h_inv: Mat3,
        size_a: (usize, usize),
        size_b: (usize, usize),
    },
    Rigid3d(Box<Rigid3d>),
}

impl WarpSpec {
    /// `size_*` are `(width, height)`.
    pub fn homography(h: Mat3, size_a: (usize, usize), size_b: (usize, usize)) -> Result<Self> {
        let det = h.determinant();
        if !(det.is_finite() && det.abs() > 1e-15) {
            return Err(Error::Input(format!("homography is singular (det = {det:e})")));
        }
        let h_inv = h
            .try_inverse()
            .ok_or_else(|| Error::Input("homography is not invertible".into()))?;
        Ok(Self::Homography {
            h,
            h_inv,
            size_a,
            size_b,
        })
    }

    pub fn rigid3d(r: Rigid3d) -> Result<Self> {
        let rtr = r.rotation.transpose() * r.rotation;
        let ortho = (rtr - Mat3::identity()).abs().max();
        let det = r.rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "rotation is not proper orthonormal (‖RᵀR − I‖∞ = {ortho:e}, det = {det})"
            )));
        }
        for k in [&r.k_a, &r.k_b] {
            if k.try_inverse().is_none() {
                return Err(Error::Input("intrinsics matrix is singular".into()));
            }
        }
        Ok(Self::Rigid3d(Box::new(r)))
    }

    /// `(width, height)` of the target image of `dir`.
    pub fn target_size(&self, dir: Direction) -> (usize, usize) {
        match (self, dir) {
            (Self::Homography { size_b, .. }, Direction::AToB) => *size_b,
            (Self::Homography { size_a, .. }, Direction::BToA) => *size_a,
            (Self::Rigid3d(r), Direction::AToB) => (r.depth_b.width, r.depth_b.height),
            (Self::Rigid3d(r), Direction::BToA) => (r.depth_a.width, r.depth_a.height),
        }
    }

    /// `(width, height)` of the source image of `dir`.
    pub fn source_size(&self, dir: Direction) -> (usize, usize) {
        self.target_size(match dir {
            Direction::AToB => Direction::BToA,
            Direction::BToA => Direction::AToB,
        })
    }
}

/// A warped coordinate and the row-major 2×2 derivative `∂p'/∂p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpedPoint {
    pub p: [f64; 2],
    pub jacobian: [f64; 4],
}

fn in_bounds([u, v]: [f64; 2], (w, h): (usize, usize)) -> bool {
    u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64
}

/// Homogeneous projection of `y` and its Jacobian given `∂y/∂p` columns.
fn dehomogenize(y: Vector3<f64>, dy: [Vector3<f64>; 2]) -> Option<WarpedPoint> {
    if !(y.z.abs() >= MIN_W) {
        return None;
    }
    let p = [y.x / y.z, y.y / y.z];
    let mut jacobian = [0.0; 4];
    for (col, d) in dy.iter().enumerate() {
        jacobian[col] = (d.x - p[0] * d.z) / y.z;
        jacobian[2 + col] = (d.y - p[1] * d.z) / y.z;
    }
    Some(WarpedPoint { p, jacobian })
}

/// Maps a pixel of the source view of `dir` into the target view. `None`
/// (OUT) when the result falls outside the target image, the projection
/// degenerates, or (rigid) depth is missing, behind the camera or
/// inconsistent with the target depth map.
pub fn warp(p: [f64; 2], spec: &WarpSpec, dir: Direction) -> Option<WarpedPoint> {
    if !(p[0].is_finite() && p[1].is_finite()) {
        return None;
    }
    let out = match spec {
        WarpSpec::Homography { h, h_inv, .. } => {
            let m = if dir == Direction::AToB { h } else { h_inv };
            let y = m * Vector3::new(p[0], p[1], 1.0);
            dehomogenize(y, [m.column(0).into(), m.column(1).into()])?
        }
        WarpSpec::Rigid3d(r) => warp_rigid(p, r, dir)?,
    };
    in_bounds(out.p, spec.target_size(dir)).then_some(out)
}

fn warp_rigid(p: [f64; 2], r: &Rigid3d, dir: Direction) -> Option<WarpedPoint> {
    let (rot, t, k_src, k_dst, d_src, d_dst) = match dir {
        Direction::AToB => (r.rotation, r.translation, &r.k_a, &r.k_b, &r.depth_a, &r.depth_b),
        Direction::BToA => {
            let rt = r.rotation.transpose();
            (rt, -(rt * r.translation), &r.k_b, &r.k_a, &r.depth_b, &r.depth_a)
        }
    };
    if !d_src.contains(p) {
        return None;
    }
    let (z, dz) = d_src.sample(p)?;
    let k_inv = k_src.try_inverse()?;
    let ray = k_inv * Vector3::new(p[0], p[1], 1.0);
    let x = ray * z;
    let dx = [ray * dz[0] + k_inv.column(0) * z, ray * dz[1] + k_inv.column(1) * z];
    let xb = rot * x + t;
    if !(xb.z > 0.0) {
        return None;
    }
    let y = k_dst * xb;
    let dy = [k_dst * (rot * dx[0]), k_dst * (rot * dx[1])];
    let out = dehomogenize(y, dy)?;
    if !d_dst.contains(out.p) {
        return None;
    }
    let (observed, _) = d_dst.sample(out.p)?;
    ((observed - xb.z).abs() / xb.z < DEPTH_TOLERANCE).then_some(out)
}

/// Warps the rows of `coords [K,2]` on the graph. Returns the warped rows
/// `[M,2]` of the points that stay in view together with their row indices,
/// or `None` when every point is OUT.
pub fn warp_graph<T: Scalar>(
    g: &mut Graph<T>,
    coords: Var,
    spec: &WarpSpec,
    dir: Direction,
) -> Result<Option<(Var, Vec<usize>)>> {
    let pts: Vec<[f64; 2]> = g
        .data(coords)
        .chunks(2)
        .map(|c| [c[0].to_f64_lossy(), c[1].to_f64_lossy()])
        .collect();
    let mut idx = Vec::new();
    let mut values = Vec::new();
    let mut jacobians = Vec::new();
    for (i, &p) in pts.iter().enumerate() {
        if let Some(w) = warp(p, spec, dir) {
            idx.push(i);
            values.extend([T::lit(w.p[0]), T::lit(w.p[1])]);
            jacobians.push(w.jacobian.map(T::lit));
        }
    }
    if idx.is_empty() {
        return Ok(None);
    }
    let kept = g.index_select(coords, &idx)?;
    let mapped = g.point_map(kept, values, jacobians)?;
    Ok(Some((mapped, idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hom(h: Mat3) -> WarpSpec {
        WarpSpec::homography(h, (64, 48), (64, 48)).unwrap()
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Mat3 {
        let a = rng.gen_range(-0.3..0.3f64);
        let s = rng.gen_range(0.8..1.2);
        Mat3::new(
            s * a.cos(),
            -s * a.sin(),
            rng.gen_range(-5.0..5.0),
            s * a.sin(),
            s * a.cos(),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-1e-3..1e-3),
            rng.gen_range(-1e-3..1e-3),
            1.0,
        )
    }

    #[test]
    fn identity_and_translation() {
        let id = hom(Mat3::identity());
        assert_eq!(warp([3.5, 7.25], &id, Direction::AToB).unwrap().p, [3.5, 7.25]);
        let t = hom(Mat3::new(1.0, 0.0, 5.0, 0.0, 1.0, -3.0, 0.0, 0.0, 1.0));
        assert_eq!(warp([10.0, 10.0], &t, Direction::AToB).unwrap().p, [15.0, 7.0]);
        assert_eq!(warp([15.0, 7.0], &t, Direction::BToA).unwrap().p, [10.0, 10.0]);
        assert!(warp([62.0, 10.0], &t, Direction::AToB).is_none());
    }

    #[test]
    fn point_at_infinity_is_out() {
        let h = Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.1, 0.0, -1.0);
        assert!(warp([10.0, 3.0], &hom(h), Direction::AToB).is_none());
    }

    #[test]
    fn singular_homography_rejected() {
        assert!(WarpSpec::homography(Mat3::zeros(), (4, 4), (4, 4)).is_err());
    }

    #[test]
    fn homography_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let spec = hom(random_h(&mut rng));
            let p = [rng.gen_range(0.0..63.0), rng.gen_range(0.0..47.0)];
            if let Some(q) = warp(p, &spec, Direction::AToB) {
                if let Some(back) = warp(q.p, &spec, Direction::BToA) {
                    assert!((back.p[0] - p[0]).abs() < 1e-9 && (back.p[1] - p[1]).abs() < 1e-9);
                }
            }
        }
    }

    fn fd_jacobian(spec: &WarpSpec, p: [f64; 2], dir: Direction, h: f64) -> [f64; 4] {
        let mut j = [0.0; 4];
        for col in 0..2 {
            let (mut a, mut b) = (p, p);
            a[col] += h;
            b[col] -= h;
            let (qa, qb) = (warp(a, spec, dir).unwrap().p, warp(b, spec, dir).unwrap().p);
            j[col] = (qa[0] - qb[0]) / (2.0 * h);
            j[2 + col] = (qa[1] - qb[1]) / (2.0 * h);
        }
        j
    }

    #[test]
    fn homography_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        while checked < 100 {
            let spec = hom(random_h(&mut rng));
            let p = [rng.gen_range(10.0..54.0), rng.gen_range(10.0..38.0)];
            let Some(q) = warp(p, &spec, Direction::AToB) else {
                continue;
            };
            if !(q.p[0] > 1.0 && q.p[0] < 62.0 && q.p[1] > 1.0 && q.p[1] < 46.0) {
                continue;
            }
            let num = fd_jacobian(&spec, p, Direction::AToB, 1e-5);
            let err = crate::testutil::relative_error(&q.jacobian, &num);
            assert!(err < 1e-6, "{err}");
            checked += 1;
        }
    }

    fn rigid(rotation: Mat3, t: Vector3<f64>, depth: DepthMap) -> WarpSpec {
        let k = Mat3::new(50.0, 0.0, 31.5, 0.0, 50.0, 23.5, 0.0, 0.0, 1.0);
        WarpSpec::rigid3d(Rigid3d {
            rotation,
            translation: t,
            k_a: k,
            k_b: k,
            depth_a: depth.clone(),
            depth_b: depth,
        })
        .unwrap()
    }

    #[test]
    fn identity_pose_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let depth = DepthMap::new(64, 48, (0..64 * 48).map(|_| rng.gen_range(1.0..5.0)).collect()).unwrap();
        let spec = rigid(Mat3::identity(), Vector3::zeros(), depth);
        for _ in 0..50 {
            let p = [rng.gen_range(0.0..63.0), rng.gen_range(0.0..47.0)];
            let q = warp(p, &spec, Direction::AToB).unwrap();
            assert!((q.p[0] - p[0]).abs() < 1e-9 && (q.p[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn rigid_translation_on_a_plane() {
        // fronto-parallel plane at depth 2 moved 0.1 along x: shift 50·0.1/2
        let spec = rigid(
            Mat3::identity(),
            Vector3::new(0.1, 0.0, 0.0),
            DepthMap::constant(64, 48, 2.0),
        );
        let q = warp([20.0, 10.0], &spec, Direction::AToB).unwrap();
        assert!((q.p[0] - 22.5).abs() < 1e-12 && (q.p[1] - 10.0).abs() < 1e-12);
        let back = warp(q.p, &spec, Direction::BToA).unwrap();
        assert!((back.p[0] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_occlusion_and_invalid_depth_are_out() {
        let mut depth_b = DepthMap::constant(64, 48, 2.0);
        depth_b.data[10 * 64 + 22] = 1.0;
        depth_b.data[10 * 64 + 23] = 1.0;
        let k = Mat3::new(50.0, 0.0, 31.5, 0.0, 50.0, 23.5, 0.0, 0.0, 1.0);
        let mut r = Rigid3d {
            rotation: Mat3::identity(),
            translation: Vector3::new(0.1, 0.0, 0.0),
            k_a: k,
            k_b: k,
            depth_a: DepthMap::constant(64, 48, 2.0),
            depth_b,
        };
        let spec = WarpSpec::rigid3d(r.clone()).unwrap();
        assert!(warp([20.0, 10.0], &spec, Direction::AToB).is_none());
        assert!(warp([30.0, 30.0], &spec, Direction::AToB).is_some());
        r.depth_a.data[30 * 64 + 30] = 0.0;
        let spec = WarpSpec::rigid3d(r).unwrap();
        assert!(warp([30.0, 30.0], &spec, Direction::AToB).is_none());
    }

    #[test]
    fn rigid_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // smooth slanted depth so that the depth gradient enters
        let depth = DepthMap::new(
            64,
            48,
            (0..64 * 48)
                .map(|i| 3.0 + 0.01 * (i % 64) as f64 + 0.02 * (i / 64) as f64)
                .collect(),
        )
        .unwrap();
        let a = 0.02f64;
        let rot = Mat3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
        let k = Mat3::new(50.0, 0.0, 31.5, 0.0, 50.0, 23.5, 0.0, 0.0, 1.0);
        let spec = WarpSpec::rigid3d(Rigid3d {
            rotation: rot,
            translation: Vector3::new(0.05, 0.0, 0.0),
            k_a: k,
            k_b: k,
            depth_a: depth.clone(),
            depth_b: DepthMap::constant(64, 48, 3.5),
        })
        .unwrap();
        let mut checked = 0;
        while checked < 30 {
            // stay away from tap boundaries where depth is only piecewise smooth
            let p = [
                rng.gen_range(10..40) as f64 + rng.gen_range(0.2..0.8),
                rng.gen_range(10..30) as f64 + rng.gen_range(0.2..0.8),
            ];
            let Some(q) = warp(p, &spec, Direction::AToB) else {
                continue;
            };
            let num = fd_jacobian(&spec, p, Direction::AToB, 1e-6);
            let err = crate::testutil::relative_error(&q.jacobian, &num);
            assert!(err < 1e-6, "{err}");
            checked += 1;
        }
    }

    #[test]
    fn improper_rotation_rejected() {
        let r = Rigid3d {
            rotation: Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0),
            translation: Vector3::zeros(),
            k_a: Mat3::identity(),
            k_b: Mat3::identity(),
            depth_a: DepthMap::constant(4, 4, 1.0),
            depth_b: DepthMap::constant(4, 4, 1.0),
        };
        assert!(WarpSpec::rigid3d(r).is_err());
    }

    #[test]
    fn graph_warp_propagates_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = hom(random_h(&mut rng));
        let coords = crate::Tensor::new(&[3, 2], vec![20.0, 20.0, 30.5, 25.0, 500.0, 3.0]).unwrap();
        let err = crate::testutil::grad_check(std::slice::from_ref(&coords), 1e-6, |g, v| {
            let (w, _) = warp_graph(g, v[0], &spec, Direction::AToB).unwrap().unwrap();
            let sq = g.mul(w, w).unwrap();
            g.sum(sq)
        });
        assert!(err < 1e-6, "{err}");
        let mut g = Graph::<f64>::new();
        let c = g.constant(coords);
        let (_, idx) = warp_graph(&mut g, c, &spec, Direction::AToB).unwrap().unwrap();
        assert_eq!(idx, vec![0, 1]);
    }
}
