use super::kernels::{self, ConvGeom};
use super::scalar::matmul_into;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// Target distribution of one row of a sparse cross-entropy: `(bin, weight)`.
pub type SparseTarget<T> = Vec<(usize, T)>;

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Unary {
        x: Var,
        kind: Unary,
    },
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
    },
    Scale {
        x: Var,
        factor: T,
    },
    AddScalar {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        planes: usize,
        from: (usize, usize),
        to: (usize, usize),
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    L2Normalize {
        x: Var,
        axis: usize,
        norms: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    SumAll {
        x: Var,
    },
    MeanAll {
        x: Var,
    },
    MaxAll {
        x: Var,
        index: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        dims: (usize, usize, usize),
    },
    Reshape {
        x: Var,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    GatherWindows {
        map: Var,
        offsets: Vec<usize>,
    },
    SampleBilinear {
        map: Var,
        coords: Var,
    },
    SampleRows {
        maps: Var,
        coords: Var,
        height: usize,
        width: usize,
    },
    PointMap {
        x: Var,
        jacobians: Vec<[T; 4]>,
    },
    RowNorm {
        x: Var,
        p: T,
    },
    SparseCrossEntropy {
        logits: Var,
        targets: Vec<SparseTarget<T>>,
        log_norm: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so every parent has a lower index
/// than its children and a reverse sweep over indices is a valid topological
/// order. A graph is single-writer; build one graph per independent
/// evaluation.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::Config(format!("shapes {a:?} and {b:?} do not broadcast"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed as `out`-shaped, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> [usize; 4] {
    let mut strides = [0usize; 4];
    let pad = 4 - out.len();
    let mut stride = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + out.len() - shape.len();
        if shape[i] != 1 {
            strides[pad + oi] = stride;
        }
        stride *= shape[i];
    }
    strides
}

fn for_each_broadcast(out: &[usize], sa: [usize; 4], sb: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
    let mut dims = [1usize; 4];
    dims[4 - out.len()..].copy_from_slice(out);
    let mut o = 0;
    for i0 in 0..dims[0] {
        for i1 in 0..dims[1] {
            for i2 in 0..dims[2] {
                for i3 in 0..dims[3] {
                    let ia = i0 * sa[0] + i1 * sa[1] + i2 * sa[2] + i3 * sa[3];
                    let ib = i0 * sb[0] + i1 * sb[1] + i2 * sb[2] + i3 * sb[3];
                    f(o, ia, ib);
                    o += 1;
                }
            }
        }
    }
}

/// Bilinear sample of one `h×w` plane; returns value and `(d/du, d/dv)`.
#[inline]
fn bilinear_plane<T: Scalar>(plane: &[T], h: usize, w: usize, u: f64, v: f64) -> (T, T, T) {
    let (x0, x1, fx) = kernels::axis_taps(u, w);
    let (y0, y1, fy) = kernels::axis_taps(v, h);
    let (fx, fy) = (T::lit(fx), T::lit(fy));
    let one = T::one();
    let a = plane[y0 * w + x0];
    let b = plane[y0 * w + x1];
    let c = plane[y1 * w + x0];
    let d = plane[y1 * w + x1];
    let top = a + fx * (b - a);
    let bot = c + fx * (d - c);
    let value = top + fy * (bot - top);
    let du = if w > 1 {
        (one - fy) * (b - a) + fy * (d - c)
    } else {
        T::zero()
    };
    let dv = if h > 1 { bot - top } else { T::zero() };
    (value, du, dv)
}

#[inline]
fn bilinear_scatter<T: Scalar>(grad: &mut [T], h: usize, w: usize, u: f64, v: f64, g: T) {
    let (x0, x1, fx) = kernels::axis_taps(u, w);
    let (y0, y1, fy) = kernels::axis_taps(v, h);
    let (fx, fy) = (T::lit(fx), T::lit(fy));
    let one = T::one();
    grad[y0 * w + x0] += g * (one - fy) * (one - fx);
    grad[y0 * w + x1] += g * (one - fy) * fx;
    grad[y1 * w + x0] += g * fy * (one - fx);
    grad[y1 * w + x1] += g * fy * fx;
}

fn check_coords<T: Scalar>(coords: &Tensor<T>, h: usize, w: usize) -> Result<()> {
    if coords.rank() != 2 || coords.shape()[1] != 2 {
        return Err(Error::Config(format!(
            "coordinates must be [K,2], got {:?}",
            coords.shape()
        )));
    }
    for p in coords.data().chunks(2) {
        let (u, v) = (p[0].to_f64_lossy(), p[1].to_f64_lossy());
        if !(u >= 0.0 && u <= (w - 1) as f64 && v >= 0.0 && v <= (h - 1) as f64) {
            return Err(Error::Domain(format!(
                "({u}, {v}) outside [0, {}]×[0, {}]",
                w - 1,
                h - 1
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf; it is gradient-tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a gradient-tracked leaf.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_grad())
    }

    /// Inserts an untracked leaf.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a tracked leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let xv = self.value(x);
        let f: fn(T) -> T = match kind {
            Unary::Relu => |v| if v > T::zero() { v } else { T::zero() },
            Unary::Sigmoid => |v| T::one() / (T::one() + (-v).exp()),
            Unary::Exp => |v| v.exp(),
            Unary::Log => |v| v.ln(),
            Unary::Abs => |v| v.abs(),
            Unary::Sqrt => |v| v.sqrt(),
        };
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Unary { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
            Binary::Div => |x, y| x / y,
        };
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape(), data)?
        } else {
            let out = broadcast_shape(av.shape(), bv.shape())?;
            if out.len() > 4 {
                return Err(Error::Config("broadcast rank exceeds 4".into()));
            }
            let sa = broadcast_strides(av.shape(), &out);
            let sb = broadcast_strides(bv.shape(), &out);
            let mut data = vec![T::zero(); out.iter().product()];
            let (ad, bd) = (av.data(), bv.data());
            for_each_broadcast(&out, sa, sb, |o, ia, ib| data[o] = f(ad[ia], bd[ib]));
            Tensor::new(&out, data)?
        };
        Ok(self.push(value, Op::Binary { a, b, kind }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v + c).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        self.push(value, Op::AddScalar { x }, &[x])
    }

    /// Cross-correlation of `input [N,C,H,W]` with `weight [O,C,k,k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (is, ws) = (self.shape(input), self.shape(weight));
        if is.len() != 4 || ws.len() != 4 {
            return Err(Error::Config(format!(
                "conv2d expects rank-4 input and weight, got {is:?} and {ws:?}"
            )));
        }
        if is[1] != ws[1] {
            return Err(Error::Config(format!(
                "conv2d input has {} channels but weight expects {}",
                is[1], ws[1]
            )));
        }
        if ws[2] != ws[3] || stride == 0 {
            return Err(Error::Config(format!(
                "conv2d needs a square kernel and nonzero stride, got {ws:?} stride {stride}"
            )));
        }
        let k = ws[2];
        if is[2] + 2 * padding < k || is[3] + 2 * padding < k {
            return Err(Error::Config("conv2d kernel larger than padded input".into()));
        }
        if let Some(b) = bias {
            if self.shape(b) != [ws[0]] {
                return Err(Error::Config(format!(
                    "conv2d bias must be [{}], got {:?}",
                    ws[0],
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom {
            batch: is[0],
            in_channels: is[1],
            height: is[2],
            width: is[3],
            out_channels: ws[0],
            kernel: k,
            stride,
            padding,
            out_height: (is[2] + 2 * padding - k) / stride + 1,
            out_width: (is[3] + 2 * padding - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(self.data(input), self.data(weight), bias.map(|b| self.data(b)), &geom);
        let value = Tensor::new(&[geom.batch, geom.out_channels, geom.out_height, geom.out_width], out)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            &parents,
        ))
    }

    /// Max pooling with kernel = stride over the last two axes of `[N,C,H,W]`.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || kernel == 0 || s[2] < kernel || s[3] < kernel {
            return Err(Error::Config(format!("maxpool2d kernel {kernel} invalid for {s:?}")));
        }
        let (out, argmax) = kernels::maxpool_forward(self.data(x), s[0] * s[1], s[2], s[3], kernel);
        let value = Tensor::new(&[s[0], s[1], s[2] / kernel, s[3] / kernel], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Half-pixel bilinear resampling of `[N,C,H,W]` to `[N,C,out_h,out_w]`.
    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || out_h == 0 || out_w == 0 {
            return Err(Error::Config(format!("upsample of {s:?} to {out_h}×{out_w}")));
        }
        let planes = s[0] * s[1];
        let out = kernels::upsample_forward(self.data(x), planes, (s[2], s[3]), (out_h, out_w));
        let value = Tensor::new(&[s[0], s[1], out_h, out_w], out)?;
        Ok(self.push(
            value,
            Op::Upsample {
                x,
                planes,
                from: (s[2], s[3]),
                to: (out_h, out_w),
            },
            &[x],
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::Config(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_other =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_other {
                return Err(Error::Config(format!(
                    "concat shapes {s:?} and {first:?} differ off axis {axis}"
                )));
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.data(p)[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::Config(format!(
                "slice {start}..{} on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Slice { x, axis, start }, &[x]))
    }

    /// Divides every fiber along `axis` by `max(‖·‖₂, 1e-12)`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Config(format!("l2_normalize axis {axis} on {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let eps = T::lit(1e-12);
        let mut norms = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = T::zero();
                for a in 0..n {
                    let v = src[(o * n + a) * inner + i];
                    acc += v * v;
                }
                norms[o * inner + i] = acc.sqrt().max(eps);
            }
        }
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    let idx = (o * n + a) * inner + i;
                    data[idx] = src[idx] / norms[o * inner + i];
                }
            }
        }
        let value = Tensor::new(&s, data)?;
        Ok(self.push(value, Op::L2Normalize { x, axis, norms }, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Config(format!("softmax axis {axis} on {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let mut m = T::neg_infinity();
                for a in 0..n {
                    m = m.max(src[at(a)]);
                }
                let mut total = T::zero();
                for a in 0..n {
                    let e = (src[at(a)] - m).exp();
                    data[at(a)] = e;
                    total += e;
                }
                for a in 0..n {
                    data[at(a)] /= total;
                }
            }
        }
        let value = Tensor::new(&s, data)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.data(x) {
            acc += v;
        }
        self.push(Tensor::scalar(acc), Op::SumAll { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::Usage("mean of an empty tensor".into()));
        }
        let mut acc = T::zero();
        for &v in self.data(x) {
            acc += v;
        }
        let value = Tensor::scalar(acc / T::lit(n as f64));
        Ok(self.push(value, Op::MeanAll { x }, &[x]))
    }

    pub fn max(&mut self, x: Var) -> Result<Var> {
        let data = self.data(x);
        if data.is_empty() {
            return Err(Error::Usage("max of an empty tensor".into()));
        }
        let mut index = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[index] {
                index = i;
            }
        }
        let value = Tensor::scalar(data[index]);
        Ok(self.push(value, Op::MaxAll { x, index }, &[x]))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::Config(format!("sum axis {axis} on {s:?}")));
        }
        let (outer, n, inner) = split_axis(&s, axis);
        let src = self.data(x);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * n + a) * inner + i];
                }
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` for rank-2 operands, `op` transposing when flagged.
    pub fn matmul_t(&mut self, a: Var, trans_a: bool, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::Config(format!("matmul of {sa:?} and {sb:?}")));
        }
        let (m, k) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(Error::Config(format!("matmul inner extents differ: {sa:?} vs {sb:?}")));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(m, k, n, self.data(a), trans_a, self.data(b), trans_b, &mut out, false);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                dims: (m, k, n),
            },
            &[a, b],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Rows of `x` (along axis 0) in the given order; repeats allowed.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(Error::Config("index_select on a scalar".into()));
        }
        let row: usize = s[1..].iter().product();
        let src = self.data(x);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            if i >= s[0] {
                return Err(Error::Config(format!("row {i} out of range for {s:?}")));
            }
            data.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        ))
    }

    /// Gathers the centered `size×size` windows of a single-plane map
    /// (`[.., H, W]` with one plane) around integer `(row, col)` centers into
    /// a `[K, size²]` tensor, row-major within each window.
    pub fn gather_windows(&mut self, map: Var, centers: &[(usize, usize)], size: usize) -> Result<Var> {
        let s = self.shape(map).to_vec();
        if s.len() < 2 || s[..s.len() - 2].iter().product::<usize>() != 1 || size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "gather_windows needs one plane and odd size, got {s:?} size {size}"
            )));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let r = size / 2;
        let mut offsets = Vec::with_capacity(centers.len() * size * size);
        for &(row, col) in centers {
            if row < r || col < r || row + r >= h || col + r >= w {
                return Err(Error::Domain(format!(
                    "window of size {size} around ({row}, {col}) leaves the {h}×{w} map"
                )));
            }
            for dy in 0..size {
                for dx in 0..size {
                    offsets.push((row + dy - r) * w + col + dx - r);
                }
            }
        }
        let src = self.data(map);
        let data = offsets.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(&[centers.len(), size * size], data)?;
        Ok(self.push(value, Op::GatherWindows { map, offsets }, &[map]))
    }

    /// Bilinear samples of every channel of `map [1,C,H,W]` at sub-pixel
    /// `coords [K,2]` (`u` = column, `v` = row); returns `[K, C]`.
    pub fn sample_bilinear(&mut self, map: Var, coords: Var) -> Result<Var> {
        let s = self.shape(map).to_vec();
        if s.len() != 4 || s[0] != 1 {
            return Err(Error::Config(format!("sample_bilinear needs [1,C,H,W], got {s:?}")));
        }
        let (c, h, w) = (s[1], s[2], s[3]);
        check_coords(self.value(coords), h, w)?;
        let pts = self.data(coords);
        let k = pts.len() / 2;
        let src = self.data(map);
        let mut data = Vec::with_capacity(k * c);
        for p in pts.chunks(2) {
            let (u, v) = (p[0].to_f64_lossy(), p[1].to_f64_lossy());
            for ch in 0..c {
                data.push(bilinear_plane(&src[ch * h * w..(ch + 1) * h * w], h, w, u, v).0);
            }
        }
        let value = Tensor::new(&[k, c], data)?;
        Ok(self.push(value, Op::SampleBilinear { map, coords }, &[map, coords]))
    }

    /// Row `k` of `maps [K, H·W]` is an `H×W` plane sampled at `coords[k]`;
    /// returns `[K]`.
    pub fn sample_rows_bilinear(&mut self, maps: Var, coords: Var, height: usize, width: usize) -> Result<Var> {
        let s = self.shape(maps).to_vec();
        if s.len() != 2 || s[1] != height * width || self.shape(coords) != [s[0], 2] {
            return Err(Error::Config(format!(
                "sample_rows_bilinear: maps {s:?}, coords {:?}, plane {height}×{width}",
                self.shape(coords)
            )));
        }
        check_coords(self.value(coords), height, width)?;
        let pts = self.data(coords);
        let src = self.data(maps);
        let plane = height * width;
        let data = pts
            .chunks(2)
            .enumerate()
            .map(|(r, p)| {
                let row = &src[r * plane..(r + 1) * plane];
                bilinear_plane(row, height, width, p[0].to_f64_lossy(), p[1].to_f64_lossy()).0
            })
            .collect();
        let value = Tensor::new(&[s[0]], data)?;
        Ok(self.push(
            value,
            Op::SampleRows {
                maps,
                coords,
                height,
                width,
            },
            &[maps, coords],
        ))
    }

    /// Applies an externally evaluated point map to `x [K,2]`: `values` are
    /// the mapped points and `jacobians[k]` the row-major 2×2 derivative at
    /// point `k`.
    pub fn point_map(&mut self, x: Var, values: Vec<T>, jacobians: Vec<[T; 4]>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[1] != 2 || values.len() != s[0] * 2 || jacobians.len() != s[0] {
            return Err(Error::Config(format!(
                "point_map over {s:?} with {} values and {} jacobians",
                values.len(),
                jacobians.len()
            )));
        }
        let value = Tensor::new(&s, values)?;
        Ok(self.push(value, Op::PointMap { x, jacobians }, &[x]))
    }

    /// `‖row‖_p` for every row of `x [K,D]`, `p ≥ 1`; returns `[K]`.
    pub fn row_norm(&mut self, x: Var, p: T) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || p < T::one() {
            return Err(Error::Config(format!("row_norm p={p} over {s:?}")));
        }
        let d = s[1];
        let data = self
            .data(x)
            .chunks(d.max(1))
            .take(s[0])
            .map(|row| {
                if p == T::one() {
                    row.iter().fold(T::zero(), |a, v| a + v.abs())
                } else {
                    row.iter()
                        .fold(T::zero(), |a, v| a + v.abs().powf(p))
                        .powf(T::one() / p)
                }
            })
            .collect();
        let value = Tensor::new(&[s[0]], data)?;
        Ok(self.push(value, Op::RowNorm { x, p }, &[x]))
    }

    /// Per-row cross-entropy `−Σ w·ln softmax(logits)[bin]` of `logits [K,B]`
    /// against sparse targets; returns `[K]`.
    pub fn sparse_cross_entropy(&mut self, logits: Var, targets: Vec<SparseTarget<T>>) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] {
            return Err(Error::Config(format!(
                "sparse_cross_entropy: logits {s:?} with {} targets",
                targets.len()
            )));
        }
        let bins = s[1];
        let src = self.data(logits);
        let mut log_norm = Vec::with_capacity(s[0]);
        let mut data = Vec::with_capacity(s[0]);
        for (r, target) in targets.iter().enumerate() {
            let row = &src[r * bins..(r + 1) * bins];
            let m = row.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
            let mut total = T::zero();
            for &v in row {
                total += (v - m).exp();
            }
            let lse = m + total.ln();
            let mut loss = T::zero();
            for &(bin, wt) in target {
                if bin >= bins {
                    return Err(Error::Config(format!("target bin {bin} ≥ {bins}")));
                }
                loss -= wt * (row[bin] - lse);
            }
            log_norm.push(lse);
            data.push(loss);
        }
        let value = Tensor::new(&[s[0]], data)?;
        Ok(self.push(
            value,
            Op::SparseCrossEntropy {
                logits,
                targets,
                log_norm,
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar root; leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        // Zero-initialised gradient buffer of a parent, or None if untracked.
        let buf = |v: Var, grads: &mut [Option<Vec<T>>]| -> bool {
            if !nodes[v.0].needs_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![T::zero(); nodes[v.0].value.len()]);
            }
            true
        };
        macro_rules! with_grad {
            ($v:expr, |$acc:ident| $body:block) => {
                if buf($v, grads) {
                    let $acc: &mut [T] = grads[$v.0].as_mut().unwrap();
                    $body
                }
            };
        }
        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let track_in = buf(*input, grads);
                let track_w = buf(*weight, grads);
                let track_b = bias.map(|b| buf(b, grads)).unwrap_or(false);
                let mut gi = track_in.then(|| grads[input.0].take().unwrap());
                let mut gw = track_w.then(|| grads[weight.0].take().unwrap());
                let mut gb = if track_b { grads[bias.unwrap().0].take() } else { None };
                kernels::conv2d_backward(
                    self.data(*input),
                    self.data(*weight),
                    g,
                    geom,
                    gi.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(v) = gi {
                    grads[input.0] = Some(v);
                }
                if let Some(v) = gw {
                    grads[weight.0] = Some(v);
                }
                if let (Some(v), Some(b)) = (gb, bias) {
                    grads[b.0] = Some(v);
                }
            }
            Op::Unary { x, kind } => {
                let xd = self.data(*x);
                with_grad!(*x, |acc| {
                    for j in 0..acc.len() {
                        let d = match kind {
                            Unary::Relu => {
                                if xd[j] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sigmoid => out[j] * (T::one() - out[j]),
                            Unary::Exp => out[j],
                            Unary::Log => T::one() / xd[j],
                            Unary::Abs => {
                                if xd[j] > T::zero() {
                                    T::one()
                                } else if xd[j] < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Sqrt => {
                                if out[j] > T::zero() {
                                    T::lit(0.5) / out[j]
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        acc[j] += g[j] * d;
                    }
                });
            }
            Op::Binary { a, b, kind } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (ad, bd) = (av.data(), bv.data());
                let shape = node.value.shape();
                let same = av.shape() == bv.shape();
                let sa = broadcast_strides(av.shape(), shape);
                let sb = broadcast_strides(bv.shape(), shape);
                let visit = |f: &mut dyn FnMut(usize, usize, usize)| {
                    if same {
                        for j in 0..out.len() {
                            f(j, j, j);
                        }
                    } else {
                        for_each_broadcast(shape, sa, sb, f);
                    }
                };
                with_grad!(*a, |acc| {
                    visit(&mut |o, ia, ib| {
                        acc[ia] += match kind {
                            Binary::Add | Binary::Sub => g[o],
                            Binary::Mul => g[o] * bd[ib],
                            Binary::Div => g[o] / bd[ib],
                        }
                    });
                });
                with_grad!(*b, |acc| {
                    visit(&mut |o, ia, ib| {
                        acc[ib] += match kind {
                            Binary::Add => g[o],
                            Binary::Sub => -g[o],
                            Binary::Mul => g[o] * ad[ia],
                            Binary::Div => -g[o] * ad[ia] / (bd[ib] * bd[ib]),
                        }
                    });
                });
            }
            Op::Scale { x, factor } => with_grad!(*x, |acc| {
                acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v * *factor);
            }),
            Op::AddScalar { x } | Op::Reshape { x } => with_grad!(*x, |acc| {
                acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v);
            }),
            Op::MaxPool { x, argmax } => with_grad!(*x, |acc| {
                for (&src, &v) in argmax.iter().zip(g) {
                    acc[src] += v;
                }
            }),
            Op::Upsample { x, planes, from, to } => with_grad!(*x, |acc| {
                kernels::upsample_backward(g, *planes, *from, *to, acc);
            }),
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut start = 0;
                for &p in parts {
                    let n = self.shape(p)[*axis];
                    with_grad!(p, |acc| {
                        for o in 0..outer {
                            let src = &g[(o * total + start) * inner..(o * total + start + n) * inner];
                            let dst = &mut acc[o * n * inner..(o + 1) * n * inner];
                            dst.iter_mut().zip(src).for_each(|(a, &v)| *a += v);
                        }
                    });
                    start += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let full = self.shape(*x);
                let (outer, n, inner) = split_axis(full, *axis);
                let len = node.value.shape()[*axis];
                with_grad!(*x, |acc| {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        acc[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, &v)| *a += v);
                    }
                });
            }
            Op::L2Normalize { x, axis, norms } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let eps = T::lit(1e-12);
                let xd = self.data(*x);
                with_grad!(*x, |acc| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let norm = norms[o * inner + i];
                            let raw: T = (0..n).map(|a| xd[at(a)] * xd[at(a)]).sum::<T>().sqrt();
                            if raw > eps {
                                let dot: T = (0..n).map(|a| out[at(a)] * g[at(a)]).sum();
                                for a in 0..n {
                                    acc[at(a)] += (g[at(a)] - out[at(a)] * dot) / norm;
                                }
                            } else {
                                for a in 0..n {
                                    acc[at(a)] += g[at(a)] / norm;
                                }
                            }
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                with_grad!(*x, |acc| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let dot: T = (0..n).map(|a| out[at(a)] * g[at(a)]).sum();
                            for a in 0..n {
                                acc[at(a)] += out[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                });
            }
            Op::SumAll { x } => with_grad!(*x, |acc| {
                acc.iter_mut().for_each(|a| *a += g[0]);
            }),
            Op::MeanAll { x } => with_grad!(*x, |acc| {
                let share = g[0] / T::lit(acc.len() as f64);
                acc.iter_mut().for_each(|a| *a += share);
            }),
            Op::MaxAll { x, index } => with_grad!(*x, |acc| {
                acc[*index] += g[0];
            }),
            Op::SumAxis { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                with_grad!(*x, |acc| {
                    for o in 0..outer {
                        for a in 0..n {
                            for i in 0..inner {
                                acc[(o * n + a) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                dims: (m, k, n),
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (self.data(*a), self.data(*b));
                with_grad!(*a, |acc| {
                    if *trans_a {
                        matmul_into(k, n, m, bd, *trans_b, g, true, acc, true);
                    } else {
                        matmul_into(m, n, k, g, false, bd, !*trans_b, acc, true);
                    }
                });
                with_grad!(*b, |acc| {
                    if *trans_b {
                        matmul_into(n, m, k, g, true, ad, *trans_a, acc, true);
                    } else {
                        matmul_into(k, m, n, ad, !*trans_a, g, false, acc, true);
                    }
                });
            }
            Op::IndexSelect { x, indices } => {
                let row: usize = self.shape(*x)[1..].iter().product();
                with_grad!(*x, |acc| {
                    for (r, &src) in indices.iter().enumerate() {
                        let dst = &mut acc[src * row..(src + 1) * row];
                        dst.iter_mut()
                            .zip(&g[r * row..(r + 1) * row])
                            .for_each(|(a, &v)| *a += v);
                    }
                });
            }
            Op::GatherWindows { map, offsets } => with_grad!(*map, |acc| {
                for (&src, &v) in offsets.iter().zip(g) {
                    acc[src] += v;
                }
            }),
            Op::SampleBilinear { map, coords } => {
                let s = self.shape(*map);
                let (c, h, w) = (s[1], s[2], s[3]);
                let pts = self.data(*coords);
                let src = self.data(*map);
                with_grad!(*map, |acc| {
                    for (kk, p) in pts.chunks(2).enumerate() {
                        let (u, v) = (p[0].to_f64_lossy(), p[1].to_f64_lossy());
                        for ch in 0..c {
                            let plane = &mut acc[ch * h * w..(ch + 1) * h * w];
                            bilinear_scatter(plane, h, w, u, v, g[kk * c + ch]);
                        }
                    }
                });
                with_grad!(*coords, |acc| {
                    for (kk, p) in pts.chunks(2).enumerate() {
                        let (u, v) = (p[0].to_f64_lossy(), p[1].to_f64_lossy());
                        for ch in 0..c {
                            let plane = &src[ch * h * w..(ch + 1) * h * w];
                            let (_, du, dv) = bilinear_plane(plane, h, w, u, v);
                            acc[2 * kk] += g[kk * c + ch] * du;
                            acc[2 * kk + 1] += g[kk * c + ch] * dv;
                        }
                    }
                });
            }
            Op::SampleRows {
                maps,
                coords,
                height,
                width,
            } => {
                let (h, w) = (*height, *width);
                let pts = self.data(*coords);
                let src = self.data(*maps);
                with_grad!(*maps, |acc| {
                    for (r, p) in pts.chunks(2).enumerate() {
                        let plane = &mut acc[r * h * w..(r + 1) * h * w];
                        bilinear_scatter(plane, h, w, p[0].to_f64_lossy(), p[1].to_f64_lossy(), g[r]);
                    }
                });
                with_grad!(*coords, |acc| {
                    for (r, p) in pts.chunks(2).enumerate() {
                        let plane = &src[r * h * w..(r + 1) * h * w];
                        let (_, du, dv) = bilinear_plane(plane, h, w, p[0].to_f64_lossy(), p[1].to_f64_lossy());
                        acc[2 * r] += g[r] * du;
                        acc[2 * r + 1] += g[r] * dv;
                    }
                });
            }
            Op::PointMap { x, jacobians } => with_grad!(*x, |acc| {
                for (kk, j) in jacobians.iter().enumerate() {
                    let (g0, g1) = (g[2 * kk], g[2 * kk + 1]);
                    acc[2 * kk] += j[0] * g0 + j[2] * g1;
                    acc[2 * kk + 1] += j[1] * g0 + j[3] * g1;
                }
            }),
            Op::RowNorm { x, p } => {
                let d = self.shape(*x)[1];
                let xd = self.data(*x);
                with_grad!(*x, |acc| {
                    for (r, &norm) in out.iter().enumerate() {
                        if norm <= T::zero() {
                            continue;
                        }
                        for j in r * d..(r + 1) * d {
                            let v = xd[j];
                            let sign = if v > T::zero() {
                                T::one()
                            } else if v < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            };
                            let d_norm = if *p == T::one() {
                                sign
                            } else {
                                sign * (v.abs() / norm).powf(*p - T::one())
                            };
                            acc[j] += g[r] * d_norm;
                        }
                    }
                });
            }
            Op::SparseCrossEntropy {
                logits,
                targets,
                log_norm,
            } => {
                let bins = self.shape(*logits)[1];
                let src = self.data(*logits);
                with_grad!(*logits, |acc| {
                    for (r, target) in targets.iter().enumerate() {
                        let mass: T = target.iter().map(|&(_, w)| w).sum();
                        let row = &src[r * bins..(r + 1) * bins];
                        let dst = &mut acc[r * bins..(r + 1) * bins];
                        for (a, &v) in dst.iter_mut().zip(row) {
                            *a += g[r] * mass * (v - log_norm[r]).exp();
                        }
                        for &(bin, wt) in target {
                            dst[bin] -= g[r] * wt;
                        }
                    }
                });
            }
        }
    }
}
