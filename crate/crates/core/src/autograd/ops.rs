use ndarray::{ArrayD, Axis, IxDyn, Slice, Zip};

use super::{Backward, Tensor, Var};

/// Sums `t` down to `shape` (the inverse of broadcasting).
pub(crate) fn sum_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let lead = t.ndim() - shape.len();
    let mut out = t.clone();
    for _ in 0..lead {
        out = out.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && out.shape()[axis] != 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    out.into_shape_with_order(IxDyn(shape))
        .expect("sum_to produced incompatible shape")
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            assert!(da == db || da == 1 || db == 1, "incompatible shapes {a:?} and {b:?}");
            da.max(db)
        })
        .collect()
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        Zip::from(&mut out).and(b).for_each(|x, &y| *x = f(*x, y));
        return out;
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast");
    let mut out = ArrayD::zeros(IxDyn(&shape));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

struct AddOp;
impl Backward for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![
            parents[0].requires_grad().then(|| grad.sum_to(parents[0].shape())),
            parents[1].requires_grad().then(|| grad.sum_to(parents[1].shape())),
        ]
    }
}

struct SubOp;
impl Backward for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![
            parents[0].requires_grad().then(|| grad.sum_to(parents[0].shape())),
            parents[1]
                .requires_grad()
                .then(|| grad.sum_to(parents[1].shape()).neg()),
        ]
    }
}

struct MulOp;
impl Backward for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        let (a, b) = (&parents[0], &parents[1]);
        vec![
            a.requires_grad().then(|| grad.mul(b).sum_to(a.shape())),
            b.requires_grad().then(|| grad.mul(a).sum_to(b.shape())),
        ]
    }
}

struct ScaleOp(f64);
impl Backward for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.scale(self.0))]
    }
}

struct AddScalarOp;
impl Backward for AddScalarOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.clone())]
    }
}

struct PowfOp(f64);
impl Backward for PowfOp {
    fn name(&self) -> &'static str {
        "powf"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        let p = self.0;
        let d = if p == 2.0 {
            parents[0].scale(2.0)
        } else {
            parents[0].powf(p - 1.0).scale(p)
        };
        vec![Some(grad.mul(&d))]
    }
}

struct ExpOp;
impl Backward for ExpOp {
    fn name(&self) -> &'static str {
        "exp"
    }
    fn backward(&self, out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.mul(out))]
    }
}

struct LnOp;
impl Backward for LnOp {
    fn name(&self) -> &'static str {
        "ln"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.mul(&parents[0].powf(-1.0)))]
    }
}

struct TanhOp;
impl Backward for TanhOp {
    fn name(&self) -> &'static str {
        "tanh"
    }
    fn backward(&self, out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        // d tanh = 1 - tanh^2
        let d = out.powf(2.0).scale(-1.0).add_scalar(1.0);
        vec![Some(grad.mul(&d))]
    }
}

/// Multiplies the incoming gradient by a fixed mask. Used by piecewise
/// linear functions, whose second derivative vanishes almost everywhere.
struct MaskOp(Tensor);
impl Backward for MaskOp {
    fn name(&self) -> &'static str {
        "mask"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.mul(&Var::constant(self.0.clone())))]
    }
}

struct SumAllOp;
impl Backward for SumAllOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.broadcast_to(parents[0].shape()))]
    }
}

struct SumAxesOp;
impl Backward for SumAxesOp {
    fn name(&self) -> &'static str {
        "sum_axes"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.broadcast_to(parents[0].shape()))]
    }
}

struct BroadcastOp;
impl Backward for BroadcastOp {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.sum_to(parents[0].shape()))]
    }
}

struct SumToOp;
impl Backward for SumToOp {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.broadcast_to(parents[0].shape()))]
    }
}

struct ReshapeOp;
impl Backward for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.reshape(parents[0].shape()))]
    }
}

struct ConcatOp {
    sizes: Vec<usize>,
}
impl Backward for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&n| {
                let g = grad.slice_channels(start, start + n);
                start += n;
                Some(g)
            })
            .collect()
    }
}

struct SliceOp {
    start: usize,
    total: usize,
}
impl Backward for SliceOp {
    fn name(&self) -> &'static str {
        "slice"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.pad_channels(self.start, self.total))]
    }
}

struct PadOp {
    start: usize,
    len: usize,
}
impl Backward for PadOp {
    fn name(&self) -> &'static str {
        "pad"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(grad.slice_channels(self.start, self.start + self.len))]
    }
}

/// Routes values through a fixed index table: `out[i] = src[index[i]]`.
struct GatherOp {
    index: std::rc::Rc<Vec<usize>>,
    src_shape: Vec<usize>,
}
impl Backward for GatherOp {
    fn name(&self) -> &'static str {
        "gather"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(scatter(grad, self.index.clone(), &self.src_shape))]
    }
}

/// Adjoint of [`GatherOp`]: `out[index[i]] += src[i]`.
struct ScatterOp {
    index: std::rc::Rc<Vec<usize>>,
    src_shape: Vec<usize>,
}
impl Backward for ScatterOp {
    fn name(&self) -> &'static str {
        "scatter"
    }
    fn backward(&self, _out: &Var, _parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        vec![Some(gather(grad, self.index.clone(), &self.src_shape))]
    }
}

fn gather(src: &Var, index: std::rc::Rc<Vec<usize>>, out_shape: &[usize]) -> Var {
    let data = src.value().as_standard_layout();
    let flat = data.as_slice().expect("standard layout");
    let values: Vec<f64> = index.iter().map(|&i| flat[i]).collect();
    let value = ArrayD::from_shape_vec(IxDyn(out_shape), values).expect("gather shape");
    Var::from_op(
        value,
        GatherOp {
            index,
            src_shape: src.shape().to_vec(),
        },
        vec![src.clone()],
    )
}

fn scatter(src: &Var, index: std::rc::Rc<Vec<usize>>, out_shape: &[usize]) -> Var {
    let data = src.value().as_standard_layout();
    let flat = data.as_slice().expect("standard layout");
    let mut out = ArrayD::<f64>::zeros(IxDyn(out_shape));
    {
        let o = out.as_slice_mut().expect("fresh array is contiguous");
        for (&i, &v) in index.iter().zip(flat) {
            o[i] += v;
        }
    }
    Var::from_op(
        out,
        ScatterOp {
            index,
            src_shape: src.shape().to_vec(),
        },
        vec![src.clone()],
    )
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        let v = zip_with(self.value(), other.value(), |a, b| a + b);
        Var::from_op(v, AddOp, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = zip_with(self.value(), other.value(), |a, b| a - b);
        Var::from_op(v, SubOp, vec![self.clone(), other.clone()])
    }

    pub fn mul(&self, other: &Var) -> Var {
        let v = zip_with(self.value(), other.value(), |a, b| a * b);
        Var::from_op(v, MulOp, vec![self.clone(), other.clone()])
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value() * c, ScaleOp(c), vec![self.clone()])
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value() + c, AddScalarOp, vec![self.clone()])
    }

    pub fn powf(&self, p: f64) -> Var {
        let v = if p == 2.0 {
            self.value().mapv(|x| x * x)
        } else {
            self.value().mapv(|x| x.powf(p))
        };
        Var::from_op(v, PowfOp(p), vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        self.powf(2.0)
    }

    pub fn sqrt(&self) -> Var {
        self.powf(0.5)
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().mapv(f64::exp), ExpOp, vec![self.clone()])
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().mapv(f64::ln), LnOp, vec![self.clone()])
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().mapv(f64::tanh), TanhOp, vec![self.clone()])
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let x = self.value();
        let v = x.mapv(|a| if a > 0.0 { a } else { slope * a });
        if !self.requires_grad() {
            return Var::constant(v);
        }
        let mask = x.mapv(|a| if a > 0.0 { 1.0 } else { slope });
        Var::from_op(v, MaskOp(mask), vec![self.clone()])
    }

    pub fn abs(&self) -> Var {
        let x = self.value();
        let v = x.mapv(f64::abs);
        if !self.requires_grad() {
            return Var::constant(v);
        }
        let mask = x.mapv(|a| {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        Var::from_op(v, MaskOp(mask), vec![self.clone()])
    }

    pub fn sum(&self) -> Var {
        let s = self.value().sum();
        Var::from_op(ArrayD::from_elem(IxDyn(&[]), s), SumAllOp, vec![self.clone()])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-one dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Var {
        let mut v = self.value().clone();
        for &ax in axes {
            v = v.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        Var::from_op(v, SumAxesOp, vec![self.clone()])
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Var {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes(axes).scale(1.0 / n.max(1) as f64)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", self.shape()))
            .to_owned();
        Var::from_op(v, BroadcastOp, vec![self.clone()])
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        Var::from_op(sum_to(self.value(), shape), SumToOp, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        let v = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {:?} to {shape:?}", self.shape()));
        Var::from_op(v, ReshapeOp, vec![self.clone()])
    }

    /// Channels `start..end` of an (N, C, ...) tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Var {
        let v = self.value().slice_axis(Axis(1), Slice::from(start..end)).to_owned();
        Var::from_op(
            v,
            SliceOp {
                start,
                total: self.shape()[1],
            },
            vec![self.clone()],
        )
    }

    /// Embeds this tensor at channel offset `start` of a zero tensor with
    /// `total` channels.
    pub fn pad_channels(&self, start: usize, total: usize) -> Var {
        let mut shape = self.shape().to_vec();
        let len = shape[1];
        shape[1] = total;
        let mut v = ArrayD::zeros(IxDyn(&shape));
        v.slice_axis_mut(Axis(1), Slice::from(start..start + len))
            .assign(self.value());
        Var::from_op(v, PadOp { start, len }, vec![self.clone()])
    }

    /// Row-wise log-softmax of a (N, K) tensor.
    pub fn log_softmax(&self) -> Var {
        let maxes = self
            .value()
            .map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |m, &x| m.max(x)))
            .insert_axis(Axis(1));
        let shifted = self.sub(&Var::constant(maxes));
        let lse = shifted.exp().sum_axes(&[1]).ln();
        shifted.sub(&lse)
    }
}

/// Concatenates (N, C_i, ...) tensors along the channel axis.
pub fn concat_channels(parts: &[Var]) -> Var {
    let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
    let v = ndarray::concatenate(Axis(1), &views).expect("concat shapes");
    Var::from_op(
        v,
        ConcatOp {
            sizes: parts.iter().map(|p| p.shape()[1]).collect(),
        },
        parts.to_vec(),
    )
}

/// Max pooling over (N, C, H, W) with square window, zero-free padding
/// (padded cells never win).
pub fn max_pool2d(x: &Var, kernel: usize, stride: usize, pad: usize) -> Var {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ho = (h + 2 * pad - kernel) / stride + 1;
    let wo = (w + 2 * pad - kernel) / stride + 1;
    let data = x.value().as_standard_layout();
    let flat = data.as_slice().expect("standard layout");
    let mut index = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = usize::MAX;
                let mut best_v = f64::NEG_INFINITY;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if flat[idx] > best_v {
                            best_v = flat[idx];
                            best = idx;
                        }
                    }
                }
                index.push(best);
            }
        }
    }
    gather(x, std::rc::Rc::new(index), &[n, c, ho, wo])
}
