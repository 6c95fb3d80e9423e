//! 2-D convolution as three faces of one trilinear form.
//!
//! For `T(x, w, g) = <g, conv(x, w)>` the forward convolution, its input
//! gradient (the transposed convolution) and its weight gradient are the
//! partial derivatives of `T`. The derivative of each face is another face,
//! which closes the set under differentiation.

use ndarray::{ArrayD, IxDyn};

use super::{Backward, Tensor, Var};

/// Stride and zero padding of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }
}

pub fn conv_out_dim(input: usize, kernel: usize, geo: ConvGeometry) -> usize {
    (input + 2 * geo.pad - kernel) / geo.stride + 1
}

struct Dims {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

/// Unfolds one (C, H, W) image into a (C*kh*kw, ho*wo) column matrix.
fn im2col(x: &[f64], d: &Dims, geo: ConvGeometry, cols: &mut [f64]) {
    let (s, p) = (geo.stride as isize, geo.pad as isize);
    let plane = d.ho * d.wo;
    for c in 0..d.cin {
        let xc = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let out = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ky as isize - p;
                    let dst = &mut out[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - p;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
fn col2im(cols: &[f64], d: &Dims, geo: ConvGeometry, x: &mut [f64]) {
    let (s, p) = (geo.stride as isize, geo.pad as isize);
    let plane = d.ho * d.wo;
    for c in 0..d.cin {
        let xc = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.wo {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c (m x n) = alpha * op(a) * op(b) + beta * c`, row-major, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have the asserted lengths and the strides describe
    // in-bounds row-major (or transposed) layouts of those lengths.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn contiguous(t: &Tensor) -> std::borrow::Cow<'_, [f64]> {
    match t.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(t.iter().copied().collect()),
    }
}

fn dims_of(x_shape: &[usize], w_shape: &[usize], g_hw: (usize, usize)) -> Dims {
    Dims {
        cin: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        kh: w_shape[2],
        kw: w_shape[3],
        ho: g_hw.0,
        wo: g_hw.1,
    }
}

fn forward_raw(x: &Tensor, w: &Tensor, geo: ConvGeometry) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    assert_eq!(xs.len(), 4, "conv input must be 4-D");
    assert_eq!(xs[1], ws[1], "conv channel mismatch: input {xs:?}, weight {ws:?}");
    let n = xs[0];
    let cout = ws[0];
    let ho = conv_out_dim(xs[2], ws[2], geo);
    let wo = conv_out_dim(xs[3], ws[3], geo);
    let d = dims_of(xs, ws, (ho, wo));
    let ckk = d.cin * d.kh * d.kw;
    let xd = contiguous(x);
    let wd = contiguous(w);
    let mut out = vec![0.0; n * cout * ho * wo];
    let mut cols = vec![0.0; ckk * ho * wo];
    let in_stride = d.cin * d.h * d.w;
    for b in 0..n {
        im2col(&xd[b * in_stride..(b + 1) * in_stride], &d, geo, &mut cols);
        let ob = &mut out[b * cout * ho * wo..(b + 1) * cout * ho * wo];
        gemm(cout, ckk, ho * wo, &wd, false, &cols, false, 0.0, ob);
    }
    ArrayD::from_shape_vec(IxDyn(&[n, cout, ho, wo]), out).expect("conv output shape")
}

fn input_grad_raw(g: &Tensor, w: &Tensor, geo: ConvGeometry, hw: (usize, usize)) -> Tensor {
    let (gs, ws) = (g.shape(), w.shape());
    assert_eq!(gs[1], ws[0], "conv output channel mismatch: grad {gs:?}, weight {ws:?}");
    let n = gs[0];
    let cin = ws[1];
    let x_shape = [n, cin, hw.0, hw.1];
    let d = dims_of(&x_shape, ws, (gs[2], gs[3]));
    assert_eq!(conv_out_dim(hw.0, d.kh, geo), d.ho, "transposed conv height");
    assert_eq!(conv_out_dim(hw.1, d.kw, geo), d.wo, "transposed conv width");
    let ckk = cin * d.kh * d.kw;
    let plane = d.ho * d.wo;
    let gd = contiguous(g);
    let wd = contiguous(w);
    let mut out = vec![0.0; n * cin * hw.0 * hw.1];
    let mut cols = vec![0.0; ckk * plane];
    let img = cin * hw.0 * hw.1;
    for b in 0..n {
        let gb = &gd[b * ws[0] * plane..(b + 1) * ws[0] * plane];
        gemm(ckk, ws[0], plane, &wd, true, gb, false, 0.0, &mut cols);
        col2im(&cols, &d, geo, &mut out[b * img..(b + 1) * img]);
    }
    ArrayD::from_shape_vec(IxDyn(&x_shape), out).expect("conv input-grad shape")
}

fn weight_grad_raw(x: &Tensor, g: &Tensor, geo: ConvGeometry, k: (usize, usize)) -> Tensor {
    let (xs, gs) = (x.shape(), g.shape());
    assert_eq!(xs[0], gs[0], "batch mismatch");
    let n = xs[0];
    let cout = gs[1];
    let w_shape = [cout, xs[1], k.0, k.1];
    let d = dims_of(xs, &w_shape, (gs[2], gs[3]));
    let ckk = d.cin * d.kh * d.kw;
    let plane = d.ho * d.wo;
    let xd = contiguous(x);
    let gd = contiguous(g);
    let mut out = vec![0.0; cout * ckk];
    let mut cols = vec![0.0; ckk * plane];
    let in_stride = d.cin * d.h * d.w;
    for b in 0..n {
        im2col(&xd[b * in_stride..(b + 1) * in_stride], &d, geo, &mut cols);
        let gb = &gd[b * cout * plane..(b + 1) * cout * plane];
        gemm(cout, plane, ckk, gb, false, &cols, true, 1.0, &mut out);
    }
    ArrayD::from_shape_vec(IxDyn(&w_shape), out).expect("conv weight-grad shape")
}

struct ConvOp {
    geo: ConvGeometry,
}
impl Backward for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        let (x, w) = (&parents[0], &parents[1]);
        let hw = (x.shape()[2], x.shape()[3]);
        let k = (w.shape()[2], w.shape()[3]);
        vec![
            x.requires_grad().then(|| conv2d_input_grad(grad, w, self.geo, hw)),
            w.requires_grad().then(|| conv2d_weight_grad(x, grad, self.geo, k)),
        ]
    }
}

struct InputGradOp {
    geo: ConvGeometry,
}
impl Backward for InputGradOp {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        // out lives in x-space; grad is an x-space tensor.
        let (g, w) = (&parents[0], &parents[1]);
        let k = (w.shape()[2], w.shape()[3]);
        vec![
            g.requires_grad().then(|| conv2d(grad, w, self.geo)),
            w.requires_grad().then(|| conv2d_weight_grad(grad, g, self.geo, k)),
        ]
    }
}

struct WeightGradOp {
    geo: ConvGeometry,
}
impl Backward for WeightGradOp {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, _out: &Var, parents: &[Var], grad: &Var) -> Vec<Option<Var>> {
        // out lives in w-space; grad is a w-space tensor.
        let (x, g) = (&parents[0], &parents[1]);
        let hw = (x.shape()[2], x.shape()[3]);
        vec![
            x.requires_grad().then(|| conv2d_input_grad(g, grad, self.geo, hw)),
            g.requires_grad().then(|| conv2d(x, grad, self.geo)),
        ]
    }
}

/// Cross-correlation of `x` (N, Cin, H, W) with `w` (Cout, Cin, kh, kw).
pub fn conv2d(x: &Var, w: &Var, geo: ConvGeometry) -> Var {
    let v = forward_raw(x.value(), w.value(), geo);
    Var::from_op(v, ConvOp { geo }, vec![x.clone(), w.clone()])
}

/// Transposed convolution: maps `g` (N, Cout, ho, wo) back to an input of
/// spatial size `hw` through the weights of a forward convolution.
pub fn conv2d_input_grad(g: &Var, w: &Var, geo: ConvGeometry, hw: (usize, usize)) -> Var {
    let v = input_grad_raw(g.value(), w.value(), geo, hw);
    Var::from_op(v, InputGradOp { geo }, vec![g.clone(), w.clone()])
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `w`.
pub fn conv2d_weight_grad(x: &Var, g: &Var, geo: ConvGeometry, k: (usize, usize)) -> Var {
    let v = weight_grad_raw(x.value(), g.value(), geo, k);
    Var::from_op(v, WeightGradOp { geo }, vec![x.clone(), g.clone()])
}
