//! Forward and backward kernels for the layer kinds used by both networks.
//!
//! Every kernel is a pure function of its inputs. Backward kernels take the
//! forward inputs (not cached intermediates) and recompute what they need,
//! which keeps the tape small.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are at least as long as the strided extents above.
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

/// Output extent of a strided window over `size` with symmetric `padding`.
pub fn window_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize {
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

fn col2im_add(cols: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.cols();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin {
        return Err(Error::dim(format!(
            "conv2d: input has {cin} channels, weights expect {wcin}"
        )));
    }
    if kh != kw {
        return Err(Error::dim(format!("conv2d: non-square kernel {kh}x{kw}")));
    }
    let ho = window_out(h, kh, stride, padding);
    let wo = window_out(w, kw, stride, padding);
    let (Some(ho), Some(wo)) = (ho, wo) else {
        return Err(Error::dim(format!(
            "conv2d: {kh}x{kw}/{stride} pad {padding} does not fit {h}x{w}"
        )));
    };
    Ok((
        n,
        cout,
        ConvGeom {
            cin,
            h,
            w,
            k: kh,
            stride,
            pad: padding,
            ho,
            wo,
        },
    ))
}

/// Cross-correlation of `input [B,Cin,H,W]` with `weight [Cout,Cin,k,k]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cout, g) = conv_geometry(input, weight, stride, padding)?;
    if bias.len() != cout {
        return Err(Error::dim(format!(
            "conv2d: bias has {} values for {cout} filters",
            bias.len()
        )));
    }
    let in_item = g.cin * g.h * g.w;
    let out_item = cout * g.cols();
    let mut out = vec![0.0; n * out_item];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.rows() * g.cols()]
    };
    for b in 0..n {
        let x = &input.data()[b * in_item..(b + 1) * in_item];
        let y = &mut out[b * out_item..(b + 1) * out_item];
        for (co, row) in y.chunks_mut(g.cols()).enumerate() {
            row.fill(bias.data()[co]);
        }
        let src = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(cout, g.rows(), g.cols(), weight.data(), false, src, false, 1.0, y);
    }
    Tensor::new(vec![n, cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, cout, g) = conv_geometry(input, weight, stride, padding)?;
    if grad_out.shape() != [n, cout, g.ho, g.wo] {
        return Err(Error::dim(format!(
            "conv2d backward: gradient shape {:?} does not match output",
            grad_out.shape()
        )));
    }
    let in_item = g.cin * g.h * g.w;
    let out_item = cout * g.cols();
    let mut grad_in = vec![0.0; input.len()];
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; cout];
    let pointwise = g.is_pointwise();
    let mut cols = vec![0.0; if pointwise { 0 } else { g.rows() * g.cols() }];
    let mut grad_cols = vec![0.0; if pointwise { 0 } else { g.rows() * g.cols() }];
    for b in 0..n {
        let x = &input.data()[b * in_item..(b + 1) * in_item];
        let gy = &grad_out.data()[b * out_item..(b + 1) * out_item];
        for (co, row) in gy.chunks(g.cols()).enumerate() {
            grad_b[co] += row.iter().sum::<f64>();
        }
        let src = if pointwise {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        // dW += dY * cols^T
        gemm(cout, g.cols(), g.rows(), gy, false, src, true, 1.0, &mut grad_w);
        let gx = &mut grad_in[b * in_item..(b + 1) * in_item];
        if pointwise {
            gemm(g.rows(), cout, g.cols(), weight.data(), true, gy, false, 0.0, gx);
        } else {
            gemm(g.rows(), cout, g.cols(), weight.data(), true, gy, false, 0.0, &mut grad_cols);
            col2im_add(&grad_cols, &g, gx);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), grad_in)?,
        Tensor::new(weight.shape().to_vec(), grad_w)?,
        Tensor::new(vec![cout], grad_b)?,
    ))
}

/// Windowed max. Returns the output and, per output element, the flat
/// input index it was taken from (first occurrence in row-major order on ties).
pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if kernel > h || kernel > w {
        return Err(Error::dim(format!(
            "maxpool2d: {kernel}x{kernel} kernel larger than {h}x{w} input"
        )));
    }
    let (Some(ho), Some(wo)) = (window_out(h, kernel, stride, 0), window_out(w, kernel, stride, 0))
    else {
        return Err(Error::dim(format!("maxpool2d: invalid window {kernel}/{stride}")));
    };
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for ki in 0..kernel {
                    let row = base + (oy * stride + ki) * w + ox * stride;
                    for (kj, &v) in x[row..row + kernel].iter().enumerate() {
                        if best_idx == usize::MAX || v > best {
                            best = v;
                            best_idx = row + kj;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    grad
}

/// `input [B,F] * weight[O,F]^T + bias[O]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f) = input.dims2()?;
    let (o, wf) = weight.dims2()?;
    if wf != f {
        return Err(Error::dim(format!(
            "linear: input has {f} features, weights expect {wf}"
        )));
    }
    if bias.len() != o {
        return Err(Error::dim(format!("linear: bias has {} values for {o} outputs", bias.len())));
    }
    let mut out = Vec::with_capacity(n * o);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, f, o, input.data(), false, weight.data(), true, 1.0, &mut out);
    Tensor::new(vec![n, o], out)
}

pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, f) = input.dims2()?;
    let (o, _) = weight.dims2()?;
    if grad_out.shape() != [n, o] {
        return Err(Error::dim(format!(
            "linear backward: gradient shape {:?}, expected [{n}, {o}]",
            grad_out.shape()
        )));
    }
    let mut gi = vec![0.0; n * f];
    gemm(n, o, f, grad_out.data(), false, weight.data(), false, 0.0, &mut gi);
    let mut gw = vec![0.0; o * f];
    gemm(o, n, f, grad_out.data(), true, input.data(), false, 0.0, &mut gw);
    let mut gb = vec![0.0; o];
    for row in grad_out.data().chunks(o) {
        for (b, g) in gb.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        Tensor::new(vec![n, f], gi)?,
        Tensor::new(vec![o, f], gw)?,
        Tensor::new(vec![o], gb)?,
    ))
}

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

pub fn leaky_relu_backward(input: &Tensor, slope: f64, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
        if x < 0.0 {
            *gv *= slope;
        }
    }
    g
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    out
}

/// Backward of [`sigmoid`] given its forward *output*.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= y * (1.0 - y);
    }
    g
}

/// Channel-axis concatenation, `a` first.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::dim(format!(
            "concat_channels: {:?} and {:?} disagree outside the channel axis",
            a.shape(),
            b.shape()
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Tensor::new(vec![n, ca + cb, h, w], out)
}

/// Splits a concatenated gradient back into the two operands' shares.
pub fn concat_channels_backward(grad_out: &Tensor, ca: usize) -> Result<(Tensor, Tensor)> {
    let c = grad_out.dims4()?.1;
    Ok((grad_out.slice_channels(0..ca)?, grad_out.slice_channels(ca..c)?))
}
