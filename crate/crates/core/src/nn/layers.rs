//! Layer kernels with their exact backward passes.
//!
//! Image tensors are NHWC. Convolution filters are `[kh, kw, 1, filters]`;
//! dense weights are `[inputs, outputs]`. Every kernel accumulates in a fixed
//! order, so results are reproducible bit for bit. Kernels skip zero
//! activations, which leaves results unchanged and matters for the sparse
//! stroke images this network sees.

use rand::Rng as _;

use super::{Mode, NnError, Scalar, Tensor};
use crate::rng::Rng;

/// Rows of a dense weight matrix processed per cache block.
const ROW_BLOCK: usize = 256;

#[inline]
pub(crate) fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight interleaved partial sums.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

struct ConvDims {
    batch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    filters: usize,
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>) -> Result<ConvDims, NnError> {
    input.expect_rank(4, "conv2d input")?;
    filters.expect_rank(4, "conv2d filters")?;
    let (is, fs) = (input.shape(), filters.shape());
    if is[3] != 1 || fs[2] != 1 {
        return Err(shape_err(format!(
            "conv2d expects one input channel, got input {is:?} filters {fs:?}"
        )));
    }
    if is[1] < fs[0] || is[2] < fs[1] {
        return Err(shape_err(format!("conv2d input {is:?} smaller than kernel {fs:?}")));
    }
    Ok(ConvDims {
        batch: is[0],
        h: is[1],
        w: is[2],
        kh: fs[0],
        kw: fs[1],
        oh: is[1] - fs[0] + 1,
        ow: is[2] - fs[1] + 1,
        filters: fs[3],
    })
}

/// Valid, stride-1 cross-correlation of `[b, h, w, 1]` with
/// `[kh, kw, 1, f]` filters, giving `[b, h-kh+1, w-kw+1, f]`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, filters: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, NnError> {
    let d = conv_dims(input, filters)?;
    if bias.len() != d.filters {
        return Err(shape_err(format!(
            "conv2d bias has {} entries for {} filters",
            bias.len(),
            d.filters
        )));
    }
    let (x, k) = (input.data(), filters.data());
    let f = d.filters;
    let mut out = Tensor::zeros(&[d.batch, d.oh, d.ow, f]);
    let o = out.data_mut();
    for b in 0..d.batch {
        let img = &x[b * d.h * d.w..(b + 1) * d.h * d.w];
        for y in 0..d.oh {
            for xx in 0..d.ow {
                let cell = &mut o[((b * d.oh + y) * d.ow + xx) * f..][..f];
                cell.copy_from_slice(bias);
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let p = img[(y + ky) * d.w + xx + kx];
                        if p != T::zero() {
                            axpy(cell, p, &k[(ky * d.kw + kx) * f..][..f]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub filters: Tensor<T>,
    pub bias: Vec<T>,
}

/// Maps output gradients of [`conv2d`] to filter, bias and (optionally)
/// input gradients.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<ConvGrads<T>, NnError> {
    let d = conv_dims(input, filters)?;
    if grad_out.shape() != [d.batch, d.oh, d.ow, d.filters] {
        return Err(shape_err(format!("conv2d grad_out shape {:?}", grad_out.shape())));
    }
    let f = d.filters;
    let (x, k, g) = (input.data(), filters.data(), grad_out.data());
    let mut dk = Tensor::zeros(filters.shape());
    let mut db = vec![T::zero(); f];
    let mut dx = want_input.then(|| Tensor::zeros(input.shape()));

    for b in 0..d.batch {
        let img = &x[b * d.h * d.w..(b + 1) * d.h * d.w];
        for y in 0..d.oh {
            for xx in 0..d.ow {
                let gc = &g[((b * d.oh + y) * d.ow + xx) * f..][..f];
                if gc.iter().all(|&v| v == T::zero()) {
                    continue;
                }
                for (acc, &v) in db.iter_mut().zip(gc) {
                    *acc += v;
                }
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let tap = (ky * d.kw + kx) * f;
                        let src = (y + ky) * d.w + xx + kx;
                        let p = img[src];
                        if p != T::zero() {
                            axpy(&mut dk.data_mut()[tap..tap + f], p, gc);
                        }
                        if let Some(dx) = dx.as_mut() {
                            dx.data_mut()[b * d.h * d.w + src] += dot(gc, &k[tap..tap + f]);
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        filters: dk,
        bias: db,
    })
}

/// Output of [`maxpool2x2`]: pooled values plus the winning offset
/// (`dy * 2 + dx`) of every window.
pub struct Pooled<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u8>,
}

/// 2×2, stride-2 max pooling over `[b, h, w, c]`. An odd trailing row or
/// column is dropped. Ties go to the first window element in row-major order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Pooled<T>, NnError> {
    input.expect_rank(4, "maxpool input")?;
    let s = input.shape();
    let (batch, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (ph, pw) = (h / 2, w / 2);
    if ph == 0 || pw == 0 {
        return Err(shape_err(format!("maxpool input {s:?} smaller than its window")));
    }
    let x = input.data();
    let mut out = Tensor::zeros(&[batch, ph, pw, c]);
    let mut argmax = vec![0u8; batch * ph * pw * c];
    let o = out.data_mut();
    for b in 0..batch {
        for py in 0..ph {
            for px in 0..pw {
                let dst = ((b * ph + py) * pw + px) * c;
                for win in 0..4usize {
                    let (dy, dx) = (win / 2, win % 2);
                    let src = ((b * h + 2 * py + dy) * w + 2 * px + dx) * c;
                    for ch in 0..c {
                        let v = x[src + ch];
                        if win == 0 || v > o[dst + ch] {
                            o[dst + ch] = v;
                            argmax[dst + ch] = win as u8;
                        }
                    }
                }
            }
        }
    }
    Ok(Pooled { output: out, argmax })
}

/// Routes each pooled gradient to its window's argmax.
pub fn maxpool2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u8],
    input_shape: &[usize],
) -> Result<Tensor<T>, NnError> {
    let (batch, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ph, pw) = (h / 2, w / 2);
    if grad_out.shape() != [batch, ph, pw, c] || argmax.len() != grad_out.len() {
        return Err(shape_err(format!(
            "maxpool grad_out {:?} does not match input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let (g, d) = (grad_out.data(), dx.data_mut());
    for b in 0..batch {
        for py in 0..ph {
            for px in 0..pw {
                let idx = ((b * ph + py) * pw + px) * c;
                #[allow(clippy::manual_memcpy)] // each channel has its own source window
                for ch in 0..c {
                    let win = argmax[idx + ch] as usize;
                    let src = ((b * h + 2 * py + win / 2) * w + 2 * px + win % 2) * c;
                    d[src + ch] = g[idx + ch];
                }
            }
        }
    }
    Ok(dx)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given its input; the derivative at 0 is 0.
pub fn relu_backward<T: Scalar>(pre: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape().to_vec(), data).expect("same shape")
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward<T: Scalar>(out: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::new(grad.shape().to_vec(), data).expect("same shape")
}

/// Inverted dropout. In train mode each unit is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; the returned mask holds the
/// per-unit multiplier. Eval mode is the identity and returns no mask.
pub fn dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Option<Vec<T>>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    if mode == Mode::Eval {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(grad: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => grad.clone(),
        Some(m) => {
            let data = grad.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad.shape().to_vec(), data).expect("same shape")
        }
    }
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize), NnError> {
    x.expect_rank(2, "dense input")?;
    w.expect_rank(2, "dense weights")?;
    if x.shape()[1] != w.shape()[0] {
        return Err(shape_err(format!(
            "dense input {:?} incompatible with weights {:?}",
            x.shape(),
            w.shape()
        )));
    }
    Ok((x.shape()[0], w.shape()[0], w.shape()[1]))
}

/// Affine map `x·W + b` over `[batch, n]` inputs.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, NnError> {
    let (batch, n, m) = dense_dims(x, w)?;
    if bias.len() != m {
        return Err(shape_err(format!(
            "dense bias has {} entries for {m} outputs",
            bias.len()
        )));
    }
    let (xs, ws) = (x.data(), w.data());
    let mut out = Tensor::zeros(&[batch, m]);
    let o = out.data_mut();
    for row in o.chunks_exact_mut(m) {
        row.copy_from_slice(bias);
    }
    for i0 in (0..n).step_by(ROW_BLOCK) {
        let i1 = (i0 + ROW_BLOCK).min(n);
        for b in 0..batch {
            let orow = &mut o[b * m..(b + 1) * m];
            for i in i0..i1 {
                let xi = xs[b * n + i];
                if xi != T::zero() {
                    axpy(orow, xi, &ws[i * m..(i + 1) * m]);
                }
            }
        }
    }
    Ok(out)
}

/// Which input gradients [`dense_backward`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputGrad {
    None,
    All,
    /// Only where the input is non-zero; other entries are left at 0. Exact
    /// whenever the input came out of a ReLU, whose derivative is 0 there.
    WhereInputNonZero,
}

pub struct DenseGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// `dW = xᵀ·g`, `db = Σ_batch g`, `dx = g·Wᵀ`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    input_grad: InputGrad,
) -> Result<DenseGrads<T>, NnError> {
    let (batch, n, m) = dense_dims(x, w)?;
    if grad_out.shape() != [batch, m] {
        return Err(shape_err(format!("dense grad_out shape {:?}", grad_out.shape())));
    }
    let (xs, ws, g) = (x.data(), w.data(), grad_out.data());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = vec![T::zero(); m];
    for grow in g.chunks_exact(m) {
        for (acc, &v) in db.iter_mut().zip(grow) {
            *acc += v;
        }
    }
    let mut dx = (input_grad != InputGrad::None).then(|| Tensor::zeros(x.shape()));

    let dws = dw.data_mut();
    for i0 in (0..n).step_by(ROW_BLOCK) {
        let i1 = (i0 + ROW_BLOCK).min(n);
        for b in 0..batch {
            let grow = &g[b * m..(b + 1) * m];
            for i in i0..i1 {
                let xi = xs[b * n + i];
                if xi != T::zero() {
                    axpy(&mut dws[i * m..(i + 1) * m], xi, grow);
                }
                let wanted = match input_grad {
                    InputGrad::None => false,
                    InputGrad::All => true,
                    InputGrad::WhereInputNonZero => xi != T::zero(),
                };
                if wanted {
                    if let Some(dx) = dx.as_mut() {
                        dx.data_mut()[b * n + i] = dot(grow, &ws[i * m..(i + 1) * m]);
                    }
                }
            }
        }
    }
    Ok(DenseGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

pub const BCE_EPSILON: f64 = 1e-7;

/// Mean binary cross-entropy with predictions clamped to `[ε, 1-ε]`.
///
/// The gradient is taken with respect to the unclamped prediction and is 0
/// inside the clamp region.
pub fn bce_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>), NnError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape_err(format!(
            "bce: {} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let eps = T::of(BCE_EPSILON);
    let n = T::of(pred.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &y) in pred.iter().zip(target) {
        let pc = p.max(eps).min(T::one() - eps);
        loss += -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
        let g = if p > eps && p < T::one() - eps {
            (p - y) / (p * (T::one() - p)) / n
        } else {
            T::zero()
        };
        grad.push(g);
    }
    Ok((loss / n, grad))
}
