//! Differentiable NCHW primitives: padding, im2col convolution, transposed
//! convolution, instance normalization, activations and per-channel scaling.
//!
//! Every forward function has a matching `*_backward` that maps an upstream
//! gradient to input (and parameter) gradients. Nothing here caches state;
//! callers keep whatever forward values the backward pass needs.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::{Element, Tensor};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

impl Padding {
    pub fn amount(self) -> usize {
        match self {
            Padding::Zero(p) | Padding::Reflect(p) => p,
        }
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Reflection padding (edge pixel not repeated), requires `p < min(h, w)`.
pub fn pad_reflect<T: Element>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if p == 0 {
        return Ok(x.clone());
    }
    ensure!(
        p < h && p < w,
        "reflection padding {p} needs spatial size > {p}, got {h}x{w}"
    );
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = Tensor::zeros(&[n, c, hp, wp]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * hp * wp..(plane + 1) * hp * wp];
        for y in 0..hp {
            let sy = reflect(y as isize - p as isize, h);
            for xx in 0..wp {
                let sx = reflect(xx as isize - p as isize, w);
                d[y * wp + xx] = s[sy * w + sx];
            }
        }
    }
    Ok(out)
}

pub fn pad_reflect_backward<T: Element>(dy: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let (n, c, hp, wp) = dy.dims4()?;
    if p == 0 {
        return Ok(dy.clone());
    }
    let (h, w) = (hp - 2 * p, wp - 2 * p);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * hp * wp..(plane + 1) * hp * wp];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for y in 0..hp {
            let sy = reflect(y as isize - p as isize, h);
            for xx in 0..wp {
                let sx = reflect(xx as isize - p as isize, w);
                d[sy * w + sx] += s[y * wp + xx];
            }
        }
    }
    Ok(dx)
}

/// Output extent of a convolution along one axis.
pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad)
        .checked_sub(kernel)
        .map(|span| span / stride + 1)
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Element>(x: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let out = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(col: &[T], g: &Geometry, x: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_kernel<T: Element>(weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = weight.dims4()?;
    ensure!(kh == kw && kh > 0, "square kernels only, got {kh}x{kw}");
    Ok((a, b, kh))
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad<T: Element>(dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = dy.dims4()?;
    let mut db = Tensor::zeros(&[c]);
    let d = dy.data();
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * h * w;
            let s: T = d[off..off + h * w].iter().copied().sum();
            db.data_mut()[ch] += s;
        }
    }
    Ok(db)
}

/// Cross-correlation with implicit zero padding. `weight` is `[out, in, k, k]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (co, ci, k) = check_kernel(weight)?;
    ensure!(ci == c, "conv expects {ci} input channels, got {c}");
    ensure!(stride > 0, "stride must be positive");
    if let Some(b) = bias {
        ensure!(b.len() == co, "bias length {} != out channels {co}", b.len());
    }
    let (Some(ho), Some(wo)) = (
        conv_out_size(h, k, stride, pad),
        conv_out_size(w, k, stride, pad),
    ) else {
        return Err(crate::Error::invalid(format!(
            "kernel {k} larger than padded input {h}x{w} (pad {pad})"
        )));
    };
    let g = Geometry {
        channels: c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    };
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    let mut out = Tensor::zeros(&[n, co, ho, wo]);
    for i in 0..n {
        im2col(x.item(i), &g, &mut col);
        let dst = out.item_mut(i);
        T::gemm(
            co,
            g.rows(),
            g.cols(),
            T::one(),
            weight.data(),
            false,
            &col,
            false,
            T::zero(),
            dst,
        );
        if let Some(b) = bias {
            add_bias(dst, b.data(), ho * wo);
        }
    }
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (co, _, k) = check_kernel(weight)?;
    let (_, _, ho, wo) = dy.dims4()?;
    let g = Geometry {
        channels: c,
        h,
        w,
        k,
        stride,
        pad,
        ho,
        wo,
    };
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    let mut dcol = vec![T::zero(); g.rows() * g.cols()];
    let mut dw = Tensor::zeros(weight.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        im2col(x.item(i), &g, &mut col);
        let dyi = dy.item(i);
        T::gemm(
            co,
            g.cols(),
            g.rows(),
            T::one(),
            dyi,
            false,
            &col,
            true,
            T::one(),
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                g.rows(),
                co,
                g.cols(),
                T::one(),
                weight.data(),
                true,
                dyi,
                false,
                T::zero(),
                &mut dcol,
            );
            col2im(&dcol, &g, dx.item_mut(i));
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: bias_grad(dy)?,
    })
}

/// Fractionally strided convolution, the adjoint of [`conv2d`].
/// `weight` is `[in, out, k, k]`; output size is `(h-1)*stride - 2*pad + k + output_padding`.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ci, co, k) = check_kernel(weight)?;
    ensure!(ci == c, "transposed conv expects {ci} input channels, got {c}");
    ensure!(
        output_padding < stride,
        "output padding must be smaller than stride"
    );
    let full_h = (h - 1) * stride + k + output_padding;
    let full_w = (w - 1) * stride + k + output_padding;
    ensure!(
        full_h > 2 * pad && full_w > 2 * pad,
        "padding {pad} too large for transposed conv"
    );
    let (oh, ow) = (full_h - 2 * pad, full_w - 2 * pad);
    let g = Geometry {
        channels: co,
        h: oh,
        w: ow,
        k,
        stride,
        pad,
        ho: h,
        wo: w,
    };
    let mut col = vec![T::zero(); g.rows() * g.cols()];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for i in 0..n {
        T::gemm(
            g.rows(),
            ci,
            g.cols(),
            T::one(),
            weight.data(),
            true,
            x.item(i),
            false,
            T::zero(),
            &mut col,
        );
        let dst = out.item_mut(i);
        col2im(&col, &g, dst);
        if let Some(b) = bias {
            add_bias(dst, b.data(), oh * ow);
        }
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = x.dims4()?;
    let (ci, co, k) = check_kernel(weight)?;
    let (_, _, oh, ow) = dy.dims4()?;
    let g = Geometry {
        channels: co,
        h: oh,
        w: ow,
        k,
        stride,
        pad,
        ho: h,
        wo: w,
    };
    let mut dcol = vec![T::zero(); g.rows() * g.cols()];
    let mut dw = Tensor::zeros(weight.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        im2col(dy.item(i), &g, &mut dcol);
        T::gemm(
            ci,
            g.cols(),
            g.rows(),
            T::one(),
            x.item(i),
            false,
            &dcol,
            true,
            T::one(),
            dw.data_mut(),
        );
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                ci,
                g.rows(),
                g.cols(),
                T::one(),
                weight.data(),
                false,
                &dcol,
                false,
                T::zero(),
                dx.item_mut(i),
            );
        }
    }
    debug_assert_eq!(c, ci);
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: bias_grad(dy)?,
    })
}

/// Per-(item, channel) normalization without affine parameters.
/// Returns the normalized tensor and the inverse standard deviation of each plane.
pub fn instance_norm<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
    let count = T::from_usize(hw).unwrap();
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for plane in 0..n * c {
        let src = &x.data()[plane * hw..(plane + 1) * hw];
        let mean = src.iter().copied().sum::<T>() / count;
        let var = src
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            / count;
        let inv = T::one() / (var + eps).sqrt();
        for (d, &s) in y.data_mut()[plane * hw..(plane + 1) * hw]
            .iter_mut()
            .zip(src)
        {
            *d = (s - mean) * inv;
        }
        inv_std.push(inv);
    }
    Ok((y, inv_std))
}

pub fn instance_norm_backward<T: Element>(
    dy: &Tensor<T>,
    y: &Tensor<T>,
    inv_std: &[T],
) -> Result<Tensor<T>> {
    let (n, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let count = T::from_usize(hw).unwrap();
    let mut dx = Tensor::zeros(dy.shape());
    for plane in 0..n * c {
        let g = &dy.data()[plane * hw..(plane + 1) * hw];
        let yy = &y.data()[plane * hw..(plane + 1) * hw];
        let mean_g = g.iter().copied().sum::<T>() / count;
        let mean_gy = g.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / count;
        let inv = inv_std[plane];
        for ((d, &gi), &yi) in dx.data_mut()[plane * hw..(plane + 1) * hw]
            .iter_mut()
            .zip(g)
            .zip(yy)
        {
            *d = inv * (gi - mean_g - yi * mean_gy);
        }
    }
    Ok(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Act {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl Act {
    pub fn apply<T: Element>(self, v: T) -> T {
        match self {
            Act::Identity => v,
            Act::Relu => v.max(T::zero()),
            Act::LeakyRelu(slope) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::from_f64_lossy(slope)
                }
            }
            Act::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn grad_from_output<T: Element>(self, out: T) -> T {
        match self {
            Act::Identity => T::one(),
            Act::Relu => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Act::LeakyRelu(slope) => {
                if out > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Act::Tanh => T::one() - out * out,
        }
    }

    pub fn forward<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| self.apply(v))
    }

    pub fn backward<T: Element>(self, dy: &Tensor<T>, out: &Tensor<T>) -> Tensor<T> {
        dy.zip_map(out, |g, o| g * self.grad_from_output(o))
            .expect("activation shapes agree")
    }
}

/// Multiply plane `(i, c)` by `scales[i * channels + c]`.
pub fn scale_channels<T: Element>(x: &Tensor<T>, scales: &[T]) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    ensure!(
        scales.len() == n * c,
        "need {} channel scales, got {}",
        n * c,
        scales.len()
    );
    let hw = h * w;
    let mut y = x.clone();
    for (plane, &s) in scales.iter().enumerate() {
        for v in &mut y.data_mut()[plane * hw..(plane + 1) * hw] {
            *v *= s;
        }
    }
    Ok(y)
}

/// Returns `(d input, d scales)`.
pub fn scale_channels_backward<T: Element>(
    x: &Tensor<T>,
    scales: &[T],
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (_, _, h, w) = x.dims4()?;
    let hw = h * w;
    let dx = scale_channels(dy, scales)?;
    let ds = (0..scales.len())
        .map(|plane| {
            let a = &x.data()[plane * hw..(plane + 1) * hw];
            let b = &dy.data()[plane * hw..(plane + 1) * hw];
            a.iter().zip(b).map(|(&p, &q)| p * q).sum()
        })
        .collect();
    Ok((dx, ds))
}
