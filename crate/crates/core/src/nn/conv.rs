//! Strided 2-D cross-correlation and its transpose.
//!
//! Three kernels cover both layers:
//! `correlate` (conv forward, transposed-conv input gradient),
//! `scatter` (transposed-conv forward, conv input gradient) and
//! `weight_grad`. Each unfolds a sample with im2col and runs one
//! single-threaded matrix product, so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Weights are `(A, B, kh, kw)`. For a forward convolution `A = C_out`,
/// `B = C_in`; for a transposed convolution `A = C_in`, `B = C_out`
/// (the adjoint of the convolution with the same weights). `bias` has one
/// entry per output channel in either case.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvGrads<T> {
    pub fn zeros_like(p: &ConvParams<T>) -> Self {
        ConvGrads {
            weight: Tensor4::zeros(p.weight.shape()),
            bias: vec![T::zero(); p.bias.len()],
        }
    }
}

pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Param("stride must be >= 1".into()));
    }
    if input + 2 * pad < k {
        return Err(Error::Shape(format!(
            "input {input} with padding {pad} is smaller than kernel {k}"
        )));
    }
    Ok((input + 2 * pad - k) / stride + 1)
}

pub fn conv_transpose_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Param("stride must be >= 1".into()));
    }
    if input == 0 || (input - 1) * stride + k <= 2 * pad {
        return Err(Error::Shape(format!(
            "transposed conv of size {input} (k={k}, s={stride}, p={pad}) is empty"
        )));
    }
    Ok((input - 1) * stride + k - 2 * pad)
}

/// Geometry of one convolution: a `(ch, h, w)` input seen through a
/// `kh×kw` window at stride `s` with zero padding `pad`, giving `oh×ow`.
#[derive(Clone, Copy)]
struct Window {
    ch: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    s: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.ch * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for output index `o` and kernel offset `k`.
    #[inline]
    fn src(o: usize, k: usize, s: usize, pad: usize, len: usize) -> Option<usize> {
        (o * s + k).checked_sub(pad).filter(|&i| i < len)
    }

    /// Output columns `lo..hi` whose source column for offset `kx` is inside
    /// the image, and the source column of `lo`.
    #[inline]
    fn col_span(&self, kx: usize) -> (usize, usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.s);
        if self.w + self.pad <= kx {
            return (0, 0, 0);
        }
        let hi = ((self.w - 1 + self.pad - kx) / self.s + 1).min(self.ow);
        let lo = lo.min(hi);
        (lo, hi, (lo * self.s + kx).saturating_sub(self.pad))
    }
}

/// Unfolds one sample into a `(ch·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Scalar>(x: &[T], g: Window, cols: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.ch {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let dst = &mut cols[row..row + p];
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let Some(iy) = Window::src(oy, ky, g.s, g.pad, g.h) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let (lo, hi, ix0) = g.col_span(kx);
                    out[..lo].fill(T::zero());
                    out[hi..].fill(T::zero());
                    if g.s == 1 {
                        out[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (j, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = src[ix0 + j * g.s];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds every column entry back onto its source pixel.
fn col2im<T: Scalar>(cols: &[T], g: Window, x: &mut [T]) {
    let p = g.cols();
    for ci in 0..g.ch {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((ci * g.kh + ky) * g.kw + kx) * p;
                let src = &cols[row..row + p];
                for oy in 0..g.oh {
                    let Some(iy) = Window::src(oy, ky, g.s, g.pad, g.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let (lo, hi, ix0) = g.col_span(kx);
                    let row = &src[oy * g.ow + lo..oy * g.ow + hi];
                    if g.s == 1 {
                        for (d, &v) in dst[ix0..ix0 + hi - lo].iter_mut().zip(row) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in row.iter().enumerate() {
                            dst[ix0 + j * g.s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,a] = bias[a] + Σ_b w[a,b] ⋆ x[n,b]` with `x` seen through window `g`.
fn correlate<T: Scalar>(x: &Tensor4<T>, w: &Tensor4<T>, bias: Option<&[T]>, g: Window) -> Tensor4<T> {
    let n = x.n();
    let a_ch = w.shape()[0];
    let (rows, p) = (g.rows(), g.cols());
    let mut out = Tensor4::zeros([n, a_ch, g.oh, g.ow]);
    let mut cols = vec![T::zero(); rows * p];
    let per_in = g.ch * g.h * g.w;
    for ni in 0..n {
        im2col(&x.data()[ni * per_in..(ni + 1) * per_in], g, &mut cols);
        let dst = &mut out.data_mut()[ni * a_ch * p..(ni + 1) * a_ch * p];
        let beta = match bias {
            Some(b) => {
                for (a, plane) in dst.chunks_exact_mut(p).enumerate() {
                    plane.fill(b[a]);
                }
                T::one()
            }
            None => T::zero(),
        };
        T::gemm(a_ch, rows, p, w.data(), (rows, 1), &cols, (p, 1), beta, dst);
    }
    out
}

/// Adjoint of [`correlate`] in its input: `out[n,b] = bias[b] + Σ_a w[a,b] ⋆ᵀ y[n,a]`,
/// where `y` has window `g`'s output size and `out` its input size.
fn scatter<T: Scalar>(y: &Tensor4<T>, w: &Tensor4<T>, bias: Option<&[T]>, g: Window) -> Tensor4<T> {
    let n = y.n();
    let a_ch = w.shape()[0];
    let (rows, p) = (g.rows(), g.cols());
    let mut out = Tensor4::zeros([n, g.ch, g.h, g.w]);
    let mut cols = vec![T::zero(); rows * p];
    let per_out = g.ch * g.h * g.w;
    for ni in 0..n {
        let src = &y.data()[ni * a_ch * p..(ni + 1) * a_ch * p];
        T::gemm(rows, a_ch, p, w.data(), (1, rows), src, (p, 1), T::zero(), &mut cols);
        let dst = &mut out.data_mut()[ni * per_out..(ni + 1) * per_out];
        if let Some(b) = bias {
            for (ci, plane) in dst.chunks_exact_mut(g.h * g.w).enumerate() {
                plane.fill(b[ci]);
            }
        }
        col2im(&cols, g, dst);
    }
    out
}

/// `gw[a,b,ky,kx] = Σ_n Σ_pos y[n,a,pos] · x[n,b,pos·s + k − pad]`.
fn weight_grad<T: Scalar>(x: &Tensor4<T>, y: &Tensor4<T>, g: Window) -> Tensor4<T> {
    let n = x.n();
    let a_ch = y.c();
    let (rows, p) = (g.rows(), g.cols());
    let mut out = Tensor4::zeros([a_ch, g.ch, g.kh, g.kw]);
    let mut cols = vec![T::zero(); rows * p];
    let per_in = g.ch * g.h * g.w;
    for ni in 0..n {
        im2col(&x.data()[ni * per_in..(ni + 1) * per_in], g, &mut cols);
        let src = &y.data()[ni * a_ch * p..(ni + 1) * a_ch * p];
        T::gemm(a_ch, p, rows, src, (p, 1), &cols, (1, p), T::one(), out.data_mut());
    }
    out
}

fn bias_grad<T: Scalar>(g: &Tensor4<T>) -> Vec<T> {
    let [n, c, _, _] = g.shape();
    (0..c)
        .map(|ch| {
            (0..n).fold(T::zero(), |acc, ni| {
                acc + g.plane(ni, ch).iter().fold(T::zero(), |s, &v| s + v)
            })
        })
        .collect()
}

fn check_params<T: Scalar>(p: &ConvParams<T>, out_channels: usize) -> Result<()> {
    if p.stride == 0 {
        return Err(Error::Param("stride must be >= 1".into()));
    }
    if p.bias.len() != out_channels {
        return Err(Error::Shape(format!(
            "bias has {} entries, layer has {out_channels} output channels",
            p.bias.len()
        )));
    }
    Ok(())
}

pub fn conv2d<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let [c_out, c_in, kh, kw] = p.weight.shape();
    check_params(p, c_out)?;
    if x.c() != c_in {
        return Err(Error::Shape(format!(
            "conv2d expects {c_in} input channels, got {}",
            x.c()
        )));
    }
    let oh = conv_out_dim(x.h(), kh, p.stride, p.padding)?;
    let ow = conv_out_dim(x.w(), kw, p.stride, p.padding)?;
    let g = Window { ch: c_in, h: x.h(), w: x.w(), kh, kw, s: p.stride, pad: p.padding, oh, ow };
    let out = correlate(x, &p.weight, Some(&p.bias), g);
    out.ensure_finite("conv2d output")?;
    Ok(out)
}

/// Returns `(grad_x, grads)` for [`conv2d`] given its input `x`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    let grad_x = conv2d_backward_input(x.shape(), p, grad_out)?;
    let [_, c_in, kh, kw] = p.weight.shape();
    let (oh, ow) = (grad_out.h(), grad_out.w());
    let g = Window { ch: c_in, h: x.h(), w: x.w(), kh, kw, s: p.stride, pad: p.padding, oh, ow };
    let weight = weight_grad(x, grad_out, g);
    Ok((
        grad_x,
        ConvGrads {
            weight,
            bias: bias_grad(grad_out),
        },
    ))
}

/// Input gradient only; used where the weights are frozen.
pub fn conv2d_backward_input<T: Scalar>(
    x_shape: [usize; 4],
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let [c_out, c_in, kh, kw] = p.weight.shape();
    let oh = conv_out_dim(x_shape[2], kh, p.stride, p.padding)?;
    let ow = conv_out_dim(x_shape[3], kw, p.stride, p.padding)?;
    if grad_out.shape() != [x_shape[0], c_out, oh, ow] {
        return Err(Error::Shape(format!(
            "conv2d grad_out {:?} does not match output {:?}",
            grad_out.shape(),
            [x_shape[0], c_out, oh, ow]
        )));
    }
    if x_shape[1] != c_in {
        return Err(Error::Shape(format!("conv2d expects {c_in} input channels, got {}", x_shape[1])));
    }
    let g = Window { ch: c_in, h: x_shape[2], w: x_shape[3], kh, kw, s: p.stride, pad: p.padding, oh, ow };
    Ok(scatter(grad_out, &p.weight, None, g))
}

pub fn conv_transpose2d<T: Scalar>(x: &Tensor4<T>, p: &ConvParams<T>) -> Result<Tensor4<T>> {
    let [c_in, c_out, kh, kw] = p.weight.shape();
    check_params(p, c_out)?;
    if x.c() != c_in {
        return Err(Error::Shape(format!(
            "conv_transpose2d expects {c_in} input channels, got {}",
            x.c()
        )));
    }
    let oh = conv_transpose_out_dim(x.h(), kh, p.stride, p.padding)?;
    let ow = conv_transpose_out_dim(x.w(), kw, p.stride, p.padding)?;
    // the transposed layer's output is the input of the matching convolution
    let g = Window { ch: c_out, h: oh, w: ow, kh, kw, s: p.stride, pad: p.padding, oh: x.h(), ow: x.w() };
    let out = scatter(x, &p.weight, Some(&p.bias), g);
    out.ensure_finite("conv_transpose2d output")?;
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    let [_, c_out, kh, kw] = p.weight.shape();
    let oh = conv_transpose_out_dim(x.h(), kh, p.stride, p.padding)?;
    let ow = conv_transpose_out_dim(x.w(), kw, p.stride, p.padding)?;
    if grad_out.shape() != [x.n(), c_out, oh, ow] {
        return Err(Error::Shape(format!(
            "conv_transpose2d grad_out {:?} does not match output {:?}",
            grad_out.shape(),
            [x.n(), c_out, oh, ow]
        )));
    }
    let g = Window { ch: c_out, h: oh, w: ow, kh, kw, s: p.stride, pad: p.padding, oh: x.h(), ow: x.w() };
    let grad_x = correlate(grad_out, &p.weight, None, g);
    // roles swap: the transposed layer's input plays the gradient
    let weight = weight_grad(grad_out, x, g);
    Ok((
        grad_x,
        ConvGrads {
            weight,
            bias: bias_grad(grad_out),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct quadruple-loop reference, independent of the kernel-major path.
    fn conv_naive(x: &Tensor4<f64>, p: &ConvParams<f64>) -> Tensor4<f64> {
        let [c_out, c_in, kh, kw] = p.weight.shape();
        let oh = conv_out_dim(x.h(), kh, p.stride, p.padding).unwrap();
        let ow = conv_out_dim(x.w(), kw, p.stride, p.padding).unwrap();
        let mut out = Tensor4::zeros([x.n(), c_out, oh, ow]);
        for n in 0..x.n() {
            for o in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = p.bias[o];
                        for i in 0..c_in {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < x.h() && (ix as usize) < x.w() {
                                        acc += p.weight.get(o, i, ky, kx)
                                            * x.get(n, i, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.set(n, o, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor4<f64> {
        let len: usize = shape.iter().product();
        Tensor4::from_vec(
            shape,
            (0..len).map(|i| ((i * 7919 % 23) as f64 - 11.0) * scale).collect(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_product() {
        let x = Tensor4::from_vec([1, 1, 1, 1], vec![3.0f64]).unwrap();
        let p = ConvParams {
            weight: Tensor4::from_vec([1, 1, 1, 1], vec![-2.5]).unwrap(),
            bias: vec![0.0],
            stride: 1,
            padding: 0,
        };
        assert_eq!(conv2d(&x, &p).unwrap().data(), &[-7.5]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = ramp([2, 1, 5, 6], 0.1);
        let mut weight = Tensor4::zeros([1, 1, 3, 3]);
        weight.set(0, 0, 1, 1, 1.0);
        let p = ConvParams {
            weight,
            bias: vec![0.0],
            stride: 1,
            padding: 1,
        };
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn matches_naive_for_several_geometries() {
        for (k, s, pad, h, w) in [(3, 1, 1, 7, 6), (4, 2, 1, 8, 8), (3, 2, 0, 9, 7), (4, 2, 1, 5, 7), (1, 1, 0, 3, 3)] {
            let x = ramp([2, 3, h, w], 0.05);
            let p = ConvParams {
                weight: ramp([4, 3, k, k], 0.03),
                bias: vec![0.1, -0.2, 0.3, 0.0],
                stride: s,
                padding: pad,
            };
            let fast = conv2d(&x, &p).unwrap();
            let slow = conv_naive(&x, &p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_shape_law() {
        let x = ramp([1, 2, 5, 7], 0.1);
        let p = ConvParams {
            weight: ramp([2, 3, 4, 4], 0.1),
            bias: vec![0.0; 3],
            stride: 2,
            padding: 1,
        };
        assert_eq!(conv_transpose2d(&x, &p).unwrap().shape(), [1, 3, 10, 14]);
    }

    #[test]
    fn shape_errors() {
        let x = ramp([1, 2, 4, 4], 0.1);
        let p = ConvParams {
            weight: ramp([1, 3, 3, 3], 0.1),
            bias: vec![0.0],
            stride: 1,
            padding: 0,
        };
        assert!(matches!(conv2d(&x, &p), Err(Error::Shape(_))));
        let p = ConvParams {
            weight: ramp([1, 2, 5, 5], 0.1),
            bias: vec![0.0],
            stride: 1,
            padding: 0,
        };
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut x = ramp([1, 1, 3, 3], 0.1);
        x.data_mut()[4] = f64::NAN;
        let p = ConvParams {
            weight: ramp([1, 1, 3, 3], 0.1),
            bias: vec![0.0],
            stride: 1,
            padding: 1,
        };
        assert!(matches!(conv2d(&x, &p), Err(Error::NonFinite(_))));
    }
}
