//! 2×2 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Returns the pooled tensor and, per output element, the flat input index of
/// its maximum (first in row-major window order on ties).
pub fn maxpool2d<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(out.len());
    for ni in 0..n {
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = x.index(ni, ch, 2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(ni, ch, 2 * oy + dy, 2 * ox + dx);
                        if x.data()[i] > x.data()[best] {
                            best = i;
                        }
                    }
                    out.set(ni, ch, oy, ox, x.data()[best]);
                    argmax.push(best);
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[usize],
    grad_out: &Tensor4<T>,
) -> Tensor4<T> {
    let mut grad = Tensor4::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        grad.data_mut()[i] += g;
    }
    grad
}
