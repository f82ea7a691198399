//! Channel concatenation for skip connections.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor4::zeros([na, ca + cb, ha, wa]);
    for n in 0..na {
        for c in 0..ca {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..cb {
            out.plane_mut(n, ca + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Backward of [`concat_channels`]: the first `first` channels go to `a`.
pub fn split_channels<T: Scalar>(g: &Tensor4<T>, first: usize) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let [n, c, h, w] = g.shape();
    if first > c {
        return Err(Error::Shape(format!("cannot split {first} of {c} channels")));
    }
    let mut a = Tensor4::zeros([n, first, h, w]);
    let mut b = Tensor4::zeros([n, c - first, h, w]);
    for ni in 0..n {
        for ch in 0..first {
            a.plane_mut(ni, ch).copy_from_slice(g.plane(ni, ch));
        }
        for ch in first..c {
            b.plane_mut(ni, ch - first).copy_from_slice(g.plane(ni, ch));
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split() {
        let a = Tensor4::from_vec([1, 2, 4, 4], (0..32).map(f64::from).collect()).unwrap();
        let b = Tensor4::from_vec([1, 2, 4, 4], (100..132).map(f64::from).collect()).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [1, 4, 4, 4]);
        assert_eq!(c.get(0, 2, 0, 0), 100.0);
        let (a2, b2) = split_channels(&c, 2).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn mismatch() {
        let a = Tensor4::<f32>::zeros([1, 1, 4, 4]);
        let b = Tensor4::<f32>::zeros([1, 1, 4, 2]);
        assert!(concat_channels(&a, &b).is_err());
        let b = Tensor4::<f32>::zeros([2, 1, 4, 4]);
        assert!(concat_channels(&a, &b).is_err());
    }
}
