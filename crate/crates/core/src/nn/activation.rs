//! Rectifiers. `slope = 0` gives ReLU.

use crate::tensor::{Scalar, Tensor4};

pub const ENCODER_SLOPE: f64 = 0.2;

pub fn leaky_relu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    leaky_relu(x, T::zero())
}

/// Gradient given the pre-activation input; at exactly 0 the positive branch applies.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>, slope: T) -> Tensor4<T> {
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v >= T::zero() { g } else { slope * g })
        .collect();
    Tensor4::from_vec(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        let x = Tensor4::from_vec([1, 1, 1, 3], vec![1.0f64, -1.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).data(), &[1.0, -0.2, 0.0]);
        assert_eq!(relu(&x).data(), &[1.0, 0.0, 0.0]);
        let g = Tensor4::full([1, 1, 1, 3], 2.0);
        assert_eq!(leaky_relu_backward(&x, &g, 0.2).data(), &[2.0, 0.4, 2.0]);
    }
}
