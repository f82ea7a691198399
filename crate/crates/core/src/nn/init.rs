//! Seeded weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Scalar, Tensor4};

pub const WEIGHT_STD: f64 = 0.02;

pub fn normal<T: Scalar, R: Rng>(shape: [usize; 4], std: f64, rng: &mut R) -> Tensor4<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}

pub fn uniform<T: Scalar, R: Rng>(shape: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Tensor4<T> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
        .collect();
    Tensor4::from_vec(shape, data).expect("length matches shape")
}
