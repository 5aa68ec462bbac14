//! Weight initialisation.
//!
//! Input-to-hidden kernels draw from `U(-a, a)` with variance
//! `2 / (fan_in + fan_out)`. Hidden-to-hidden kernels with a 1×1 footprint
//! get an orthogonal channel-mixing matrix; larger footprints use the same
//! uniform scheme. Biases start at zero.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::Tensor;

/// Uniform samples with variance `2 / (fan_in + fan_out)`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Uniform samples with variance `2 / fan_in`, for rectified stages.
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Standard normal draw (Box–Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// An `n×n` orthogonal matrix from Gram–Schmidt on Gaussian rows.
pub fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = libm::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    Tensor::new(&[n, n], rows.concat()).expect("square matrix")
}

/// Hidden-to-hidden kernel `O_h×O_h×k1×k2`.
pub fn recurrent_kernel<R: Rng + ?Sized>(
    hidden: usize,
    k1: usize,
    k2: usize,
    rng: &mut R,
) -> Tensor {
    if k1 == 1 && k2 == 1 {
        orthogonal(hidden, rng)
            .reshape(&[hidden, hidden, 1, 1])
            .expect("same element count")
    } else {
        let fan = hidden * k1 * k2;
        glorot_uniform(&[hidden, hidden, k1, k2], fan, fan, rng)
    }
}

pub fn zeros(n: usize) -> Tensor {
    Tensor::new(&[n], vec![0.0; n]).expect("positive length")
}
