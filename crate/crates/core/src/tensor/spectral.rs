//! Circular convolution and correlation through the discrete Fourier
//! transform. Lengths need not be powers of two.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward/inverse transform pair for one length, with reusable scratch.
#[derive(Clone)]
pub struct Spectral<T: Scalar> {
    len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Scalar> Spectral<T> {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "transform length must be positive");
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Spectral {
            len,
            forward,
            inverse,
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform of a real signal, written into `out`.
    pub fn forward_into(&mut self, x: &[T], out: &mut [Complex<T>]) {
        debug_assert_eq!(x.len(), self.len);
        for (o, &v) in out.iter_mut().zip(x) {
            *o = Complex::new(v, T::zero());
        }
        self.forward.process_with_scratch(out, &mut self.scratch);
    }

    pub fn forward(&mut self, x: &[T]) -> Vec<Complex<T>> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.len];
        self.forward_into(x, &mut out);
        out
    }

    /// Inverse transform scaled by `1/len`; the real part is written to `out`
    /// and the imaginary residue is dropped.
    pub fn inverse_real_into(&mut self, spec: &mut [Complex<T>], out: &mut [T]) {
        self.inverse.process_with_scratch(spec, &mut self.scratch);
        let scale = T::one() / T::lit(self.len as f64);
        for (o, c) in out.iter_mut().zip(spec.iter()) {
            *o = c.re * scale;
        }
    }

    /// `out[k] = sum_j a[j] * b[(k - j) mod n]`.
    pub fn convolve(&mut self, a: &[T], b: &[T]) -> Vec<T> {
        let fa = self.forward(a);
        let mut fb = self.forward(b);
        for (x, y) in fb.iter_mut().zip(&fa) {
            *x = *x * *y;
        }
        let mut out = vec![T::zero(); self.len];
        self.inverse_real_into(&mut fb, &mut out);
        out
    }

    /// `out[j] = sum_k g[k] * b[(k - j) mod n]`, the adjoint of convolving by `b`.
    pub fn correlate(&mut self, g: &[T], b: &[T]) -> Vec<T> {
        let fb = self.forward(b);
        let mut fg = self.forward(g);
        for (x, y) in fg.iter_mut().zip(&fb) {
            *x = *x * y.conj();
        }
        let mut out = vec![T::zero(); self.len];
        self.inverse_real_into(&mut fg, &mut out);
        out
    }
}

fn check_pair<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != 1 || a.dims() != b.dims() || a.is_empty() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

/// Circular convolution of two equal-length vectors.
pub fn circular_convolve<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("circular_convolve", a, b)?;
    let mut sp = Spectral::new(a.len());
    Ok(Tensor::vector(sp.convolve(a.data(), b.data())))
}

/// Circular cross-correlation `out[j] = sum_k g[k] b[(k - j) mod n]`.
pub fn circular_correlate<T: Scalar>(g: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("circular_correlate", g, b)?;
    let mut sp = Spectral::new(g.len());
    Ok(Tensor::vector(sp.correlate(g.data(), b.data())))
}
