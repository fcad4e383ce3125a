//! 2-D discrete Fourier transforms over [`Tensor`] planes.
//!
//! The forward transform is unnormalized; the inverse carries the `1/(H*W)`
//! factor, so `ifft2(fft2(x)) == x`. Any size is accepted (no power-of-two
//! restriction).

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Complex array stored as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T = f64> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(TensorError::shape(
                "ComplexTensor::new",
                format!("real {:?} vs imaginary {:?}", re.shape(), im.shape()),
            ));
        }
        Ok(ComplexTensor { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn get(&self, i: usize) -> Complex<T> {
        Complex::new(self.re.data()[i], self.im.data()[i])
    }

    fn from_complex(shape: &[usize], buf: &[Complex<T>]) -> Self {
        let re = Tensor::new(shape.to_vec(), buf.iter().map(|c| c.re).collect()).expect("shape");
        let im = Tensor::new(shape.to_vec(), buf.iter().map(|c| c.im).collect()).expect("shape");
        ComplexTensor { re, im }
    }
}

/// Planned row/column transforms for one `H x W` plane size.
pub struct Fft2Plan<T: Scalar> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Fft2Plan<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2Plan {
            h,
            w,
            row_fwd: planner.plan_fft(w, FftDirection::Forward),
            col_fwd: planner.plan_fft(h, FftDirection::Forward),
            row_inv: planner.plan_fft(w, FftDirection::Inverse),
            col_inv: planner.plan_fft(h, FftDirection::Inverse),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn run(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        debug_assert_eq!(buf.len(), h * w);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        row.process(buf);
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.run(buf, false);
    }

    /// Unnormalized inverse transform in place (no `1/N` factor).
    pub fn inverse_unnormalized(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true);
    }

    /// Inverse transform including the `1/(H*W)` factor.
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.run(buf, true);
        let s = T::one() / T::lit((self.h * self.w) as f64);
        buf.iter_mut().for_each(|c| *c = *c * s);
    }
}

pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (h, w) = x.dims2("fft2")?;
    if h == 0 || w == 0 {
        return Err(TensorError::shape("fft2", "dimensions must be >= 1"));
    }
    if !x.is_finite() {
        return Err(TensorError::NonFinite("fft2"));
    }
    let mut buf: Vec<Complex<T>> = x.data().iter().map(|&v| Complex::new(v, T::zero())).collect();
    Fft2Plan::new(h, w).forward(&mut buf);
    Ok(ComplexTensor::from_complex(x.shape(), &buf))
}

/// Inverse transform, returning the real part.
pub fn ifft2<T: Scalar>(spec: &ComplexTensor<T>) -> Result<Tensor<T>> {
    let (h, w) = spec.re.dims2("ifft2")?;
    if !spec.re.is_finite() || !spec.im.is_finite() {
        return Err(TensorError::NonFinite("ifft2"));
    }
    let mut buf: Vec<Complex<T>> = (0..h * w).map(|i| spec.get(i)).collect();
    Fft2Plan::new(h, w).inverse(&mut buf);
    Tensor::new([h, w], buf.iter().map(|c| c.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([h, w], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn round_trip() {
        for (h, w) in [(16, 16), (5, 12), (1, 7)] {
            let x = random(h, w, 1);
            let y = ifft2(&fft2(&x).unwrap()).unwrap();
            assert!(x.max_abs_diff(&y) < 1e-9);
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let x: Tensor<f64> = Tensor::from_fn([8, 8], |i| if i == 0 { 1.0 } else { 0.0 });
        let s = fft2(&x).unwrap();
        for i in 0..64 {
            assert!((s.get(i).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval() {
        let x = random(16, 16, 7);
        let s = fft2(&x).unwrap();
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spec: f64 = (0..256).map(|i| s.get(i).norm_sqr()).sum::<f64>() / 256.0;
        assert!((energy - spec).abs() < 1e-9);
    }

    #[test]
    fn matches_direct_dft() {
        let x = random(6, 10, 3);
        let s = fft2(&x).unwrap();
        for ky in 0..6 {
            for kx in 0..10 {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..6 {
                    for xx in 0..10 {
                        let th = -2.0 * std::f64::consts::PI * (ky as f64 * y as f64 / 6.0 + kx as f64 * xx as f64 / 10.0);
                        acc += Complex::new(th.cos(), th.sin()) * x.data()[y * 10 + xx];
                    }
                }
                assert!((acc - s.get(ky * 10 + kx)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn real_input_spectrum_is_conjugate_symmetric() {
        let (h, w) = (8, 12);
        let s = fft2(&random(h, w, 9)).unwrap();
        for ky in 0..h {
            for kx in 0..w {
                let a = s.get(ky * w + kx);
                let b = s.get(((h - ky) % h) * w + (w - kx) % w);
                assert!((a - b.conj()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn linearity() {
        let a = random(8, 8, 1);
        let b = random(8, 8, 2);
        let sum = a.zip_map(&b, |p, q| 2.0 * p - 3.0 * q).unwrap();
        let (fa, fb, fs) = (fft2(&a).unwrap(), fft2(&b).unwrap(), fft2(&sum).unwrap());
        for i in 0..64 {
            let expect = fa.get(i) * 2.0 - fb.get(i) * 3.0;
            assert!((expect - fs.get(i)).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = random(4, 4, 1);
        x.data_mut()[3] = f64::NAN;
        assert_eq!(fft2(&x), Err(TensorError::NonFinite("fft2")));
    }
}
