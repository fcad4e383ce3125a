//! Frequency-domain regularized cross-correlation.
//!
//! Per channel, with the template zero-padded to the search size:
//! `R_c = ifft2(conj(Z_c) X_c / (|Z_c|^2 + eps_c))`. Shift `s` of `R_c`
//! scores the template placed with its top-left corner at `s`.

use gwtrack_tensor::{Complex, CustomOp, Fft2Plan, Scalar, Tape, Tensor, Var};

use crate::error::{CoreError, Result};

/// Floor added to the relative regularizer so an all-zero template still
/// divides by a positive number.
pub const EPS_FLOOR: f64 = 1e-8;

/// Channel-mean correlation response.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub scores: Tensor<f64>,
    /// Feature cell size in patch pixels.
    pub stride: f64,
    pub eps: f64,
}

struct Spectra<T: Scalar> {
    z: Vec<Complex<T>>,
    x: Vec<Complex<T>>,
}

fn check_dims(zs: &[usize], xs: &[usize]) -> Result<()> {
    if zs.len() != 3 || xs.len() != 3 || zs[0] != xs[0] || zs[1] > xs[1] || zs[2] > xs[2] {
        return Err(CoreError::Shape(format!(
            "template {:?} must be [C,h,w] with h,w no larger than search {:?}",
            zs, xs
        )));
    }
    Ok(())
}

/// Spectra of every channel of `z` (zero-padded) and `x`.
fn spectra<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>, plan: &Fft2Plan<T>) -> Vec<Spectra<T>> {
    let (c, hz, wz) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let (hx, wx) = (x.shape()[1], x.shape()[2]);
    let n = hx * wx;
    let zero = Complex::new(T::zero(), T::zero());
    (0..c)
        .map(|ch| {
            let mut zb = vec![zero; n];
            for y in 0..hz {
                for xx in 0..wz {
                    zb[y * wx + xx].re = z.data()[(ch * hz + y) * wz + xx];
                }
            }
            let mut xb: Vec<Complex<T>> =
                x.data()[ch * n..(ch + 1) * n].iter().map(|&v| Complex::new(v, T::zero())).collect();
            plan.forward(&mut zb);
            plan.forward(&mut xb);
            Spectra { z: zb, x: xb }
        })
        .collect()
}

struct XCorr<T: Scalar> {
    spectra: Vec<Spectra<T>>,
    eps: Vec<T>,
    rel: T,
}

/// Per-channel regularized correlation, `[C,Hx,Wx]`, with
/// `eps_c = rel * sum(z_c^2) + EPS_FLOOR`. By Parseval `sum(z_c^2)` is the
/// mean spectral power of the padded template channel.
pub fn xcorr_channels<T: Scalar>(tape: &Tape<T>, z: Var, x: Var, rel: f64) -> Result<Var> {
    if !(rel > 0.0) {
        return Err(CoreError::Config("correlation eps must be positive".into()));
    }
    let (out, op) = {
        let (zv, xv) = (tape.value(z), tape.value(x));
        check_dims(zv.shape(), xv.shape())?;
        if !zv.is_finite() || !xv.is_finite() {
            return Err(CoreError::NonFinite("correlation input".into()));
        }
        let (c, hz, wz) = (zv.shape()[0], zv.shape()[1], zv.shape()[2]);
        let (hx, wx) = (xv.shape()[1], xv.shape()[2]);
        let n = hx * wx;
        let plan = Fft2Plan::<T>::new(hx, wx);
        let spectra = spectra(&zv, &xv, &plan);
        let rel_t = T::lit(rel);
        let mut out = vec![T::zero(); c * n];
        let mut eps = Vec::with_capacity(c);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for ch in 0..c {
            let energy: T = zv.data()[ch * hz * wz..(ch + 1) * hz * wz].iter().map(|&v| v * v).sum();
            let e = rel_t * energy + T::lit(EPS_FLOOR);
            eps.push(e);
            let s = &spectra[ch];
            for k in 0..n {
                buf[k] = s.z[k].conj() * s.x[k] / (s.z[k].norm_sqr() + e);
            }
            plan.inverse(&mut buf);
            for k in 0..n {
                out[ch * n + k] = buf[k].re;
            }
        }
        (Tensor::new([c, hx, wx], out)?, XCorr { spectra, eps, rel: rel_t })
    };
    Ok(tape.custom(&[z, x], out, op))
}

impl<T: Scalar> CustomOp<T> for XCorr<T> {
    fn name(&self) -> &'static str {
        "xcorr"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (z, x) = (inputs[0], inputs[1]);
        let (c, hz, wz) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        let (hx, wx) = (x.shape()[1], x.shape()[2]);
        let n = hx * wx;
        let plan = Fft2Plan::<T>::new(hx, wx);
        let inv_n = T::one() / T::lit(n as f64);
        let two = T::lit(2.0);
        let mut dz = vec![T::zero(); z.len()];
        let mut dx = vec![T::zero(); x.len()];
        let zero = Complex::new(T::zero(), T::zero());
        let mut gg = vec![zero; n];
        let mut bx = vec![zero; n];
        let mut bz = vec![zero; n];
        for ch in 0..c {
            let s = &self.spectra[ch];
            let e = self.eps[ch];
            for k in 0..n {
                gg[k] = Complex::new(g.data()[ch * n + k] * inv_n, T::zero());
            }
            plan.forward(&mut gg);
            let mut deps = T::zero();
            for k in 0..n {
                let d = s.z[k].norm_sqr() + e;
                let gk = s.z[k].conj() * s.x[k] / d;
                let cg = gg[k].conj();
                bx[k] = gg[k] * s.z[k] / d;
                let re = (cg * gk).re;
                bz[k] = (cg * s.x[k] - s.z[k] * (two * re)) / d;
                deps -= re / d;
            }
            if needs[1] {
                plan.inverse_unnormalized(&mut bx);
                for k in 0..n {
                    dx[ch * n + k] = bx[k].re;
                }
            }
            if needs[0] {
                plan.inverse_unnormalized(&mut bz);
                for y in 0..hz {
                    for xx in 0..wz {
                        let i = (ch * hz + y) * wz + xx;
                        dz[i] = bz[y * wx + xx].re + deps * self.rel * two * z.data()[i];
                    }
                }
            }
        }
        vec![
            needs[0].then(|| Tensor::new(z.shape().to_vec(), dz).expect("shape")),
            needs[1].then(|| Tensor::new(x.shape().to_vec(), dx).expect("shape")),
        ]
    }
}

fn channel_mean(c: usize, n: usize, f: impl Fn(usize, &mut [f64])) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    let mut buf = vec![0.0; n];
    for ch in 0..c {
        f(ch, &mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, &b)| *a += b);
    }
    acc.iter_mut().for_each(|a| *a /= c as f64);
    acc
}

/// Channel mean of the per-channel regularized correlation with an absolute
/// `eps`.
pub fn xcorr_freq<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>, eps: f64) -> Result<ResponseMap> {
    if !(eps > 0.0) {
        return Err(CoreError::Config(format!("eps must be positive, got {}", eps)));
    }
    freq_path(z, x, Some(eps)).map(|scores| ResponseMap { scores, stride: 1.0, eps })
}

/// The numerator path `ifft2(conj(Z) X)` averaged over channels: plain
/// circular cross-correlation computed through the FFT.
pub fn xcorr_numerator<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<f64>> {
    freq_path(z, x, None)
}

fn freq_path<T: Scalar>(z: &Tensor<T>, x: &Tensor<T>, eps: Option<f64>) -> Result<Tensor<f64>> {
    check_dims(z.shape(), x.shape())?;
    if !z.is_finite() || !x.is_finite() {
        return Err(CoreError::NonFinite("correlation input".into()));
    }
    let (c, hx, wx) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = hx * wx;
    let plan = Fft2Plan::<T>::new(hx, wx);
    let spec = spectra(z, x, &plan);
    let data = channel_mean(c, n, |ch, out| {
        let s = &spec[ch];
        let mut buf: Vec<Complex<T>> = (0..n)
            .map(|k| {
                let num = s.z[k].conj() * s.x[k];
                match eps {
                    Some(e) => num / (s.z[k].norm_sqr() + T::lit(e)),
                    None => num,
                }
            })
            .collect();
        plan.inverse(&mut buf);
        for k in 0..n {
            out[k] = buf[k].re.as_f64();
        }
    });
    Ok(Tensor::new([hx, wx], data)?)
}

/// Separable Hann window, peak 1 at the centre.
pub fn cosine_window(h: usize, w: usize) -> Tensor<f64> {
    let hann = |n: usize| -> Vec<f64> {
        (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos()).collect()
    };
    let (wy, wx) = (hann(h), hann(w));
    Tensor::from_fn([h, w], |i| wy[i / w] * wx[i % w])
}

/// Argmax of `R` (times `window` when given). Ties go to the smallest row,
/// then the smallest column.
pub fn peak_locate(r: &ResponseMap, window: Option<&Tensor<f64>>) -> Result<(usize, usize, f64)> {
    let (h, w) = r.scores.dims2("peak_locate")?;
    if let Some(win) = window {
        if win.shape() != r.scores.shape() {
            return Err(CoreError::Shape(format!("window {:?} vs response {:?}", win.shape(), r.scores.shape())));
        }
    }
    if !r.scores.is_finite() {
        return Err(CoreError::NonFinite("response map".into()));
    }
    let mut best = (0, 0, f64::NEG_INFINITY);
    for i in 0..h * w {
        let v = r.scores.data()[i] * window.map_or(1.0, |win| win.data()[i]);
        if v > best.2 {
            best = (i / w, i % w, v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    /// Spatial circular correlation averaged over channels.
    fn brute(z: &Tensor<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (c, hz, wz) = z.dims3("b").unwrap();
        let (_, hx, wx) = x.dims3("b").unwrap();
        Tensor::from_fn([hx, wx], |i| {
            let (sy, sx) = (i / wx, i % wx);
            let mut acc = 0.0;
            for ch in 0..c {
                for u in 0..hz {
                    for v in 0..wz {
                        acc += z.at3(ch, u, v) * x.at3(ch, (u + sy) % hx, (v + sx) % wx);
                    }
                }
            }
            acc / c as f64
        })
    }

    #[test]
    fn numerator_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let z = rand_t(&[3, 5, 4], &mut rng);
            let x = rand_t(&[3, 9, 7], &mut rng);
            let a = xcorr_numerator(&z, &x).unwrap();
            let b = brute(&z, &x);
            assert!(a.max_abs_diff(&b) < 1e-10);
        }
    }

    #[test]
    fn zero_template_zero_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = xcorr_freq(&Tensor::<f64>::zeros([2, 4, 4]), &rand_t(&[2, 8, 8], &mut rng), 1e-3).unwrap();
        assert!(r.scores.data().iter().all(|&v| v == 0.0));
        assert!(xcorr_freq(&Tensor::<f64>::zeros([2, 4, 4]), &Tensor::zeros([2, 8, 8]), 0.0).is_err());
    }

    #[test]
    fn shifted_copy_peaks_at_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = rand_t(&[4, 8, 8], &mut rng);
        for &(dy, dx) in &[(0usize, 0usize), (2, 5), (7, 1)] {
            let x = Tensor::from_fn([4, 8, 8], |i| {
                let (c, y, xx) = (i / 64, (i / 8) % 8, i % 8);
                z.at3(c, (y + 8 - dy) % 8, (xx + 8 - dx) % 8)
            });
            let r = xcorr_freq(&z, &x, 1e-6).unwrap();
            assert_eq!(peak_locate(&r, None).unwrap().0, dy);
            assert_eq!(peak_locate(&r, None).unwrap().1, dx);
            let b = brute(&z, &x);
            let pb = peak_locate(&ResponseMap { scores: b, stride: 1.0, eps: 0.0 }, None).unwrap();
            assert_eq!((pb.0, pb.1), (dy, dx));
        }
    }

    #[test]
    fn tie_break_and_window() {
        let flat = ResponseMap { scores: Tensor::full([4, 5], 1.0), stride: 1.0, eps: 1.0 };
        assert_eq!(peak_locate(&flat, None).unwrap(), (0, 0, 1.0));
        let mut s = Tensor::zeros([9, 9]);
        s.data_mut()[0] = 1.0;
        s.data_mut()[4 * 9 + 5] = 0.99;
        let r = ResponseMap { scores: s, stride: 1.0, eps: 1.0 };
        assert_eq!(peak_locate(&r, None).unwrap().0, 0);
        let win = cosine_window(9, 9);
        let (row, col, _) = peak_locate(&r, Some(&win)).unwrap();
        assert_eq!((row, col), (4, 5));
    }

    #[test]
    fn tape_op_matches_plain_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand_t(&[3, 4, 4], &mut rng);
        let x = rand_t(&[3, 8, 8], &mut rng);
        let tape = Tape::<f64>::inference();
        let r = xcorr_channels(&tape, tape.constant(z.clone()), tape.constant(x.clone()), 0.05).unwrap();
        let per = tape.value(r).clone();
        // each channel separately through the plain path with its own eps
        for ch in 0..3 {
            let zc = Tensor::from_fn([1, 4, 4], |i| z.data()[ch * 16 + i]);
            let xc = Tensor::from_fn([1, 8, 8], |i| x.data()[ch * 64 + i]);
            let eps = 0.05 * zc.data().iter().map(|v| v * v).sum::<f64>() + EPS_FLOOR;
            let want = xcorr_freq(&zc, &xc, eps).unwrap().scores;
            for k in 0..64 {
                assert!((per.data()[ch * 64 + k] - want.data()[k]).abs() < 1e-12);
            }
        }
    }
}
