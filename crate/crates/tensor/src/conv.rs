//! 2-D convolution kernels (cross-correlation convention, as in most deep
//! learning code). Dense convolution goes through im2col + GEMM; depthwise
//! convolution is a direct loop.

use crate::error::{Result, TensorError};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize, depthwise: bool) -> Result<Self> {
        let (c_in, h, w) = match *input {
            [c, h, w] => (c, h, w),
            _ => return Err(TensorError::shape("conv2d", format!("input must be [C,H,W], got {:?}", input))),
        };
        let (c_out, kc, kh, kw) = match *kernel {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("kernel must be [C_out,C_in,kH,kW], got {:?}", kernel),
                ))
            }
        };
        if stride == 0 {
            return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
        }
        if depthwise {
            if kc != 1 || c_out != c_in {
                return Err(TensorError::shape(
                    "conv2d",
                    format!("depthwise kernel must be [{},1,kH,kW], got {:?}", c_in, kernel),
                ));
            }
        } else if kc != c_in {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", kc, c_in),
            ));
        }
        if kh == 0 || kw == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {}x{} does not fit padded input {}x{}", kh, kw, h + 2 * pad, w + 2 * pad),
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom { c_in, h, w, c_out, kh, kw, stride, pad, ho, wo })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.ho * g.wo;
    let mut cols = vec![T::zero(); g.patch_len() * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        // contiguous run of valid columns
                        let lo = g.pad.saturating_sub(kx).min(g.wo);
                        let hi = (g.w + g.pad).saturating_sub(kx).min(g.wo);
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && (ix as usize) < g.w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            drow[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.ho * g.wo;
    let mut out = vec![T::zero(); g.c_out * p];
    let wmat = MatRef::new(k, g.c_out, g.patch_len());
    if g.is_pointwise() {
        gemm(wmat, MatRef::new(x, g.c_in, p), &mut out, false);
    } else {
        let cols = im2col(x, g);
        gemm(wmat, MatRef::new(&cols, g.patch_len(), p), &mut out, false);
    }
    out
}

/// Accumulates input and/or kernel gradients for a dense convolution.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dout: &[T],
    g: &ConvGeom,
    dx: Option<&mut [T]>,
    dk: Option<&mut [T]>,
) {
    let p = g.ho * g.wo;
    let dmat = MatRef::new(dout, g.c_out, p);
    if let Some(dk) = dk {
        if g.is_pointwise() {
            gemm(dmat, MatRef::new(x, g.c_in, p).t(), dk, true);
        } else {
            let cols = im2col(x, g);
            gemm(dmat, MatRef::new(&cols, g.patch_len(), p).t(), dk, true);
        }
    }
    if let Some(dx) = dx {
        let wmat = MatRef::new(k, g.c_out, g.patch_len()).t();
        if g.is_pointwise() {
            gemm(wmat, dmat, dx, true);
        } else {
            let mut dcols = vec![T::zero(); g.patch_len() * p];
            gemm(wmat, dmat, &mut dcols, false);
            col2im_add(&dcols, g, dx);
        }
    }
}

pub(crate) fn depthwise_forward<T: Scalar>(x: &[T], k: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * g.ho * g.wo];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        let ker = &k[c * g.kh * g.kw..(c + 1) * g.kh * g.kw];
        let o = &mut out[c * g.ho * g.wo..(c + 1) * g.ho * g.wo];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let mut acc = T::zero();
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            acc += plane[iy as usize * g.w + ix as usize] * ker[ky * g.kw + kx];
                        }
                    }
                }
                o[oy * g.wo + ox] = acc;
            }
        }
    }
    out
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    dout: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
) {
    for c in 0..g.c_in {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let go = dout[(c * g.ho + oy) * g.wo + ox];
                if go == T::zero() {
                    continue;
                }
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        let xi = (c * g.h + iy as usize) * g.w + ix as usize;
                        let ki = (c * g.kh + ky) * g.kw + kx;
                        if let Some(dk) = dk.as_deref_mut() {
                            dk[ki] += go * x[xi];
                        }
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[xi] += go * k[ki];
                        }
                    }
                }
            }
        }
    }
}

/// Plain (non-recording) 2-D convolution.
///
/// `kernel` is `[C_out, C_in, kH, kW]`, or `[C, 1, kH, kW]` when `depthwise`.
/// Output spatial size is `floor((H + 2*padding - kH) / stride) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    depthwise: bool,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), stride, padding, depthwise)?;
    let out = if depthwise {
        depthwise_forward(input.data(), kernel.data(), &g)
    } else {
        conv2d_forward(input.data(), kernel.data(), &g)
    };
    Tensor::new([g.c_out, g.ho, g.wo], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (ci, h, w) = x.dims3("t").unwrap();
        let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros([co, ho, wo]);
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    s += x.at3(c, iy as usize, ix as usize)
                                        * k.data()[((o * ci + c) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out.data_mut()[(o * ho + oy) * wo + ox] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::from_fn([1, 5, 7], |i| i as f64 * 0.3 - 2.0);
        let k = Tensor::full([1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, 1, 0, false).unwrap(), x);
    }

    #[test]
    fn shape_formula() {
        let x = Tensor::<f64>::zeros([1, 8, 8]);
        let k = Tensor::zeros([1, 1, 3, 3]);
        assert_eq!(conv2d(&x, &k, 1, 1, false).unwrap().shape(), &[1, 8, 8]);
        assert_eq!(conv2d(&x, &k, 2, 1, false).unwrap().shape(), &[1, 4, 4]);
    }

    #[test]
    fn sobel_on_step_edge() {
        let c = 2.5;
        let x = Tensor::from_fn([1, 6, 8], |i| if i % 8 >= 4 { c } else { 0.0 });
        let k = Tensor::new([1, 1, 3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &k, 1, 0, false).unwrap();
        // valid output column j covers input columns j..j+2; the 0|c boundary
        // sits between input columns 3 and 4
        for r in 0..4 {
            assert_eq!(y.at3(0, r, 2), 4.0 * c);
            assert_eq!(y.at3(0, r, 1), 0.0);
            assert_eq!(y.at3(0, r, 4), 0.0);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(ci, co, h, w, k, s, p) in &[
            (4usize, 3usize, 16usize, 16usize, 3usize, 1usize, 1usize),
            (2, 5, 9, 13, 3, 2, 1),
            (3, 2, 8, 8, 1, 1, 0),
            (1, 4, 7, 6, 5, 2, 2),
        ] {
            let x = Tensor::from_fn([ci, h, w], |_| rng.random_range(-1.0..1.0));
            let kt = Tensor::from_fn([co, ci, k, k], |_| rng.random_range(-1.0..1.0));
            let fast = conv2d(&x, &kt, s, p, false).unwrap();
            let slow = brute(&x, &kt, s, p);
            assert!(fast.max_abs_diff(&slow) < 1e-10);
        }
    }

    #[test]
    fn depthwise_matches_per_channel_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn([3, 7, 9], |_| rng.random_range(-1.0..1.0));
        let k = Tensor::from_fn([3, 1, 3, 3], |_| rng.random_range(-1.0..1.0));
        let y = conv2d(&x, &k, 1, 1, true).unwrap();
        for c in 0..3 {
            let xc = Tensor::new([1, 7, 9], x.data()[c * 63..(c + 1) * 63].to_vec()).unwrap();
            let kc = Tensor::new([1, 1, 3, 3], k.data()[c * 9..(c + 1) * 9].to_vec()).unwrap();
            let yc = brute(&xc, &kc, 1, 1);
            let got = Tensor::new([1, 7, 9], y.data()[c * 63..(c + 1) * 63].to_vec()).unwrap();
            assert!(got.max_abs_diff(&yc) < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros([2, 4, 4]);
        assert!(matches!(
            conv2d(&x, &Tensor::zeros([1, 3, 3, 3]), 1, 1, false),
            Err(TensorError::Shape { .. })
        ));
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 7, 7]), 1, 1, false).is_err());
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 3, 3]), 0, 1, false).is_err());
        assert!(conv2d(&x.clone(), &Tensor::zeros([2, 2, 3, 3]), 1, 1, true).is_err());
    }
}
