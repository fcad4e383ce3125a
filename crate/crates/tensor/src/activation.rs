use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softmax_forward<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let mx = (0..n).map(|k| x[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..n {
                let e = (x[idx(k)] - mx).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[idx(k)] /= z;
            }
        }
    }
    out
}

pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(TensorError::invalid("softmax", format!("axis {} out of range for {:?}", axis, x.shape())));
    }
    let (outer, n, inner) = axis_split(x.shape(), axis);
    Tensor::new(x.shape().to_vec(), softmax_forward(x.data(), outer, n, inner))
}

/// Spatial mean per channel: `[C,H,W] -> [C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3("global_avg_pool")?;
    let hw = h * w;
    let n = T::lit(hw as f64);
    Tensor::new([c], x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() / n).collect())
}

/// Returns the pooled map and, per output cell, the flat input index of the
/// maximum (first maximum on ties).
pub(crate) fn max_pool_forward<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = x.dims3("max_pool")?;
    if k == 0 || stride == 0 || k > h || k > w {
        return Err(TensorError::invalid("max_pool", format!("window {} stride {} on {}x{}", k, stride, h, w)));
    }
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = usize::MAX;
                let mut bv = T::neg_infinity();
                for ky in 0..k {
                    for kx in 0..k {
                        let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if best == usize::MAX || x.data()[i] > bv {
                            best = i;
                            bv = x.data()[i];
                        }
                    }
                }
                out.push(bv);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new([c, ho, wo], out)?, arg))
}

pub fn max_pool<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    max_pool_forward(x, k, stride).map(|(t, _)| t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(-800.0f64) >= 0.0 && sigmoid_scalar(800.0f64) <= 1.0);
    }

    #[test]
    fn leaky_relu_definition() {
        let x = Tensor::new([4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let y = leaky_relu(&x, 0.1);
        assert_eq!(y.data(), &[-0.2, -0.05, 0.0, 3.0]);
    }

    #[test]
    fn softmax_sums_to_one_on_each_axis() {
        let x = Tensor::from_fn([3, 4, 5], |i| ((i * 37) % 11) as f64 - 5.0);
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            let (outer, n, inner) = axis_split(x.shape(), axis);
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..n).map(|k| y.data()[(o * n + k) * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(softmax(&x, 3).is_err());
    }

    #[test]
    fn gap_of_constant_channel() {
        let mut x = Tensor::full([2, 3, 3], 4.0);
        x.data_mut()[9..].iter_mut().for_each(|v| *v = -1.5);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[4.0, -1.5]);
    }

    #[test]
    fn max_pool_picks_window_max() {
        let x = Tensor::from_fn([1, 4, 4], |i| i as f64);
        let y = max_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }
}
