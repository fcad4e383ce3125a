use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_GN_EPS: f64 = 1e-5;

pub(crate) struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub(crate) fn check_group_norm<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.dims3("group_norm")?;
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::invalid(
            "group_norm",
            format!("{} channels not divisible into {} groups", c, groups),
        ));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape(
            "group_norm",
            format!("gamma/beta must be [{}], got {:?}/{:?}", c, gamma.shape(), beta.shape()),
        ));
    }
    Ok((c, h, w))
}

pub(crate) fn group_norm_forward<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, GroupStats<T>) {
    let (c, h, w) = dims;
    let cpg = c / groups;
    let gsize = cpg * h * w;
    let n = T::lit(gsize as f64);
    let mut out = vec![T::zero(); x.len()];
    let mut stats = GroupStats { mean: Vec::with_capacity(groups), rstd: Vec::with_capacity(groups) };
    for g in 0..groups {
        let xs = &x[g * gsize..(g + 1) * gsize];
        let mean = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + eps).sqrt();
        for ci in 0..cpg {
            let ch = g * cpg + ci;
            let base = ch * h * w;
            for i in base..base + h * w {
                out[i] = (x[i] - mean) * rstd * gamma[ch] + beta[ch];
            }
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    (out, stats)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_backward<T: Scalar>(
    x: &[T],
    dims: (usize, usize, usize),
    groups: usize,
    gamma: &[T],
    stats: &GroupStats<T>,
    dy: &[T],
    dx: Option<&mut [T]>,
    dgamma: Option<&mut [T]>,
    dbeta: Option<&mut [T]>,
) {
    let (c, h, w) = dims;
    let hw = h * w;
    let cpg = c / groups;
    let gsize = cpg * hw;
    let n = T::lit(gsize as f64);
    if let Some(dgamma) = dgamma {
        for ch in 0..c {
            let g = ch / cpg;
            let (m, r) = (stats.mean[g], stats.rstd[g]);
            let mut s = T::zero();
            for i in ch * hw..(ch + 1) * hw {
                s += dy[i] * (x[i] - m) * r;
            }
            dgamma[ch] += s;
        }
    }
    if let Some(dbeta) = dbeta {
        for ch in 0..c {
            dbeta[ch] += dy[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
        }
    }
    if let Some(dx) = dx {
        for g in 0..groups {
            let (m, r) = (stats.mean[g], stats.rstd[g]);
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                for i in ch * hw..(ch + 1) * hw {
                    let d = dy[i] * gamma[ch];
                    sum_d += d;
                    sum_dx += d * (x[i] - m) * r;
                }
            }
            let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
            for ci in 0..cpg {
                let ch = g * cpg + ci;
                for i in ch * hw..(ch + 1) * hw {
                    let xhat = (x[i] - m) * r;
                    dx[i] += r * (dy[i] * gamma[ch] - mean_d - xhat * mean_dx);
                }
            }
        }
    }
}

/// Group normalization over a `[C,H,W]` map with per-channel affine terms.
pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let dims = check_group_norm(x, groups, gamma, beta)?;
    let (out, _) = group_norm_forward(x.data(), dims, groups, gamma.data(), beta.data(), eps);
    Tensor::new(x.shape().to_vec(), out)
}
