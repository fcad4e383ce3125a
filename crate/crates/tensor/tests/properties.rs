use gwtrack_tensor::{conv2d, fft2, group_norm, ifft2, Tensor};
use proptest::prelude::*;

fn brute_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let (ci, h, w) = x.dims3("brute").unwrap();
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
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
                                s += x.at3(c, iy as usize, ix as usize) * k.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_nested_loops(
        (x, k, stride, pad) in (1usize..=4, 1usize..=3, 3usize..=16, 3usize..=16, 1usize..=2, 0usize..=1)
            .prop_flat_map(|(ci, co, h, w, stride, pad)| {
                (tensor(vec![ci, h, w]), tensor(vec![co, ci, 3, 3]), Just(stride), Just(pad))
            })
    ) {
        let fast = conv2d(&x, &k, stride, pad, false).unwrap();
        let slow = brute_conv(&x, &k, stride, pad);
        for (a, b) in fast.data().iter().zip(&slow) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fft_round_trip(x in (1usize..=12, 1usize..=12).prop_flat_map(|(h, w)| tensor(vec![h, w]))) {
        let y = ifft2(&fft2(&x).unwrap()).unwrap();
        prop_assert!(x.max_abs_diff(&y) < 1e-9);
    }

    #[test]
    fn group_norm_moments(
        (x, groups) in (1usize..=4, 1usize..=4, 1usize..=5, 1usize..=5)
            .prop_flat_map(|(g, cpg, h, w)| (tensor(vec![g * cpg, h, w]), Just(g)))
    ) {
        let c = x.shape()[0];
        let y = group_norm(&x, groups, &Tensor::full([c], 1.0), &Tensor::zeros([c]), 1e-12).unwrap();
        let gsize = y.len() / groups;
        for (gi, chunk) in y.data().chunks(gsize).enumerate() {
            let xs = &x.data()[gi * gsize..(gi + 1) * gsize];
            let xm = xs.iter().sum::<f64>() / gsize as f64;
            let xv = xs.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / gsize as f64;
            let m = chunk.iter().sum::<f64>() / gsize as f64;
            let v = chunk.iter().map(|a| (a - m).powi(2)).sum::<f64>() / gsize as f64;
            prop_assert!(m.abs() < 1e-7);
            // a group with (numerically) no spread normalizes to all zeros
            if xv > 1e-9 {
                prop_assert!((v - 1.0).abs() < 1e-6);
            }
        }
    }
}
