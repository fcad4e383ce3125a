//! Shared-weight feature extractor and multi-level channel adjustment.
//!
//! Template and search patches run through the same function with the same
//! [`Params`]; there are no branch-specific weights.

use gwtrack_tensor::{Scalar, Tape, Var, DEFAULT_GN_EPS, DEFAULT_LEAKY_SLOPE};

use crate::config::{BackboneConfig, LEVELS};
use crate::error::{CoreError, Result};
use crate::params::Params;

/// Groups used by every group normalization in the model.
pub fn gn_groups(c: usize) -> usize {
    c.min(8)
}

/// conv -> group norm -> leaky ReLU. `name` prefixes `.w`, `.gn_g`, `.gn_b`.
pub(crate) fn conv_gn_act<T: Scalar>(tape: &Tape<T>, p: &Params, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let y = tape.conv2d(x, p.get(&format!("{}.w", name))?, stride, pad)?;
    let c = tape.shape(y)[0];
    let y = tape.group_norm(
        y,
        p.get(&format!("{}.gn_g", name))?,
        p.get(&format!("{}.gn_b", name))?,
        gn_groups(c),
        T::lit(DEFAULT_GN_EPS),
    )?;
    Ok(tape.leaky_relu(y, T::lit(DEFAULT_LEAKY_SLOPE)))
}

/// Per-level feature maps, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

/// Runs the four backbone stages on a `[1, S, S]` patch, where `S` is the
/// configured template or search size.
pub fn extract_features<T: Scalar>(tape: &Tape<T>, p: &Params, cfg: &BackboneConfig, patch: Var) -> Result<FeaturePyramid> {
    let shape = tape.shape(patch);
    let ok = shape.len() == 3
        && shape[0] == 1
        && shape[1] == shape[2]
        && (shape[1] == cfg.template_size || shape[1] == cfg.search_size);
    if !ok {
        return Err(CoreError::Shape(format!(
            "patch must be [1,{t},{t}] or [1,{s},{s}], got {:?}",
            shape,
            t = cfg.template_size,
            s = cfg.search_size
        )));
    }
    let mut x = patch;
    let mut levels = Vec::with_capacity(LEVELS);
    for s in 0..LEVELS {
        x = conv_gn_act(tape, p, &format!("backbone.s{}.c0", s), x, cfg.strides[s], 1)?;
        x = conv_gn_act(tape, p, &format!("backbone.s{}.c1", s), x, 1, 1)?;
        levels.push(x);
    }
    Ok(FeaturePyramid { levels })
}

/// Projects every level to the common channel count with a 1x1 conv
/// (`adjust.l{i}`), resamples it to `size x size` and sums.
///
/// Nearest resampling commutes with a 1x1 convolution, so resampling first
/// gives the same result at lower cost.
pub fn adjust_and_fuse<T: Scalar>(tape: &Tape<T>, p: &Params, levels: &[Var], size: usize) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (l, &f) in levels.iter().enumerate() {
        let r = tape.resample_nearest(f, size, size)?;
        let y = tape.conv2d(r, p.get(&format!("adjust.l{}.w", l))?, 1, 0)?;
        let y = tape.add_channel_bias(y, p.get(&format!("adjust.l{}.b", l))?)?;
        acc = Some(match acc {
            None => y,
            Some(a) => tape.add(a, y)?,
        });
    }
    acc.ok_or_else(|| CoreError::Shape("empty pyramid".into()))
}

/// Backbone followed by fusion at the configured fusion resolution.
pub fn embed<T: Scalar>(tape: &Tape<T>, p: &Params, cfg: &BackboneConfig, patch: Var) -> Result<Var> {
    let size = tape.shape(patch)[1];
    let pyr = extract_features(tape, p, cfg, patch)?;
    adjust_and_fuse(tape, p, &pyr.levels, cfg.fused_size(size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::params::init_params;
    use gwtrack_tensor::{ParamStore, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shared_weights_identical_pyramids() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg, 1).unwrap();
        let tape = Tape::<f64>::inference();
        let p = Params::bind(&tape, &store, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rand_t(&[1, 64, 64], &mut rng);
        let a = extract_features(&tape, &p, &cfg.backbone, tape.constant(img.clone())).unwrap();
        let b = extract_features(&tape, &p, &cfg.backbone, tape.constant(img)).unwrap();
        let sizes: Vec<usize> = a.levels.iter().map(|&v| tape.shape(v)[1]).collect();
        assert_eq!(sizes, vec![32, 16, 8, 8]);
        for (&x, &y) in a.levels.iter().zip(&b.levels) {
            assert_eq!(*tape.value(x), *tape.value(y));
        }
    }

    #[test]
    fn wrong_patch_size_rejected() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg, 1).unwrap();
        let tape = Tape::<f64>::inference();
        let p = Params::bind(&tape, &store, false);
        let x = tape.constant(Tensor::zeros([1, 60, 60]));
        assert!(extract_features(&tape, &p, &cfg.backbone, x).is_err());
    }

    #[test]
    fn translation_is_approximately_covariant() {
        let cfg = ModelConfig::default();
        let store = init_params(&cfg, 5).unwrap();
        let tape = Tape::<f64>::inference();
        let p = Params::bind(&tape, &store, false);
        // smooth random image, shifted right by one stride-4 step
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blobs: Vec<(f64, f64, f64)> =
            (0..12).map(|_| (rng.random_range(0.0..80.0), rng.random_range(0.0..64.0), rng.random_range(-1.0..1.0))).collect();
        let render = |dx: f64| {
            Tensor::from_fn([1, 64, 64], |i| {
                let (y, x) = ((i / 64) as f64, (i % 64) as f64 - dx);
                blobs.iter().map(|&(bx, by, a)| a * (-((x - bx).powi(2) + (y - by).powi(2)) / 30.0).exp()).sum()
            })
        };
        let a = extract_features(&tape, &p, &cfg.backbone, tape.constant(render(0.0))).unwrap();
        let b = extract_features(&tape, &p, &cfg.backbone, tape.constant(render(4.0))).unwrap();
        let (fa, fb) = (tape.value(a.levels[1]).clone(), tape.value(b.levels[1]).clone());
        let (c, h, w) = fa.dims3("t").unwrap();
        let (mut diff, mut mag, mut n) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            for y in 2..h - 2 {
                for x in 2..w - 3 {
                    diff += (fa.at3(ch, y, x) - fb.at3(ch, y, x + 1)).abs();
                    mag += fa.at3(ch, y, x).abs();
                    n += 1.0;
                }
            }
        }
        let _ = n;
        assert!(diff < 0.1 * mag, "diff {} mag {}", diff, mag);
    }

    #[test]
    fn identity_projection_and_linearity() {
        let tape = Tape::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lvl = rand_t(&[4, 6, 6], &mut rng);
        let eye = Tensor::from_fn([4, 4, 1, 1], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        let mut store = ParamStore::new();
        store.insert("adjust.l0.w", eye);
        store.insert("adjust.l0.b", Tensor::zeros([4]));
        let p = Params::bind(&tape, &store, false);
        let l = tape.constant(lvl.clone());
        let out = adjust_and_fuse(&tape, &p, &[l], 6).unwrap();
        assert_eq!(*tape.value(out), lvl);
        let z = tape.constant(Tensor::zeros([4, 6, 6]));
        let out = adjust_and_fuse(&tape, &p, &[z], 6).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fused_equals_sum_of_projected_levels() {
        let tape = Tape::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = [(3, 16), (5, 8), (6, 4)];
        let mut store = ParamStore::new();
        let mut levels = Vec::new();
        for (l, &(c, s)) in dims.iter().enumerate() {
            store.insert(format!("adjust.l{}.w", l), rand_t(&[4, c, 1, 1], &mut rng));
            store.insert(format!("adjust.l{}.b", l), rand_t(&[4], &mut rng));
            levels.push(rand_t(&[c, s, s], &mut rng));
        }
        let p = Params::bind(&tape, &store, false);
        let vars: Vec<Var> = levels.iter().map(|t| tape.constant(t.clone())).collect();
        let out = tape.value(adjust_and_fuse(&tape, &p, &vars, 8).unwrap()).clone();
        // independent oracle: project at native resolution, then pick nearest
        let mut want = Tensor::<f64>::zeros([4, 8, 8]);
        for (l, &(c, s)) in dims.iter().enumerate() {
            let w = store.get(&format!("adjust.l{}.w", l)).unwrap();
            let b = store.get(&format!("adjust.l{}.b", l)).unwrap();
            for o in 0..4 {
                for y in 0..8 {
                    for x in 0..8 {
                        let (sy, sx) = (y * s / 8, x * s / 8);
                        let mut v = b.data()[o];
                        for i in 0..c {
                            v += w.data()[o * c + i] * levels[l].at3(i, sy, sx);
                        }
                        want.data_mut()[(o * 8 + y) * 8 + x] += v;
                    }
                }
            }
        }
        assert!(out.max_abs_diff(&want) < 1e-10);
    }
}
