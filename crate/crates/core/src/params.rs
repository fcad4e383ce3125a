//! Parameter naming, initialization and binding to a tape.

use std::collections::HashMap;

use gwtrack_tensor::{Gradients, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ModelConfig, LEVELS};
use crate::error::{CoreError, Result};

/// Initial bias of the regression outputs, in feature cells.
pub const REG_BIAS_INIT: f64 = 1.5;

/// Names of parameters bound to tape variables.
#[derive(Clone, Debug, Default)]
pub struct Params {
    vars: HashMap<String, Var>,
}

impl Params {
    /// Binds every non-`meta.` entry of `store`; trainable entries become
    /// tape parameters, others constants.
    pub fn bind<T: Scalar>(tape: &Tape<T>, store: &ParamStore<T>, trainable: bool) -> Self {
        let vars = store
            .iter()
            .filter(|(n, _)| !n.starts_with("meta."))
            .map(|(n, t)| (n.clone(), if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) }))
            .collect();
        Params { vars }
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, Var)>) -> Self {
        Params { vars: pairs.into_iter().map(|(n, v)| (n.to_string(), v)).collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| CoreError::MissingParam(name.to_string()))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradients laid out like `store`; entries without a gradient are zero.
    pub fn collect_grads<T: Scalar>(&self, grads: &mut Gradients<T>, store: &ParamStore<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in store.iter() {
            if name.starts_with("meta.") {
                continue;
            }
            let g = self.vars.get(name).and_then(|&v| grads.take(v)).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
            out.insert(name.clone(), g);
        }
        out
    }
}

/// Sobel-derived 3x3 kernels at `k` orientations spread over 180 degrees.
/// Multiples of 45 degrees rotate the outer ring of the Sobel-x kernel
/// exactly; other angles steer between Sobel-x and Sobel-y.
pub fn sobel_bank(k: usize) -> Tensor<f64> {
    const RING: [(usize, usize); 8] = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)];
    const SX: [f64; 8] = [-1.0, 0.0, 1.0, 2.0, 1.0, 0.0, -1.0, -2.0];
    let mut data = vec![0.0; k * 9];
    for i in 0..k {
        let deg = 180.0 * i as f64 / k as f64;
        let kern = &mut data[i * 9..(i + 1) * 9];
        if (deg / 45.0).fract() == 0.0 {
            let shift = (deg / 45.0) as usize;
            for (j, &(r, c)) in RING.iter().enumerate() {
                kern[r * 3 + c] = SX[(j + 8 - shift) % 8];
            }
        } else {
            let (s, c) = deg.to_radians().sin_cos();
            let sx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
            let sy = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
            for j in 0..9 {
                kern[j] = c * sx[j] + s * sy[j];
            }
        }
    }
    Tensor::new([k, 3, 3], data).expect("bank shape")
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Normal samples rounded through f32 so f32 and f64 models start from
    /// the same values.
    fn normal(&mut self, shape: &[usize], std: f64) -> Tensor<f64> {
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape.to_vec(), |_| dist.sample(&mut self.rng) as f32 as f64)
    }

    fn conv(&mut self, co: usize, ci: usize, k: usize) -> Tensor<f64> {
        self.normal(&[co, ci, k, k], (2.0 / (ci * k * k) as f64).sqrt())
    }
}

fn gn(store: &mut ParamStore, prefix: &str, c: usize) {
    store.insert(format!("{}.gn_g", prefix), Tensor::full([c], 1.0));
    store.insert(format!("{}.gn_b", prefix), Tensor::zeros([c]));
}

/// Fresh parameters for `cfg`. Conv weights use fan-in (He) scaling, the
/// edge bank starts from Sobel kernels, biases start at zero except the
/// regression bias.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
    let mut p = ParamStore::new();
    let b = &cfg.backbone;
    let c = b.c;

    let mut ci = 1;
    for s in 0..LEVELS {
        let co = b.channels[s];
        for j in 0..2 {
            let name = format!("backbone.s{}.c{}", s, j);
            p.insert(format!("{}.w", name), init.conv(co, if j == 0 { ci } else { co }, 3));
            gn(&mut p, &name, co);
        }
        ci = co;
    }
    for (l, &cl) in b.channels.iter().enumerate() {
        p.insert(format!("adjust.l{}.w", l), init.conv(c, cl, 1));
        p.insert(format!("adjust.l{}.b", l), Tensor::zeros([c]));
    }

    let dh = c / cfg.heads;
    for blk in 0..cfg.enc_blocks {
        for h in 0..cfg.heads {
            for m in ["wq", "wk", "wv"] {
                p.insert(format!("enc.b{}.h{}.{}", blk, h, m), init.normal(&[c, dh], (1.0 / c as f64).sqrt()));
            }
            p.insert(format!("enc.b{}.h{}.wo", blk, h), init.normal(&[dh, c], (1.0 / c as f64).sqrt()));
        }
        p.insert(format!("enc.b{}.bo", blk), Tensor::zeros([c]));
        p.insert(format!("enc.b{}.w1", blk), init.normal(&[c, cfg.ffn_dim], (2.0 / c as f64).sqrt()));
        p.insert(format!("enc.b{}.b1", blk), Tensor::zeros([cfg.ffn_dim]));
        p.insert(format!("enc.b{}.w2", blk), init.normal(&[cfg.ffn_dim, c], (1.0 / cfg.ffn_dim as f64).sqrt() * 0.5));
        p.insert(format!("enc.b{}.b2", blk), Tensor::zeros([c]));
    }

    gn(&mut p, "enc.norm", c);

    if cfg.use_dean {
        p.insert("dean.bank", sobel_bank(cfg.edge_k));
        p.insert("dean.wc", init.normal(&[c, 2 * c], (1.0 / (2 * c) as f64).sqrt()));
        p.insert("dean.bc", Tensor::zeros([c]));
        p.insert("dean.ws", init.normal(&[1, 2 * c, 3, 3], (1.0 / (18 * c) as f64).sqrt()));
        p.insert("dean.bs", Tensor::zeros([1]));
    }

    p.insert("head.fuse.w", init.conv(c, 2 * c, 1));
    gn(&mut p, "head.fuse", c);
    p.insert("head.tower.w", init.conv(c, c, 3));
    gn(&mut p, "head.tower", c);
    p.insert("head.out.w", init.normal(&[6, c, 3, 3], 0.01));
    let mut bias = vec![0.0; 6];
    bias[2..].iter_mut().for_each(|v| *v = REG_BIAS_INIT);
    p.insert("head.out.b", Tensor::new([6], bias)?);
    Ok(p)
}

/// Adds the architecture description as `meta.*` scalars.
pub fn with_meta(mut store: ParamStore, cfg: &ModelConfig) -> ParamStore {
    for (k, v) in cfg.to_meta() {
        store.insert(k, Tensor::scalar(v));
    }
    store
}

/// Splits a checkpoint into its architecture and plain parameters, checking
/// that the parameter layout matches a fresh model of that architecture.
pub fn split_meta(store: &ParamStore) -> Result<(ModelConfig, ParamStore)> {
    let cfg = ModelConfig::from_meta(|k| store.get(k).filter(|t| t.len() == 1).map(|t| t.data()[0]))?;
    let mut params = ParamStore::new();
    for (n, t) in store.iter() {
        if !n.starts_with("meta.") {
            params.insert(n.clone(), t.clone());
        }
    }
    let reference = init_params(&cfg, 0)?;
    params.check_layout(&reference).map_err(|e| CoreError::Architecture(e.to_string()))?;
    Ok((cfg, params))
}
