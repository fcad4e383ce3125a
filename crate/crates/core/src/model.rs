//! End-to-end forward pass and an inference wrapper around a checkpoint.

use gwtrack_tensor::{ParamStore, Scalar, Tape, Tensor, Var, DEFAULT_GN_EPS};

use crate::attention::encode_fused;
use crate::backbone::{embed, gn_groups};
use crate::config::ModelConfig;
use crate::correlator::xcorr_channels;
use crate::dean::dean;
use crate::error::{CoreError, Result};
use crate::heads::{predict_heads, refine, HeadOutputs, HeadVars};
use crate::params::{init_params, split_meta, with_meta, Params};

/// Group norm shared by both encoder outputs. Residual growth through the
/// encoder would otherwise saturate the edge-attention gates.
fn encoder_norm<T: Scalar>(tape: &Tape<T>, p: &Params, m: Var) -> Result<Var> {
    let c = tape.shape(m)[0];
    Ok(tape.group_norm(m, p.get("enc.norm.gn_g")?, p.get("enc.norm.gn_b")?, gn_groups(c), T::lit(DEFAULT_GN_EPS))?)
}

/// Forward pass from backbone template features `fz` (`[C,hz,wz]`) and a
/// standardized search patch (`[1,S,S]`).
///
/// The correlation response is rolled by half the template size so that
/// cell `j` scores the template centred on search cell `j`.
pub fn forward_from_template<T: Scalar>(tape: &Tape<T>, p: &Params, cfg: &ModelConfig, fz: Var, search: Var) -> Result<HeadVars> {
    let fx = embed(tape, p, &cfg.backbone, search)?;
    let (z, x) = encode_fused(tape, p, cfg, fz, fx)?;
    let (mut z, mut x) = (encoder_norm(tape, p, z)?, encoder_norm(tape, p, x)?);
    if cfg.use_dean {
        z = dean(tape, p, z)?;
        x = dean(tape, p, x)?;
    }
    let zs = tape.shape(z);
    let r = xcorr_channels(tape, z, x, cfg.eps_rel)?;
    let r = tape.roll(r, zs[1] / 2, zs[2] / 2)?;
    let feat = refine(tape, p, r, x)?;
    predict_heads(tape, p, feat)
}

/// Forward pass from a standardized template patch and search patch.
pub fn forward<T: Scalar>(tape: &Tape<T>, p: &Params, cfg: &ModelConfig, template: Var, search: Var) -> Result<HeadVars> {
    let fz = embed(tape, p, &cfg.backbone, template)?;
    forward_from_template(tape, p, cfg, fz, search)
}

/// A model ready for inference in single precision.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    params: ParamStore<f32>,
}

impl Model {
    pub fn new(cfg: ModelConfig, params: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let reference = init_params(&cfg, 0)?;
        params.check_layout(&reference).map_err(|e| CoreError::Architecture(e.to_string()))?;
        Ok(Model { cfg, params: params.cast() })
    }

    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&cfg, seed)?;
        Model::new(cfg, &params)
    }

    /// Builds a model from a checkpoint carrying its architecture.
    pub fn from_checkpoint(store: &ParamStore) -> Result<Self> {
        let (cfg, params) = split_meta(store)?;
        Model::new(cfg, &params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let store = ParamStore::load(path).map_err(CoreError::Checkpoint)?;
        Model::from_checkpoint(&store)
    }

    /// Parameters in double precision with architecture metadata.
    pub fn to_checkpoint(&self) -> ParamStore {
        with_meta(self.params.cast(), &self.cfg)
    }

    /// Backbone features of a standardized template patch.
    pub fn template_features(&self, template: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::<f32>::inference();
        let p = Params::bind(&tape, &self.params, false);
        let t = tape.constant(template.clone());
        let fz = embed(&tape, &p, &self.cfg.backbone, t)?;
        let out = tape.value(fz).clone();
        Ok(out)
    }

    /// Head outputs for cached template features and a standardized search
    /// patch.
    pub fn predict(&self, fz: &Tensor<f32>, search: &Tensor<f32>) -> Result<HeadOutputs> {
        let tape = Tape::<f32>::inference();
        let p = Params::bind(&tape, &self.params, false);
        let (z, x) = (tape.constant(fz.clone()), tape.constant(search.clone()));
        let h = forward_from_template(&tape, &p, &self.cfg, z, x)?;
        HeadOutputs::from_tape(&tape, &h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patch(s: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([1, s, s], |_| rng.random_range(-1.0f32..1.0))
    }

    #[test]
    fn output_grid_matches_search_features() {
        let m = Model::init(ModelConfig::default(), 1).unwrap();
        let fz = m.template_features(&patch(64, 1)).unwrap();
        assert_eq!(fz.shape(), &[64, 8, 8]);
        let out = m.predict(&fz, &patch(128, 2)).unwrap();
        assert_eq!(out.dims(), (16, 16));
        assert_eq!(out.reg.shape(), &[4, 16, 16]);
        assert!(out.reg.is_finite() && out.cls.is_finite());
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Model::init(ModelConfig::default(), 5).unwrap();
        let fz = m.template_features(&patch(64, 3)).unwrap();
        let a = m.predict(&fz, &patch(128, 4)).unwrap();
        let b = m.predict(&fz, &patch(128, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = ModelConfig::default();
        cfg.use_dean = false;
        let m = Model::init(cfg.clone(), 9).unwrap();
        let bytes = m.to_checkpoint().to_bytes();
        let back = Model::from_checkpoint(&ParamStore::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.cfg, cfg);
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let with = init_params(&ModelConfig::default(), 0).unwrap();
        let mut cfg = ModelConfig::default();
        cfg.use_dean = false;
        assert!(matches!(Model::new(cfg, &with), Err(CoreError::Architecture(_))));
    }
}
