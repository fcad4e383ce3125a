use crate::error::{CoreError, Result};

/// Number of backbone stages (pyramid levels).
pub const LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub channels: [usize; LEVELS],
    pub strides: [usize; LEVELS],
    /// Common channel dimension after adjustment.
    pub c: usize,
    pub template_size: usize,
    pub search_size: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { channels: [16, 32, 64, 64], strides: [2, 2, 2, 1], c: 64, template_size: 64, search_size: 128 }
    }
}

impl BackboneConfig {
    /// Total downsampling factor from patch pixels to feature cells.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Spatial side of each level for a square input of side `size`.
    pub fn level_sizes(&self, size: usize) -> [usize; LEVELS] {
        let mut out = [0; LEVELS];
        let mut s = size;
        for (o, &st) in out.iter_mut().zip(&self.strides) {
            // 3x3 kernel, padding 1
            s = (s + 2 - 3) / st + 1;
            *o = s;
        }
        out
    }

    /// Level whose resolution the fused map uses (the coarsest but one).
    pub fn fuse_level(&self) -> usize {
        LEVELS - 2
    }

    pub fn fused_size(&self, size: usize) -> usize {
        self.level_sizes(size)[self.fuse_level()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.c == 0 {
            return Err(CoreError::Config("channel counts must be positive".into()));
        }
        if self.strides.contains(&0) {
            return Err(CoreError::Config("strides must be positive".into()));
        }
        if self.template_size >= self.search_size {
            return Err(CoreError::Config("search size must exceed template size".into()));
        }
        let s = self.total_stride();
        if self.template_size % s != 0 || self.search_size % s != 0 {
            return Err(CoreError::Config(format!("patch sizes must be multiples of the total stride {}", s)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub heads: usize,
    pub enc_blocks: usize,
    pub ffn_dim: usize,
    /// Number of directional edge kernels.
    pub edge_k: usize,
    pub use_dean: bool,
    /// Correlation regularizer relative to the template's mean spectral power.
    pub eps_rel: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            heads: 4,
            enc_blocks: 1,
            ffn_dim: 128,
            edge_k: 4,
            use_dean: true,
            eps_rel: 1e-2,
        }
    }
}

impl ModelConfig {
    pub fn c(&self) -> usize {
        self.backbone.c
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.heads == 0 || self.c() % self.heads != 0 {
            return Err(CoreError::Config(format!("{} heads do not divide C = {}", self.heads, self.c())));
        }
        if self.edge_k < 2 {
            return Err(CoreError::Config("at least two edge orientations are required".into()));
        }
        if !(self.eps_rel > 0.0) {
            return Err(CoreError::Config("correlation eps must be positive".into()));
        }
        Ok(())
    }

    /// Architecture description stored in checkpoints.
    pub fn to_meta(&self) -> Vec<(&'static str, f64)> {
        let b = &self.backbone;
        let mut v = vec![
            ("meta.c", b.c as f64),
            ("meta.template_size", b.template_size as f64),
            ("meta.search_size", b.search_size as f64),
            ("meta.heads", self.heads as f64),
            ("meta.enc_blocks", self.enc_blocks as f64),
            ("meta.ffn_dim", self.ffn_dim as f64),
            ("meta.edge_k", self.edge_k as f64),
            ("meta.use_dean", if self.use_dean { 1.0 } else { 0.0 }),
            ("meta.eps_rel", self.eps_rel),
        ];
        const CH: [&str; LEVELS] = ["meta.channels0", "meta.channels1", "meta.channels2", "meta.channels3"];
        const ST: [&str; LEVELS] = ["meta.strides0", "meta.strides1", "meta.strides2", "meta.strides3"];
        for i in 0..LEVELS {
            v.push((CH[i], b.channels[i] as f64));
            v.push((ST[i], b.strides[i] as f64));
        }
        v
    }

    pub fn from_meta(get: impl Fn(&str) -> Option<f64>) -> Result<Self> {
        let need = |k: &str| get(k).ok_or_else(|| CoreError::Architecture(format!("missing {}", k)));
        let int = |k: &str| -> Result<usize> {
            let v = need(k)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(CoreError::Architecture(format!("{} = {} is not a count", k, v)));
            }
            Ok(v as usize)
        };
        let mut b = BackboneConfig {
            c: int("meta.c")?,
            template_size: int("meta.template_size")?,
            search_size: int("meta.search_size")?,
            ..BackboneConfig::default()
        };
        for i in 0..LEVELS {
            b.channels[i] = int(&format!("meta.channels{}", i))?;
            b.strides[i] = int(&format!("meta.strides{}", i))?;
        }
        let cfg = ModelConfig {
            backbone: b,
            heads: int("meta.heads")?,
            enc_blocks: int("meta.enc_blocks")?,
            ffn_dim: int("meta.ffn_dim")?,
            edge_k: int("meta.edge_k")?,
            use_dean: need("meta.use_dean")? != 0.0,
            eps_rel: need("meta.eps_rel")?,
        };
        cfg.validate().map_err(|e| CoreError::Architecture(e.to_string()))?;
        Ok(cfg)
    }
}
