use alloc::string::String;

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Regression,
    Classification(usize),
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Regression => 1,
            HeadKind::Classification(k) => k,
        }
    }
}

/// Encoder hyperparameters and input geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SiTConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub mlp_dim: usize,
    pub num_patches: usize,
    pub vertices_per_patch: usize,
    pub channels: usize,
    pub dropout_embed: f64,
    pub dropout_attn: f64,
    pub dropout_ffn: f64,
    pub head: HeadKind,
    /// Masked-patch-prediction decoder and mask token.
    pub mpp_head: bool,
    /// Confound embedding (batch-normalized scalar → D).
    pub deconfounder: bool,
    pub layer_norm_eps: f64,
}

/// Built-in profile names accepted by [`SiTConfig::profile`].
pub const PROFILES: [&str; 4] = ["sit-tiny-ico", "sit-small-ico", "sit-tiny-quad", "sit-tiny-hcp"];

impl SiTConfig {
    /// SiT-Tiny on icosphere patches: L=12, h=3, D=192, MLP 768, 320 patches
    /// of 153 vertices.
    pub fn tiny_ico(channels: usize) -> Self {
        SiTConfig {
            layers: 12,
            heads: 3,
            dim: 192,
            mlp_dim: 768,
            num_patches: 320,
            vertices_per_patch: 153,
            channels,
            dropout_embed: 0.0,
            dropout_attn: 0.0,
            dropout_ffn: 0.0,
            head: HeadKind::Regression,
            mpp_head: false,
            deconfounder: false,
            layer_norm_eps: 1e-6,
        }
    }

    /// SiT-Small: h=6, D=384, MLP 1536.
    pub fn small_ico(channels: usize) -> Self {
        SiTConfig { heads: 6, dim: 384, mlp_dim: 1536, ..Self::tiny_ico(channels) }
    }

    /// SiT-Tiny on 177 paired cardiac patches of 50 vertices with four
    /// displacement/thickness channels, binary classification.
    pub fn tiny_quad() -> Self {
        SiTConfig { num_patches: 177, vertices_per_patch: 50, head: HeadKind::Classification(2), ..Self::tiny_ico(4) }
    }

    /// SiT-Tiny for 115-channel cortical data with the heavy regularization
    /// of the fluid-intelligence task.
    pub fn tiny_hcp() -> Self {
        SiTConfig { dropout_embed: 0.5, dropout_ffn: 0.3, ..Self::tiny_ico(115) }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "sit-tiny-ico" => Ok(Self::tiny_ico(4)),
            "sit-small-ico" => Ok(Self::small_ico(4)),
            "sit-tiny-quad" => Ok(Self::tiny_quad()),
            "sit-tiny-hcp" => Ok(Self::tiny_hcp()),
            _ => bail!(Config, "unknown profile {:?}; known profiles: {}", name, PROFILES.join(", ")),
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.vertices_per_patch * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.num_patches + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("dim", self.dim),
            ("mlp_dim", self.mlp_dim),
            ("num_patches", self.num_patches),
            ("vertices_per_patch", self.vertices_per_patch),
            ("channels", self.channels),
            ("head outputs", self.head.outputs()),
        ];
        for (name, v) in dims {
            if v == 0 {
                bail!(Config, "{} must be positive", name);
            }
        }
        if self.dim % self.heads != 0 {
            bail!(Config, "hidden size {} is not divisible by {} heads", self.dim, self.heads);
        }
        for (name, r) in [("dropout_embed", self.dropout_embed), ("dropout_attn", self.dropout_attn), ("dropout_ffn", self.dropout_ffn)]
        {
            if !(0.0..1.0).contains(&r) {
                bail!(Config, "{} = {} outside [0, 1)", name, r);
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            bail!(Config, "layer_norm_eps must be positive");
        }
        Ok(())
    }

    /// Exact number of learnable scalars the config instantiates.
    pub fn parameter_count(&self) -> usize {
        let d = self.dim;
        let embed = self.patch_dim() * d + d;
        let token = d;
        let pos = self.seq_len() * d;
        let per_layer = 2 * d + 4 * d * d + 2 * d + (d * self.mlp_dim + self.mlp_dim) + (self.mlp_dim * d + d);
        let final_ln = 2 * d;
        let k = self.head.outputs();
        let head = d * k + k;
        let mpp = if self.mpp_head { d * self.patch_dim() + self.patch_dim() + d } else { 0 };
        let deconf = if self.deconfounder { 2 * d } else { 0 };
        embed + token + pos + self.layers * per_layer + final_ln + head + mpp + deconf
    }

    /// `key = value` lines for every field, in a fixed order.
    pub fn to_pairs(&self) -> alloc::vec::Vec<(&'static str, String)> {
        use alloc::format;
        let head = match self.head {
            HeadKind::Regression => String::from("regression"),
            HeadKind::Classification(k) => format!("classification:{k}"),
        };
        alloc::vec![
            ("layers", format!("{}", self.layers)),
            ("heads", format!("{}", self.heads)),
            ("dim", format!("{}", self.dim)),
            ("mlp_dim", format!("{}", self.mlp_dim)),
            ("num_patches", format!("{}", self.num_patches)),
            ("vertices_per_patch", format!("{}", self.vertices_per_patch)),
            ("channels", format!("{}", self.channels)),
            ("dropout_embed", format!("{}", self.dropout_embed)),
            ("dropout_attn", format!("{}", self.dropout_attn)),
            ("dropout_ffn", format!("{}", self.dropout_ffn)),
            ("head", head),
            ("mpp_head", format!("{}", self.mpp_head)),
            ("deconfounder", format!("{}", self.deconfounder)),
            ("layer_norm_eps", format!("{}", self.layer_norm_eps)),
        ]
    }

    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: core::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| crate::Error::Config(alloc::format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "mlp_dim" => self.mlp_dim = num(key, value)?,
            "num_patches" => self.num_patches = num(key, value)?,
            "vertices_per_patch" => self.vertices_per_patch = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "dropout_embed" => self.dropout_embed = num(key, value)?,
            "dropout_attn" => self.dropout_attn = num(key, value)?,
            "dropout_ffn" => self.dropout_ffn = num(key, value)?,
            "mpp_head" => self.mpp_head = num(key, value)?,
            "deconfounder" => self.deconfounder = num(key, value)?,
            "layer_norm_eps" => self.layer_norm_eps = num(key, value)?,
            "head" => {
                self.head = match value.trim() {
                    "regression" => HeadKind::Regression,
                    other => match other.strip_prefix("classification:") {
                        Some(k) => HeadKind::Classification(num(key, k)?),
                        None => bail!(Config, "head: expected regression or classification:<k>, got {:?}", other),
                    },
                }
            }
            _ => bail!(Config, "unknown model setting {:?}", key),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within(count: usize, target: f64) -> bool {
        (count as f64 - target).abs() <= 0.02 * target
    }

    #[test]
    fn table_one_counts() {
        assert_eq!(SiTConfig::tiny_ico(4).parameter_count(), 5_509_249);
        assert_eq!(SiTConfig::small_ico(4).parameter_count(), 21_635_329);
        assert_eq!(SiTConfig::tiny_ico(115).parameter_count(), 8_769_985);
        assert!(within(SiTConfig::tiny_ico(4).parameter_count(), 5.5e6));
        assert!(within(SiTConfig::small_ico(4).parameter_count(), 21.6e6));
        assert!(within(SiTConfig::tiny_ico(115).parameter_count(), 8.6e6));
    }

    #[test]
    fn tiny_mlp_is_four_times_width() {
        let c = SiTConfig::tiny_ico(4);
        assert_eq!(c.mlp_dim, 4 * c.dim);
        assert_eq!(c.patch_dim(), 612);
        assert_eq!(c.head_dim(), 64);
    }

    #[test]
    fn validation() {
        let mut c = SiTConfig::tiny_ico(4);
        c.heads = 5;
        assert!(c.validate().is_err());
        assert!(SiTConfig::tiny_hcp().validate().is_ok());
        assert!(SiTConfig::profile("nope").is_err());
    }

    #[test]
    fn settings_round_trip() {
        let c = SiTConfig::tiny_quad();
        let mut d = SiTConfig::tiny_ico(1);
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
    }
}
