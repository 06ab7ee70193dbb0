use crate::error::{Error, Result};
use crate::tensor::Precision;

/// Architecture of the unfolded network. Everything past `stages`, `scale`
/// and the band counts is a free design knob.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub stages: usize,
    pub scale: usize,
    pub bands: usize,
    pub msi_bands: usize,
    pub prior_dim: usize,
    pub n_stl: usize,
    pub window: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_conv3d: usize,
    /// Hidden channels between 3D conv layers.
    pub conv3d_channels: usize,
    pub dense_connections: bool,
    pub share_stage_params: bool,
    pub share_eta: bool,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            stages: 3,
            scale: 8,
            bands: 31,
            msi_bands: 3,
            prior_dim: 32,
            n_stl: 2,
            window: 8,
            heads: 4,
            mlp_ratio: 2,
            n_conv3d: 2,
            conv3d_channels: 8,
            dense_connections: true,
            share_stage_params: true,
            share_eta: true,
            precision: Precision::Single,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub const KEYS: [&'static str; 16] = [
        "stages",
        "scale",
        "bands",
        "msi_bands",
        "prior_dim",
        "n_stl",
        "window",
        "heads",
        "mlp_ratio",
        "n_conv3d",
        "conv3d_channels",
        "dense_connections",
        "share_stage_params",
        "share_eta",
        "precision",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stages", self.stages),
            ("bands", self.bands),
            ("msi_bands", self.msi_bands),
            ("prior_dim", self.prior_dim),
            ("window", self.window),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("conv3d_channels", self.conv3d_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.scale < 2 || !self.scale.is_power_of_two() {
            return Err(Error::config(format!("scale must be a power of two >= 2, got {}", self.scale)));
        }
        if self.n_stl > 0 && !self.prior_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "prior_dim {} is not divisible by heads {}",
                self.prior_dim, self.heads
            )));
        }
        Ok(())
    }

    /// Number of stride-2 layers realizing the factor.
    pub fn down_layers(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// `(key, value)` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.stages.to_string(),
            self.scale.to_string(),
            self.bands.to_string(),
            self.msi_bands.to_string(),
            self.prior_dim.to_string(),
            self.n_stl.to_string(),
            self.window.to_string(),
            self.heads.to_string(),
            self.mlp_ratio.to_string(),
            self.n_conv3d.to_string(),
            self.conv3d_channels.to_string(),
            self.dense_connections.to_string(),
            self.share_stage_params.to_string(),
            self.share_eta.to_string(),
            self.precision.as_str().to_string(),
            self.seed.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Applies one `key=value`; returns `false` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::config(format!("{key}: cannot parse '{v}'")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::config(format!("{key}: expected true or false, got '{v}'"))),
            }
        }
        match key {
            "stages" => self.stages = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "bands" => self.bands = num(key, value)?,
            "msi_bands" => self.msi_bands = num(key, value)?,
            "prior_dim" => self.prior_dim = num(key, value)?,
            "n_stl" => self.n_stl = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "n_conv3d" => self.n_conv3d = num(key, value)?,
            "conv3d_channels" => self.conv3d_channels = num(key, value)?,
            "dense_connections" => self.dense_connections = flag(key, value)?,
            "share_stage_params" => self.share_stage_params = flag(key, value)?,
            "share_eta" => self.share_eta = flag(key, value)?,
            "precision" => self.precision = Precision::parse(value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
