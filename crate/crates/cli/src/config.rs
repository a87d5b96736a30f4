//! Run configuration: defaults, then a TOML document, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use msk_core::inference::{ContactThresholds, TransferOptions};
use msk_core::nets::ArchConfig;
use msk_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub arch: ArchOverrides,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub window: usize,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            window: msk_core::dataset::DEFAULT_WINDOW,
            test_fraction: 0.2,
        }
    }
}

/// Optional replacements for the default layer widths.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOverrides {
    pub content_channels: Option<Vec<usize>>,
    pub content_res_blocks: Option<usize>,
    pub style_channels: Option<Vec<usize>>,
    pub mlp_hidden: Option<usize>,
    pub mlp_layers: Option<usize>,
    pub decoder_res_blocks: Option<usize>,
    pub disc_channels: Option<Vec<usize>>,
    pub down_kernel: Option<usize>,
    pub res_kernel: Option<usize>,
    pub slope: Option<f64>,
}

impl ArchOverrides {
    pub fn apply(&self, mut a: ArchConfig) -> ArchConfig {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    a.$f = v.clone();
                }
            )*};
        }
        set!(
            content_channels,
            content_res_blocks,
            style_channels,
            mlp_hidden,
            mlp_layers,
            decoder_res_blocks,
            disc_channels,
            down_kernel,
            res_kernel,
            slope
        );
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub warp: bool,
    pub ik: bool,
    /// Foot height threshold; defaults to 3% of the skeleton height.
    pub contact_height: Option<f64>,
    pub contact_speed: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            warp: true,
            ik: true,
            contact_height: None,
            contact_speed: 0.5,
        }
    }
}

impl TransferConfig {
    pub fn options(&self, skel: &msk_core::SkeletonTopology) -> TransferOptions {
        TransferOptions {
            warp: self.warp,
            ik: self.ik,
            contacts: Some(ContactThresholds {
                height: self.contact_height.unwrap_or_else(|| ContactThresholds::for_skeleton(skel).height),
                speed: self.contact_speed,
            }),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// `explicit` wins over `MSK_CONFIG`; with neither, the defaults.
    pub fn resolve(explicit: Option<&Path>, env: Option<&Path>) -> Result<Self> {
        match explicit.or(env) {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_keep_defaults() {
        let c = RunConfig::parse("seed = 4\n[train]\niterations = 10\n[train.weights]\nadv = 0.0\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.train.weights.adv, 0.0);
        assert_eq!(c.train.weights.trip, 0.3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.data.window, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 4\n").is_err());
        assert!(RunConfig::parse("[data]\nwindows = 4\n").is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.arch.content_channels = Some(vec![8, 8]);
        c.transfer.contact_height = Some(0.04);
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn overrides_apply() {
        let o = ArchOverrides {
            mlp_hidden: Some(7),
            ..Default::default()
        };
        let a = o.apply(ArchConfig::new(8, 2));
        assert_eq!(a.mlp_hidden, 7);
        assert_eq!(a.content_channels, ArchConfig::new(8, 2).content_channels);
    }
}
