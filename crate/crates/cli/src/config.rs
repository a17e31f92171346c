use std::path::Path;

use drn_core::{DrnConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The `--config` document: model and training settings in one flat
/// object. Missing keys take the library defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scale: usize,
    pub channels: usize,
    pub groups: usize,
    pub blocks: usize,
    pub rd_units: usize,
    pub distill: usize,
    pub elu_alpha: f64,
    pub per_block_fusion: bool,
    pub ablate_rdb: bool,
    pub batch_size: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub base_lr: f64,
    pub lr_halve_every: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&DrnConfig::default(), &TrainConfig::default())
    }
}

impl RunConfig {
    pub fn from_parts(m: &DrnConfig, t: &TrainConfig) -> Self {
        Self {
            scale: m.scale,
            channels: m.base_channels,
            groups: m.groups,
            blocks: m.blocks_per_group,
            rd_units: m.rd_units_per_block,
            distill: m.distill_width,
            elu_alpha: m.elu_alpha,
            per_block_fusion: m.per_block_fusion,
            ablate_rdb: m.ablate_rdb,
            batch_size: t.batch_size,
            patch_size: t.patch_size,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            base_lr: t.base_lr,
            lr_halve_every: t.lr_halve_every,
            augment: t.augment,
            seed: t.seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> DrnConfig {
        DrnConfig {
            scale: self.scale,
            base_channels: self.channels,
            groups: self.groups,
            blocks_per_group: self.blocks,
            rd_units_per_block: self.rd_units,
            distill_width: self.distill,
            elu_alpha: self.elu_alpha,
            per_block_fusion: self.per_block_fusion,
            ablate_rdb: self.ablate_rdb,
        }
    }

    /// Training settings; optimizer constants not exposed here keep their
    /// defaults.
    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            patch_size: self.patch_size,
            epochs: self.epochs,
            steps_per_epoch: self.steps_per_epoch,
            base_lr: self.base_lr,
            lr_halve_every: self.lr_halve_every,
            augment: self.augment,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c = RunConfig::parse("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model(), DrnConfig::default());
        assert_eq!(c.training(), TrainConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(r#"{"scale": 2, "widht": 8}"#).unwrap_err();
        assert!(err.to_string().contains("widht"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn keys_map_onto_both_configs() {
        let c = RunConfig::parse(
            r#"{"scale": 3, "channels": 12, "rd_units": 3, "epochs": 5, "augment": true}"#,
        )
        .unwrap();
        let (m, t) = (c.model(), c.training());
        assert_eq!((m.scale, m.base_channels, m.rd_units_per_block), (3, 12, 3));
        assert_eq!((t.epochs, t.augment), (5, true));
        assert_eq!(RunConfig::from_parts(&m, &t), c);
    }
}
