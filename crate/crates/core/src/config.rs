//! Run configuration.
//!
//! Stored as a flat TOML key/value file. Every key is optional when
//! loading; missing keys fall back to [`RunConfig::default`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which loss terms take part in training. The adversarial term is always
/// on; the others select one row of the loss ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggles {
    #[serde(rename = "loss_adv")]
    pub adv: bool,
    #[serde(rename = "loss_cyc")]
    pub cyc: bool,
    #[serde(rename = "loss_cls")]
    pub cls: bool,
    #[serde(rename = "loss_perc")]
    pub perc: bool,
}

impl LossToggles {
    pub const FULL: LossToggles = LossToggles {
        adv: true,
        cyc: true,
        cls: true,
        perc: true,
    };

    pub const fn new(cyc: bool, cls: bool, perc: bool) -> Self {
        Self {
            adv: true,
            cyc,
            cls,
            perc,
        }
    }

    /// The six loss combinations compared in the ablation, in table order.
    pub fn ablation_rows() -> [LossToggles; 6] {
        [
            LossToggles::new(false, false, false),
            LossToggles::new(true, false, false),
            LossToggles::new(true, true, false),
            LossToggles::new(true, false, true),
            LossToggles::new(false, true, true),
            LossToggles::FULL,
        ]
    }

    /// Short label such as `adv+cyc+p`.
    pub fn label(&self) -> String {
        let mut parts = vec!["adv"];
        if self.cyc {
            parts.push("cyc");
        }
        if self.cls {
            parts.push("c");
        }
        if self.perc {
            parts.push("p");
        }
        parts.join("+")
    }
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles::FULL
    }
}

/// How target labels are drawn for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSampling {
    /// Independent uniform draw over all domains per sample.
    Uniform,
    /// A random permutation of the batch's own labels.
    Permute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    FixedRandomConvnet,
    PretrainedResidual34,
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_random_convnet" => Ok(Self::FixedRandomConvnet),
            "pretrained_residual_34" => Ok(Self::PretrainedResidual34),
            other => Err(Error::Config(format!("unknown extractor kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub num_domains: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lambda_gp: f64,
    pub lambda_cls: f64,
    pub lambda_cyc: f64,
    pub lambda_perc: f64,
    /// Discriminator updates per generator update.
    pub critic_ratio: usize,
    pub epochs: usize,
    pub lr_decay_interval_epochs: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub toggles: LossToggles,
    pub label_sampling: LabelSampling,

    pub g_base_width: usize,
    pub g_res_blocks: usize,
    /// Kernel size of the generator's first and last convolution.
    pub g_edge_kernel: usize,
    pub d_base_width: usize,
    /// Discriminator depth; 0 derives it from the patch size.
    pub d_layers: usize,

    pub extractor: ExtractorKind,
    /// Weights archive for the pretrained extractor.
    pub extractor_weights: String,
    pub extractor_width: usize,
    pub extractor_seed: u64,

    pub train_per_domain: usize,
    pub test_per_domain: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_domains: 3,
            patch_size: 256,
            batch_size: 16,
            base_lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            lambda_gp: 10.0,
            lambda_cls: 1.0,
            lambda_cyc: 10.0,
            lambda_perc: 0.75,
            critic_ratio: 5,
            epochs: 80,
            lr_decay_interval_epochs: 10,
            lr_decay_factor: 0.5,
            seed: 0,
            toggles: LossToggles::FULL,
            label_sampling: LabelSampling::Uniform,
            g_base_width: 64,
            g_res_blocks: 6,
            g_edge_kernel: 7,
            d_base_width: 64,
            d_layers: 0,
            extractor: ExtractorKind::FixedRandomConvnet,
            extractor_weights: String::new(),
            extractor_width: 32,
            extractor_seed: 1234,
            train_per_domain: 1250,
            test_per_domain: 200,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_domains < 2 {
            return fail(format!("num_domains must be >= 2, got {}", self.num_domains));
        }
        for (name, v) in [
            ("lambda_gp", self.lambda_gp),
            ("lambda_cls", self.lambda_cls),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_perc", self.lambda_perc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.critic_ratio < 1 {
            return fail("critic_ratio must be >= 1".into());
        }
        if !self.toggles.adv {
            return fail("loss_adv cannot be disabled".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if self.patch_size < 16 || !self.patch_size.is_multiple_of(4) {
            return fail(format!(
                "patch_size must be >= 16 and divisible by 4, got {}",
                self.patch_size
            ));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return fail("base_lr must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail("lr_decay_factor must lie in (0, 1]".into());
        }
        if self.lr_decay_interval_epochs == 0 {
            return fail("lr_decay_interval_epochs must be positive".into());
        }
        if self.g_base_width == 0 || self.d_base_width == 0 || self.extractor_width == 0 {
            return fail("network widths must be positive".into());
        }
        if self.g_edge_kernel.is_multiple_of(2) {
            return fail("g_edge_kernel must be odd".into());
        }
        Ok(())
    }

    /// Discriminator depth, resolved from the patch size when unset.
    pub fn discriminator_layers(&self) -> usize {
        if self.d_layers > 0 {
            return self.d_layers;
        }
        let log2 = usize::BITS - 1 - self.patch_size.leading_zeros();
        (log2 as usize).saturating_sub(2).max(1)
    }

    /// Step-decayed learning rate at the start of `epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let steps = epoch / self.lr_decay_interval_epochs;
        self.base_lr * self.lr_decay_factor.powi(steps as i32)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Applies a `key=value` override, where `value` uses TOML syntax
    /// (bare words are taken as strings).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut table: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| Error::Config(format!("cannot re-read config: {e}")))?;
        if !table.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key.to_string(), value);
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        *self = Self::from_toml(&text)?;
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_toml())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.critic_ratio, 5);
        assert_eq!(cfg.lambda_perc, 0.75);
    }

    #[test]
    fn toml_round_trip_is_flat() {
        let mut cfg = RunConfig::default();
        cfg.toggles.perc = false;
        cfg.seed = 42;
        let text = cfg.to_toml();
        assert!(!text.contains('['), "config file must be flat:\n{text}");
        assert!(text.contains("loss_perc = false"));
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = RunConfig::from_toml("num_domains = 5\n").unwrap();
        assert_eq!(cfg.num_domains, 5);
        assert_eq!(cfg.epochs, 80);
    }

    #[test]
    fn rejects_invalid() {
        assert!(RunConfig::from_toml("num_domains = 1\n").is_err());
        assert!(RunConfig::from_toml("loss_adv = false\n").is_err());
        assert!(RunConfig::from_toml("lambda_cyc = -1.0\n").is_err());
        assert!(RunConfig::from_toml("critic_ratio = 0\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("epochs=3").unwrap();
        cfg.apply_override("label_sampling=permute").unwrap();
        cfg.apply_override("lambda_perc = 1.5").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.label_sampling, LabelSampling::Permute);
        assert_eq!(cfg.lambda_perc, 1.5);
        assert!(cfg.apply_override("nope=1").is_err());
        assert!(cfg.apply_override("epochs").is_err());
    }

    #[test]
    fn lr_schedule_and_depth() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.lr_at_epoch(0), 1e-4);
        assert_eq!(cfg.lr_at_epoch(9), 1e-4);
        assert_eq!(cfg.lr_at_epoch(10), 5e-5);
        assert_eq!(cfg.discriminator_layers(), 6);
        let small = RunConfig {
            patch_size: 64,
            ..RunConfig::default()
        };
        assert_eq!(small.discriminator_layers(), 4);
    }
}
