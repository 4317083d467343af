//! Whole-pipeline settings and their flat `key = value` text form.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::network::{FlopConvention, OutputActivation};
use crate::refine::RunFilterParams;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    /// Directory of training case directories.
    pub data_dir: Option<PathBuf>,
    /// Directory of held-out case directories.
    pub eval_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub refine: RunFilterParams,
    pub flops: FlopConvention,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl PipelineConfig {
    /// Relative paths are resolved against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key {key}",
                    n + 1
                )));
            }
            cfg.set(key, value, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.refine.validate()
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let t = &mut self.train;
        let path = || Some(base.join(value));
        match key {
            "data_dir" => self.data_dir = path(),
            "eval_dir" => self.eval_dir = path(),
            "checkpoint" => self.checkpoint = path(),
            "report_dir" => self.report_dir = path(),
            "crop_row_offset" => t.window.row_offset = parse(key, value)?,
            "crop_col_offset" => t.window.col_offset = parse(key, value)?,
            "tau_bg" => t.gate.tau_bg = parse(key, value)?,
            "tau_sym" => t.gate.tau_sym = parse(key, value)?,
            "tau_outline" => t.gate.tau_outline = parse(key, value)?,
            "gate_modality" => t.gate.gate_modality = parse(key, value)?,
            "ssim_c1" => t.ssim.c1 = parse(key, value)?,
            "ssim_c2" => t.ssim.c2 = parse(key, value)?,
            "ssim_c3" => t.ssim.c3 = parse(key, value)?,
            "ssim_alpha" => t.ssim.alpha = parse(key, value)?,
            "ssim_beta" => t.ssim.beta = parse(key, value)?,
            "ssim_gamma" => t.ssim.gamma = parse(key, value)?,
            "ssim_dynamic_range" => t.ssim.dynamic_range = parse(key, value)?,
            "min_wt_run" => self.refine.min_wt_run = parse(key, value)?,
            "min_et_run" => self.refine.min_et_run = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "lr_max" => t.lr_max = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse(key, value)?,
            "adam_epsilon" => t.adam.epsilon = parse(key, value)?,
            "init_std" => t.init_std = parse(key, value)?,
            "init_bias" => t.init_bias = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "augmentation" => t.augmentation = parse_bool(key, value)?,
            "flops_convention" => {
                self.flops = match value {
                    "full" => FlopConvention::Full,
                    "conv_only" => FlopConvention::ConvOnly,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "flops_convention: expected full or conv_only, got {value:?}"
                        )))
                    }
                }
            }
            "layer7_activation" => {
                t.network.output_activation = match value {
                    "none" => OutputActivation::None,
                    "relu" => OutputActivation::Relu,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "layer7_activation: expected none or relu, got {value:?}"
                        )))
                    }
                }
            }
            "l1_depthwise_multiplier" => t.network.l1_depthwise_multiplier = parse(key, value)?,
            "l1_standard" => t.network.l1_standard = parse(key, value)?,
            "l2_depthwise_multiplier" => t.network.l2_depthwise_multiplier = parse(key, value)?,
            "l2_standard" => t.network.l2_standard = parse(key, value)?,
            "l3_kernels" => t.network.l3_kernels = parse(key, value)?,
            "l4_kernels" => t.network.l4_kernels = parse(key, value)?,
            "l5_kernels" => t.network.l5_kernels = parse(key, value)?,
            "l6_kernels" => t.network.l6_kernels = parse(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Modality;

    #[test]
    fn empty_text_gives_defaults() {
        let c = PipelineConfig::parse_str("# nothing\n\n", Path::new("/")).unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.train.batch_size, 100);
        assert_eq!(c.train.epochs, 50);
    }

    #[test]
    fn keys_are_applied() {
        let text = "epochs = 3\ntau_sym=0.3 # comment\ngate_modality = T2\nlayer7_activation = relu\ndata_dir = cases\naugmentation = off\n";
        let c = PipelineConfig::parse_str(text, Path::new("/work")).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.gate.tau_sym, 0.3);
        assert_eq!(c.train.gate.gate_modality, Modality::T2);
        assert_eq!(c.train.network.output_activation, OutputActivation::Relu);
        assert_eq!(c.data_dir, Some(PathBuf::from("/work/cases")));
        assert!(!c.train.augmentation);
    }

    #[test]
    fn bad_input_is_rejected() {
        let root = Path::new("/");
        assert!(PipelineConfig::parse_str("nonsense = 1", root).is_err());
        assert!(PipelineConfig::parse_str("epochs = many", root).is_err());
        assert!(PipelineConfig::parse_str("epochs", root).is_err());
        assert!(PipelineConfig::parse_str("epochs = 1\nepochs = 2", root).is_err());
        assert!(PipelineConfig::parse_str("tau_bg = 1.5", root).is_err());
        assert!(PipelineConfig::parse_str("lr_min = 0.1", root).is_err());
    }
}
