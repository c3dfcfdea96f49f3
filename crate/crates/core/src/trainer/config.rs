use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::SelfSupMode;
use crate::nets::{ArchConfig, Architecture};

/// Training hyper-parameters for both stages. Defaults are the desk-scale
/// settings; [`TrainConfig::full_scale`] is the long, low-rate schedule for
/// 256x256 inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_classifier: f64,
    pub iters_classifier: usize,
    pub classifier_batch_size: usize,
    /// Magnification applied to classifier inputs; CAM extraction must use
    /// the same value as its base scale.
    pub classifier_scale: f64,
    /// Random horizontal flips during classifier training.
    pub classifier_flip: bool,
    pub lr_saliency: f64,
    pub iters_saliency: usize,
    pub delta: f64,
    pub image_size: usize,
    pub seed: u64,
    pub ablation_case: u8,
    pub batch_size: usize,
    pub self_supervision: SelfSupMode,
    /// Binarize `Ys` at this threshold; `None` keeps it soft.
    pub ys_threshold: Option<f64>,
    pub arch: ArchConfig,
    /// Steps between training-log lines; 0 logs only the last step.
    pub log_every: usize,
    /// Steps between checkpoints; 0 saves only the final parameters.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_classifier: 1e-3,
            iters_classifier: 3000,
            classifier_batch_size: 8,
            classifier_scale: 2.0,
            classifier_flip: true,
            lr_saliency: 1e-3,
            iters_saliency: 2000,
            delta: 2.0,
            image_size: 64,
            seed: 0,
            ablation_case: 9,
            batch_size: 4,
            self_supervision: SelfSupMode::Similarity,
            ys_threshold: None,
            arch: ArchConfig::default(),
            log_every: 50,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        Self {
            lr_classifier: 1e-4,
            iters_classifier: 20000,
            classifier_scale: 1.0,
            lr_saliency: 3e-6,
            iters_saliency: 26000,
            image_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_classifier", self.lr_classifier), ("lr_saliency", self.lr_saliency)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.iters_classifier == 0 || self.iters_saliency == 0 || self.batch_size == 0 || self.classifier_batch_size == 0 {
            return Err(Error::config("iteration counts and batch sizes must be positive"));
        }
        if !(self.classifier_scale > 0.0 && self.classifier_scale.is_finite()) {
            return Err(Error::config("classifier_scale must be positive"));
        }
        if self.ys_threshold.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::config("ys_threshold must lie in (0, 1)"));
        }
        if !self.delta.is_finite() {
            return Err(Error::config("delta must be finite"));
        }
        if self.image_size == 0 || self.image_size % crate::nets::STRIDE != 0 {
            return Err(Error::config(format!("image_size {} must be a positive multiple of 32", self.image_size)));
        }
        AblationSpec::case(self.ablation_case)?;
        self.arch.validate()
    }
}

/// Where a case's training targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Y1,
    Y2,
    Avg,
    Intersect,
    Union,
    Both,
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub case: u8,
    pub uses_df: bool,
    pub label_source: LabelSource,
    pub architecture: Architecture,
}

impl AblationSpec {
    pub fn case(case: u8) -> Result<Self> {
        use Architecture::*;
        use LabelSource::*;
        let (label_source, architecture) = match case {
            1 => (Y1, SingleDecoder),
            2 => (Y2, SingleDecoder),
            3 => (Y1, SingleDf),
            4 => (Y2, SingleDf),
            5 => (Avg, SingleDecoder),
            6 => (Intersect, SingleDecoder),
            7 => (Union, SingleDecoder),
            8 => (Both, DualDecoder),
            9 => (Both, Mdf),
            _ => return Err(Error::config(format!("ablation case {case} is not in 1..=9"))),
        };
        Ok(Self { case, uses_df: matches!(architecture, SingleDf | Mdf), label_source, architecture })
    }

    pub fn all() -> Vec<Self> {
        (1..=9).map(|c| Self::case(c).expect("valid case")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_table() {
        let all = AblationSpec::all();
        assert_eq!(all.len(), 9);
        assert_eq!(all[0].label_source, LabelSource::Y1);
        assert!(!all[1].uses_df && all[1].label_source == LabelSource::Y2);
        assert!(all[2].uses_df && all[2].architecture == Architecture::SingleDf);
        assert_eq!(all[4].label_source, LabelSource::Avg);
        assert_eq!(all[5].label_source, LabelSource::Intersect);
        assert_eq!(all[6].label_source, LabelSource::Union);
        assert_eq!(all[7].architecture, Architecture::DualDecoder);
        assert!(all[8].uses_df && all[8].architecture == Architecture::Mdf && all[8].label_source == LabelSource::Both);
        assert!(AblationSpec::case(0).is_err() && AblationSpec::case(10).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr_classifier": 1e-3, "bogus": 1}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"delta": 0.5}"#).unwrap();
        assert_eq!(c.delta, 0.5);
        assert!(TrainConfig { image_size: 48, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { ablation_case: 11, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
