use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment_image::{AugmentationProfile, ProfileName, DEFAULT_STRONG_OPS_PER_SAMPLE};
use crate::augment_text::{EdaParams, DEFAULT_CANDIDATE_COUNT};
use crate::embedder::EmbedderConfig;
use crate::error::{Error, Result};
use crate::model::ToyModelConfig;
use crate::rng::fnv1a;
use crate::ssl::LossWeights;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Supervised,
    Fixmatch,
    #[default]
    Resmatch,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Supervised, TrainMode::Fixmatch, TrainMode::Resmatch];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Supervised => "supervised",
            TrainMode::Fixmatch => "fixmatch",
            TrainMode::Resmatch => "resmatch",
        }
    }

    /// Augmentation profile used when the config does not name one.
    pub fn default_profile(self) -> ProfileName {
        match self {
            TrainMode::Fixmatch => ProfileName::FixmatchBaseline,
            TrainMode::Supervised | TrainMode::Resmatch => ProfileName::Resmatch,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(TrainMode::Supervised),
            "fixmatch" => Ok(TrainMode::Fixmatch),
            "resmatch" => Ok(TrainMode::Resmatch),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    /// Defaults to the mode's own profile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileName>,
    pub strong_ops_per_sample: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            profile: None,
            strong_ops_per_sample: DEFAULT_STRONG_OPS_PER_SAMPLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    pub lambda_x: f64,
    pub lambda_u: f64,
    pub lambda_t: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size_labeled: usize,
    pub batch_size_unlabeled: usize,
    pub epochs: usize,
    /// Square training and evaluation resolution.
    pub image_size: usize,
    pub seed: u64,
    pub text_candidate_count: usize,
    /// Evaluate every this many epochs (0 disables periodic evaluation).
    pub eval_every: usize,
    pub augmentation: AugmentationConfig,
    pub embedder: EmbedderConfig,
    pub text: EdaParams,
    pub model: ToyModelConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            mode: TrainMode::default(),
            lambda_x: w.lambda_x,
            lambda_u: w.lambda_u,
            lambda_t: w.lambda_t,
            tau: w.tau,
            learning_rate: 1e-5,
            weight_decay: 0.01,
            batch_size_labeled: 2,
            batch_size_unlabeled: 2,
            epochs: 40,
            image_size: 480,
            seed: 0,
            text_candidate_count: DEFAULT_CANDIDATE_COUNT,
            eval_every: 1,
            augmentation: AugmentationConfig::default(),
            embedder: EmbedderConfig::default(),
            text: EdaParams::default(),
            model: ToyModelConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_x: self.lambda_x,
            lambda_u: self.lambda_u,
            tau: self.tau,
            lambda_t: self.lambda_t,
        }
    }

    pub fn profile_name(&self) -> ProfileName {
        self.augmentation.profile.unwrap_or(self.mode.default_profile())
    }

    pub fn profile(&self) -> AugmentationProfile {
        AugmentationProfile::named(self.profile_name(), self.image_size)
            .with_strong_ops_per_sample(self.augmentation.strong_ops_per_sample)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        let positive = [
            ("batch_size_labeled", self.batch_size_labeled),
            ("batch_size_unlabeled", self.batch_size_unlabeled),
            ("image_size", self.image_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate = {} is invalid",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay = {} is invalid",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.text.p_rd) {
            return Err(Error::Config(format!("text.p_rd = {} outside [0, 1]", self.text.p_rd)));
        }
        Ok(())
    }

    /// Fingerprint of everything that shapes a run except its length, so a
    /// checkpoint can be resumed with a larger `epochs`.
    pub fn fingerprint(&self) -> u64 {
        let mut c = self.clone();
        c.epochs = 0;
        c.eval_every = 0;
        fnv1a(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_partial_override() {
        let c = TrainerConfig::default();
        assert_eq!(TrainerConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial =
            TrainerConfig::from_toml("mode = \"fixmatch\"\nepochs = 3\n[augmentation]\nstrong_ops_per_sample = 1\n")
                .unwrap();
        assert_eq!(partial.mode, TrainMode::Fixmatch);
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.profile_name(), ProfileName::FixmatchBaseline);
        assert_eq!(partial.profile().strong_ops_per_sample, 1);
        assert_eq!(partial.lambda_x, 5.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail() {
        assert!(TrainerConfig::from_toml("lamda_x = 1.0").is_err());
        assert!(TrainerConfig::from_toml("tau = 1.5").is_err());
        assert!(TrainerConfig::from_toml("batch_size_labeled = 0").is_err());
    }

    #[test]
    fn fingerprint_ignores_run_length_only() {
        let a = TrainerConfig::default();
        let b = TrainerConfig { epochs: 7, ..a.clone() };
        let c = TrainerConfig { seed: 1, ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
