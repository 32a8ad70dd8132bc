//! Flat JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use kernspace::dataset::{ShapeSet, SynthConfig, SynthMode};
use kernspace::features::{FeatureKind, PretrainConfig};
use kernspace::models::ModelKind;
use kernspace::training::TrainConfig;

use crate::CliError;

/// Every key is optional; command-line flags win over file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_categories: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fonts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fonts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fonts: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SynthMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shapes: Option<ShapeSet>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_patience: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise_hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_model: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ffn_hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Copies every `Some` field of `$flags` over `$cfg`.
macro_rules! overlay {
    ($cfg:expr, $flags:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $flags.$field.clone() {
            $cfg.$field = Some(v);
        })+
    };
}
pub(crate) use overlay;

/// Like [`overlay!`] but for targets whose fields are not optional.
macro_rules! overlay_plain {
    ($cfg:expr, $src:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field.clone() {
            $cfg.$field = v;
        })+
    };
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))
    }

    pub fn required<T: Clone>(value: &Option<T>, name: &str) -> Result<T, CliError> {
        value
            .clone()
            .ok_or_else(|| CliError::Usage(format!("missing required option --{name}")))
    }

    pub fn synth(&self) -> SynthConfig {
        let mut cfg = SynthConfig::new(self.seed.unwrap_or(0));
        overlay_plain!(cfg, self; n_categories, image_size, train_fonts, val_fonts, test_fonts, mode, shapes);
        cfg
    }

    pub fn pretrain(&self) -> PretrainConfig {
        let mut cfg = PretrainConfig::new(self.seed.unwrap_or(0));
        overlay_plain!(cfg, self; feature_dim, channels);
        if let Some(v) = self.pretrain_lr {
            cfg.lr = v;
        }
        if let Some(v) = self.pretrain_batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.pretrain_max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.pretrain_patience {
            cfg.patience = v;
        }
        cfg
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let mut cfg = TrainConfig::new(
            Self::required(&self.model, "model")?,
            Self::required(&self.features, "features")?,
            self.seed.unwrap_or(0),
        );
        cfg.lr = self.lr;
        cfg.max_steps = self.max_steps;
        overlay_plain!(cfg, self; batch_size, patience, max_epochs, pairwise_hidden, d_model, heads, ffn_hidden, max_tokens);
        Ok(cfg)
    }

    /// Writes the effective configuration as pretty JSON.
    pub fn echo(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}

/// Parses an enum flag through its serde name, ignoring case.
pub fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    [s.to_string(), s.to_lowercase(), s.to_uppercase()]
        .into_iter()
        .find_map(|v| serde_json::from_value(serde_json::Value::String(v)).ok())
        .ok_or_else(|| format!("unrecognized value {s:?}"))
}

pub fn usize_list(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}
