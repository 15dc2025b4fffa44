use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{AdamHyper, Objective};
use crate::mil::{ModelKind, DEFAULT_ATTENTION_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    DeepMil,
    VarMil,
    TileSup,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::DeepMil => "deepmil",
            ModelChoice::VarMil => "varmil",
            ModelChoice::TileSup => "tilesup",
        }
    }

    pub fn mil_kind(self) -> Option<ModelKind> {
        match self {
            ModelChoice::DeepMil => Some(ModelKind::DeepMil),
            ModelChoice::VarMil => Some(ModelKind::VarMil),
            ModelChoice::TileSup => None,
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deepmil" => Ok(ModelChoice::DeepMil),
            "varmil" => Ok(ModelChoice::VarMil),
            "tilesup" => Ok(ModelChoice::TileSup),
            other => Err(Error::invalid(format!("unknown model `{other}`"))),
        }
    }
}

/// Where patient labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// The manifest's `label` column.
    Label,
    /// `raw_score` above the development-set median.
    Median,
    /// `raw_score` tertiles of the development set; middle third dropped.
    Tertile,
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Label => "label",
            LabelMode::Median => "median",
            LabelMode::Tertile => "tertile",
        })
    }
}

impl FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label" => Ok(LabelMode::Label),
            "median" => Ok(LabelMode::Median),
            "tertile" => Ok(LabelMode::Tertile),
            other => Err(Error::invalid(format!("unknown label mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    /// Tiles kept per slide; larger slides are subsampled once.
    pub subsample_n: usize,
    /// Padded bag length used for minibatches (MIL models only).
    pub pad_to: usize,
    pub seed: u64,
    /// Hidden width of the attention MLP or the tile classifier.
    pub hidden_width: usize,
    pub label_mode: LabelMode,
    pub objective: Objective,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_model(ModelChoice::DeepMil)
    }
}

impl RunConfig {
    pub fn for_model(model: ModelChoice) -> Self {
        let base = Self {
            model,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            epochs: 16,
            eval_every: 5,
            subsample_n: 500,
            pad_to: 550,
            seed: 0,
            hidden_width: DEFAULT_ATTENTION_WIDTH,
            label_mode: LabelMode::Label,
            objective: Objective::OneHotBce,
        };
        match model {
            ModelChoice::TileSup => Self {
                learning_rate: 5e-5,
                batch_size: 512,
                ..base
            },
            _ => base,
        }
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper::new(self.learning_rate, self.weight_decay)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper().validate()?;
        if self.batch_size == 0 || self.eval_every == 0 || self.subsample_n == 0 || self.hidden_width == 0 {
            return Err(Error::invalid(
                "batch_size, eval_every, subsample_n and hidden_width must be positive",
            ));
        }
        if self.pad_to < self.subsample_n {
            return Err(Error::invalid(format!(
                "pad_to ({}) must be at least subsample_n ({})",
                self.pad_to, self.subsample_n
            )));
        }
        Ok(())
    }

    /// `key = value` lines in a fixed order, used as report headers.
    pub fn describe(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.model.to_string()),
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("weight_decay", format!("{:e}", self.weight_decay)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("subsample_n", self.subsample_n.to_string()),
            ("pad_to", self.pad_to.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden_width", self.hidden_width.to_string()),
            ("label_mode", self.label_mode.to_string()),
            ("objective", self.objective.to_string()),
        ]
    }
}
