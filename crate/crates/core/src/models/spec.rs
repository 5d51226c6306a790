use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "FCN", alias = "fcn")]
    Fcn,
    #[serde(rename = "CNN", alias = "cnn")]
    Cnn,
    #[serde(rename = "CONCAT", alias = "concat")]
    Concat,
    #[serde(rename = "RENO", alias = "reno")]
    Reno,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Fcn,
        ModelKind::Cnn,
        ModelKind::Concat,
        ModelKind::Reno,
    ];

    /// Registry key.
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fcn => "fcn",
            ModelKind::Cnn => "cnn",
            ModelKind::Concat => "concat",
            ModelKind::Reno => "reno",
        }
    }

    /// Number of embedding views the model consumes.
    pub fn views(self) -> usize {
        match self {
            ModelKind::Fcn | ModelKind::Cnn => 1,
            ModelKind::Concat | ModelKind::Reno => 2,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown model kind `{s}`")))
    }
}

fn default_dropout() -> f64 {
    0.3
}
fn default_heads() -> usize {
    2
}
fn default_common_dim() -> usize {
    128
}
fn default_pooled_tokens() -> usize {
    16
}

/// Declarative description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_common_dim")]
    pub common_dim: usize,
    #[serde(default = "default_pooled_tokens")]
    pub pooled_tokens: usize,
}

/// Channel count after the second convolution block.
pub const CONV_CHANNELS: [usize; 2] = [32, 64];
pub const CONV_KERNEL: usize = 3;
/// Hidden widths of the dense classifier block.
pub const HIDDEN: [usize; 2] = [512, 128];
/// Shortest embedding accepted by the convolutional front end.
pub const MIN_CONV_INPUT: usize = 16;

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dims: Vec<usize>, num_classes: usize) -> Self {
        ModelSpec {
            kind,
            input_dims,
            num_classes,
            dropout_rate: default_dropout(),
            heads: default_heads(),
            common_dim: default_common_dim(),
            pooled_tokens: default_pooled_tokens(),
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let views = self.kind.views();
        if self.input_dims.len() != views {
            return Err(Error::config(format!(
                "{} takes {views} input view(s), got {}",
                self.kind,
                self.input_dims.len()
            )));
        }
        if self.input_dims.contains(&0) {
            return Err(Error::config("input dimensions must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.heads == 0 || self.common_dim == 0 || self.pooled_tokens == 0 {
            return Err(Error::config(
                "heads, common_dim and pooled_tokens must be positive",
            ));
        }
        if self.kind != ModelKind::Fcn {
            if let Some(&d) = self.input_dims.iter().find(|&&d| d < MIN_CONV_INPUT) {
                return Err(Error::InputTooShort {
                    op: "conv front end",
                    length: d,
                    required: MIN_CONV_INPUT,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names_and_defaults() {
        let spec = ModelSpec::new(ModelKind::Reno, vec![3840, 768], 12);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "RENO");
        for key in [
            "kind",
            "input_dims",
            "num_classes",
            "dropout_rate",
            "heads",
            "common_dim",
            "pooled_tokens",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let parsed: ModelSpec =
            serde_json::from_str(r#"{"kind":"cnn","input_dims":[768],"num_classes":6}"#).unwrap();
        assert_eq!(parsed, ModelSpec::new(ModelKind::Cnn, vec![768], 6));
    }

    #[test]
    fn validation_rules() {
        assert!(ModelSpec::new(ModelKind::Fcn, vec![768, 768], 6).validate().is_err());
        assert!(ModelSpec::new(ModelKind::Reno, vec![768], 6).validate().is_err());
        assert!(ModelSpec::new(ModelKind::Fcn, vec![768], 1).validate().is_err());
        assert!(matches!(
            ModelSpec::new(ModelKind::Cnn, vec![15], 2).validate(),
            Err(Error::InputTooShort { length: 15, .. })
        ));
        assert!(ModelSpec::new(ModelKind::Cnn, vec![16], 2).validate().is_ok());
        assert!(ModelSpec::new(ModelKind::Fcn, vec![4], 2).validate().is_ok());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("RENO".parse::<ModelKind>().unwrap(), ModelKind::Reno);
        assert_eq!("concat".parse::<ModelKind>().unwrap(), ModelKind::Concat);
        assert!("mlp".parse::<ModelKind>().is_err());
    }
}
