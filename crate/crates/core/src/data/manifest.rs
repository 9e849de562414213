use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// How a raw column value maps onto {0, 1}.
///
/// `Values` matches raw strings; when `negative` is given every value must
/// appear in exactly one of the two lists, otherwise anything outside
/// `positive` maps to 0. `Interval` parses the value as a number and maps
/// it to 1 inside the inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinaryRule {
    Interval {
        interval: [f64; 2],
    },
    Values {
        values: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        otherwise: Option<Vec<String>>,
    },
}

impl BinaryRule {
    pub fn values<I, S>(positive: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BinaryRule::Values {
            values: positive.into_iter().map(Into::into).collect(),
            otherwise: None,
        }
    }

    pub fn interval(low: f64, high: f64) -> Self {
        BinaryRule::Interval {
            interval: [low, high],
        }
    }

    /// `Some(bit)` when the value matches one side of the rule.
    pub fn apply(&self, raw: &str) -> Option<u8> {
        let raw = raw.trim();
        match self {
            BinaryRule::Interval { interval: [lo, hi] } => {
                let v: f64 = raw.parse().ok()?;
                if !v.is_finite() {
                    return None;
                }
                Some(u8::from(v >= *lo && v <= *hi))
            }
            BinaryRule::Values { values, otherwise } => {
                if values.iter().any(|v| v == raw) {
                    Some(1)
                } else {
                    match otherwise {
                        None => Some(0),
                        Some(neg) if neg.iter().any(|v| v == raw) => Some(0),
                        Some(_) => None,
                    }
                }
            }
        }
    }
}

fn default_split_fraction() -> f64 {
    0.5
}

fn default_missing_markers() -> Vec<String> {
    vec![String::new(), "?".to_string()]
}

/// Declarative description of one tabular dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub source_path: PathBuf,
    pub features: Vec<FeatureColumn>,
    pub sensitive_column: String,
    pub privileged: BinaryRule,
    pub label_column: String,
    pub favorable: BinaryRule,
    #[serde(default = "default_split_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
}

impl DatasetManifest {
    /// Parse a manifest document. A relative `source_path` is resolved
    /// against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut manifest: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(dir) = base_dir {
            if manifest.source_path.is_relative() {
                manifest.source_path = dir.join(&manifest.source_path);
            }
        }
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn validate(&self) -> Result<()> {
        for f in &self.features {
            if f.name == self.sensitive_column || f.name == self.label_column {
                return Err(Error::Config(format!(
                    "column `{}` is the sensitive or label column and cannot be a feature",
                    f.name
                )));
            }
        }
        if self.features.is_empty() {
            return Err(Error::Config("manifest lists no feature columns".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction {} outside (0, 1)",
                self.split_fraction
            )));
        }
        if let BinaryRule::Interval { interval: [lo, hi] } = self.privileged {
            if !(lo <= hi) {
                return Err(Error::Config(format!("empty interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}
