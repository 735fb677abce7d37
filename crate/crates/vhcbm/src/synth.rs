//! JSON specification for synthetic bundles.

use serde::{Deserialize, Serialize};
use vhcbm_core::data::{LabelRule, SynthConfig};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRuleSpec {
    Linear,
    CopyConcept(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of concepts; must match `cardinalities` when given.
    pub k: Option<usize>,
    pub cardinalities: Vec<usize>,
    pub d: usize,
    pub n: usize,
    pub sigma_c: f64,
    pub spread: Vec<f64>,
    pub num_labels: usize,
    pub label_rule: LabelRuleSpec,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            k: None,
            cardinalities: c.cardinalities,
            d: c.dim,
            n: c.n,
            sigma_c: c.sigma_c,
            spread: c.spread,
            num_labels: c.num_labels,
            label_rule: LabelRuleSpec::Linear,
            train_fraction: c.train_fraction,
            val_fraction: c.val_fraction,
            seed: None,
        }
    }
}

impl SynthSpec {
    /// Parse inline JSON, or the contents of the file it names.
    pub fn parse(text_or_path: &str) -> Result<Self> {
        let path = std::path::Path::new(text_or_path);
        let text = if !text_or_path.trim_start().starts_with('{') && path.is_file() {
            std::fs::read_to_string(path).map_err(crate::error::io_err(path))?
        } else {
            text_or_path.to_string()
        };
        serde_json::from_str(&text).map_err(|e| AppError::Format { what: "synthetic spec", message: e.to_string() })
    }

    /// `seed` overrides the spec's own seed.
    pub fn to_config(&self, seed: Option<u64>) -> Result<SynthConfig> {
        if let Some(k) = self.k {
            if k != self.cardinalities.len() {
                return Err(AppError::Format {
                    what: "synthetic spec",
                    message: format!("k = {k} but {} cardinalities given", self.cardinalities.len()),
                });
            }
        }
        let config = SynthConfig {
            cardinalities: self.cardinalities.clone(),
            dim: self.d,
            n: self.n,
            sigma_c: self.sigma_c,
            spread: self.spread.clone(),
            num_labels: self.num_labels,
            label_rule: match self.label_rule {
                LabelRuleSpec::Linear => LabelRule::Linear,
                LabelRuleSpec::CopyConcept(i) => LabelRule::CopyConcept(i),
            },
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            seed: seed.or(self.seed).unwrap_or(0),
        };
        config.validate()?;
        Ok(config)
    }
}
