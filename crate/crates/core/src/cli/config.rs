//! Pipeline config file. Every section and field is optional; unknown
//! keys are rejected.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "workload": { "mode": "single", "n": 2500, "conditions": [2, 3, 4] },
//!   "split": { "fractions": [0.8, 0.0, 0.2] },
//!   "encoding": { "chunk_size": 8 },
//!   "kernel": { "depth": 3, "noise_sq": 0.001 },
//!   "predict": { "delta": 0.9 },
//!   "active": { "k": 200, "iterations": 3 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncodingOptions;
use crate::error::{Error, Result};
use crate::gp::PredictOptions;
use crate::kernel::KernelConfig;
use crate::workload::DEFAULT_FRACTIONS;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub split: SplitConfig,
    pub encoding: EncodingOptions,
    pub kernel: KernelConfig,
    pub predict: PredictOptions,
    pub active: ActiveConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadMode {
    #[default]
    Single,
    Join,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    pub mode: WorkloadMode,
    /// Target relation in single mode; the first relation when unset.
    pub relation: Option<String>,
    /// Condition counts for single mode, queries spread evenly across
    /// them. Empty means every count from 2 to the number of attributes.
    pub conditions: Vec<usize>,
    /// Join counts for join mode.
    pub joins: Vec<usize>,
    pub n: usize,
    pub selections_per_relation: usize,
    pub theta_joins: bool,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            mode: WorkloadMode::Single,
            relation: None,
            conditions: Vec::new(),
            joins: vec![1],
            n: 1000,
            selections_per_relation: 1,
            theta_joins: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    pub k: usize,
    pub iterations: usize,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig { k: 200, iterations: 3 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        let c: PipelineConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for bad in [
            r#"{"sed": 1}"#,
            r#"{"kernel": {"depht": 2}}"#,
            r#"{"workload": {"mode": "single", "extra": 0}}"#,
            r#"{"predict": {"delta": 0.9, "q": 1}}"#,
            r#"{"encoding": {"chunk": 4}}"#,
            r#"{"active": {"k": 1, "iters": 2}}"#,
        ] {
            assert!(serde_json::from_str::<PipelineConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"kernel": {"depth": 1}, "active": {"k": 5}}"#).unwrap();
        assert_eq!(c.kernel.depth, 1);
        assert_eq!(c.kernel.sigma_w_sq, KernelConfig::default().sigma_w_sq);
        assert_eq!(c.active.iterations, 3);
    }
}
