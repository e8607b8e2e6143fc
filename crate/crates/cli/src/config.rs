//! Run configuration: one JSON file, overridden by `DF_*` environment
//! variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use dforge::corpus::FilterConfig;
use dforge::generation::{default_temperature_grid, GenerationConfig};
use dforge::mleval::{Averaging, OverlapBasis};
use dforge::privacy_eval::survey::ChiSquareForm;
use dforge::privacy_eval::UnlinkOptions;

use crate::UsageError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityFn {
    #[default]
    Cosine,
    Meteor,
    Bleu3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSection {
    pub grid: Vec<f64>,
    /// How many posts from the head of the corpus are used.
    pub samples: usize,
    pub similarity: SimilarityFn,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            grid: default_temperature_grid(),
            samples: 20,
            similarity: SimilarityFn::Cosine,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub endpoint: Option<String>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsSection {
    pub min_overlap: f64,
    pub overlap_basis: OverlapBasis,
    pub averaging: Averaging,
    pub chi_square_form: ChiSquareForm,
    pub embedding: EmbeddingSection,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            min_overlap: 0.5,
            overlap_basis: OverlapBasis::Gold,
            averaging: Averaging::Micro,
            chi_square_form: ChiSquareForm::Binomial,
            embedding: EmbeddingSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub filter: FilterConfig,
    pub nsfw_blocklist: Option<PathBuf>,
    /// Base settings for `generation`: llama2, llama3 or zephyr.
    pub preset: Option<String>,
    /// Fields laid over the preset.
    pub generation: Map<String, Value>,
    pub prompt_plan: Option<PathBuf>,
    pub calibration: CalibrationSection,
    pub unlink: UnlinkOptions,
    pub search: SearchSection,
    pub metrics: MetricsSection,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    #[serde(skip_serializing)]
    pub search_key: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.exists() {
            return Err(UsageError(format!("config file {} does not exist", path.display())).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("config file {}: {e}", path.display())).into())
    }

    /// Applies `DF_ENDPOINT`, `DF_API_KEY`, `DF_SEARCH_KEY` and `DF_PARALLELISM`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(endpoint) = var("DF_ENDPOINT") {
            self.generation.insert("endpoint".into(), Value::String(endpoint));
        }
        if let Some(key) = var("DF_API_KEY") {
            self.api_key = Some(key);
        }
        if let Some(key) = var("DF_SEARCH_KEY") {
            self.search_key = Some(key);
        }
        if let Some(p) = var("DF_PARALLELISM") {
            let n: usize = p
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("DF_PARALLELISM must be a positive integer, got {p:?}")))?;
            self.set_parallelism(n);
        }
        Ok(())
    }

    pub fn set_parallelism(&mut self, n: usize) {
        self.generation.insert("parallelism".into(), Value::from(n));
        self.unlink.parallelism = n;
    }

    /// The preset with the `generation` fields laid over it.
    pub fn generation_config(&self) -> Result<GenerationConfig> {
        let base = match &self.preset {
            Some(name) => GenerationConfig::preset(name)
                .ok_or_else(|| UsageError(format!("unknown preset {name:?} (expected llama2, llama3 or zephyr)")))?,
            None => GenerationConfig::default(),
        };
        let mut merged = match serde_json::to_value(base)? {
            Value::Object(m) => m,
            _ => unreachable!("GenerationConfig serializes to an object"),
        };
        for (k, v) in &self.generation {
            if !merged.contains_key(k) {
                return Err(UsageError(format!("unknown generation setting {k:?}")).into());
            }
            merged.insert(k.clone(), v.clone());
        }
        let config: GenerationConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| UsageError(format!("generation settings: {e}")))?;
        config.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(config)
    }

    /// A copy whose `generation` section is fully resolved, so it re-runs
    /// without depending on presets or the environment. Secrets are dropped
    /// on serialization.
    pub fn snapshot(&self) -> Result<Self> {
        let mut snap = self.clone();
        if let Value::Object(m) = serde_json::to_value(self.generation_config()?)? {
            snap.generation = m;
        }
        Ok(snap)
    }
}
