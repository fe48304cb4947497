use std::path::{Path, PathBuf};

use numrep::patchkit::{ComponentSelection, LocusGrid, DEFAULT_STEPS};
use numrep::probe::{Locus, DEFAULT_K_SWEEP};
use numrep::synthworld::WorldConfig;
use numrep::tinylm::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Model dimensions; vocabulary size and seed come from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(1, 0);
        Self {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_seq_len: c.max_seq_len,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            ..ModelConfig::new(vocab_size, seed)
        }
    }
}

/// Training settings used when the config does not give any. Memorizing
/// the default world within a few minutes needs a larger step than Adam's
/// usual 3e-4; 1.5e-3 and above diverge. Soft answer targets early on give
/// the answer levels an ordering that plain one-hot training never finds.
pub fn default_train() -> TrainConfig {
    TrainConfig {
        epochs: 55,
        lr: 1e-3,
        answer_smoothing: 2.0,
        smoothing_anneal_epochs: 25,
        ..TrainConfig::default()
    }
}

fn default_k_sweep() -> Vec<usize> {
    DEFAULT_K_SWEEP.to_vec()
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn default_n_test() -> usize {
    100
}

fn yes() -> bool {
    true
}

fn default_sigma() -> f64 {
    0.05
}

fn default_side_steps() -> usize {
    21
}

fn default_side_entities() -> usize {
    20
}

fn default_n_dev() -> usize {
    20
}

fn default_max_new() -> usize {
    2
}

fn default_table_components() -> usize {
    8
}

fn default_selection() -> ComponentSelection {
    ComponentSelection::First
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// JSON world config; the default world when absent.
    #[serde(default)]
    pub world_config: Option<PathBuf>,
    /// JSON model shape; the default tiny model when absent.
    #[serde(default)]
    pub model_config: Option<PathBuf>,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub locus: Locus,
    #[serde(default = "default_k_sweep")]
    pub k_sweep: Vec<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "yes")]
    pub instruction_suffix: bool,
    #[serde(default = "default_selection")]
    pub component_selection: ComponentSelection,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default = "default_sigma")]
    pub oracle_sigma: f64,
    #[serde(default = "default_side_steps")]
    pub side_effect_steps: usize,
    #[serde(default = "default_side_entities")]
    pub side_effect_entities: usize,
    #[serde(default = "yes")]
    pub locus_search: bool,
    #[serde(default)]
    pub locus_grid: LocusGrid,
    #[serde(default = "default_n_dev")]
    pub n_dev: usize,
    #[serde(default = "default_max_new")]
    pub max_new: usize,
    /// Components shown in the per-entity component table.
    #[serde(default = "default_table_components")]
    pub table_components: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn field(name: &str, why: &str) -> CliError {
    CliError::Config(format!("invalid config field `{name}`: {why}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, p) in [("world_config", &self.world_config), ("model_config", &self.model_config)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(field(name, &format!("{} does not exist", p.display())));
                }
            }
        }
        self.train.validate().map_err(|e| field("train", &e.to_string()))?;
        if self.k_sweep.is_empty() || self.k_sweep[0] == 0 || self.k_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(field("k_sweep", "must be non-empty, positive and strictly increasing"));
        }
        if self.steps < 3 {
            return Err(field("steps", "must be >= 3"));
        }
        if self.side_effect_steps < 3 {
            return Err(field("side_effect_steps", "must be >= 3"));
        }
        if self.n_test < 1 {
            return Err(field("n_test", "must be >= 1"));
        }
        if self.side_effect_entities < 1 {
            return Err(field("side_effect_entities", "must be >= 1"));
        }
        if self.n_dev < 1 {
            return Err(field("n_dev", "must be >= 1"));
        }
        if self.max_new < 1 {
            return Err(field("max_new", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.locus.layer_fraction) {
            return Err(field("locus", "layer_fraction must lie in [0, 1]"));
        }
        if !(self.oracle_sigma >= 0.0 && self.oracle_sigma.is_finite()) {
            return Err(field("oracle_sigma", "must be finite and >= 0"));
        }
        if self.locus_grid.layer_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(field("locus_grid", "layer fractions must lie in [0, 1]"));
        }
        if self.locus_grid.steps < 3 {
            return Err(field("locus_grid", "steps must be >= 3"));
        }
        Ok(())
    }

    pub fn world(&self) -> Result<WorldConfig, CliError> {
        let mut w = match &self.world_config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| field("world_config", &format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| field("world_config", &e.to_string()))?
            }
            None => WorldConfig {
                seed: self.seed,
                ..WorldConfig::default()
            },
        };
        if self.world_config.is_none() {
            w.seed = self.seed;
        }
        w.validate().map_err(|e| field("world_config", &e.to_string()))?;
        Ok(w)
    }

    pub fn shape(&self) -> Result<ModelShape, CliError> {
        let shape = match &self.model_config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| field("model_config", &format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| field("model_config", &e.to_string()))?
            }
            None => ModelShape::default(),
        };
        shape
            .config(2, 0)
            .validate()
            .map_err(|e| field("model_config", &e.to_string()))?;
        Ok(shape)
    }
}
