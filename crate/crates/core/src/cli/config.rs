use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bagdata::{DatasetSpec, Experiment, FanOut};
use crate::error::{Error, Result};
use crate::model::{Aggregator, ModelConfig, ModelDims};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// One flat bag per sample.
    Mil,
    #[default]
    Nmil,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Mil => "mil",
            Architecture::Nmil => "nmil",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

/// Dataset sizes and label settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub positive_class: u8,
    pub positive_fraction: f64,
    /// Outermost level first. Empty selects the experiment's default.
    pub fanout: Vec<FanOut>,
    /// Instances per class in `--synthetic` mode.
    pub synthetic_per_class: usize,
    pub synthetic_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_samples: 1000,
            test_samples: 500,
            positive_class: 9,
            positive_fraction: 0.5,
            fanout: Vec::new(),
            synthetic_per_class: 100,
            synthetic_dim: 32,
        }
    }
}

/// Network widths. The input width comes from the instance pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub attention_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128],
            embed_dim: 64,
            attention_dim: 64,
        }
    }
}

/// Everything one run depends on. Loaded from TOML, then overridden by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub architecture: Architecture,
    pub attention: Switch,
    pub aggregator: Aggregator,
    /// Nesting depth of the generated data; 0 selects the experiment's
    /// natural depth.
    pub levels: usize,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub synthetic: bool,
    pub out: PathBuf,
    pub data: DataConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Exp1,
            architecture: Architecture::Nmil,
            attention: Switch::On,
            aggregator: Aggregator::Sum,
            levels: 0,
            seed: 0,
            data_dir: PathBuf::from("data/mnist"),
            synthetic: false,
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub pool: u64,
    pub train_data: u64,
    pub test_data: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl RunConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Depth of the generated bags.
    pub fn data_levels(&self) -> usize {
        if self.levels == 0 {
            self.experiment.default_levels()
        } else {
            self.levels
        }
    }

    /// Depth of the model: 1 for flat MIL.
    pub fn model_levels(&self) -> usize {
        match self.architecture {
            Architecture::Mil => 1,
            Architecture::Nmil => self.data_levels(),
        }
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            pool: self.seed,
            train_data: self.seed,
            test_data: self.seed.wrapping_add(1),
            init: self.seed,
            shuffle: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment == Experiment::Exp3 && self.architecture == Architecture::Mil {
            return Err(Error::Config("exp3 is only defined for the nmil architecture".into()));
        }
        if !self.experiment.accepts_levels(self.data_levels()) {
            return Err(Error::Config(format!(
                "{} cannot be built with {} level(s)",
                self.experiment,
                self.data_levels()
            )));
        }
        if self.data.train_samples < 2 || self.data.test_samples == 0 {
            return Err(Error::Config("need at least 2 training and 1 test sample".into()));
        }
        if self.synthetic && (self.data.synthetic_per_class == 0 || self.data.synthetic_dim == 0) {
            return Err(Error::Config("synthetic pool sizes must be positive".into()));
        }
        self.train.validate()?;
        self.dataset_spec(self.data.train_samples, 0).validate(self.experiment)
    }

    pub fn dataset_spec(&self, samples: usize, seed: u64) -> DatasetSpec {
        let mut spec = DatasetSpec::for_experiment(self.experiment, self.data_levels(), samples, seed);
        spec.positive_class = self.data.positive_class;
        spec.positive_fraction = self.data.positive_fraction;
        if !self.data.fanout.is_empty() {
            spec.fanout = self.data.fanout.clone();
        }
        spec
    }

    pub fn model_dims(&self, input_dim: usize) -> ModelDims {
        ModelDims {
            input_dim,
            hidden_dims: self.net.hidden_dims.clone(),
            embed_dim: self.net.embed_dim,
            attention_dim: self.net.attention_dim,
            levels: self.model_levels(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            aggregator: self.aggregator,
            attention: self.attention.is_on(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().shuffle,
            ..self.train.clone()
        }
    }

    /// Short run label such as `exp2-nmil-att-sum`.
    pub fn label(&self) -> String {
        let att = if self.attention.is_on() { "att" } else { "noatt" };
        format!("{}-{}-{att}-{}", self.experiment, self.architecture, self.aggregator)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp3_rejects_mil_and_wrong_depth() {
        let mut c = RunConfig {
            experiment: Experiment::Exp3,
            architecture: Architecture::Mil,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.architecture = Architecture::Nmil;
        assert!(c.validate().is_ok());
        c.levels = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("experiment = \"exp2\"\n[train]\nmax_epochs = 3\n").unwrap();
        assert_eq!(partial.experiment, Experiment::Exp2);
        assert_eq!(partial.train.max_epochs, 3);
        assert_eq!(partial.train.learning_rate, 0.01);
    }

    #[test]
    fn mil_model_is_single_level() {
        let c = RunConfig {
            experiment: Experiment::Exp2,
            architecture: Architecture::Mil,
            ..RunConfig::default()
        };
        assert_eq!(c.data_levels(), 2);
        assert_eq!(c.model_levels(), 1);
    }
}
