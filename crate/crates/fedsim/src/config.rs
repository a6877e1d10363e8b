//! TOML configuration files for the command-line tools.
//!
//! The file mirrors the library configs section by section. Unknown keys are
//! rejected so a typo in a sweep definition fails loudly, and validation
//! reports every violated field at once rather than the first one found.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cifar::load_cifar10;
use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, RunSettings};
use crate::manifest;
use crate::model::ModelSpec;
use crate::partition::{synthesize_population, Population, PriorDistribution};
use crate::protocol::{ClientConfig, ServerOptimizerConfig};
use crate::sweep::{SweepConfig, SweepGrid};

fn toml_err(err: impl std::fmt::Display) -> Error {
    Error::Parse {
        what: "config file".into(),
        detail: err.to_string(),
    }
}

fn collect(out: &mut Vec<String>, result: Result<()>) {
    if let Err(Error::InvalidConfig(msg)) = result {
        out.extend(msg.lines().map(str::to_owned));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

/// Where the train/test datasets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory holding the six CIFAR-10 binary batch files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        match self.source {
            DataSource::Synthetic => {
                match &self.synthetic {
                    None => bad.push(
                        "data.synthetic: required when data.source = \"synthetic\"".to_string(),
                    ),
                    Some(spec) => collect(&mut bad, spec.validate()),
                }
                if self.dir.is_some() {
                    bad.push("data.dir: only meaningful for data.source = \"cifar10\"".to_string());
                }
            }
            DataSource::Cifar10 => {
                if self.dir.is_none() {
                    bad.push("data.dir: required when data.source = \"cifar10\"".to_string());
                }
                if self.synthetic.is_some() {
                    bad.push(
                        "data.synthetic: only meaningful for data.source = \"synthetic\""
                            .to_string(),
                    );
                }
            }
        }
        Error::check_config(bad)
    }

    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        match self.source {
            DataSource::Synthetic => generate_synthetic(self.synthetic.as_ref().unwrap()),
            DataSource::Cifar10 => load_cifar10(self.dir.as_ref().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationSource {
    Synthesize,
    Manifest,
}

/// Where the client population comes from: fresh Dirichlet synthesis or a
/// previously written manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub source: PopulationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        match self.source {
            PopulationSource::Manifest => {
                if self.manifest.is_none() {
                    bad.push(
                        "population.manifest: required when population.source = \"manifest\""
                            .to_string(),
                    );
                }
                for (name, set) in [
                    ("clients", self.clients.is_some()),
                    ("client_size", self.client_size.is_some()),
                ] {
                    if set {
                        bad.push(format!(
                            "population.{name}: only meaningful when population.source = \"synthesize\""
                        ));
                    }
                }
                if self.alpha.is_some() {
                    bad.push(
                        "population.alpha: only meaningful when population.source = \"synthesize\""
                            .to_string(),
                    );
                }
            }
            PopulationSource::Synthesize => {
                if self.manifest.is_some() {
                    bad.push(
                        "population.manifest: only meaningful when population.source = \"manifest\""
                            .to_string(),
                    );
                }
                if self.clients.is_none() {
                    bad.push("population.clients: required for synthesis".to_string());
                }
                if self.client_size.is_none() {
                    bad.push("population.client_size: required for synthesis".to_string());
                }
                match self.alpha {
                    None => bad.push("population.alpha: required for synthesis".to_string()),
                    Some(a) if a.is_nan() || a <= 0.0 => bad.push(format!(
                        "population.alpha: must be positive (or inf), got {a}"
                    )),
                    _ => {}
                }
                if self.seed.is_none() {
                    bad.push("population.seed: required for synthesis".to_string());
                }
            }
        }
        Error::check_config(bad)
    }

    /// Builds or loads the population for the given training labels.
    pub fn realize(&self, train: &Dataset) -> Result<Population> {
        self.validate()?;
        let population = match self.source {
            PopulationSource::Manifest => manifest::read(self.manifest.as_ref().unwrap())?,
            PopulationSource::Synthesize => {
                let prior = PriorDistribution::uniform(train.num_classes());
                synthesize_population(
                    train.labels(),
                    self.clients.unwrap(),
                    self.client_size.unwrap(),
                    self.alpha.unwrap(),
                    &prior,
                    self.seed.unwrap(),
                )?
            }
        };
        population.validate_against(train.labels())?;
        Ok(population)
    }
}

/// Config file for `fedsim train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    pub population: PopulationConfig,
    pub client: ClientConfig,
    pub server: ServerOptimizerConfig,
    pub run: RunSettings,
}

impl TrainFileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_err)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        collect(&mut bad, self.data.validate());
        collect(&mut bad, self.population.validate());
        collect(&mut bad, self.experiment_config().validate());
        Error::check_config(bad)
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model,
            client: self.client,
            server: self.server,
            run: self.run,
        }
    }

    /// The fully-resolved config (defaults included) as TOML, used to make
    /// run outputs self-describing.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// The `[sweep]` section of a sweep config file: everything in
/// [`SweepConfig`] except the model, which lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub batch_size: usize,
    pub rounds: u64,
    pub eval_every: u64,
    pub clients: usize,
    pub client_size: usize,
    pub kind: crate::protocol::ServerOptKind,
    pub repeats: usize,
    pub population_seed: u64,
    pub training_seed: u64,
    #[serde(default)]
    pub smoothed: bool,
    #[serde(default)]
    pub grid: SweepGrid,
}

/// Config file for `fedsim sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFileConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    pub sweep: SweepSection,
}

impl SweepFileConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_err)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            model: self.model,
            batch_size: self.sweep.batch_size,
            rounds: self.sweep.rounds,
            eval_every: self.sweep.eval_every,
            clients: self.sweep.clients,
            client_size: self.sweep.client_size,
            kind: self.sweep.kind,
            repeats: self.sweep.repeats,
            population_seed: self.sweep.population_seed,
            training_seed: self.sweep.training_seed,
            smoothed: self.sweep.smoothed,
            grid: self.sweep.grid.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        collect(&mut bad, self.data.validate());
        collect(&mut bad, self.sweep_config().validate());
        Error::check_config(bad)
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
