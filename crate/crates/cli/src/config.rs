//! Experiment configuration files.

use std::path::{Path, PathBuf};

use rock_core::{Error, FeatureSpec, Generator, Integrator, KernelSpec, Result, SearchSpace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Where the data comes from: a dataset directory or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<Generator>,
}

impl DatasetSource {
    fn validate(&self, what: &str) -> Result<()> {
        match (&self.path, &self.generator) {
            (Some(_), Some(_)) | (None, None) => Err(Error::Config(format!(
                "{what}: exactly one of `path` and `generator` must be given"
            ))),
            (Some(p), None) => {
                if p.is_dir() {
                    Ok(())
                } else {
                    Err(Error::Io(std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{what}: dataset directory {} not found", p.display()),
                    )))
                }
            }
            (None, Some(g)) => g.system.validate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Ode {
        kernel: KernelSpec,
        lambda: f64,
        p: usize,
        /// Training trajectories are cut into pieces of this many samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cut_length: Option<usize>,
        #[serde(default)]
        integrator: Integrator,
    },
    Pde {
        features: FeatureSpec,
        lambda: f64,
        #[serde(default = "default_coarsen")]
        coarsen: usize,
    },
}

fn default_coarsen() -> usize {
    rock_core::pde::DEFAULT_COARSEN
}

impl ModelConfig {
    pub fn lambda(&self) -> f64 {
        match self {
            ModelConfig::Ode { lambda, .. } | ModelConfig::Pde { lambda, .. } => *lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("model.lambda must be positive, got {lambda}")));
        }
        match self {
            ModelConfig::Ode { kernel, p, cut_length, .. } => {
                kernel.validate()?;
                if *p == 0 {
                    return Err(Error::Config("model.p must be at least 1".into()));
                }
                if cut_length.is_some_and(|l| l < 2) {
                    return Err(Error::Config("model.cut_length must be at least 2".into()));
                }
                Ok(())
            }
            ModelConfig::Pde { features, coarsen, .. } => {
                features.validate()?;
                if *coarsen == 0 {
                    return Err(Error::Config("model.coarsen must be at least 1".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Held-out data for `evaluate` when no `--test` directory is passed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<DatasetSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("config {}: {e}", path.display())))
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and pushes the seed into every
    /// random component.
    pub fn resolve(mut self, seed: Option<u64>, output: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = output {
            self.output_dir = Some(o);
        }
        if let Some(g) = self.dataset.generator.as_mut() {
            g.seed = self.seed;
        }
        if let Some(g) = self.test.as_mut().and_then(|t| t.generator.as_mut()) {
            g.seed = self.seed.wrapping_add(1);
        }
        if let Some(s) = self.search.as_mut() {
            s.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate("dataset")?;
        if let Some(t) = &self.test {
            t.validate("test")?;
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let Some(s) = &self.search {
            s.validate()?;
        }
        if self.output_dir.is_none() {
            return Err(Error::Config("output_dir is required (or pass --output)".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> &Path {
        self.output_dir.as_deref().expect("validated")
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a `model` section".into()))
    }

    /// Hex SHA-256 of the resolved config together with the command name.
    pub fn hash(&self, command: &str) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            // The output location does not change what is computed.
            obj.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(canonical.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
