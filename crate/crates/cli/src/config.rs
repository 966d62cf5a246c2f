use std::path::{Path, PathBuf};

use hinf_core::data::ColumnMapping;
use hinf_core::dgp::{preset, DgpSpec};
use hinf_core::inference::{InferenceConfig, ProjectorConfig, ThetaSpec};
use hinf_core::projector::{Regularization, RegressionOptions};
use hinf_core::targets::TargetOptions;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA: &str = "hinf.config/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Fit,
    Infer,
    Simulate,
    Coverage,
    Check,
}

/// A CSV file and the columns feeding each block.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    pub columns: ColumnMapping,
    #[serde(default = "yes")]
    pub rescale_x: bool,
}

fn yes() -> bool {
    true
}

/// A simulation design, either a named preset or a full specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DesignRef {
    Preset {
        preset: String,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    Spec(Box<DgpSpec>),
}

impl DesignRef {
    pub fn resolve(&self, seed: Option<u64>) -> CliResult<DgpSpec> {
        let mut spec = match self {
            DesignRef::Preset { preset: name, n, seed } => preset(name, *n, *seed)?,
            DesignRef::Spec(s) => (**s).clone(),
        };
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub key: String,
    #[serde(default)]
    pub choices: Option<usize>,
    #[serde(default)]
    pub expression: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub keys: Vec<String>,
    pub tstar: Vec<f64>,
    #[serde(default)]
    pub options: TargetOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageBlock {
    pub replications: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

fn default_projector() -> ProjectorConfig {
    ProjectorConfig::Regression(RegressionOptions::default())
}

fn default_regularization() -> String {
    Regularization::default().to_string()
}

/// The single JSON document driving a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<CsvSource>,
    #[serde(default)]
    pub design: Option<DesignRef>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default = "default_projector")]
    pub projector: ProjectorConfig,
    #[serde(default = "default_regularization")]
    pub regularization: String,
    #[serde(default)]
    pub theta: ThetaSpec,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub coverage: Option<CoverageBlock>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl RunConfig {
    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        if let Some(o) = cfg.out.as_mut() {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self, command: Command) -> CliResult<()> {
        if let Some(s) = &self.schema {
            if s != CONFIG_SCHEMA {
                return Err(CliError::Config(format!("config schema `{s}`, expected `{CONFIG_SCHEMA}`")));
            }
        }
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "config is for `{c:?}` but `{command:?}` was requested"
                )));
            }
        }
        self.regularization()?;
        self.inference.validate()?;
        let needs_data = matches!(command, Command::Fit | Command::Infer);
        if needs_data && self.data.is_none() && self.design.is_none() {
            return Err(CliError::Config("`data` or `design` is required".into()));
        }
        if self.data.is_some() && self.design.is_some() && needs_data {
            return Err(CliError::Config("give either `data` or `design`, not both".into()));
        }
        if self.data.is_some() && self.loss.is_none() {
            return Err(CliError::Config("`loss` is required with CSV data".into()));
        }
        if command == Command::Infer && self.data.is_some() && self.target.is_none() {
            return Err(CliError::Config("`target` is required with CSV data".into()));
        }
        if matches!(command, Command::Simulate | Command::Coverage) && self.design.is_none() {
            return Err(CliError::Config("`design` is required".into()));
        }
        if command == Command::Coverage && self.coverage.is_none() {
            return Err(CliError::Config("`coverage` block is required".into()));
        }
        if let Some(t) = &self.target {
            if t.keys.is_empty() {
                return Err(CliError::Config("`target.keys` is empty".into()));
            }
        }
        Ok(())
    }

    pub fn regularization(&self) -> CliResult<Regularization> {
        Ok(self.regularization.parse()?)
    }
}
