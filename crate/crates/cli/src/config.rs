//! Configuration file parsing and resolution into runnable scenarios.
//!
//! The file format is TOML with a versioned schema; see `docs/config.md` for
//! the field-by-field reference. Exactly one scenario source must be given:
//! a built-in name or an inline model block.

use serde::Deserialize;
use sha2::{Digest, Sha256};

use ldpfuse_core::matrix::Matrix;
use ldpfuse_core::model::{Drive, SensorModel, SystemModel};
use ldpfuse_core::privacy::PrivacyBudget;
use ldpfuse_core::scenario::{resolve_scenario, ScenarioOverrides, ScenarioRegistry};
use ldpfuse_core::sim::Scenario;

use crate::AppError;

/// Schema version this binary understands.
pub const SUPPORTED_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub config_version: u32,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub budget: Option<BudgetSection>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub privacy_check: PrivacyCheckSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Built-in scenario name (`oxygen` or `tracking`).
    pub name: Option<String>,
    /// Inline model specification.
    pub model: Option<InlineModel>,
    #[serde(default)]
    pub overrides: OverridesSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q_w: Vec<Vec<f64>>,
    pub sensors: Vec<InlineSensor>,
    #[serde(default)]
    pub drive: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSensor {
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub q_v: Vec<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesSection {
    pub q_w: Option<f64>,
    pub q_v: Option<Vec<f64>>,
    pub inhaled_oxygen_fraction: Option<f64>,
    pub alveolar_co2_pressure: Option<f64>,
    pub sample_time: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub zeta_margin: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub burn_in: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyCheckSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Overrides the calibrated noise level for the privacy check only
    /// (informational mode; 0 checks the unperturbed release).
    pub force_q_a: Option<f64>,
}

fn default_samples() -> usize {
    100_000
}

impl Default for PrivacyCheckSection {
    fn default() -> Self {
        PrivacyCheckSection {
            samples: default_samples(),
            force_q_a: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<String>,
}

/// A parsed configuration plus provenance.
pub struct ResolvedConfig {
    pub file: RunConfigFile,
    pub cli: CliOverrides,
    /// SHA-256 of the raw config file bytes.
    pub config_hash: String,
}

impl ResolvedConfig {
    pub fn load(path: &std::path::Path, cli: CliOverrides) -> Result<Self, AppError> {
        let raw = std::fs::read(path).map_err(|e| {
            AppError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let text = std::str::from_utf8(&raw)
            .map_err(|e| AppError::usage(format!("config is not UTF-8: {e}")))?;
        let file: RunConfigFile = toml::from_str(text)
            .map_err(|e| AppError::usage(format!("config parse error: {e}")))?;
        if file.config_version != SUPPORTED_CONFIG_VERSION {
            return Err(AppError::usage(format!(
                "unsupported config_version {} (expected {SUPPORTED_CONFIG_VERSION})",
                file.config_version
            )));
        }
        let sources =
            file.scenario.name.is_some() as u8 + file.scenario.model.is_some() as u8;
        if sources != 1 {
            return Err(AppError::usage(
                "exactly one scenario source required: either scenario.name or scenario.model"
                    .to_string(),
            ));
        }
        let mut hasher = Sha256::new();
        hasher.update(&raw);
        let config_hash = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();
        Ok(ResolvedConfig {
            file,
            cli,
            config_hash,
        })
    }

    pub fn out_dir(&self) -> std::path::PathBuf {
        std::path::PathBuf::from(
            self.cli
                .out
                .clone()
                .unwrap_or_else(|| self.file.output.dir.clone()),
        )
    }

    pub fn seed(&self) -> u64 {
        self.cli.seed.or(self.file.run.seed).unwrap_or(42)
    }

    pub fn threads(&self) -> usize {
        self.cli.threads.or(self.file.run.threads).unwrap_or(0)
    }

    pub fn samples(&self) -> usize {
        self.file.privacy_check.samples
    }

    pub fn force_q_a(&self) -> Option<f64> {
        self.file.privacy_check.force_q_a
    }

    /// Scenario name used in output metadata.
    pub fn scenario_label(&self) -> String {
        self.file
            .scenario
            .name
            .clone()
            .unwrap_or_else(|| "inline".to_string())
    }

    /// Core-level overrides assembled from the file sections and CLI flags.
    pub fn scenario_overrides(&self) -> ScenarioOverrides {
        let o = &self.file.scenario.overrides;
        ScenarioOverrides {
            epsilon: self.file.budget.as_ref().map(|b| b.epsilon),
            delta: self.file.budget.as_ref().map(|b| b.delta),
            q_w: o.q_w,
            q_v: o.q_v.clone(),
            inhaled_oxygen_fraction: o.inhaled_oxygen_fraction,
            alveolar_co2_pressure: o.alveolar_co2_pressure,
            sample_time: o.sample_time,
            runs: self.cli.runs.or(self.file.run.runs),
            horizon: self.cli.horizon.or(self.file.run.horizon),
            burn_in: self.file.run.burn_in,
            seed: Some(self.seed()),
            tol: self.file.solver.tol,
            max_iter: self.file.solver.max_iter,
            zeta_margin: self.file.solver.zeta_margin,
        }
    }

    fn inline_model(&self, spec: &InlineModel) -> Result<(SystemModel, PrivacyBudget), AppError> {
        let a = Matrix::from_rows(&spec.a).map_err(AppError::domain_from)?;
        let b = Matrix::from_rows(&spec.b).map_err(AppError::domain_from)?;
        let q_w = Matrix::from_rows(&spec.q_w).map_err(AppError::domain_from)?;
        let sensors = spec
            .sensors
            .iter()
            .map(|s| {
                SensorModel::new(
                    Matrix::from_rows(&s.c)?,
                    Matrix::from_rows(&s.d)?,
                    Matrix::from_rows(&s.q_v)?,
                )
            })
            .collect::<ldpfuse_core::Result<Vec<_>>>()
            .map_err(AppError::domain_from)?;
        let drive = match &spec.drive {
            Some(u) => Drive::Constant(u.clone()),
            None => Drive::Zero,
        };
        let model = SystemModel::new(a, b, q_w, sensors, drive).map_err(AppError::domain_from)?;
        let budget = match &self.file.budget {
            Some(b) => PrivacyBudget::new(b.epsilon, b.delta).map_err(AppError::domain_from)?,
            None => {
                return Err(AppError::usage(
                    "inline models require a [budget] section".to_string(),
                ))
            }
        };
        Ok((model, budget))
    }

    /// Plant + budget only (no validation/calibration); used by `validate`.
    pub fn build_model(&self) -> Result<(SystemModel, PrivacyBudget), AppError> {
        let overrides = self.scenario_overrides();
        match (&self.file.scenario.name, &self.file.scenario.model) {
            (Some(name), None) => ScenarioRegistry::with_builtins()
                .build_model(name, &overrides)
                .map_err(AppError::domain_from),
            (None, Some(spec)) => self.inline_model(spec),
            _ => unreachable!("source cardinality checked at load"),
        }
    }

    /// Fully calibrated scenario; used by every command past `validate`.
    pub fn build_scenario(&self) -> Result<Scenario, AppError> {
        let overrides = self.scenario_overrides();
        match (&self.file.scenario.name, &self.file.scenario.model) {
            (Some(name), None) => ScenarioRegistry::with_builtins()
                .build(name, &overrides)
                .map_err(AppError::domain_from),
            (None, Some(spec)) => {
                let (model, budget) = self.inline_model(spec)?;
                resolve_scenario("inline", model, budget, &overrides)
                    .map_err(AppError::domain_from)
            }
            _ => unreachable!("source cardinality checked at load"),
        }
    }
}
