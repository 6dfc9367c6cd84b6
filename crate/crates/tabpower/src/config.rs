//! Resolved run configuration, embedded in every artifact.

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use tabpower_core::dist::CdfMethod;
use tabpower_core::power::{PowerOptions, TestKind, UnbiasedShift};
use tabpower_core::sim::{NullMethod, Scenario, ScenarioKind};
use tabpower_core::JointTable;

use crate::error::CliError;
use crate::fraction::Fraction;
use crate::io::TableJson;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_FIGURE2_REPLICATIONS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Power,
    Simulate,
    NullLaw,
    Reproduce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Table1,
    Table2,
    Figure2,
    Figure3,
    Figure4,
    Figure5,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Figure2 => "figure2",
            Target::Figure3 => "figure3",
            Target::Figure4 => "figure4",
            Target::Figure5 => "figure5",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Cf,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum NullChoice {
    #[default]
    Asymptotic,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShiftChoice {
    /// full Lemma 1 expression at the alternative
    #[default]
    Lemma1,
    /// independence form (1 − Σr²)(1 − Σs²)
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setting: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableJson<f64>>,
    pub epsilon: String,
    pub n: Vec<u64>,
    pub alpha: f64,
    pub tests: Vec<TestKind>,
    pub replications: u64,
    pub seed: u64,
    pub method: Method,
    pub mc_samples: usize,
    pub null_method: NullChoice,
    pub unbiased_shift: ShiftChoice,
    pub format: Format,
    pub dump_internals: bool,
}

impl RunConfig {
    pub fn epsilon(&self) -> Result<Fraction, CliError> {
        self.epsilon
            .parse()
            .map_err(|e| CliError::Usage(format!("--epsilon: {e}")))
    }

    pub fn scenario_kind(&self) -> Result<ScenarioKind, CliError> {
        match (self.setting, &self.table) {
            (Some(1), None) => Ok(ScenarioKind::Setting1),
            (Some(2), None) => Ok(ScenarioKind::Setting2),
            (Some(s), None) => Err(CliError::Usage(format!(
                "--setting must be 1 or 2, got {s}"
            ))),
            (None, Some(t)) => {
                let flat: Vec<f64> = t.cells.iter().flatten().copied().collect();
                if t.cells.len() != t.rows || t.cells.iter().any(|r| r.len() != t.cols) {
                    return Err(CliError::Usage("embedded table is malformed".into()));
                }
                Ok(ScenarioKind::Custom(JointTable::new(t.rows, t.cols, flat)?))
            }
            (Some(_), Some(_)) => Err(CliError::Usage(
                "give either --setting or --table, not both".into(),
            )),
            (None, None) => Err(CliError::Usage(
                "one of --setting or --table is required".into(),
            )),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        Ok(Scenario::new(
            self.scenario_kind()?,
            self.epsilon()?.value(),
        )?)
    }

    pub fn scenario_label(&self) -> String {
        match self.setting {
            Some(s) => format!("setting{s}"),
            None => "custom".into(),
        }
    }

    pub fn cdf_method(&self) -> CdfMethod {
        match self.method {
            Method::Cf => CdfMethod::CfInversion,
            Method::Mc => CdfMethod::MonteCarlo {
                samples: self.mc_samples,
                seed: self.seed,
            },
        }
    }

    pub fn null_method(&self) -> NullMethod {
        match self.null_method {
            NullChoice::Asymptotic => NullMethod::Asymptotic,
            NullChoice::Mc => NullMethod::MonteCarlo {
                replications: self.replications,
            },
        }
    }

    pub fn shift_rule(&self) -> UnbiasedShift {
        match self.unbiased_shift {
            ShiftChoice::Lemma1 => UnbiasedShift::Lemma1,
            ShiftChoice::Product => UnbiasedShift::IndependenceProduct,
        }
    }

    pub fn power_options(&self) -> PowerOptions {
        PowerOptions {
            alpha: self.alpha,
            method: self.cdf_method(),
            unbiased_shift: self.shift_rule(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Usage(format!(
                "--alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(&n) = self.n.iter().find(|&&n| n == 0) {
            return Err(CliError::Usage(format!("--n must be at least 1, got {n}")));
        }
        if matches!(self.command, Command::Simulate | Command::Reproduce) && self.replications == 0
        {
            return Err(CliError::Usage("--replications must be at least 1".into()));
        }
        if self.method == Method::Mc && self.mc_samples == 0 {
            return Err(CliError::Usage("--mc-samples must be at least 1".into()));
        }
        Ok(())
    }
}
