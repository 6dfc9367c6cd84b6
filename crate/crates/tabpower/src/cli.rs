//! Command-line arguments and their resolution into a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tabpower_core::power::TestKind;

use crate::config::{
    Command, Format, Method, NullChoice, RunConfig, ShiftChoice, Target,
    DEFAULT_FIGURE2_REPLICATIONS, DEFAULT_MC_SAMPLES, DEFAULT_SEED,
};
use crate::error::CliError;
use crate::fraction::Fraction;
use crate::io;

#[derive(Debug, Parser)]
#[command(
    name = "tabpower",
    version,
    about = "Power of independence tests for two-way contingency tables"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Theoretical power from the second-order laws
    Power(RunArgs),
    /// Empirical power by multinomial simulation, next to the theoretical power
    Simulate(RunArgs),
    /// Null laws of the three statistics at an independent table
    NullLaw(RunArgs),
    /// Regenerate the data behind a table or figure
    Reproduce {
        #[arg(value_enum)]
        target: Target,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Re-run the configuration embedded in an artifact
    Rerun {
        artifact: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Built-in scenario
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2), conflicts_with = "table")]
    pub setting: Option<u8>,
    /// Joint probability table (CSV or JSON)
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Dependence strength, e.g. 1/100
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<Fraction>,
    /// Sample size (repeatable)
    #[arg(long = "n")]
    pub n: Vec<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// pearson, dcov-mle or dcov-unbiased (repeatable; default all three)
    #[arg(long = "test")]
    pub tests: Vec<TestKind>,
    /// Simulation replicates (default 10000; 100000 for figure2)
    #[arg(long)]
    pub replications: Option<u64>,
    /// Random seed; falls back to TABPOWER_SEED
    #[arg(long, env = "TABPOWER_SEED")]
    pub seed: Option<u64>,
    /// Law evaluation: characteristic-function inversion or Monte Carlo
    #[arg(long, value_enum, default_value_t = Method::Cf)]
    pub method: Method,
    /// Monte Carlo size for --method mc and for law curves
    #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    /// Critical values from asymptotic null laws or a simulated null
    #[arg(long, value_enum, default_value_t = NullChoice::Asymptotic)]
    pub null_method: NullChoice,
    /// Deterministic shift used for the unbiased statistic
    #[arg(long, value_enum, default_value_t = ShiftChoice::Lemma1)]
    pub unbiased_shift: ShiftChoice,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output directory (stdout when omitted, except for reproduce)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write gradients, weights and shifts
    #[arg(long)]
    pub dump_internals: bool,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    pub workers: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self, command: Command, target: Option<Target>) -> Result<RunConfig, CliError> {
        let table = match &self.table {
            Some(path) => Some(io::joint_table_json(&io::read_joint_table(path)?)),
            None => None,
        };
        let replications = self.replications.unwrap_or(match target {
            Some(Target::Figure2) => DEFAULT_FIGURE2_REPLICATIONS,
            _ => tabpower_core::sim::DEFAULT_REPLICATIONS,
        });
        let tests = if self.tests.is_empty() {
            TestKind::ALL.to_vec()
        } else {
            self.tests.clone()
        };
        let needs_n = matches!(command, Command::Power | Command::Simulate);
        if needs_n && self.n.is_empty() {
            return Err(CliError::Usage("at least one --n is required".into()));
        }
        if matches!(command, Command::Power | Command::Simulate)
            && self.setting.is_none()
            && table.is_none()
        {
            return Err(CliError::Usage(
                "one of --setting or --table is required".into(),
            ));
        }
        let config = RunConfig {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            target,
            setting: self.setting,
            table,
            epsilon: self
                .epsilon
                .clone()
                .unwrap_or_else(Fraction::zero)
                .to_string(),
            n: self.n.clone(),
            alpha: self.alpha,
            tests,
            replications,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            method: self.method,
            mc_samples: self.mc_samples,
            null_method: self.null_method,
            unbiased_shift: self.unbiased_shift,
            format: self.format,
            dump_internals: self.dump_internals,
        };
        config.validate()?;
        Ok(config)
    }
}
