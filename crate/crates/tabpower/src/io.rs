//! File formats: tables as CSV or JSON, power reports, empirical
//! distributions and histograms.
//!
//! CSV artifacts start with a `# config: {...}` line holding the resolved
//! run configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tabpower_core::power::PowerReport;
use tabpower_core::sim::EmpiricalDistribution;
use tabpower_core::{CountTable, JointTable};

use crate::config::RunConfig;
use crate::error::CliError;

pub const CONFIG_PREFIX: &str = "# config: ";

/// `{"I": .., "J": .., "cells": [[..]]}`
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TableJson<T> {
    #[serde(rename = "I")]
    pub rows: usize,
    #[serde(rename = "J")]
    pub cols: usize,
    pub cells: Vec<Vec<T>>,
}

impl<T: Clone> TableJson<T> {
    fn from_flat(rows: usize, cols: usize, flat: &[T]) -> Self {
        Self {
            rows,
            cols,
            cells: flat.chunks(cols).map(|r| r.to_vec()).collect(),
        }
    }

    fn flatten(self) -> Result<(usize, usize, Vec<T>), CliError> {
        if self.cells.len() != self.rows || self.cells.iter().any(|r| r.len() != self.cols) {
            return Err(CliError::Usage(format!(
                "table JSON declares {}x{} but the cells do not match",
                self.rows, self.cols
            )));
        }
        Ok((
            self.rows,
            self.cols,
            self.cells.into_iter().flatten().collect(),
        ))
    }
}

fn parse_rows<T: std::str::FromStr>(text: &str) -> Result<Vec<Vec<T>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Usage(format!("table CSV: {e}")))?;
        let parsed: Result<Vec<T>, _> = record.iter().map(str::parse).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // an optional header row
            Err(_) if k == 0 => continue,
            Err(_) => {
                return Err(CliError::Usage(format!(
                    "table CSV: row {} is not numeric",
                    k + 1
                )))
            }
        }
    }
    Ok(rows)
}

fn is_json(path: &Path, text: &str) -> bool {
    path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{')
}

/// Reads a probability table from CSV (row-major, header optional) or JSON.
pub fn read_joint_table(path: &Path) -> Result<JointTable, CliError> {
    let text = std::fs::read_to_string(path)?;
    if is_json(path, &text) {
        let t: TableJson<f64> = serde_json::from_str(&text)?;
        let (r, c, flat) = t.flatten()?;
        return Ok(JointTable::new(r, c, flat)?);
    }
    Ok(JointTable::from_rows(&parse_rows::<f64>(&text)?)?)
}

pub fn read_count_table(path: &Path) -> Result<CountTable, CliError> {
    let text = std::fs::read_to_string(path)?;
    if is_json(path, &text) {
        let t: TableJson<u64> = serde_json::from_str(&text)?;
        let (r, c, flat) = t.flatten()?;
        return Ok(CountTable::new(r, c, flat)?);
    }
    Ok(CountTable::from_rows(&parse_rows::<u64>(&text)?)?)
}

/// Probabilities with 17 decimals, enough to round-trip.
pub fn joint_table_csv(table: &JointTable) -> String {
    let mut out = String::new();
    for i in 0..table.rows() {
        let row: Vec<String> = (0..table.cols())
            .map(|j| format!("{:.17}", table.get(i, j)))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn joint_table_json(table: &JointTable) -> TableJson<f64> {
    TableJson::from_flat(table.rows(), table.cols(), table.probs())
}

pub fn count_table_json(table: &CountTable) -> TableJson<u64> {
    TableJson::from_flat(table.rows(), table.cols(), table.counts())
}

fn config_line(config: &RunConfig) -> String {
    format!(
        "{CONFIG_PREFIX}{}\n",
        serde_json::to_string(config).expect("config serializes")
    )
}

/// Recovers the embedded configuration from a CSV or JSON artifact.
pub fn read_embedded_config(text: &str) -> Result<RunConfig, CliError> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix(CONFIG_PREFIX)) {
        return Ok(serde_json::from_str(line)?);
    }
    #[derive(Deserialize)]
    struct WithConfig {
        config: RunConfig,
    }
    let parsed: WithConfig = serde_json::from_str(text)
        .map_err(|_| CliError::Usage("no embedded run configuration found".into()))?;
    Ok(parsed.config)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One output row of the power and simulate commands.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PowerRow {
    pub scenario: String,
    pub epsilon: String,
    #[serde(flatten)]
    pub report: PowerReport,
}

pub const POWER_HEADER: &str = "scenario,epsilon,n,test,alpha,critical_value_n_scale,theoretical,empirical,stderr,zero_marginal_replicates";

pub fn power_rows_csv(config: &RunConfig, rows: &[PowerRow]) -> String {
    let mut out = config_line(config);
    out.push_str(POWER_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.scenario,
            row.epsilon,
            r.n,
            r.test,
            r.alpha,
            r.critical_value,
            opt(r.theoretical_power),
            opt(r.empirical_power),
            opt(r.mc_stderr),
            r.replicates_rejected_for_zero_marginals
        );
    }
    out
}

#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

/// Pretty JSON with the configuration under `"config"`.
pub fn json_artifact<T: Serialize>(config: &RunConfig, body: T) -> String {
    let mut s = serde_json::to_string_pretty(&Artifact { config, body }).expect("serializable");
    s.push('\n');
    s
}

/// One value per line after the configuration line and a header.
pub fn distribution_csv(config: &RunConfig, dist: &EmpiricalDistribution) -> String {
    let mut out = config_line(config);
    let scale = match dist.scale {
        tabpower_core::sim::Scale::N => "n_scaled",
        tabpower_core::sim::Scale::SqrtNCentered => "sqrt_n_centered",
    };
    let _ = writeln!(out, "{}_{}", dist.statistic, scale);
    for v in &dist.samples {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Equal-width bins over sorted values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// counts / (total · width)
    pub density: Vec<f64>,
}

pub fn histogram(sorted: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let (lo, hi) = match (sorted.first(), sorted.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0u64; bins];
    for &v in sorted {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let total = sorted.len().max(1) as f64;
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    Histogram {
        edges,
        counts,
        density,
    }
}
