//! The four commands, each a pure function of a [`RunConfig`] returning
//! named output files.

use std::time::Instant;

use rayon::ThreadPool;
use serde::Serialize;
use serde_json::json;
use tabpower_core::delta::{closed_form_lambdas, expansion, null_weights_dcov};
use tabpower_core::dist::{cdf, ks_distance, ks_two_sample, noncentral_chisq_cdf, CdfMethod, Law};
use tabpower_core::power::{
    alternative_law, critical_value, pitman_ncp, power_at, PowerReport, TestKind,
};
use tabpower_core::sim::{report_from_tally, EmpiricalDistribution, Scale, Scenario, ScenarioKind};
use tabpower_core::special::normal_cdf;
use tabpower_core::table::{lemma1_constant, lemma1_independence_form};

use crate::config::{Command, Format, RunConfig, Target};
use crate::error::CliError;
use crate::io::{self, Histogram, PowerRow};
use crate::runner;

pub const HISTOGRAM_BINS: usize = 60;

/// A file produced by a command.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub name: String,
    pub contents: String,
}

impl Output {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Self {
            name: name.into(),
            contents,
        }
    }
}

pub fn execute(config: &RunConfig, pool: &ThreadPool) -> Result<Vec<Output>, CliError> {
    config.validate()?;
    match config.command {
        Command::Power => power(config, pool),
        Command::Simulate => simulate(config, pool),
        Command::NullLaw => null_law(config),
        Command::Reproduce => {
            let target = config
                .target
                .ok_or_else(|| CliError::Usage("reproduce needs a target".into()))?;
            reproduce(config, target, pool)
        }
    }
}

fn require_alternative(scenario: &Scenario) -> Result<(), CliError> {
    if scenario.alternative().is_null() {
        return Err(CliError::Usage(
            "epsilon = 0 is the null hypothesis; fixed-alternative power needs a nonzero perturbation".into(),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct Internals {
    test: TestKind,
    n: u64,
    theta: f64,
    sigma: f64,
    weights: Vec<f64>,
    shift: f64,
    lemma1_alternative: f64,
    lemma1_null: f64,
    gradient: Vec<f64>,
    critical_value_n_scale: f64,
    threshold_sqrt_n_scale: f64,
}

fn theoretical_rows(
    config: &RunConfig,
    scenario: &Scenario,
    pool: &ThreadPool,
    internals: &mut Vec<Internals>,
) -> Result<Vec<PowerRow>, CliError> {
    let opts = config.power_options();
    let null_table = scenario.null_table();
    let mut rows = Vec::new();
    for &n in &config.n {
        for &test in &config.tests {
            let q = runner::resolve_critical_value(
                pool,
                test,
                &null_table,
                n,
                opts.alpha,
                config.seed,
                config.null_method(),
            )?;
            let (law, theta) =
                alternative_law(test, scenario.alternative(), n, opts.unbiased_shift)?;
            let p = power_at(&law, theta, q, opts.method)?;
            if config.dump_internals {
                let parts = expansion(test.functional(), scenario.alternative())?;
                internals.push(Internals {
                    test,
                    n,
                    theta,
                    sigma: law.sigma,
                    weights: law.weights.as_slice().to_vec(),
                    shift: law.shift,
                    lemma1_alternative: lemma1_constant(scenario.table()),
                    lemma1_null: lemma1_independence_form(&null_table),
                    gradient: parts.gradient.values().to_vec(),
                    critical_value_n_scale: q,
                    threshold_sqrt_n_scale: (q - n as f64 * theta) / (n as f64).sqrt(),
                });
            }
            rows.push(PowerRow {
                scenario: config.scenario_label(),
                epsilon: config.epsilon.clone(),
                report: PowerReport {
                    test,
                    alpha: opts.alpha,
                    n,
                    critical_value: q,
                    theoretical_power: Some(p),
                    empirical_power: None,
                    mc_stderr: None,
                    replicates_rejected_for_zero_marginals: 0,
                },
            });
        }
    }
    Ok(rows)
}

fn render_rows(config: &RunConfig, stem: &str, rows: &[PowerRow]) -> Output {
    match config.format {
        Format::Csv => Output::new(format!("{stem}.csv"), io::power_rows_csv(config, rows)),
        Format::Json => Output::new(
            format!("{stem}.json"),
            io::json_artifact(config, json!({ "rows": rows })),
        ),
    }
}

fn power(config: &RunConfig, pool: &ThreadPool) -> Result<Vec<Output>, CliError> {
    let scenario = config.scenario()?;
    require_alternative(&scenario)?;
    let mut internals = Vec::new();
    let rows = theoretical_rows(config, &scenario, pool, &mut internals)?;
    let mut out = vec![render_rows(config, "power", &rows)];
    if config.dump_internals {
        out.push(Output::new(
            "internals.json",
            io::json_artifact(config, json!({ "internals": internals })),
        ));
    }
    Ok(out)
}

/// Empirical rows for every `(n, test)`; theoretical power is filled in
/// when the scenario is a fixed alternative.
fn simulate_rows(
    config: &RunConfig,
    scenario: &Scenario,
    pool: &ThreadPool,
) -> Result<Vec<PowerRow>, CliError> {
    let opts = config.power_options();
    let null_table = scenario.null_table();
    let fixed = !scenario.alternative().is_null();
    let mut rows = Vec::new();
    for &n in &config.n {
        let mut pairs = Vec::new();
        for &test in &config.tests {
            let q = runner::resolve_critical_value(
                pool,
                test,
                &null_table,
                n,
                opts.alpha,
                config.seed,
                config.null_method(),
            )?;
            pairs.push((test, q));
        }
        let tallies = runner::tally(
            pool,
            &pairs,
            scenario.table(),
            n,
            config.seed,
            config.replications,
        )?;
        for (&(test, q), tally) in pairs.iter().zip(tallies) {
            let mut report = report_from_tally(test, opts.alpha, n, q, tally);
            if fixed {
                let (law, theta) =
                    alternative_law(test, scenario.alternative(), n, opts.unbiased_shift)?;
                report.theoretical_power = Some(power_at(&law, theta, q, opts.method)?);
            }
            rows.push(PowerRow {
                scenario: config.scenario_label(),
                epsilon: config.epsilon.clone(),
                report,
            });
        }
    }
    Ok(rows)
}

fn simulate(config: &RunConfig, pool: &ThreadPool) -> Result<Vec<Output>, CliError> {
    let scenario = config.scenario()?;
    let rows = simulate_rows(config, &scenario, pool)?;
    Ok(vec![render_rows(config, "simulate", &rows)])
}

fn null_law(config: &RunConfig) -> Result<Vec<Output>, CliError> {
    let scenario = match config.scenario_kind()? {
        kind @ ScenarioKind::Custom(_) => Scenario::new(kind, 0.0)?,
        kind => Scenario::new(kind, config.epsilon()?.value())?,
    };
    let table = scenario.table();
    let dev = table.max_dependence();
    if dev > tabpower_core::delta::INDEPENDENCE_TOL {
        return Err(tabpower_core::Error::NotIndependent(dev).into());
    }
    let weights = null_weights_dcov(table)?;
    let (rows, cols) = (table.rows(), table.cols());
    let mut critical = serde_json::Map::new();
    for test in TestKind::ALL {
        let q = critical_value(test, table, config.alpha, config.cdf_method())?;
        critical.insert(test.name().into(), json!(q));
    }
    let closed_form = match (
        closed_form_lambdas(table.row_marginals()),
        closed_form_lambdas(table.col_marginals()),
    ) {
        (Some(l), Some(g)) => {
            let mut products: Vec<f64> = l
                .iter()
                .flat_map(|a| g.iter().map(move |b| a * b))
                .collect();
            products.sort_by(|a, b| b.abs().total_cmp(&a.abs()).then(b.total_cmp(a)));
            json!({ "row_lambdas": l, "col_gammas": g, "products": products })
        }
        _ => serde_json::Value::Null,
    };
    let body = json!({
        "table": io::joint_table_json(table),
        "pearson_df": (rows - 1) * (cols - 1),
        "dcov_weights": weights.as_slice(),
        "lemma1_constant": lemma1_constant(table),
        "alpha": config.alpha,
        "critical_values_n_scale": critical,
        "closed_form": closed_form,
    });
    Ok(vec![Output::new(
        "null_law.json",
        io::json_artifact(config, body),
    )])
}

/// Row layout of the paper's power tables.
fn table_target(
    config: &RunConfig,
    target: Target,
    pool: &ThreadPool,
) -> Result<Vec<Output>, CliError> {
    let (setting, eps): (u8, [&str; 2]) = match target {
        Target::Table1 => (1, ["1/100", "1/80"]),
        _ => (2, ["1/20", "1/15"]),
    };
    let ns = if config.n.is_empty() {
        vec![100, 150, 200, 250]
    } else {
        config.n.clone()
    };
    let mut header = String::from("epsilon,n");
    for t in &config.tests {
        header.push_str(&format!(",{t}_theoretical,{t}_empirical,{t}_stderr"));
    }
    let mut body = String::new();
    let mut all_rows = Vec::new();
    for e in eps {
        let sub = RunConfig {
            command: Command::Simulate,
            target: None,
            setting: Some(setting),
            table: None,
            epsilon: e.into(),
            n: ns.clone(),
            ..config.clone()
        };
        let scenario = sub.scenario()?;
        let rows = simulate_rows(&sub, &scenario, pool)?;
        for &n in &ns {
            body.push_str(&format!("{e},{n}"));
            for t in &config.tests {
                let r = &rows
                    .iter()
                    .find(|r| r.report.n == n && r.report.test == *t)
                    .expect("row present")
                    .report;
                let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
                body.push_str(&format!(
                    ",{},{},{}",
                    f(r.theoretical_power),
                    f(r.empirical_power),
                    f(r.mc_stderr)
                ));
            }
            body.push('\n');
        }
        all_rows.extend(rows);
    }
    let name = target.name();
    let csv = format!("{}{}\n{}", config_line(config), header, body);
    Ok(vec![
        Output::new(format!("{name}.csv"), csv),
        Output::new(
            format!("{name}_rows.json"),
            io::json_artifact(config, json!({ "rows": all_rows })),
        ),
    ])
}

fn config_line(config: &RunConfig) -> String {
    format!(
        "{}{}\n",
        io::CONFIG_PREFIX,
        serde_json::to_string(config).expect("config serializes")
    )
}

/// Bin probabilities of a reference CDF over histogram edges.
fn bin_probabilities<F>(h: &Histogram, mut f: F) -> Result<Vec<f64>, CliError>
where
    F: FnMut(f64) -> Result<f64, CliError>,
{
    let cdfs: Vec<f64> = h.edges.iter().map(|&x| f(x)).collect::<Result<_, _>>()?;
    Ok(cdfs.windows(2).map(|w| w[1] - w[0]).collect())
}

fn sample_probabilities(h: &Histogram, sorted: &[f64]) -> Vec<f64> {
    let m = sorted.len() as f64;
    let below = |x: f64| sorted.partition_point(|&v| v <= x) as f64 / m;
    h.edges
        .windows(2)
        .map(|w| below(w[1]) - below(w[0]))
        .collect()
}

fn panel_outputs(
    config: &RunConfig,
    stem: &str,
    dist: &EmpiricalDistribution,
    body: serde_json::Value,
) -> Vec<Output> {
    vec![
        Output::new(format!("{stem}.csv"), io::distribution_csv(config, dist)),
        Output::new(format!("{stem}_hist.json"), io::json_artifact(config, body)),
    ]
}

fn figure2(config: &RunConfig, pool: &ThreadPool) -> Result<Vec<Output>, CliError> {
    let panels: Vec<(u8, Vec<u64>)> = if config.n.is_empty() {
        vec![(1, vec![2000, 3500, 5000]), (2, vec![100, 150, 200])]
    } else {
        vec![(1, config.n.clone()), (2, config.n.clone())]
    };
    let mut out = Vec::new();
    for (setting, ns) in panels {
        let kind = if setting == 1 {
            ScenarioKind::Setting1
        } else {
            ScenarioKind::Setting2
        };
        for n in ns {
            let scenario = match Scenario::pitman(kind.clone(), n) {
                Ok(s) => s,
                // Setting 1 needs n > 1296 for ε = 1/√n to be a valid perturbation
                Err(e) if !config.n.is_empty() => {
                    eprintln!("skipping setting {setting}, n = {n}: {e}");
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let (values, skipped) = runner::values(
                pool,
                TestKind::Pearson,
                scenario.table(),
                n,
                Scale::N,
                config.seed,
                config.replications,
            )?;
            let dist = EmpiricalDistribution::from_values(
                TestKind::Pearson,
                Scale::N,
                values,
                n,
                config.replications,
                config.seed,
                skipped,
            );
            let alt = scenario.alternative();
            let df = ((alt.rows() - 1) * (alt.cols() - 1)) as u32;
            let ncp = pitman_ncp(alt, n)?;
            let reference = |x: f64| noncentral_chisq_cdf(df, ncp, x).map_err(CliError::from);
            let ks = ks_distance(&dist.samples, reference)?;
            let h = io::histogram(&dist.samples, HISTOGRAM_BINS);
            let reference_bins = bin_probabilities(&h, reference)?;
            let body = json!({
                "setting": setting,
                "n": n,
                "epsilon": scenario.epsilon(),
                "statistic": "n * pearson",
                "histogram": h,
                "reference": {
                    "law": "noncentral_chi_square",
                    "df": df,
                    "ncp": ncp,
                    "bin_probabilities": reference_bins,
                },
                "ks_distance": ks,
                "zero_marginal_replicates": skipped,
            });
            out.extend(panel_outputs(
                config,
                &format!("figure2_setting{setting}_n{n}"),
                &dist,
                body,
            ));
        }
    }
    Ok(out)
}

/// KS distances of one fixed-alternative panel: to the second-order law
/// sample and to the first-order normal law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PanelDistances {
    pub second_order: f64,
    pub normal: f64,
}

pub fn fixed_alternative_panel(
    config: &RunConfig,
    pool: &ThreadPool,
    test: TestKind,
    scenario: &Scenario,
    n: u64,
) -> Result<(EmpiricalDistribution, serde_json::Value, PanelDistances), CliError> {
    let (values, skipped) = runner::values(
        pool,
        test,
        scenario.table(),
        n,
        Scale::SqrtNCentered,
        config.seed,
        config.replications,
    )?;
    let dist = EmpiricalDistribution::from_values(
        test,
        Scale::SqrtNCentered,
        values,
        n,
        config.replications,
        config.seed,
        skipped,
    );
    let (law, theta) = alternative_law(test, scenario.alternative(), n, config.shift_rule())?;
    let law = Law::SecondOrder(law);
    let mut law_sample = runner::law_sample(pool, &law, config.mc_samples, config.seed);
    law_sample.sort_by(f64::total_cmp);
    let sigma = match &law {
        Law::SecondOrder(l) => l.sigma,
        Law::Null(_) => unreachable!(),
    };
    let normal = |x: f64| Ok::<_, CliError>(normal_cdf(x / sigma));
    let distances = PanelDistances {
        second_order: ks_two_sample(&dist.samples, &law_sample),
        normal: ks_distance(&dist.samples, normal)?,
    };
    let h = io::histogram(&dist.samples, HISTOGRAM_BINS);
    let second_bins = match config.cdf_method() {
        CdfMethod::CfInversion => {
            bin_probabilities(&h, |x| Ok(cdf(&law, x, CdfMethod::CfInversion)?))?
        }
        CdfMethod::MonteCarlo { .. } => sample_probabilities(&h, &law_sample),
    };
    let body = json!({
        "n": n,
        "epsilon": scenario.epsilon(),
        "statistic": format!("sqrt(n) * ({test} - theta)"),
        "theta": theta,
        "histogram": h,
        "first_order": { "law": "normal", "sigma": sigma, "bin_probabilities": bin_probabilities(&h, normal)? },
        "second_order": {
            "law": law,
            "bin_probabilities": second_bins,
            "sample_bin_probabilities": sample_probabilities(&h, &law_sample),
            "mc_samples": config.mc_samples,
        },
        "ks_distance": distances,
        "zero_marginal_replicates": skipped,
    });
    Ok((dist, body, distances))
}

fn fixed_figure(
    config: &RunConfig,
    target: Target,
    pool: &ThreadPool,
) -> Result<Vec<Output>, CliError> {
    let test = match target {
        Target::Figure3 => TestKind::Pearson,
        Target::Figure4 => TestKind::DcovMle,
        _ => TestKind::DcovUnbiased,
    };
    let ns = if config.n.is_empty() {
        vec![200, 1000, 5000]
    } else {
        config.n.clone()
    };
    let mut out = Vec::new();
    for (setting, kind, eps) in [
        (1, ScenarioKind::Setting1, 1.0 / 40.0),
        (2, ScenarioKind::Setting2, 1.0 / 10.0),
    ] {
        let scenario = Scenario::new(kind, eps)?;
        for &n in &ns {
            let (dist, body, _) = fixed_alternative_panel(config, pool, test, &scenario, n)?;
            let stem = format!("{}_setting{setting}_n{n}", target.name());
            out.extend(panel_outputs(config, &stem, &dist, body));
        }
    }
    Ok(out)
}

fn reproduce(
    config: &RunConfig,
    target: Target,
    pool: &ThreadPool,
) -> Result<Vec<Output>, CliError> {
    let start = Instant::now();
    let mut out = match target {
        Target::Table1 | Target::Table2 => table_target(config, target, pool)?,
        Target::Figure2 => figure2(config, pool)?,
        _ => fixed_figure(config, target, pool)?,
    };
    let files: Vec<&str> = out.iter().map(|o| o.name.as_str()).collect();
    let manifest = json!({
        "target": target.name(),
        "seed": config.seed,
        "replications": config.replications,
        "runtime_seconds": start.elapsed().as_secs_f64(),
        "files": files,
        "config": config,
    });
    out.push(Output::new(
        "manifest.json",
        serde_json::to_string_pretty(&manifest).expect("serializable") + "\n",
    ));
    Ok(out)
}
