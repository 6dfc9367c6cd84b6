//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when
//! any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::Value;
use tabpower::cli::{Cli, Sub};
use tabpower::commands::{self, Output};
use tabpower::config::{Command, RunConfig};
use tabpower::{io, runner};
use tabpower_core::delta::{
    closed_form_lambdas, grad_dcov, grad_pearson, null_weights_dcov, Functional,
};
use tabpower_core::dist::{self, cdf, quantile, CdfMethod, Law};
use tabpower_core::power::{alternative_law, power_report, PowerOptions, TestKind, UnbiasedShift};
use tabpower_core::rng::{open_unit, stream_rng};
use tabpower_core::sim::{Scenario, ScenarioKind};
use tabpower_core::table::{lemma1_constant, lemma1_independence_form, mle_unbiased_gap};
use tabpower_core::{AlternativeSpec, JointTable};

const TESTS: [TestKind; 3] = [TestKind::Pearson, TestKind::DcovMle, TestKind::DcovUnbiased];
const NS: [u64; 4] = [100, 150, 200, 250];

/// Paper values per table: `(epsilon, [n][test] theoretical, [n][test] simulated)`.
type PaperTable = [(&'static str, [[f64; 3]; 4], [[f64; 3]; 4]); 2];

const TABLE1: PaperTable = [
    (
        "1/100",
        [
            [0.449, 0.482, 0.485],
            [0.690, 0.713, 0.714],
            [0.846, 0.861, 0.860],
            [0.931, 0.936, 0.936],
        ],
        [
            [0.445, 0.464, 0.468],
            [0.693, 0.701, 0.704],
            [0.862, 0.864, 0.867],
            [0.946, 0.947, 0.948],
        ],
    ),
    (
        "1/80",
        [
            [0.698, 0.733, 0.729],
            [0.910, 0.920, 0.919],
            [0.977, 0.980, 0.980],
            [0.994, 0.996, 0.996],
        ],
        [
            [0.714, 0.722, 0.721],
            [0.927, 0.931, 0.934],
            [0.987, 0.987, 0.989],
            [0.998, 0.998, 0.998],
        ],
    ),
];

const TABLE2: PaperTable = [
    (
        "1/20",
        [
            [0.482, 0.748, 0.743],
            [0.681, 0.862, 0.864],
            [0.810, 0.923, 0.922],
            [0.887, 0.955, 0.955],
        ],
        [
            [0.450, 0.726, 0.721],
            [0.656, 0.878, 0.878],
            [0.807, 0.953, 0.952],
            [0.897, 0.983, 0.983],
        ],
    ),
    (
        "1/15",
        [
            [0.763, 0.905, 0.907],
            [0.910, 0.964, 0.963],
            [0.967, 0.986, 0.985],
            [0.989, 0.995, 0.996],
        ],
        [
            [0.754, 0.926, 0.929],
            [0.923, 0.988, 0.989],
            [0.981, 0.997, 0.998],
            [0.996, 0.999, 0.999],
        ],
    ),
];

struct Verdicts {
    failed: Vec<u32>,
}

impl Verdicts {
    fn record(&mut self, id: u32, pass: bool, summary: &str) {
        println!(
            "criterion {id:>2}: {} {summary}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(id);
        }
    }
}

fn note(text: &str) {
    println!("    {text}");
}

fn parse_fraction(s: &str) -> f64 {
    let (a, b) = s.split_once('/').expect("fraction");
    a.parse::<f64>().unwrap() / b.parse::<f64>().unwrap()
}

fn setting_kind(setting: u8) -> ScenarioKind {
    if setting == 1 {
        ScenarioKind::Setting1
    } else {
        ScenarioKind::Setting2
    }
}

fn reproduce_config(args: &[&str]) -> (RunConfig, Option<usize>) {
    let mut argv = vec!["tabpower", "reproduce"];
    argv.extend_from_slice(args);
    match Cli::try_parse_from(argv).expect("valid arguments").command {
        Sub::Reproduce { target, args } => (
            args.resolve(Command::Reproduce, Some(target))
                .expect("valid configuration"),
            args.workers,
        ),
        _ => unreachable!(),
    }
}

fn run(config: &RunConfig, workers: usize) -> Vec<Output> {
    let pool = runner::pool(Some(workers)).expect("pool");
    commands::execute(config, &pool).expect("command succeeds")
}

fn file<'a>(outputs: &'a [Output], name: &str) -> &'a str {
    &outputs
        .iter()
        .find(|o| o.name == name)
        .unwrap_or_else(|| panic!("missing output {name}"))
        .contents
}

// ---------------------------------------------------------------------------
// 1. gradient oracles

fn random_spec(rows: usize, cols: usize, seed: u64, k: u64) -> AlternativeSpec {
    let mut rng = stream_rng(seed, k);
    let mut marg = |len: usize| {
        let raw: Vec<f64> = (0..len).map(|_| 0.2 + open_unit(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    let (r, s) = (marg(rows), marg(cols));
    let m: Vec<f64> = (0..rows * cols)
        .map(|_| 2.0 * open_unit(&mut rng) - 1.0)
        .collect();
    let row_mean: Vec<f64> = (0..rows)
        .map(|i| (0..cols).map(|j| m[i * cols + j]).sum::<f64>() / cols as f64)
        .collect();
    let col_mean: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| m[i * cols + j]).sum::<f64>() / rows as f64)
        .collect();
    let grand: f64 = m.iter().sum::<f64>() / (rows * cols) as f64;
    let mut c: Vec<f64> = (0..rows * cols)
        .map(|x| m[x] - row_mean[x / cols] - col_mean[x % cols] + grand)
        .collect();
    let floor = (0..rows * cols)
        .map(|x| r[x / cols] * s[x % cols])
        .fold(f64::INFINITY, f64::min);
    let peak = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = (0.1 + 0.8 * open_unit(&mut rng)) * floor / peak;
    c.iter_mut().for_each(|v| *v *= scale);
    AlternativeSpec::new(r, s, c).expect("valid random spec")
}

/// Leave-one-out derivative along cell `(i, j)` against the last cell,
/// by Richardson-extrapolated central differences.
fn loo_derivative(f: Functional, alt: &AlternativeSpec, i: usize, j: usize) -> f64 {
    let (rows, cols) = (alt.rows(), alt.cols());
    let base = alt.table().probs().to_vec();
    let eval = |h: f64| {
        let mut cells = base.clone();
        cells[i * cols + j] += h;
        cells[rows * cols - 1] -= h;
        f.eval_cells(rows, cols, &cells)
    };
    let d = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
    let h = 1e-4;
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let shapes = [(2, 2), (2, 3), (3, 3), (3, 4), (4, 4), (6, 6)];
    let (mut worst_p, mut worst_d) = (0.0f64, 0.0f64);
    for (shape, &(rows, cols)) in shapes.iter().enumerate() {
        for k in 0..50 {
            let alt = random_spec(rows, cols, 1000 + shape as u64, k);
            for (f, g) in [
                (Functional::Pearson, grad_pearson(&alt).unwrap()),
                (Functional::Dcov, grad_dcov(&alt).unwrap()),
            ] {
                let (mut err, mut size) = (0.0f64, 0.0f64);
                for i in 0..rows {
                    for j in 0..cols {
                        if i == rows - 1 && j == cols - 1 {
                            continue;
                        }
                        let fd = loo_derivative(f, &alt, i, j);
                        err = err.max((g.get(i, j) - fd).abs());
                        size = size.max(fd.abs());
                    }
                }
                let rel = err / size;
                match f {
                    Functional::Pearson => worst_p = worst_p.max(rel),
                    Functional::Dcov => worst_d = worst_d.max(rel),
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    v.record(
        1,
        worst_p < 1e-5 && worst_d < 1e-7 && secs < 10.0,
        &format!(
            "gradient oracles, 300 specs: max rel error pearson {worst_p:.2e} (< 1e-5), dcov {worst_d:.2e} (< 1e-7), {secs:.2} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. null-law closed forms

fn criterion_2(v: &mut Verdicts) {
    let t = JointTable::independent(&[0.3, 0.7], &[0.4, 0.6]).unwrap();
    let w = null_weights_dcov(&t).unwrap();
    let want = 4.0 * 0.3 * 0.7 * 0.4 * 0.6;
    let two_ok = w.len() == 1 && (w.as_slice()[0] - want).abs() < 1e-8;
    let mut worst = 0.0f64;
    let third = vec![1.0 / 3.0; 3];
    for cols in [third.clone(), vec![0.2, 0.3, 0.5], vec![0.4, 0.6]] {
        let t = JointTable::independent(&third, &cols).unwrap();
        let mut got = null_weights_dcov(&t).unwrap().as_slice().to_vec();
        let l = closed_form_lambdas(&third).unwrap();
        let g = closed_form_lambdas(&cols).unwrap();
        let mut products: Vec<f64> = l
            .iter()
            .flat_map(|a| g.iter().map(move |b| a * b))
            .collect();
        got.sort_by(f64::total_cmp);
        products.sort_by(f64::total_cmp);
        if got.len() != products.len() {
            worst = f64::INFINITY;
            continue;
        }
        for (a, b) in got.iter().zip(&products) {
            worst = worst.max((a - b).abs());
        }
    }
    v.record(
        2,
        two_ok && worst < 1e-6,
        &format!(
            "null weights: 2x2 weight {:.10} vs {want:.4}; I=3 uniform against closed-form products, max error {worst:.1e}",
            w.as_slice().first().copied().unwrap_or(f64::NAN)
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Lemma 1 limit

fn criterion_3(v: &mut Verdicts) {
    let n = 1_000_000;
    let alt = Scenario::new(ScenarioKind::Setting2, 0.1).unwrap();
    let gap_alt = mle_unbiased_gap(alt.table(), n).unwrap();
    let lemma = lemma1_constant(alt.table());
    let null = Scenario::new(ScenarioKind::Setting2, 0.0).unwrap();
    let gap_null = mle_unbiased_gap(null.table(), n).unwrap();
    let product = lemma1_independence_form(null.table());
    let (e1, e0) = ((gap_alt - lemma).abs(), (gap_null - product).abs());
    v.record(
        3,
        e1 < 1e-4 && e0 < 1e-4,
        &format!(
            "Lemma 1 limit at n = 1e6: eps = 1/10 error {e1:.1e}, eps = 0 error {e0:.1e} (< 1e-4)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4, 5. theoretical power tables

fn theoretical(setting: u8, eps: f64, n: u64, test: TestKind, shift: UnbiasedShift) -> f64 {
    let s = Scenario::new(setting_kind(setting), eps).unwrap();
    let opts = PowerOptions {
        unbiased_shift: shift,
        ..PowerOptions::default()
    };
    power_report(test, s.alternative(), n, &opts)
        .unwrap()
        .theoretical_power
        .unwrap()
}

fn table_theoretical(v: &mut Verdicts, id: u32, setting: u8, paper: &PaperTable) {
    let start = Instant::now();
    let mut misses = Vec::new();
    let mut worst = 0.0f64;
    let mut worst_product = 0.0f64;
    for (eps, theory, _) in paper {
        for (a, &n) in NS.iter().enumerate() {
            for (b, &test) in TESTS.iter().enumerate() {
                let ours =
                    theoretical(setting, parse_fraction(eps), n, test, UnbiasedShift::Lemma1);
                let d = (ours - theory[a][b]).abs();
                worst = worst.max(d);
                if d > 0.015 {
                    misses.push(format!(
                        "eps {eps} n {n} {test}: {ours:.4} vs {:.3}",
                        theory[a][b]
                    ));
                }
                if test == TestKind::DcovUnbiased {
                    let p = theoretical(
                        setting,
                        parse_fraction(eps),
                        n,
                        test,
                        UnbiasedShift::IndependenceProduct,
                    );
                    worst_product = worst_product.max((p - theory[a][b]).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    v.record(
        id,
        misses.is_empty() && secs < 120.0,
        &format!(
            "Table {} theoretical: {}/24 cells within 0.015, max difference {worst:.4}, {secs:.1} s",
            setting,
            24 - misses.len()
        ),
    );
    for m in &misses {
        note(&format!("outside tolerance: {m}"));
    }
    note(&format!(
        "info: with the independence-product shift for the unbiased statistic the max difference in that column is {worst_product:.4}"
    ));
}

// ---------------------------------------------------------------------------
// 6. empirical power tables

/// `(epsilon, n, test) -> empirical power` from a table target's rows file.
fn empirical_cells(outputs: &[Output], name: &str) -> BTreeMap<(String, u64, String), f64> {
    let rows: Value = serde_json::from_str(file(outputs, &format!("{name}_rows.json"))).unwrap();
    rows["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| {
            (
                (
                    r["epsilon"].as_str().unwrap().to_string(),
                    r["n"].as_u64().unwrap(),
                    r["test"].as_str().unwrap().to_string(),
                ),
                r["empirical_power"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn criterion_6(v: &mut Verdicts, runs: &[(&PaperTable, &str, &[Output], f64)]) {
    let mut misses = Vec::new();
    let mut worst = 0.0f64;
    let mut secs = 0.0;
    for (paper, name, outputs, t) in runs {
        secs += t;
        let cells = empirical_cells(outputs, name);
        for (eps, _, sim) in paper.iter() {
            for (a, &n) in NS.iter().enumerate() {
                for (b, &test) in TESTS.iter().enumerate() {
                    let ours = cells[&(eps.to_string(), n, test.name().to_string())];
                    let d = (ours - sim[a][b]).abs();
                    worst = worst.max(d);
                    if d > 0.03 {
                        misses.push(format!(
                            "{name} eps {eps} n {n} {test}: {ours:.4} vs {:.3}",
                            sim[a][b]
                        ));
                    }
                }
            }
        }
    }
    v.record(
        6,
        misses.is_empty() && secs < 900.0,
        &format!(
            "empirical power, 10000 replicates: {}/48 cells within 0.03, max difference {worst:.4}, {secs:.1} s",
            48 - misses.len()
        ),
    );
    for m in &misses {
        note(&format!("outside tolerance: {m}"));
    }
}

// ---------------------------------------------------------------------------
// 7. size calibration

fn criterion_7(v: &mut Verdicts) {
    let replications = 10_000;
    let alpha = 0.05;
    let band = 4.0 * (alpha * (1.0 - alpha) / replications as f64).sqrt();
    let pool = runner::pool(None).unwrap();
    let mut worst = 0.0f64;
    let mut misses = Vec::new();
    for setting in [1u8, 2] {
        let s = Scenario::new(setting_kind(setting), 0.0).unwrap();
        for n in NS {
            let pairs: Vec<(TestKind, f64)> = TESTS
                .iter()
                .map(|&t| {
                    (
                        t,
                        tabpower_core::power::critical_value(
                            t,
                            s.table(),
                            alpha,
                            CdfMethod::CfInversion,
                        )
                        .unwrap(),
                    )
                })
                .collect();
            let tallies = runner::tally(&pool, &pairs, s.table(), n, 7, replications).unwrap();
            for ((t, _), tally) in pairs.iter().zip(tallies) {
                let rate = tally.rate().unwrap();
                worst = worst.max((rate - alpha).abs());
                if (rate - alpha).abs() > band {
                    misses.push(format!("setting {setting} n {n} {t}: {rate:.4}"));
                }
            }
        }
    }
    v.record(
        7,
        misses.is_empty(),
        &format!("size at eps = 0, both settings, n in {{100..250}}: max |rate - 0.05| {worst:.4} (band {band:.4})"),
    );
    for m in &misses {
        note(&format!("outside band: {m}"));
    }
}

// ---------------------------------------------------------------------------
// 8. Pitman-mode convergence

fn ks_of(outputs: &[Output], stem: &str) -> f64 {
    let body: Value = serde_json::from_str(file(outputs, &format!("{stem}_hist.json"))).unwrap();
    body["ks_distance"].as_f64().unwrap()
}

fn criterion_8(v: &mut Verdicts, outputs: &[Output], secs: f64) {
    let near = ks_of(outputs, "figure2_setting2_n200");
    let far = ks_of(outputs, "figure2_setting1_n5000");
    v.record(
        8,
        near < 0.02 && far > 0.05 && secs < 600.0,
        &format!(
            "Pitman mode, 100000 replicates: setting 2 n=200 KS {near:.4} (< 0.02), setting 1 n=5000 KS {far:.4} (> 0.05), {secs:.1} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. second-order vs normal

fn criterion_9(v: &mut Verdicts) {
    let (config, _) = reproduce_config(&["figure3", "--seed", "20240601"]);
    let pool = runner::pool(None).unwrap();
    let scenario = Scenario::new(ScenarioKind::Setting1, 1.0 / 40.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for test in TESTS {
        let (_, _, d) =
            commands::fixed_alternative_panel(&config, &pool, test, &scenario, 200).unwrap();
        ok &= d.second_order < d.normal;
        parts.push(format!("{test} {:.4} vs {:.4}", d.second_order, d.normal));
    }
    v.record(
        9,
        ok,
        &format!(
            "setting 1 eps = 1/40 n = 200, KS second-order vs normal: {}",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. distribution engine self-consistency

fn criterion_10(v: &mut Verdicts) {
    let samples = 1_000_000;
    let seed = 99;
    let mut worst_cdf = 0.0f64;
    let mut worst_trip = 0.0f64;
    let mut laws = 0;
    for (setting, paper) in [(1u8, &TABLE1), (2, &TABLE2)] {
        for (eps, _, _) in paper.iter() {
            let s = Scenario::new(setting_kind(setting), parse_fraction(eps)).unwrap();
            for n in NS {
                for test in TESTS {
                    let (law, _) =
                        alternative_law(test, s.alternative(), n, UnbiasedShift::Lemma1).unwrap();
                    let law = Law::SecondOrder(law);
                    laws += 1;
                    // the same draws that CdfMethod::MonteCarlo { samples, seed } uses
                    let mut draws = dist::sample(&law, samples, seed);
                    draws.sort_by(f64::total_cmp);
                    let lo = quantile(&law, 0.001, CdfMethod::CfInversion).unwrap();
                    let hi = quantile(&law, 0.999, CdfMethod::CfInversion).unwrap();
                    for k in 0..21 {
                        let x = lo + (hi - lo) * k as f64 / 20.0;
                        let exact = cdf(&law, x, CdfMethod::CfInversion).unwrap();
                        let mc = draws.partition_point(|&d| d <= x) as f64 / samples as f64;
                        worst_cdf = worst_cdf.max((exact - mc).abs());
                    }
                    for p in [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99] {
                        let q = quantile(&law, p, CdfMethod::CfInversion).unwrap();
                        let back = cdf(&law, q, CdfMethod::CfInversion).unwrap();
                        worst_trip = worst_trip.max((back - p).abs());
                    }
                }
            }
        }
    }
    v.record(
        10,
        worst_cdf < 0.002 && worst_trip < 1e-5,
        &format!(
            "{laws} laws, 21 points each: max |cf - mc(1e6)| {worst_cdf:.5} (< 0.002), quantile round trip {worst_trip:.1e} (< 1e-5)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. determinism

/// Outputs with the wall-clock runtime removed from the manifest.
fn comparable(outputs: &[Output]) -> Vec<(String, String)> {
    outputs
        .iter()
        .map(|o| {
            if o.name == "manifest.json" {
                let mut m: Value = serde_json::from_str(&o.contents).unwrap();
                m.as_object_mut().unwrap().remove("runtime_seconds");
                (o.name.clone(), m.to_string())
            } else {
                (o.name.clone(), o.contents.clone())
            }
        })
        .collect()
}

fn criterion_11(v: &mut Verdicts, first: &[(String, Vec<Output>)]) {
    let mut ok = true;
    let mut files = 0;
    for (name, outputs) in first {
        // rerun from the configuration embedded in the first artifact
        let artifact = outputs.iter().find(|o| o.name != "manifest.json").unwrap();
        let config = io::read_embedded_config(&artifact.contents).unwrap();
        let base = comparable(outputs);
        files += base.len();
        for workers in [1, 8] {
            let again = comparable(&run(&config, workers));
            if again != base {
                ok = false;
                note(&format!("{name}: outputs differ with {workers} worker(s)"));
            }
        }
    }
    v.record(
        11,
        ok,
        &format!("{files} artifacts of criteria 6 and 8 byte-identical on rerun with 1 and 8 workers (manifest runtime excluded)"),
    );
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut v = Verdicts { failed: Vec::new() };
    criterion_1(&mut v);
    criterion_2(&mut v);
    criterion_3(&mut v);
    table_theoretical(&mut v, 4, 1, &TABLE1);
    table_theoretical(&mut v, 5, 2, &TABLE2);

    let mut first = Vec::new();
    let mut timed = Vec::new();
    for target in ["table1", "table2", "figure2"] {
        let (config, _) = reproduce_config(&[target, "--seed", "20240601"]);
        let start = Instant::now();
        let outputs = run(&config, 1);
        timed.push(start.elapsed().as_secs_f64());
        first.push((target.to_string(), outputs));
    }
    criterion_6(
        &mut v,
        &[
            (&TABLE1, "table1", &first[0].1, timed[0]),
            (&TABLE2, "table2", &first[1].1, timed[1]),
        ],
    );
    criterion_7(&mut v);
    criterion_8(&mut v, &first[2].1, timed[2]);
    criterion_9(&mut v);
    criterion_10(&mut v);
    criterion_11(&mut v, &first);

    if v.failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", v.failed);
        ExitCode::FAILURE
    }
}
