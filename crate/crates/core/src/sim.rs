//! Scenario tables, multinomial sampling and Monte Carlo estimates of
//! power and of statistic distributions.
//!
//! Replicate `k` always draws from random stream `k` of the run seed, so
//! any split of a replicate range across workers gives the same values.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use libm::sqrt;
use rand::Rng;
use rand_distr::Binomial;

use crate::delta::Functional;
use crate::dist::{empirical_quantile, CdfMethod};
use crate::error::{Error, Result};
use crate::power::{critical_value, PowerReport, TestKind};
use crate::rng::{stream_rng, StreamRng};
use crate::table::{AlternativeSpec, CountTable, JointTable};

/// Default number of simulation replicates.
pub const DEFAULT_REPLICATIONS: u64 = 10_000;

/// First stream used by Monte Carlo null critical values, far above any
/// replicate index.
pub const NULL_STREAM_BASE: u64 = 1 << 62;

const SETTING1_SIZE: usize = 6;
const SETTING2_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioKind {
    Setting1,
    Setting2,
    /// A table given directly; `epsilon` must be 0.
    Custom(JointTable),
}

/// A scenario at one dependence strength.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    kind: ScenarioKind,
    epsilon: f64,
    alternative: AlternativeSpec,
}

fn sign(i: usize, j: usize) -> f64 {
    if (i + j) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn setting2_marginals() -> Vec<f64> {
    let norm = 1.0 - libm::ldexp(1.0, -(SETTING2_SIZE as i32));
    (1..=SETTING2_SIZE)
        .map(|i| libm::ldexp(1.0, -(i as i32)) / norm)
        .collect()
}

fn check_cells(alt: &AlternativeSpec, epsilon: f64) -> Result<()> {
    let t = alt.table();
    for i in 0..t.rows() {
        for j in 0..t.cols() {
            let v = t.get(i, j);
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "epsilon = {epsilon} puts cell ({}, {}) at {v}, outside (0, 1)",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

fn build(kind: &ScenarioKind, epsilon: f64) -> Result<AlternativeSpec> {
    if !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be finite, got {epsilon}"
        )));
    }
    let alt = match kind {
        ScenarioKind::Setting1 => {
            let k = SETTING1_SIZE;
            let marg = vec![1.0 / k as f64; k];
            let c = (0..k * k).map(|x| epsilon * sign(x / k, x % k)).collect();
            AlternativeSpec::new(marg.clone(), marg, c)
        }
        ScenarioKind::Setting2 => {
            let k = SETTING2_SIZE;
            let marg = setting2_marginals();
            let mut c = vec![0.0; k * k];
            c[0] = epsilon;
            c[k + 1] = epsilon;
            c[1] = -epsilon;
            c[k] = -epsilon;
            AlternativeSpec::new(marg.clone(), marg, c)
        }
        ScenarioKind::Custom(table) => {
            if epsilon != 0.0 {
                return Err(Error::InvalidArgument(
                    "epsilon applies only to the built-in settings".into(),
                ));
            }
            Ok(AlternativeSpec::from_table(table))
        }
    };
    // cells pushed out of range fail the AlternativeSpec check; report them by name
    match alt {
        Ok(a) => {
            if !matches!(kind, ScenarioKind::Custom(_)) {
                check_cells(&a, epsilon)?;
            }
            Ok(a)
        }
        Err(Error::InvalidTable(_)) if !matches!(kind, ScenarioKind::Custom(_)) => {
            let cell = first_bad_cell(kind, epsilon);
            Err(Error::InvalidArgument(format!(
                "epsilon = {epsilon} puts cell ({}, {}) outside (0, 1)",
                cell.0, cell.1
            )))
        }
        Err(e) => Err(e),
    }
}

fn first_bad_cell(kind: &ScenarioKind, epsilon: f64) -> (usize, usize) {
    let (k, marg) = match kind {
        ScenarioKind::Setting1 => (
            SETTING1_SIZE,
            vec![1.0 / SETTING1_SIZE as f64; SETTING1_SIZE],
        ),
        _ => (SETTING2_SIZE, setting2_marginals()),
    };
    for i in 0..k {
        for j in 0..k {
            let c = match kind {
                ScenarioKind::Setting1 => epsilon * sign(i, j),
                _ if i < 2 && j < 2 => epsilon * sign(i, j),
                _ => 0.0,
            };
            let v = marg[i] * marg[j] + c;
            if !(v > 0.0 && v < 1.0) {
                return (i + 1, j + 1);
            }
        }
    }
    (1, 1)
}

/// Joint table of a scenario.
pub fn scenario_table(kind: &ScenarioKind, epsilon: f64) -> Result<JointTable> {
    Ok(build(kind, epsilon)?.table().clone())
}

impl Scenario {
    pub fn new(kind: ScenarioKind, epsilon: f64) -> Result<Self> {
        let alternative = build(&kind, epsilon)?;
        Ok(Self {
            kind,
            epsilon,
            alternative,
        })
    }

    /// Pitman local alternative at `n`: `ε = 1/√n`.
    pub fn pitman(kind: ScenarioKind, n: u64) -> Result<Self> {
        if matches!(kind, ScenarioKind::Custom(_)) {
            return Err(Error::InvalidArgument(
                "Pitman mode needs a built-in setting".into(),
            ));
        }
        if n == 0 {
            return Err(Error::InvalidArgument(
                "sample size must be positive".into(),
            ));
        }
        Self::new(kind, 1.0 / sqrt(n as f64))
    }

    pub fn kind(&self) -> &ScenarioKind {
        &self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn table(&self) -> &JointTable {
        self.alternative.table()
    }

    pub fn alternative(&self) -> &AlternativeSpec {
        &self.alternative
    }

    /// Independence table with the scenario's marginals.
    pub fn null_table(&self) -> JointTable {
        self.table().independence_table()
    }
}

/// Multinomial counts by sequential conditional binomials.
pub fn sample_counts_with(table: &JointTable, n: u64, rng: &mut StreamRng) -> CountTable {
    let probs = table.probs();
    let mut counts = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass = 1.0;
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == last {
            counts[k] = left;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = if q >= 1.0 {
            left
        } else {
            rng.sample(Binomial::new(left, q).expect("probability in [0, 1]"))
        };
        counts[k] = draw;
        left -= draw;
        mass -= p;
    }
    CountTable::new(table.rows(), table.cols(), counts).expect("n >= 1")
}

/// One multinomial sample of size `n`, deterministic in `seed`.
pub fn sample_counts(table: &JointTable, n: u64, seed: u64) -> Result<CountTable> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    Ok(sample_counts_with(table, n, &mut stream_rng(seed, 0)))
}

/// Rejection counts over a set of replicates; merging is exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionTally {
    pub rejected: u64,
    pub valid: u64,
    pub zero_marginal: u64,
}

impl RejectionTally {
    pub fn merge(self, other: Self) -> Self {
        Self {
            rejected: self.rejected + other.rejected,
            valid: self.valid + other.valid,
            zero_marginal: self.zero_marginal + other.zero_marginal,
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.valid > 0).then(|| self.rejected as f64 / self.valid as f64)
    }

    pub fn stderr(&self) -> Option<f64> {
        self.rate().map(|p| sqrt(p * (1.0 - p) / self.valid as f64))
    }
}

fn check_sample_size(tests: &[TestKind], n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be at least 1".into(),
        ));
    }
    if n < 4 && tests.contains(&TestKind::DcovUnbiased) {
        return Err(Error::Domain("the unbiased statistic needs n >= 4".into()));
    }
    Ok(())
}

/// `n·T` for each test on one sample; `None` where Pearson meets a zero
/// sample marginal.
fn scaled_statistics(tests: &[TestKind], counts: &CountTable) -> Vec<Option<f64>> {
    let n = counts.n() as f64;
    tests
        .iter()
        .map(|t| match t.statistic(counts) {
            Ok(v) => Some(n * v),
            Err(_) => None,
        })
        .collect()
}

/// Tallies `n·T > q` for every `(test, q)` on replicates in `range`.
pub fn tally_replicates(
    tests: &[(TestKind, f64)],
    table: &JointTable,
    n: u64,
    seed: u64,
    range: Range<u64>,
) -> Result<Vec<RejectionTally>> {
    let kinds: Vec<TestKind> = tests.iter().map(|t| t.0).collect();
    check_sample_size(&kinds, n)?;
    let mut tallies = vec![RejectionTally::default(); tests.len()];
    for k in range {
        let counts = sample_counts_with(table, n, &mut stream_rng(seed, k));
        for ((tally, stat), (_, q)) in tallies
            .iter_mut()
            .zip(scaled_statistics(&kinds, &counts))
            .zip(tests)
        {
            match stat {
                Some(v) => {
                    tally.valid += 1;
                    if v > *q {
                        tally.rejected += 1;
                    }
                }
                None => tally.zero_marginal += 1,
            }
        }
    }
    Ok(tallies)
}

/// Where critical values come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum NullMethod {
    #[default]
    Asymptotic,
    /// Empirical quantile of `n·T` over samples from the independence
    /// table with matched marginals.
    MonteCarlo { replications: u64 },
}

/// `n·T` on replicates `range` drawn from the independence table, using
/// the null streams.
pub fn null_replicates(
    test: TestKind,
    null_table: &JointTable,
    n: u64,
    seed: u64,
    range: Range<u64>,
) -> Result<Vec<f64>> {
    check_sample_size(&[test], n)?;
    let mut out = Vec::with_capacity((range.end - range.start) as usize);
    for k in range {
        let counts = sample_counts_with(null_table, n, &mut stream_rng(seed, NULL_STREAM_BASE + k));
        if let Some(v) = scaled_statistics(&[test], &counts)[0] {
            out.push(v);
        }
    }
    Ok(out)
}

/// Critical value under either null method.
pub fn resolve_critical_value(
    test: TestKind,
    null_table: &JointTable,
    n: u64,
    alpha: f64,
    seed: u64,
    method: NullMethod,
) -> Result<f64> {
    match method {
        NullMethod::Asymptotic => critical_value(test, null_table, alpha, CdfMethod::CfInversion),
        NullMethod::MonteCarlo { replications } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "alpha must be in (0, 1), got {alpha}"
                )));
            }
            if replications == 0 {
                return Err(Error::InvalidArgument(
                    "null replications must be at least 1".into(),
                ));
            }
            let dev = null_table.max_dependence();
            if dev > crate::delta::INDEPENDENCE_TOL {
                return Err(Error::NotIndependent(dev));
            }
            let mut values = null_replicates(test, null_table, n, seed, 0..replications)?;
            if values.is_empty() {
                return Err(Error::Domain(
                    "every null replicate had a zero marginal".into(),
                ));
            }
            values.sort_by(f64::total_cmp);
            Ok(empirical_quantile(&values, 1.0 - alpha))
        }
    }
}

/// Empirical rejection rate of `test` on `replications` samples.
pub fn empirical_power(
    test: TestKind,
    scenario: &Scenario,
    n: u64,
    alpha: f64,
    replications: u64,
    seed: u64,
    null_method: NullMethod,
) -> Result<PowerReport> {
    if replications == 0 {
        return Err(Error::InvalidArgument(
            "replications must be at least 1".into(),
        ));
    }
    let q = resolve_critical_value(test, &scenario.null_table(), n, alpha, seed, null_method)?;
    let tally = tally_replicates(&[(test, q)], scenario.table(), n, seed, 0..replications)?[0];
    Ok(report_from_tally(test, alpha, n, q, tally))
}

pub fn report_from_tally(
    test: TestKind,
    alpha: f64,
    n: u64,
    critical_value: f64,
    tally: RejectionTally,
) -> PowerReport {
    PowerReport {
        test,
        alpha,
        n,
        critical_value,
        theoretical_power: None,
        empirical_power: tally.rate(),
        mc_stderr: tally.stderr(),
        replicates_rejected_for_zero_marginals: tally.zero_marginal,
    }
}

/// Scale on which replicate values are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scale {
    /// `n·T`
    N,
    /// `√n(T − θ)`
    SqrtNCentered,
}

/// Sorted replicate values of a statistic.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmpiricalDistribution {
    pub statistic: TestKind,
    pub scale: Scale,
    pub samples: Vec<f64>,
    pub n: u64,
    pub replications: u64,
    pub seed: u64,
    pub zero_marginal: u64,
}

/// Population value `θ` the statistic estimates.
pub fn population_value(test: TestKind, table: &JointTable) -> Result<f64> {
    match test.functional() {
        Functional::Pearson => crate::table::pearson_functional(table),
        Functional::Dcov => Ok(crate::table::dcov_functional(table)),
    }
}

/// Replicate values for `range`, in replicate order, with the count of
/// replicates skipped for zero marginals.
pub fn replicate_values(
    test: TestKind,
    table: &JointTable,
    n: u64,
    scale: Scale,
    seed: u64,
    range: Range<u64>,
) -> Result<(Vec<f64>, u64)> {
    check_sample_size(&[test], n)?;
    let theta = match scale {
        Scale::N => 0.0,
        Scale::SqrtNCentered => population_value(test, table)?,
    };
    let root_n = sqrt(n as f64);
    let nf = n as f64;
    let mut values = Vec::with_capacity((range.end - range.start) as usize);
    let mut skipped = 0;
    for k in range {
        let counts = sample_counts_with(table, n, &mut stream_rng(seed, k));
        match scaled_statistics(&[test], &counts)[0] {
            Some(v) => values.push(match scale {
                Scale::N => v,
                Scale::SqrtNCentered => root_n * (v / nf - theta),
            }),
            None => skipped += 1,
        }
    }
    Ok((values, skipped))
}

impl EmpiricalDistribution {
    /// Assembles a distribution from unsorted values.
    pub fn from_values(
        statistic: TestKind,
        scale: Scale,
        mut samples: Vec<f64>,
        n: u64,
        replications: u64,
        seed: u64,
        zero_marginal: u64,
    ) -> Self {
        samples.sort_by(f64::total_cmp);
        Self {
            statistic,
            scale,
            samples,
            n,
            replications,
            seed,
            zero_marginal,
        }
    }
}

pub fn empirical_distribution(
    test: TestKind,
    scenario: &Scenario,
    n: u64,
    scale: Scale,
    replications: u64,
    seed: u64,
) -> Result<EmpiricalDistribution> {
    if replications == 0 {
        return Err(Error::InvalidArgument(
            "replications must be at least 1".into(),
        ));
    }
    let (values, skipped) =
        replicate_values(test, scenario.table(), n, scale, seed, 0..replications)?;
    Ok(EmpiricalDistribution::from_values(
        test,
        scale,
        values,
        n,
        replications,
        seed,
        skipped,
    ))
}
