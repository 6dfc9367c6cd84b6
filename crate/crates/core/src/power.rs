//! Critical values, second-order theoretical power and Pitman power.
//!
//! Critical values live on the n-scale of the statistic (`n·T`); the
//! alternative laws describe `√n(T − θ)`. The two meet through
//! `{n·T > q} = {√n(T − θ) > (q − nθ)/√n}`.

use alloc::format;

use libm::sqrt;

use crate::delta::{expansion, null_weights_dcov, Functional, INDEPENDENCE_TOL};
use crate::dist::{cdf, noncentral_chisq_cdf, quantile, CdfMethod, Law, NullLaw, SecondOrderLaw};
use crate::error::{Error, Result};
use crate::special::chi_square_quantile;
use crate::table::{
    lemma1_constant, lemma1_independence_form, stat_dcov_mle, stat_dcov_unbiased, stat_pearson,
    AlternativeSpec, CountTable, JointTable,
};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TestKind {
    Pearson,
    DcovMle,
    DcovUnbiased,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::Pearson, TestKind::DcovMle, TestKind::DcovUnbiased];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Pearson => "pearson",
            TestKind::DcovMle => "dcov_mle",
            TestKind::DcovUnbiased => "dcov_unbiased",
        }
    }

    pub fn functional(self) -> Functional {
        match self {
            TestKind::Pearson => Functional::Pearson,
            TestKind::DcovMle | TestKind::DcovUnbiased => Functional::Dcov,
        }
    }

    /// The statistic `T` (not n-scaled) on a sample.
    pub fn statistic(self, counts: &CountTable) -> Result<f64> {
        match self {
            TestKind::Pearson => stat_pearson(counts),
            TestKind::DcovMle => Ok(stat_dcov_mle(counts)),
            TestKind::DcovUnbiased => stat_dcov_unbiased(counts),
        }
    }
}

impl core::fmt::Display for TestKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "pearson" => Ok(TestKind::Pearson),
            "dcov_mle" => Ok(TestKind::DcovMle),
            "dcov_unbiased" => Ok(TestKind::DcovUnbiased),
            _ => Err(Error::InvalidArgument(format!("unknown test {s:?}"))),
        }
    }
}

/// Deterministic `1/√n` term in the law of `√n(D̃_n − D)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UnbiasedShift {
    /// Minus the full Lemma 1 limit at the alternative table.
    #[default]
    Lemma1,
    /// Minus `(1 − Σπ²_{i+})(1 − Σπ²_{+j})`, the independence form.
    IndependenceProduct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerOptions {
    pub alpha: f64,
    pub method: CdfMethod,
    pub unbiased_shift: UnbiasedShift,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            method: CdfMethod::CfInversion,
            unbiased_shift: UnbiasedShift::Lemma1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PowerReport {
    pub test: TestKind,
    pub alpha: f64,
    pub n: u64,
    pub critical_value: f64,
    pub theoretical_power: Option<f64>,
    pub empirical_power: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub replicates_rejected_for_zero_marginals: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )))
    }
}

/// Asymptotic law of `n·T` at an independent table.
pub fn null_law(test: TestKind, null_table: &JointTable) -> Result<NullLaw> {
    let dev = null_table.max_dependence();
    if dev > INDEPENDENCE_TOL {
        return Err(Error::NotIndependent(dev));
    }
    null_table.require_positive_marginals()?;
    Ok(match test {
        TestKind::Pearson => NullLaw::ChiSquare {
            df: ((null_table.rows() - 1) * (null_table.cols() - 1)) as u32,
        },
        TestKind::DcovMle => NullLaw::WeightedCentered {
            weights: null_weights_dcov(null_table)?,
            shift: lemma1_independence_form(null_table),
        },
        TestKind::DcovUnbiased => NullLaw::WeightedCentered {
            weights: null_weights_dcov(null_table)?,
            shift: 0.0,
        },
    })
}

/// `(1 − α)` quantile of the null law of `n·T`.
pub fn critical_value(
    test: TestKind,
    null_table: &JointTable,
    alpha: f64,
    method: CdfMethod,
) -> Result<f64> {
    check_alpha(alpha)?;
    match null_law(test, null_table)? {
        NullLaw::ChiSquare { df } => Ok(chi_square_quantile(f64::from(df), 1.0 - alpha)),
        // the D̂ law is the D̃ law moved by a constant; quantile the centered
        // part so the two critical values differ by exactly that constant
        NullLaw::WeightedCentered { weights, shift } => {
            let centered = NullLaw::WeightedCentered {
                weights,
                shift: 0.0,
            };
            Ok(quantile(&centered.into(), 1.0 - alpha, method)? + shift)
        }
    }
}

/// Second-order law of `√n(T − θ)` at a fixed alternative, with `θ`.
pub fn alternative_law(
    test: TestKind,
    alt: &AlternativeSpec,
    n: u64,
    shift_rule: UnbiasedShift,
) -> Result<(SecondOrderLaw, f64)> {
    if alt.is_null() {
        return Err(Error::InvalidArgument(
            "the perturbation is zero; use the null laws instead of a fixed-alternative law".into(),
        ));
    }
    let parts = expansion(test.functional(), alt)?;
    let shift = match (test, shift_rule) {
        (TestKind::DcovUnbiased, UnbiasedShift::Lemma1) => -lemma1_constant(alt.table()),
        (TestKind::DcovUnbiased, UnbiasedShift::IndependenceProduct) => {
            -lemma1_independence_form(alt.table())
        }
        _ => 0.0,
    };
    let law = SecondOrderLaw::new(sqrt(parts.variance), parts.weights, shift, n)?;
    Ok((law, parts.value))
}

/// `P(n·T > q)` under the second-order law.
pub fn power_at(law: &SecondOrderLaw, theta: f64, q: f64, method: CdfMethod) -> Result<f64> {
    let n = law.n as f64;
    let x = (q - n * theta) / sqrt(n);
    Ok(1.0 - cdf(&Law::SecondOrder(law.clone()), x, method)?)
}

/// Theoretical power with asymptotic-null critical values at the
/// independence table sharing the alternative's marginals.
pub fn theoretical_power(
    test: TestKind,
    alt: &AlternativeSpec,
    n: u64,
    alpha: f64,
    method: CdfMethod,
) -> Result<f64> {
    let opts = PowerOptions {
        alpha,
        method,
        ..PowerOptions::default()
    };
    Ok(power_report(test, alt, n, &opts)?
        .theoretical_power
        .expect("theoretical power is set"))
}

/// Critical value and theoretical power in one report.
pub fn power_report(
    test: TestKind,
    alt: &AlternativeSpec,
    n: u64,
    opts: &PowerOptions,
) -> Result<PowerReport> {
    check_alpha(opts.alpha)?;
    let q = critical_value(
        test,
        &alt.table().independence_table(),
        opts.alpha,
        opts.method,
    )?;
    let (law, theta) = alternative_law(test, alt, n, opts.unbiased_shift)?;
    let power = power_at(&law, theta, q, opts.method)?;
    Ok(PowerReport {
        test,
        alpha: opts.alpha,
        n,
        critical_value: q,
        theoretical_power: Some(power),
        empirical_power: None,
        mc_stderr: None,
        replicates_rejected_for_zero_marginals: 0,
    })
}

/// Noncentrality `n Σ c²/(π_{i+}π_{+j})` of the Pitman limit when the
/// perturbation `c` of `alt` is read as `c_local/√n`.
pub fn pitman_ncp(alt: &AlternativeSpec, n: u64) -> Result<f64> {
    alt.table().require_positive_marginals()?;
    let (r, s) = (alt.row_marginals(), alt.col_marginals());
    let mut total = 0.0;
    for i in 0..alt.rows() {
        for j in 0..alt.cols() {
            let c = alt.c_at(i, j);
            total += c * c / (r[i] * s[j]);
        }
    }
    Ok(n as f64 * total)
}

/// Power of Pearson's test under the noncentral chi-square limit.
pub fn pitman_power(alt: &AlternativeSpec, n: u64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let df = ((alt.rows() - 1) * (alt.cols() - 1)) as u32;
    let ncp = pitman_ncp(alt, n)?;
    let q = chi_square_quantile(f64::from(df), 1.0 - alpha);
    Ok(1.0 - noncentral_chisq_cdf(df, ncp, q)?)
}
