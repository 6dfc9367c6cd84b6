//! Parallel execution of replicate loops.
//!
//! Work is cut into fixed chunks of replicate indices and results are put
//! back together in chunk order, so the output does not depend on the
//! number of workers.

use rayon::prelude::*;
use rayon::ThreadPool;
use tabpower_core::dist::{sample_block, Law, SAMPLE_BLOCK};
use tabpower_core::power::{critical_value, TestKind};
use tabpower_core::sim::{
    null_replicates, replicate_values, tally_replicates, NullMethod, RejectionTally, Scale,
};
use tabpower_core::{dist, JointTable};

use crate::error::CliError;

pub const CHUNK: u64 = 512;

pub fn pool(workers: Option<usize>) -> Result<ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))
}

fn chunks(total: u64) -> Vec<std::ops::Range<u64>> {
    (0..total.div_ceil(CHUNK))
        .map(|k| k * CHUNK..((k + 1) * CHUNK).min(total))
        .collect()
}

/// Rejection tallies for several `(test, critical value)` pairs on the
/// same replicates.
pub fn tally(
    pool: &ThreadPool,
    tests: &[(TestKind, f64)],
    table: &JointTable,
    n: u64,
    seed: u64,
    replications: u64,
) -> Result<Vec<RejectionTally>, CliError> {
    let parts: Vec<_> = pool.install(|| {
        chunks(replications)
            .into_par_iter()
            .map(|r| tally_replicates(tests, table, n, seed, r))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut total = vec![RejectionTally::default(); tests.len()];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            *t = t.merge(p);
        }
    }
    Ok(total)
}

/// Replicate values in replicate order and the zero-marginal count.
pub fn values(
    pool: &ThreadPool,
    test: TestKind,
    table: &JointTable,
    n: u64,
    scale: Scale,
    seed: u64,
    replications: u64,
) -> Result<(Vec<f64>, u64), CliError> {
    let parts: Vec<_> = pool.install(|| {
        chunks(replications)
            .into_par_iter()
            .map(|r| replicate_values(test, table, n, scale, seed, r))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut all = Vec::with_capacity(replications as usize);
    let mut skipped = 0;
    for (v, s) in parts {
        all.extend(v);
        skipped += s;
    }
    Ok((all, skipped))
}

/// `m` draws from a law, identical to [`dist::sample`].
pub fn law_sample(pool: &ThreadPool, law: &Law, m: usize, seed: u64) -> Vec<f64> {
    let blocks = m.div_ceil(SAMPLE_BLOCK);
    let parts: Vec<Vec<f64>> = pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| sample_block(law, seed, b as u64, SAMPLE_BLOCK.min(m - b * SAMPLE_BLOCK)))
            .collect()
    });
    parts.concat()
}

/// Critical value on the n-scale under either null method.
pub fn resolve_critical_value(
    pool: &ThreadPool,
    test: TestKind,
    null_table: &JointTable,
    n: u64,
    alpha: f64,
    seed: u64,
    method: NullMethod,
) -> Result<f64, CliError> {
    match method {
        NullMethod::Asymptotic => Ok(critical_value(
            test,
            null_table,
            alpha,
            dist::CdfMethod::CfInversion,
        )?),
        NullMethod::MonteCarlo { replications } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::Usage(format!(
                    "alpha must be in (0, 1), got {alpha}"
                )));
            }
            if replications == 0 {
                return Err(CliError::Usage(
                    "null replications must be at least 1".into(),
                ));
            }
            let dev = null_table.max_dependence();
            if dev > tabpower_core::delta::INDEPENDENCE_TOL {
                return Err(tabpower_core::Error::NotIndependent(dev).into());
            }
            let parts: Vec<Vec<f64>> = pool.install(|| {
                chunks(replications)
                    .into_par_iter()
                    .map(|r| null_replicates(test, null_table, n, seed, r))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let mut all = parts.concat();
            if all.is_empty() {
                return Err(CliError::Usage(
                    "every null replicate had a zero marginal".into(),
                ));
            }
            all.sort_by(f64::total_cmp);
            Ok(dist::empirical_quantile(&all, 1.0 - alpha))
        }
    }
}
