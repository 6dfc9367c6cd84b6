//! Contingency table types, maximum likelihood estimation, and the three
//! independence statistics together with their population functionals.
//!
//! Tables are stored row-major. Row `i` and column `j` are zero-based here;
//! the last cell `(rows - 1, cols - 1)` plays the role of the eliminated cell
//! in the leave-one-out parametrization used by [`crate::delta`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Axis, Error, Result};

/// Absolute tolerance on probability sums and marginal consistency.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Tolerance on row and column sums of a perturbation matrix.
pub const PERTURBATION_MARGIN_TOL: f64 = 1e-10;

/// Perturbations with `max |c_ij|` at or below this are treated as the null.
pub const NULL_PERTURBATION_TOL: f64 = 1e-14;

fn check_dims(rows: usize, cols: usize, len: usize) -> Result<()> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidTable(format!(
            "dimensions must be at least 2x2, got {rows}x{cols}"
        )));
    }
    if len != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            found: len,
        });
    }
    Ok(())
}

/// A joint distribution of two categorical variables.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct JointTable {
    rows: usize,
    cols: usize,
    probs: Vec<f64>,
    row_marginals: Vec<f64>,
    col_marginals: Vec<f64>,
}

impl JointTable {
    /// Builds a table from row-major probabilities.
    ///
    /// Entries must be finite and nonnegative and sum to one within
    /// [`PROB_SUM_TOL`]. Zero marginals are allowed here; every operation
    /// that divides by a marginal rejects them.
    pub fn new(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols, probs.len())?;
        if let Some(k) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidTable(format!(
                "cell ({}, {}) = {} is not a probability",
                k / cols + 1,
                k % cols + 1,
                probs[k]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidTable(format!(
                "probabilities sum to {total:.17}, not 1"
            )));
        }
        Ok(Self::from_parts(rows, cols, probs))
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, probs: Vec<f64>) -> Self {
        let mut row_marginals = vec![0.0; rows];
        let mut col_marginals = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                let p = probs[i * cols + j];
                row_marginals[i] += p;
                col_marginals[j] += p;
            }
        }
        Self {
            rows,
            cols,
            probs,
            row_marginals,
            col_marginals,
        }
    }

    /// The outer product of two marginal vectors.
    pub fn independent(row_marginals: &[f64], col_marginals: &[f64]) -> Result<Self> {
        let probs = row_marginals
            .iter()
            .flat_map(|r| col_marginals.iter().map(move |s| r * s))
            .collect();
        Self::new(row_marginals.len(), col_marginals.len(), probs)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTable("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.cols + j]
    }

    /// Row-major cell probabilities.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row_marginals(&self) -> &[f64] {
        &self.row_marginals
    }

    pub fn col_marginals(&self) -> &[f64] {
        &self.col_marginals
    }

    /// Returns the first zero marginal, if any.
    pub fn zero_marginal(&self) -> Option<(Axis, usize)> {
        if let Some(i) = self.row_marginals.iter().position(|&r| r <= 0.0) {
            return Some((Axis::Row, i));
        }
        self.col_marginals
            .iter()
            .position(|&s| s <= 0.0)
            .map(|j| (Axis::Column, j))
    }

    pub(crate) fn require_positive_marginals(&self) -> Result<()> {
        match self.zero_marginal() {
            Some((axis, index)) => Err(Error::ZeroMarginal { axis, index }),
            None => Ok(()),
        }
    }

    /// `max |π_ij − π_{i+}π_{+j}|`.
    pub fn max_dependence(&self) -> f64 {
        self.deviations().map(f64::abs).fold(0.0, f64::max)
    }

    pub fn is_independent(&self, tol: f64) -> bool {
        self.max_dependence() <= tol
    }

    /// The product of this table's marginals.
    pub fn independence_table(&self) -> JointTable {
        let probs = self
            .row_marginals
            .iter()
            .flat_map(|r| self.col_marginals.iter().map(move |s| r * s))
            .collect();
        Self::from_parts(self.rows, self.cols, probs)
    }

    /// Row-major `π_ij − π_{i+}π_{+j}`.
    pub fn deviations(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).flat_map(move |i| {
            (0..self.cols)
                .map(move |j| self.get(i, j) - self.row_marginals[i] * self.col_marginals[j])
        })
    }

    /// Applies a simultaneous row and column relabelling.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Self {
        let mut probs = Vec::with_capacity(self.probs.len());
        for &i in row_perm {
            for &j in col_perm {
                probs.push(self.get(i, j));
            }
        }
        Self::from_parts(self.rows, self.cols, probs)
    }
}

/// Observed cell counts.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct CountTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    n: u64,
}

impl CountTable {
    pub fn new(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        check_dims(rows, cols, counts.len())?;
        let n = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidTable("total count must be at least 1".into()));
        }
        Ok(Self {
            rows,
            cols,
            counts,
            n,
        })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidTable("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts
            .chunks(self.cols)
            .map(|r| r.iter().sum())
            .collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// Multiplies every count by `k`, keeping the empirical table fixed.
    pub fn scaled(&self, k: u64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            counts: self.counts.iter().map(|c| c * k).collect(),
            n: self.n * k,
        }
    }
}

/// A joint table written as marginal products plus a perturbation,
/// `π_ij = π_{i+}π_{+j} + c_ij`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct AlternativeSpec {
    row_marginals: Vec<f64>,
    col_marginals: Vec<f64>,
    c: Vec<f64>,
    table: JointTable,
}

impl AlternativeSpec {
    /// Validates that `c` has zero row and column sums and that the induced
    /// table is a probability table with the given marginals.
    pub fn new(row_marginals: Vec<f64>, col_marginals: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let (rows, cols) = (row_marginals.len(), col_marginals.len());
        check_dims(rows, cols, c.len())?;
        for (axis, m) in [(Axis::Row, &row_marginals), (Axis::Column, &col_marginals)] {
            if m.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidTable(format!(
                    "{axis} marginals must be nonnegative"
                )));
            }
            let total: f64 = m.iter().sum();
            if (total - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::InvalidTable(format!(
                    "{axis} marginals sum to {total:.17}, not 1"
                )));
            }
        }
        let total: f64 = c.iter().sum();
        if total.abs() > PROB_SUM_TOL {
            return Err(Error::InvalidTable(format!(
                "perturbation sums to {total:e}, not 0"
            )));
        }
        for i in 0..rows {
            let s: f64 = c[i * cols..(i + 1) * cols].iter().sum();
            if s.abs() > PERTURBATION_MARGIN_TOL {
                return Err(Error::InvalidTable(format!(
                    "perturbation row {} sums to {s:e}; marginals would change",
                    i + 1
                )));
            }
        }
        for j in 0..cols {
            let s: f64 = (0..rows).map(|i| c[i * cols + j]).sum();
            if s.abs() > PERTURBATION_MARGIN_TOL {
                return Err(Error::InvalidTable(format!(
                    "perturbation column {} sums to {s:e}; marginals would change",
                    j + 1
                )));
            }
        }
        let probs = (0..rows * cols)
            .map(|k| row_marginals[k / cols] * col_marginals[k % cols] + c[k])
            .collect();
        let table = JointTable::new(rows, cols, probs)?;
        Ok(Self {
            row_marginals,
            col_marginals,
            c,
            table,
        })
    }

    /// Decomposes a table with `c_ij = π_ij − π_{i+}π_{+j}`.
    pub fn from_table(table: &JointTable) -> Self {
        Self {
            row_marginals: table.row_marginals.clone(),
            col_marginals: table.col_marginals.clone(),
            c: table.deviations().collect(),
            table: table.clone(),
        }
    }

    pub fn rows(&self) -> usize {
        self.row_marginals.len()
    }

    pub fn cols(&self) -> usize {
        self.col_marginals.len()
    }

    pub fn row_marginals(&self) -> &[f64] {
        &self.row_marginals
    }

    pub fn col_marginals(&self) -> &[f64] {
        &self.col_marginals
    }

    /// Row-major perturbation matrix.
    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn c_at(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.cols() + j]
    }

    pub fn table(&self) -> &JointTable {
        &self.table
    }

    pub fn max_abs_c(&self) -> f64 {
        self.c.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    pub fn is_null(&self) -> bool {
        self.max_abs_c() <= NULL_PERTURBATION_TOL
    }
}

/// `π̂_ij = n_ij / n`. Zero marginals are carried through and rejected by
/// the statistics that divide by them.
pub fn mle_table(counts: &CountTable) -> JointTable {
    let n = counts.n as f64;
    let probs = counts.counts.iter().map(|&c| c as f64 / n).collect();
    JointTable::from_parts(counts.rows, counts.cols, probs)
}

/// `Δ = Σ (π_ij − π_{i+}π_{+j})² / (π_{i+}π_{+j})`.
pub fn pearson_functional(table: &JointTable) -> Result<f64> {
    table.require_positive_marginals()?;
    let mut total = 0.0;
    for i in 0..table.rows {
        for j in 0..table.cols {
            let e = table.row_marginals[i] * table.col_marginals[j];
            let d = table.get(i, j) - e;
            total += d * d / e;
        }
    }
    Ok(total)
}

/// `D = Σ (π_ij − π_{i+}π_{+j})²`.
pub fn dcov_functional(table: &JointTable) -> f64 {
    table.deviations().map(|d| d * d).sum()
}

/// Pearson's statistic `Δ_n`; `n·Δ_n` is the classical chi-square statistic.
pub fn stat_pearson(counts: &CountTable) -> Result<f64> {
    pearson_functional(&mle_table(counts))
}

/// Plug-in estimate `D̂_n` of the distance covariance functional.
pub fn stat_dcov_mle(counts: &CountTable) -> f64 {
    dcov_functional(&mle_table(counts))
}

/// Unbiased estimate `D̃_n` (closed form of the fourth-order U-statistic).
pub fn stat_dcov_unbiased(counts: &CountTable) -> Result<f64> {
    dcov_unbiased_from_proportions(&mle_table(counts), counts.n)
}

/// The closed form of `D̃_n` evaluated at sample proportions `table` with
/// sample size `n`. Requires `n >= 4`.
pub fn dcov_unbiased_from_proportions(table: &JointTable, n: u64) -> Result<f64> {
    if n <= 3 {
        return Err(Error::Domain(format!(
            "unbiased distance covariance needs n >= 4, got {n}"
        )));
    }
    let nf = n as f64;
    let p = UnbiasedParts::of(table);
    Ok(
        nf / (nf - 3.0) * p.dcov - 4.0 * nf / ((nf - 2.0) * (nf - 3.0)) * p.cross
            + nf / ((nf - 1.0) * (nf - 3.0)) * (p.row_sq + p.col_sq)
            + nf * (3.0 * nf - 2.0) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0)) * p.row_sq * p.col_sq
            - nf / ((nf - 1.0) * (nf - 3.0)),
    )
}

/// `n(D̂_n − D̃_n)` evaluated exactly at proportions `table` and size `n`.
pub fn mle_unbiased_gap(table: &JointTable, n: u64) -> Result<f64> {
    let nf = n as f64;
    Ok(nf * (dcov_functional(table) - dcov_unbiased_from_proportions(table, n)?))
}

struct UnbiasedParts {
    dcov: f64,
    cross: f64,
    row_sq: f64,
    col_sq: f64,
}

impl UnbiasedParts {
    fn of(table: &JointTable) -> Self {
        let mut cross = 0.0;
        for i in 0..table.rows {
            for j in 0..table.cols {
                cross += table.get(i, j) * table.row_marginals[i] * table.col_marginals[j];
            }
        }
        Self {
            dcov: dcov_functional(table),
            cross,
            row_sq: table.row_marginals.iter().map(|r| r * r).sum(),
            col_sq: table.col_marginals.iter().map(|s| s * s).sum(),
        }
    }
}

/// Almost-sure limit of `n(D̂_n − D̃_n)`:
/// `1 − Σπ²_{i+} − Σπ²_{+j} − 3ΣΣπ²_{i+}π²_{+j} + 4ΣΣπ_ij π_{i+}π_{+j} − 3D`.
pub fn lemma1_constant(table: &JointTable) -> f64 {
    let p = UnbiasedParts::of(table);
    1.0 - p.row_sq - p.col_sq - 3.0 * p.row_sq * p.col_sq + 4.0 * p.cross - 3.0 * p.dcov
}

/// `(1 − Σπ²_{i+})(1 − Σπ²_{+j})`, the value of [`lemma1_constant`] at
/// any table with the same marginals under independence.
pub fn lemma1_independence_form(table: &JointTable) -> f64 {
    let row_sq: f64 = table.row_marginals.iter().map(|r| r * r).sum();
    let col_sq: f64 = table.col_marginals.iter().map(|s| s * s).sum();
    (1.0 - row_sq) * (1.0 - col_sq)
}
