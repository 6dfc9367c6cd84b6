//! Multivariate delta method under the leave-one-out parametrization.
//!
//! The free parameters are the `IJ − 1` cells other than the last one,
//! stacked column by column. The last cell is `1 − Σ others` and the
//! marginals are recomputed from cells, so every derivative here is a
//! derivative along a direction `e_ij − e_IJ` of the full table.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::table::{dcov_functional, AlternativeSpec, JointTable};

/// Smallest admissible eigenvalue of Σ* before taking its square root.
pub const SIGMA_EIGEN_FLOOR: f64 = 1e-12;

/// Tolerance for recognising an outer-product table.
pub const INDEPENDENCE_TOL: f64 = 1e-10;

/// Null weights at or below this magnitude are structural zeros.
pub const NULL_WEIGHT_ZERO_TOL: f64 = 1e-9;

/// Relative initial step of the numerical Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Number of Richardson refinement levels in the numerical Hessian.
pub const RICHARDSON_LEVELS: usize = 2;

/// Position of cell `(i, j)` in the column-stacked vector, or `None` for the
/// eliminated last cell.
pub fn vec_star_index(rows: usize, cols: usize, i: usize, j: usize) -> Option<usize> {
    if i == rows - 1 && j == cols - 1 {
        None
    } else {
        Some(j * rows + i)
    }
}

/// Column-stacked matrix entries with the last cell removed.
#[derive(Debug, Clone, PartialEq)]
pub struct VecStar {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl VecStar {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        DVector::from_vec(self.values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Rebuilds the row-major matrix, putting `last` in the eliminated cell.
    pub fn embed(&self, last: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for j in 0..self.cols {
            for i in 0..self.rows {
                out[i * self.cols + j] = match vec_star_index(self.rows, self.cols, i, j) {
                    Some(k) => self.values[k],
                    None => last,
                };
            }
        }
        out
    }

    /// Rebuilds a probability table, the eliminated cell being `1 − Σ`.
    pub fn embed_probabilities(&self) -> Vec<f64> {
        self.embed(1.0 - self.values.iter().sum::<f64>())
    }
}

/// Leave-one-out vectorization of a row-major `rows × cols` matrix.
pub fn vec_star(rows: usize, cols: usize, matrix: &[f64]) -> Result<VecStar> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidArgument(format!(
            "vec* needs at least 2x2, got {rows}x{cols}"
        )));
    }
    if matrix.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            found: matrix.len(),
        });
    }
    let mut values = Vec::with_capacity(rows * cols - 1);
    for j in 0..cols {
        for i in 0..rows {
            if vec_star_index(rows, cols, i, j).is_some() {
                values.push(matrix[i * cols + j]);
            }
        }
    }
    Ok(VecStar { rows, cols, values })
}

/// Covariance of `vec*(√n π̂)` under multinomial sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStar {
    matrix: DMatrix<f64>,
}

impl SigmaStar {
    /// `π_ij(1 − π_ij)` on the diagonal and `−π_ij π_km` off it.
    ///
    /// A zero cell gives a singular matrix; that is reported by
    /// [`SigmaStar::sqrt`] and [`SigmaStar::min_eigenvalue`], not here.
    pub fn new(table: &JointTable) -> Result<Self> {
        if let Some(k) = table.probs().iter().position(|&p| p >= 1.0) {
            return Err(Error::Domain(format!(
                "cell ({}, {}) has probability 1; covariance is degenerate",
                k / table.cols() + 1,
                k % table.cols() + 1
            )));
        }
        let v = vec_star(table.rows(), table.cols(), table.probs())?.into_vector();
        let matrix = DMatrix::from_diagonal(&v) - &v * v.transpose();
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Symmetric square root through the eigendecomposition.
    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        let eig = SymmetricEigen::new(self.matrix.clone());
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < SIGMA_EIGEN_FLOOR {
            return Err(Error::NotPositiveDefinite(min));
        }
        let root = eig.eigenvalues.map(libm::sqrt);
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
    }
}

/// First-order partial derivatives of a functional with respect to the free
/// cells, laid out as a row-major `rows × cols` matrix whose last entry is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GradientMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vec_star(&self) -> VecStar {
        vec_star(self.rows, self.cols, &self.values).expect("gradient dimensions are valid")
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&g| g == 0.0)
    }
}

/// Which population functional to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Functional {
    Pearson,
    Dcov,
}

impl Functional {
    /// Evaluates the functional on raw row-major cells, recomputing the
    /// marginals. No validation is done; callers keep the cells inside the
    /// simplex.
    pub fn eval_cells(self, rows: usize, cols: usize, cells: &[f64]) -> f64 {
        let mut r = vec![0.0; rows];
        let mut s = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                r[i] += cells[i * cols + j];
                s[j] += cells[i * cols + j];
            }
        }
        let mut total = 0.0;
        for i in 0..rows {
            for j in 0..cols {
                let e = r[i] * s[j];
                let d = cells[i * cols + j] - e;
                total += match self {
                    Functional::Pearson => d * d / e,
                    Functional::Dcov => d * d,
                };
            }
        }
        total
    }

    pub fn eval(self, table: &JointTable) -> Result<f64> {
        match self {
            Functional::Pearson => crate::table::pearson_functional(table),
            Functional::Dcov => Ok(dcov_functional(table)),
        }
    }
}

struct GradientTerms<'a> {
    alt: &'a AlternativeSpec,
    rows: usize,
    cols: usize,
}

impl GradientTerms<'_> {
    fn r(&self, i: usize) -> f64 {
        self.alt.row_marginals()[i]
    }

    fn s(&self, j: usize) -> f64 {
        self.alt.col_marginals()[j]
    }

    fn c(&self, i: usize, j: usize) -> f64 {
        self.alt.c_at(i, j)
    }

    /// `Σ_k c²_ik / (π²_{i+} π_{+k})`
    fn pearson_row(&self, i: usize) -> f64 {
        (0..self.cols)
            .map(|k| sq(self.c(i, k)) / (sq(self.r(i)) * self.s(k)))
            .sum()
    }

    /// `Σ_m c²_mj / (π_{m+} π²_{+j})`
    fn pearson_col(&self, j: usize) -> f64 {
        (0..self.rows)
            .map(|m| sq(self.c(m, j)) / (self.r(m) * sq(self.s(j))))
            .sum()
    }

    /// `2c_ij / (π_{i+}π_{+j})`
    fn pearson_cell(&self, i: usize, j: usize) -> f64 {
        2.0 * self.c(i, j) / (self.r(i) * self.s(j))
    }

    /// `Σ_k π_{+k} c_ik`
    fn dcov_row(&self, i: usize) -> f64 {
        (0..self.cols).map(|k| self.s(k) * self.c(i, k)).sum()
    }

    /// `Σ_m π_{m+} c_mj`
    fn dcov_col(&self, j: usize) -> f64 {
        (0..self.rows).map(|m| self.r(m) * self.c(m, j)).sum()
    }
}

fn gradient_with(
    alt: &AlternativeSpec,
    cell: impl Fn(&GradientTerms<'_>, usize, usize) -> f64,
) -> Result<GradientMatrix> {
    alt.table().require_positive_marginals()?;
    let (rows, cols) = (alt.rows(), alt.cols());
    let terms = GradientTerms { alt, rows, cols };
    let mut values = vec![0.0; rows * cols];
    if !alt.is_null() {
        for i in 0..rows {
            for j in 0..cols {
                if vec_star_index(rows, cols, i, j).is_some() {
                    values[i * cols + j] = cell(&terms, i, j);
                }
            }
        }
    }
    Ok(GradientMatrix { rows, cols, values })
}

/// Gradient `Δ′` of the Pearson functional at a fixed alternative.
///
/// The squared-perturbation sums enter with coefficient one; see the
/// finite-difference tests in this module.
pub fn grad_pearson(alt: &AlternativeSpec) -> Result<GradientMatrix> {
    gradient_with(alt, |t, i, j| {
        let (li, lj) = (t.rows - 1, t.cols - 1);
        let corner = t.pearson_cell(li, lj);
        match (i == li, j == lj) {
            (false, false) => {
                t.pearson_row(li) + t.pearson_col(lj) - t.pearson_row(i) - t.pearson_col(j)
                    + t.pearson_cell(i, j)
                    - corner
            }
            (true, false) => t.pearson_col(lj) - t.pearson_col(j) + t.pearson_cell(li, j) - corner,
            (false, true) => t.pearson_row(li) - t.pearson_row(i) + t.pearson_cell(i, lj) - corner,
            (true, true) => unreachable!("last cell is eliminated"),
        }
    })
}

/// Gradient `D′` of the distance covariance functional at a fixed alternative.
pub fn grad_dcov(alt: &AlternativeSpec) -> Result<GradientMatrix> {
    gradient_with(alt, |t, i, j| {
        let (li, lj) = (t.rows - 1, t.cols - 1);
        let corner = t.c(li, lj);
        match (i == li, j == lj) {
            (false, false) => {
                2.0 * t.dcov_col(lj) + 2.0 * t.dcov_row(li)
                    - 2.0 * t.dcov_col(j)
                    - 2.0 * t.dcov_row(i)
                    + 2.0 * t.c(i, j)
                    - 2.0 * corner
            }
            (true, false) => {
                2.0 * t.dcov_col(lj) - 2.0 * t.dcov_col(j) + 2.0 * t.c(li, j) - 2.0 * corner
            }
            (false, true) => {
                2.0 * t.dcov_row(li) - 2.0 * t.dcov_row(i) + 2.0 * t.c(i, lj) - 2.0 * corner
            }
            (true, true) => unreachable!("last cell is eliminated"),
        }
    })
}

/// Gradient of `functional` at the alternative.
pub fn gradient(functional: Functional, alt: &AlternativeSpec) -> Result<GradientMatrix> {
    match functional {
        Functional::Pearson => grad_pearson(alt),
        Functional::Dcov => grad_dcov(alt),
    }
}

/// Central-difference Hessian of `f` at `x` with Richardson extrapolation.
///
/// `steps[k]` is the initial step along coordinate `k`; each refinement
/// halves it. The result is symmetrized.
pub fn richardson_hessian(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    steps: &[f64],
    levels: usize,
) -> DMatrix<f64> {
    let m = x.len();
    let mut work = x.to_vec();
    let mut eval = |da: (usize, f64), db: (usize, f64)| {
        work[da.0] += da.1;
        work[db.0] += db.1;
        let v = f(&work);
        work[da.0] -= da.1;
        work[db.0] -= db.1;
        v
    };
    let f0 = f(x);
    let mut out = DMatrix::zeros(m, m);
    let mut table = vec![0.0; levels + 1];
    for a in 0..m {
        for b in a..m {
            for (level, slot) in table.iter_mut().enumerate() {
                let scale = libm::ldexp(1.0, -(level as i32));
                let (ha, hb) = (steps[a] * scale, steps[b] * scale);
                *slot = if a == b {
                    (eval((a, ha), (a, 0.0)) - 2.0 * f0 + eval((a, -ha), (a, 0.0))) / (ha * ha)
                } else {
                    (eval((a, ha), (b, hb)) - eval((a, ha), (b, -hb)) - eval((a, -ha), (b, hb))
                        + eval((a, -ha), (b, -hb)))
                        / (4.0 * ha * hb)
                };
            }
            for k in 1..=levels {
                let factor = libm::ldexp(1.0, 2 * k as i32);
                for level in (k..=levels).rev() {
                    table[level] = (factor * table[level] - table[level - 1]) / (factor - 1.0);
                }
            }
            out[(a, b)] = table[levels];
            out[(b, a)] = table[levels];
        }
    }
    out
}

/// Hessian `H*` of a functional with respect to the free cells.
pub fn numeric_hessian(functional: Functional, table: &JointTable) -> Result<DMatrix<f64>> {
    numeric_hessian_with_levels(functional, table, RICHARDSON_LEVELS)
}

/// [`numeric_hessian`] with an explicit number of Richardson levels
/// (`0` is plain central differences).
pub fn numeric_hessian_with_levels(
    functional: Functional,
    table: &JointTable,
    levels: usize,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = (table.rows(), table.cols());
    let point = vec_star(rows, cols, table.probs())?;
    let steps: Vec<f64> = point
        .values()
        .iter()
        .map(|p| HESSIAN_STEP * p.abs().max(1.0))
        .collect();
    // the eliminated cell moves by at most two steps
    let reach = 2.0 * steps.iter().copied().fold(0.0, f64::max);
    if let Some(k) = table.probs().iter().position(|&p| p <= reach) {
        return Err(Error::Domain(format!(
            "cell ({}, {}) = {:e} is within the Hessian step {reach:e} of the boundary",
            k / cols + 1,
            k % cols + 1,
            table.probs()[k]
        )));
    }
    let f = |v: &[f64]| {
        let cells = VecStar {
            rows,
            cols,
            values: v.to_vec(),
        }
        .embed_probabilities();
        functional.eval_cells(rows, cols, &cells)
    };
    Ok(richardson_hessian(f, point.values(), &steps, levels))
}

/// `vec*(grad)ᵀ Σ* vec*(grad)`.
pub fn asymptotic_variance(grad: &GradientMatrix, sigma: &SigmaStar) -> Result<f64> {
    let v = grad.vec_star().into_vector();
    if v.len() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: v.len(),
        });
    }
    Ok((v.transpose() * sigma.matrix() * &v)[(0, 0)].max(0.0))
}

fn sq(x: f64) -> f64 {
    x * x
}

/// Real eigenvalues sorted by decreasing magnitude, ties broken by
/// decreasing signed value.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "Vec<f64>", into = "Vec<f64>"))]
pub struct EigenWeights {
    weights: Vec<f64>,
}

impl EigenWeights {
    pub fn new(mut weights: Vec<f64>) -> Self {
        weights.sort_by(|a, b| {
            b.abs()
                .partial_cmp(&a.abs())
                .unwrap_or(Ordering::Equal)
                .then(b.partial_cmp(a).unwrap_or(Ordering::Equal))
        });
        Self { weights }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.weights.iter().map(|w| w * factor).collect())
    }

    pub fn count_above(&self, tol: f64) -> usize {
        self.weights.iter().filter(|w| w.abs() > tol).count()
    }
}

/// Eigenvalues of `(Σ*)^{1/2} H (Σ*)^{1/2}`.
pub fn second_order_weights(sigma: &SigmaStar, hessian: &DMatrix<f64>) -> Result<EigenWeights> {
    if hessian.nrows() != sigma.dim() || hessian.ncols() != sigma.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma.dim(),
            found: hessian.nrows(),
        });
    }
    let root = sigma.sqrt()?;
    let sandwich = &root * hessian * &root;
    let sym = (&sandwich + sandwich.transpose()) * 0.5;
    Ok(EigenWeights::new(
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .collect(),
    ))
}

/// Weights of the null law of `n·D̃_n`: the nonzero eigenvalues of
/// `½ (Σ*)^{1/2} H*(D) (Σ*)^{1/2}` at an independence table. There are
/// exactly `(I − 1)(J − 1)` of them, the products of the row and column
/// factors.
pub fn null_weights_dcov(table: &JointTable) -> Result<EigenWeights> {
    let dev = table.max_dependence();
    if dev > INDEPENDENCE_TOL {
        return Err(Error::NotIndependent(dev));
    }
    let sigma = SigmaStar::new(table)?;
    let hessian = numeric_hessian(Functional::Dcov, table)?;
    let all = second_order_weights(&sigma, &hessian)?.scaled(0.5);
    let expected = (table.rows() - 1) * (table.cols() - 1);
    let nonzero: Vec<f64> = all
        .as_slice()
        .iter()
        .copied()
        .filter(|w| w.abs() > NULL_WEIGHT_ZERO_TOL)
        .collect();
    if nonzero.len() != expected {
        return Err(Error::Accuracy(format!(
            "expected {expected} nonzero null weights, found {}",
            nonzero.len()
        )));
    }
    Ok(EigenWeights::new(nonzero))
}

impl From<Vec<f64>> for EigenWeights {
    fn from(w: Vec<f64>) -> Self {
        Self::new(w)
    }
}

impl From<EigenWeights> for Vec<f64> {
    fn from(w: EigenWeights) -> Self {
        w.weights
    }
}

/// Closed-form marginal eigenvalues for two or three categories; `None`
/// otherwise.
pub fn closed_form_lambdas(marginals: &[f64]) -> Option<Vec<f64>> {
    match *marginals {
        [p1, p2] => Some(vec![-2.0 * p1 * p2]),
        [p1, p2, p3] => {
            let pairs = p1 * p2 + p1 * p3 + p2 * p3;
            let radical =
                libm::sqrt((sq(p1 * p2) + sq(p1 * p3) + sq(p2 * p3) - p1 * p2 * p3).max(0.0));
            Some(vec![-pairs - radical, -pairs + radical])
        }
        _ => None,
    }
}

/// Internals of one second-order law, for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionParts {
    pub functional: Functional,
    pub value: f64,
    pub gradient: GradientMatrix,
    pub sigma: SigmaStar,
    pub variance: f64,
    pub hessian: DMatrix<f64>,
    pub weights: EigenWeights,
}

/// Everything the second-order expansion of `functional` needs at `alt`.
pub fn expansion(functional: Functional, alt: &AlternativeSpec) -> Result<ExpansionParts> {
    let table = alt.table();
    let sigma = SigmaStar::new(table)?;
    let gradient = gradient(functional, alt)?;
    let variance = asymptotic_variance(&gradient, &sigma)?;
    let hessian = numeric_hessian(functional, table)?;
    let weights = second_order_weights(&sigma, &hessian)?;
    Ok(ExpansionParts {
        functional,
        value: functional.eval(table)?,
        gradient,
        sigma,
        variance,
        hessian,
        weights,
    })
}
