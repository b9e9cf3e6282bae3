//! Data-matrix types: complete and incomplete matrices and column means.
//!
//! An [`IncompleteMatrix`] stores an n x p real matrix together with a
//! response mask `W` (`true` = observed). Missing cells carry `NaN` in the
//! value storage so they cannot silently leak into computations. A
//! [`CompleteMatrix`] is a fully observed matrix, and a [`MeansMatrix`] is
//! the rank-zero matrix of column means stored as one value per column.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// A fully observed n x p matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteMatrix {
    values: DMatrix<f64>,
}

impl CompleteMatrix {
    /// Validates that every entry is finite and the matrix is non-empty.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::config("matrix must have at least one row and column"));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::NonFiniteInput { row: i, col: j });
                }
            }
        }
        Ok(CompleteMatrix { values })
    }

    /// Number of rows.
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Number of columns.
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// The underlying matrix.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Consumes the wrapper and returns the matrix.
    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// One column as a vector.
    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }
}

/// An n x p matrix with a missingness mask (`true` = observed).
///
/// Invariants: dimensions are at least 1x1, every observed cell is finite,
/// every column has at least one observed cell. Fully missing rows are
/// allowed. Missing cells are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncompleteMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl IncompleteMatrix {
    /// Builds from a matrix whose missing cells are `NaN`.
    ///
    /// Non-finite but non-`NaN` values (infinities) are rejected.
    pub fn from_nan_coded(values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_fn(values.nrows(), values.ncols(), |i, j| {
            !values[(i, j)].is_nan()
        });
        Self::from_parts(values, mask)
    }

    /// Builds from values and an explicit mask (`true` = observed).
    ///
    /// Masked-out cells are normalized to `NaN` regardless of their input
    /// value.
    pub fn from_parts(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::config("matrix must have at least one row and column"));
        }
        if values.shape() != mask.shape() {
            return Err(Error::config("values and mask have different shapes"));
        }
        let mut values = values;
        for j in 0..values.ncols() {
            let mut any_observed = false;
            for i in 0..values.nrows() {
                if mask[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::NonFiniteInput { row: i, col: j });
                    }
                    any_observed = true;
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
            if !any_observed {
                return Err(Error::EmptyColumn { col: j });
            }
        }
        Ok(IncompleteMatrix { values, mask })
    }

    /// A complete matrix viewed as incomplete (all cells observed).
    pub fn from_complete(x: &CompleteMatrix) -> Self {
        let mask = DMatrix::from_element(x.nrows(), x.ncols(), true);
        IncompleteMatrix {
            values: x.values().clone(),
            mask,
        }
    }

    /// Number of rows.
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    /// Number of columns.
    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Values with `NaN` at missing cells.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The response mask (`true` = observed).
    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    /// Whether cell `(i, j)` is observed.
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    /// Number of missing cells.
    pub fn n_missing(&self) -> usize {
        self.mask.iter().filter(|&&obs| !obs).count()
    }

    /// Number of observed cells.
    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&obs| obs).count()
    }

    /// Mean of the observed cells of each column.
    ///
    /// Columns are guaranteed non-empty by construction, so every mean is
    /// finite.
    pub fn observed_column_means(&self) -> MeansMatrix {
        let (n, p) = self.values.shape();
        let mut means = DVector::zeros(p);
        for j in 0..p {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..n {
                if self.mask[(i, j)] {
                    sum += self.values[(i, j)];
                    count += 1;
                }
            }
            means[j] = sum / count as f64;
        }
        MeansMatrix { col_means: means }
    }

    /// Indices of fully observed rows, in increasing order.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.nrows())
            .filter(|&i| (0..self.ncols()).all(|j| self.mask[(i, j)]))
            .collect()
    }

    /// Converts to a [`CompleteMatrix`] if nothing is missing.
    pub fn to_complete(&self) -> Option<CompleteMatrix> {
        if self.n_missing() == 0 {
            Some(CompleteMatrix {
                values: self.values.clone(),
            })
        } else {
            None
        }
    }
}

/// Column means, the compact form of the rank-zero means matrix M.
#[derive(Debug, Clone, PartialEq)]
pub struct MeansMatrix {
    col_means: DVector<f64>,
}

impl MeansMatrix {
    /// Wraps a vector of per-column means.
    pub fn new(col_means: DVector<f64>) -> Self {
        MeansMatrix { col_means }
    }

    /// Column means of a complete matrix.
    pub fn of_columns(x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut means = DVector::zeros(p);
        for j in 0..p {
            let mut sum = 0.0;
            for i in 0..n {
                sum += x[(i, j)];
            }
            means[j] = sum / n as f64;
        }
        MeansMatrix { col_means: means }
    }

    /// Number of columns covered.
    pub fn len(&self) -> usize {
        self.col_means.len()
    }

    /// Whether there are no columns (never true for valid data).
    pub fn is_empty(&self) -> bool {
        self.col_means.len() == 0
    }

    /// The mean of column `j`.
    pub fn get(&self, j: usize) -> f64 {
        self.col_means[j]
    }

    /// The means as a vector.
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.col_means
    }

    /// Returns `x - M`, the column-centered copy of `x`.
    pub fn center(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for j in 0..out.ncols() {
            let m = self.col_means[j];
            for i in 0..out.nrows() {
                out[(i, j)] -= m;
            }
        }
        out
    }

    /// Adds the means back onto a centered matrix in place.
    pub fn uncenter_in_place(&self, x: &mut DMatrix<f64>) {
        for j in 0..x.ncols() {
            let m = self.col_means[j];
            for i in 0..x.nrows() {
                x[(i, j)] += m;
            }
        }
    }
}
