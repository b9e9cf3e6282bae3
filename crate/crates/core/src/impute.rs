//! Single imputation by (regularized) iterative PCA.
//!
//! The algorithm alternates between imputing missing cells from the current
//! model prediction and refitting the model on the completed matrix:
//!
//! 1. initialize missing cells with the observed column means;
//! 2. recompute the column means of the completed matrix, center, fit the
//!    rank-S model, and predict every cell as `reconstruction + means`;
//! 3. overwrite the missing cells with the prediction (observed cells are
//!    never touched) and repeat until the relative Frobenius change of the
//!    completed matrix drops below `tol` or `max_iter` is reached.
//!
//! With `regularize` off the prediction is the maximum-likelihood
//! reconstruction and each sweep cannot increase the observed-cell squared
//! error (the usual EM monotonicity). With `regularize` on the shrunk
//! reconstruction is used instead, which trades that guarantee for far
//! better behavior when the noise level is high relative to the sample
//! size.

use crate::data::{CompleteMatrix, IncompleteMatrix, MeansMatrix};
use crate::error::Error;
use crate::pca::PcaFit;
use crate::Result;
use nalgebra::DMatrix;

/// Default relative-change threshold.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Outcome of [`iterative_pca`].
#[derive(Debug, Clone)]
pub struct SingleImputeResult {
    /// The completed matrix; observed cells equal the input exactly.
    pub completed: CompleteMatrix,
    /// Model fit of the final iteration (computed on the centered
    /// completed matrix that produced [`Self::completed`]).
    pub fit: PcaFit,
    /// Column means of the final iteration; [`Self::fit`] is centered
    /// against these.
    pub means: MeansMatrix,
    /// Number of sweeps performed.
    pub iterations: usize,
    /// Relative Frobenius change of the completed matrix in the last
    /// sweep.
    pub final_change: f64,
    /// Sum of squared residuals at the observed cells against each
    /// sweep's model prediction, one entry per iteration. Non-increasing
    /// when `regularize` is off.
    pub observed_sse: Vec<f64>,
}

/// Imputes missing cells by iterative PCA of rank `rank`.
///
/// `tol` is the stopping threshold on `||C_new - C_old||_F / ||C_old||_F`
/// and must be positive; `max_iter` caps the number of sweeps. When the
/// input has no missing cells the first sweep changes nothing and the
/// input is returned unchanged after one iteration.
///
/// Because the returned [`PcaFit`] carries a noise variance, matrices too
/// small to estimate it make this fail with [`Error::DegenerateDof`] even
/// when `regularize` is off.
pub fn iterative_pca(
    x: &IncompleteMatrix,
    rank: usize,
    regularize: bool,
    tol: f64,
    max_iter: usize,
) -> Result<SingleImputeResult> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::config("tol must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::config("max_iter must be at least 1"));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let max_rank = n.saturating_sub(1).min(p);
    if rank > max_rank {
        return Err(Error::RankTooLarge {
            rank,
            max: max_rank,
            n,
            p,
        });
    }

    // Mean-imputation initialization.
    let init_means = x.observed_column_means();
    let mut completed = DMatrix::from_fn(n, p, |i, j| {
        if x.is_observed(i, j) {
            x.values()[(i, j)]
        } else {
            init_means.get(j)
        }
    });

    let mut observed_sse = Vec::new();
    let mut iterations = 0;
    let mut final_change = f64::INFINITY;
    let mut last: Option<(PcaFit, MeansMatrix)> = None;

    for iter in 1..=max_iter {
        let means = MeansMatrix::of_columns(&completed);
        let centered = means.center(&completed);
        let fit = PcaFit::fit(&centered, rank)?;
        let recon = if regularize {
            &fit.xhat_rpca
        } else {
            &fit.xhat
        };

        let mut sse = 0.0;
        let mut change_sq = 0.0;
        let mut norm_sq = 0.0;
        let mut next = completed.clone();
        for j in 0..p {
            let m = means.get(j);
            for i in 0..n {
                let pred = recon[(i, j)] + m;
                if x.is_observed(i, j) {
                    let r = x.values()[(i, j)] - pred;
                    sse += r * r;
                } else {
                    next[(i, j)] = pred;
                }
                let old = completed[(i, j)];
                let d = next[(i, j)] - old;
                change_sq += d * d;
                norm_sq += old * old;
            }
        }
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { iteration: iter });
        }

        observed_sse.push(sse);
        final_change = if norm_sq > 0.0 {
            (change_sq / norm_sq).sqrt()
        } else {
            change_sq.sqrt()
        };
        completed = next;
        iterations = iter;
        last = Some((fit, means));
        if final_change < tol {
            break;
        }
    }

    let (fit, means) = last.expect("at least one iteration ran");
    Ok(SingleImputeResult {
        completed: CompleteMatrix::new(completed)?,
        fit,
        means,
        iterations,
        final_change,
        observed_sse,
    })
}
