//! Rank selection by cell-wise cross-validation.
//!
//! For each fold a random subset of the *observed* cells is hidden, the
//! regularized single imputation is run on the thinned matrix for every
//! candidate rank, and the squared prediction error on the hidden cells is
//! recorded. The rank with the smallest error, averaged over folds, wins;
//! ties go to the smaller (more parsimonious) rank.
//!
//! Folds are drawn independently (repeated random subsampling, not a
//! partition). A draw that would leave some column with no observed cells
//! is redrawn a bounded number of times before giving up.

use crate::data::IncompleteMatrix;
use crate::error::Error;
use crate::impute::{iterative_pca, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// How many times a fold is redrawn when it empties a column.
const MAX_HOLDOUT_ATTEMPTS: usize = 10;
/// Two mean squared errors closer than this (relative) are a tie.
const TIE_TOLERANCE: f64 = 1e-12;

/// Settings for [`cross_validate_rank`].
#[derive(Debug, Clone)]
pub struct CvConfig {
    /// Candidate ranks to compare.
    pub candidates: Vec<usize>,
    /// Fraction of the observed cells hidden per fold, in `(0, 0.5)`.
    pub holdout_fraction: f64,
    /// Number of folds.
    pub folds: usize,
    /// Seed for the holdout draws.
    pub seed: u64,
    /// Convergence threshold of the per-fold single imputations.
    pub tol: f64,
    /// Iteration cap of the per-fold single imputations.
    pub max_iter: usize,
}

impl CvConfig {
    /// Default fraction of observed cells hidden per fold.
    pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.1;
    /// Default number of folds.
    pub const DEFAULT_FOLDS: usize = 5;

    /// A configuration with the default fold geometry.
    pub fn new(candidates: Vec<usize>, seed: u64) -> Self {
        CvConfig {
            candidates,
            holdout_fraction: Self::DEFAULT_HOLDOUT_FRACTION,
            folds: Self::DEFAULT_FOLDS,
            seed,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    /// Checks the fold geometry and that every candidate rank is fittable
    /// on an `n` by `p` matrix.
    pub fn validate(&self, n: usize, p: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::config("candidates must not be empty"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(Error::config("holdout_fraction must lie in (0, 0.5)"));
        }
        if self.folds == 0 {
            return Err(Error::config("folds must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::config("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        let max = n.saturating_sub(1).min(p);
        for &rank in &self.candidates {
            if rank > max {
                return Err(Error::RankTooLarge { rank, max, n, p });
            }
        }
        Ok(())
    }
}

/// Outcome of [`cross_validate_rank`].
#[derive(Debug, Clone)]
pub struct CvReport {
    /// The candidate ranks, in the order given.
    pub candidates: Vec<usize>,
    /// Mean squared prediction error per candidate (averaged over folds).
    pub msep: Vec<f64>,
    /// The winning rank.
    pub selected: usize,
}

impl CvReport {
    /// Renders the report as delimiter-separated text with a header row
    /// and a 0/1 marker on the winning rank.
    pub fn to_dsv(&self, delimiter: char) -> String {
        let d = delimiter;
        let mut out = format!("rank{d}msep{d}selected\n");
        for (rank, msep) in self.candidates.iter().zip(&self.msep) {
            let marker = if *rank == self.selected { 1 } else { 0 };
            out.push_str(&format!("{rank}{d}{msep}{d}{marker}\n"));
        }
        out
    }
}

/// Compares candidate ranks by cell-wise cross-validation.
///
/// Hides `holdout_fraction` of the observed cells per fold (at least one
/// cell), imputes the thinned matrix with the regularized single
/// imputation at every candidate rank, and scores the squared error on
/// the hidden cells. Returns the per-candidate errors and the winner.
pub fn cross_validate_rank(x: &IncompleteMatrix, config: &CvConfig) -> Result<CvReport> {
    let (n, p) = (x.nrows(), x.ncols());
    config.validate(n, p)?;

    let observed: Vec<(usize, usize)> = {
        let mut cells = Vec::with_capacity(x.n_observed());
        for j in 0..p {
            for i in 0..n {
                if x.is_observed(i, j) {
                    cells.push((i, j));
                }
            }
        }
        cells
    };
    let k = ((config.holdout_fraction * observed.len() as f64).floor() as usize).max(1);

    // Draw every fold's holdout up front from one sequential generator so
    // the fold geometry does not depend on how work is scheduled below.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut folds = Vec::with_capacity(config.folds);
    for _ in 0..config.folds {
        let holdout = draw_holdout(x, &observed, k, &mut rng, MAX_HOLDOUT_ATTEMPTS)?;
        let mut mask = x.mask().clone();
        for &(i, j) in &holdout {
            mask[(i, j)] = false;
        }
        let train = IncompleteMatrix::from_parts(x.values().clone(), mask)?;
        folds.push((train, holdout));
    }

    let jobs: Vec<(usize, usize)> = (0..config.folds)
        .flat_map(|f| (0..config.candidates.len()).map(move |c| (f, c)))
        .collect();
    let scores: Vec<(usize, f64)> = jobs
        .par_iter()
        .map(|&(f, c)| -> Result<(usize, f64)> {
            let (train, holdout) = &folds[f];
            let result = iterative_pca(
                train,
                config.candidates[c],
                true,
                config.tol,
                config.max_iter,
            )?;
            let completed = result.completed.values();
            let sse: f64 = holdout
                .iter()
                .map(|&(i, j)| {
                    let err = completed[(i, j)] - x.values()[(i, j)];
                    err * err
                })
                .sum();
            Ok((c, sse / holdout.len() as f64))
        })
        .collect::<Result<_>>()?;

    let mut msep = vec![0.0; config.candidates.len()];
    for (c, fold_mse) in scores {
        msep[c] += fold_mse / config.folds as f64;
    }
    let selected = select_rank(&config.candidates, &msep);
    Ok(CvReport {
        candidates: config.candidates.clone(),
        msep,
        selected,
    })
}

/// Smallest rank whose error is within a whisker of the minimum.
fn select_rank(candidates: &[usize], msep: &[f64]) -> usize {
    debug_assert_eq!(candidates.len(), msep.len());
    let min = msep.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOLERANCE * min.abs().max(1.0);
    candidates
        .iter()
        .zip(msep)
        .filter(|&(_, &m)| m <= min + tol)
        .map(|(&rank, _)| rank)
        .min()
        .expect("candidates is non-empty")
}

/// Samples `k` distinct observed cells such that every column keeps at
/// least one observed cell, retrying up to `attempts` times.
fn draw_holdout(
    x: &IncompleteMatrix,
    observed: &[(usize, usize)],
    k: usize,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Result<Vec<(usize, usize)>> {
    let p = x.ncols();
    let mut col_observed = vec![0usize; p];
    for &(_, j) in observed {
        col_observed[j] += 1;
    }
    let mut last_empty = 0;
    for _ in 0..attempts {
        let picks = rand::seq::index::sample(rng, observed.len(), k);
        let mut col_held = vec![0usize; p];
        let mut holdout = Vec::with_capacity(k);
        for idx in picks.iter() {
            let (i, j) = observed[idx];
            col_held[j] += 1;
            holdout.push((i, j));
        }
        match (0..p).find(|&j| col_held[j] == col_observed[j]) {
            None => return Ok(holdout),
            Some(j) => last_empty = j,
        }
    }
    Err(Error::EmptyColumn { col: last_empty })
}
