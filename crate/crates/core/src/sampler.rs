//! Multiple imputation by data augmentation under a PCA model.
//!
//! The chain alternates two draws. Starting from a regularized iterative
//! PCA solution (means, low-rank structure, noise variance):
//!
//! * **Imputation step** — rebuild the completed matrix: observed cells are
//!   copied from the input, each missing cell is drawn as
//!   `mean_j + structure_ij + N(0, sigma2)`.
//! * **Posterior step** — refit on the completed matrix: recompute column
//!   means, center, fit the rank-S model, then draw a new structure matrix
//!   with every cell perturbed around the regularized reconstruction with
//!   variance `sigma2 * sum(phi) / min(n - 1, p)`, reflecting the
//!   uncertainty of the fitted structure itself.
//!
//! After `burn_in` warm-up iterations the completed matrix is captured
//! every `spacing` iterations until `imputations` copies are collected.
//! Every iteration appends a trace record (noise variance, total
//! shrinkage, and summary statistics of the imputed cells) so chain
//! behavior can be inspected afterwards.
//!
//! All randomness comes from a single counter-based generator seeded from
//! the configuration, so a run is a pure function of its inputs.

use crate::data::{CompleteMatrix, IncompleteMatrix, MeansMatrix};
use crate::error::Error;
use crate::impute::{iterative_pca, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::pca::PcaFit;
use crate::stats;
use crate::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Settings for [`bayes_mipca`].
#[derive(Debug, Clone)]
pub struct MiConfig {
    /// Number of principal components of the imputation model.
    pub rank: usize,
    /// Number of completed datasets to return.
    pub imputations: usize,
    /// Warm-up iterations before the first capture window.
    pub burn_in: usize,
    /// Iterations between consecutive captures.
    pub spacing: usize,
    /// Seed of the chain's random generator.
    pub seed: u64,
    /// Convergence threshold of the initializing single imputation.
    pub tol: f64,
    /// Iteration cap of the initializing single imputation.
    pub max_iter: usize,
}

impl MiConfig {
    /// Default number of completed datasets.
    pub const DEFAULT_IMPUTATIONS: usize = 20;
    /// Default warm-up length.
    pub const DEFAULT_BURN_IN: usize = 1000;
    /// Default between-capture spacing.
    pub const DEFAULT_SPACING: usize = 100;

    /// A configuration with the default chain lengths.
    pub fn new(rank: usize, seed: u64) -> Self {
        MiConfig {
            rank,
            imputations: Self::DEFAULT_IMPUTATIONS,
            burn_in: Self::DEFAULT_BURN_IN,
            spacing: Self::DEFAULT_SPACING,
            seed,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    /// Checks the chain lengths and initializer settings.
    pub fn validate(&self) -> Result<()> {
        if self.imputations == 0 {
            return Err(Error::config("imputations must be at least 1"));
        }
        if self.spacing == 0 {
            return Err(Error::config("spacing must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::config("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Variance of the posterior-step structure draw.
///
/// The average uncertainty of a fitted cell is the noise variance times
/// the total shrinkage, spread over `min(n - 1, p)` effective dimensions
/// (callers guarantee `n >= 2`).
pub fn posterior_draw_variance(sigma2: f64, phi: &[f64], n: usize, p: usize) -> f64 {
    let dims = n.saturating_sub(1).min(p);
    sigma2 * phi.iter().sum::<f64>() / dims as f64
}

/// Current parameters of the data-augmentation chain.
#[derive(Debug, Clone)]
pub struct SamplerState {
    means: MeansMatrix,
    /// Centered systematic part of the model (one value per cell).
    structure: DMatrix<f64>,
    sigma2: f64,
    sum_phi: f64,
    rank: usize,
}

impl SamplerState {
    /// Initializes the chain from a regularized single imputation.
    pub fn init(x: &IncompleteMatrix, rank: usize, tol: f64, max_iter: usize) -> Result<Self> {
        let single = iterative_pca(x, rank, true, tol, max_iter)?;
        let sum_phi = single.fit.phi.iter().sum();
        Ok(SamplerState {
            means: single.means,
            structure: single.fit.xhat_rpca,
            sigma2: single.fit.sigma2,
            sum_phi,
            rank,
        })
    }

    /// Imputation step: returns a completed matrix with observed cells
    /// copied and missing cells drawn around the current model prediction.
    /// Missing cells are visited in column-major order.
    pub fn impute<R: Rng>(&self, x: &IncompleteMatrix, rng: &mut R) -> DMatrix<f64> {
        let (n, p) = (x.nrows(), x.ncols());
        let sd = self.sigma2.sqrt();
        let mut completed = x.values().clone();
        for j in 0..p {
            for i in 0..n {
                if !x.is_observed(i, j) {
                    let noise: f64 = rng.sample(StandardNormal);
                    completed[(i, j)] = self.means.get(j) + self.structure[(i, j)] + sd * noise;
                }
            }
        }
        completed
    }

    /// Posterior step: refits the model on a completed matrix and draws a
    /// new structure matrix. Every cell receives a perturbation, in
    /// column-major order.
    pub fn update<R: Rng>(&mut self, completed: &DMatrix<f64>, rng: &mut R) -> Result<()> {
        let (n, p) = completed.shape();
        let means = MeansMatrix::of_columns(completed);
        let centered = means.center(completed);
        let fit = PcaFit::fit(&centered, self.rank)?;
        let sd = posterior_draw_variance(fit.sigma2, &fit.phi, n, p).sqrt();
        let mut structure = fit.xhat_rpca;
        for cell in structure.iter_mut() {
            let noise: f64 = rng.sample(StandardNormal);
            *cell += sd * noise;
        }
        self.means = means;
        self.structure = structure;
        self.sigma2 = fit.sigma2;
        self.sum_phi = fit.phi.iter().sum();
        Ok(())
    }

    /// Current noise variance.
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Current total shrinkage across components.
    pub fn sum_phi(&self) -> f64 {
        self.sum_phi
    }
}

/// One per-iteration snapshot of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Noise variance after the posterior step.
    pub sigma2: f64,
    /// Total shrinkage across components after the posterior step.
    pub sum_phi: f64,
    /// Mean of this iteration's imputed values (`NaN` when nothing is
    /// missing).
    pub imputed_mean: f64,
    /// 5% quantile of the imputed values.
    pub imputed_q05: f64,
    /// Median of the imputed values.
    pub imputed_q50: f64,
    /// 95% quantile of the imputed values.
    pub imputed_q95: f64,
}

/// The full per-iteration trace of one chain.
#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    /// One record per iteration, in order.
    pub records: Vec<TraceRecord>,
}

impl TraceLog {
    /// Renders the trace as delimiter-separated text with a header row.
    pub fn to_dsv(&self, delimiter: char) -> String {
        let mut out = String::new();
        let header = [
            "iteration",
            "sigma2",
            "sum_phi",
            "imputed_mean",
            "imputed_q05",
            "imputed_q50",
            "imputed_q95",
        ];
        out.push_str(&header.join(&delimiter.to_string()));
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{1}{0}{2}{0}{3}{0}{4}{0}{5}{0}{6}{0}{7}\n",
                delimiter,
                r.iteration,
                r.sigma2,
                r.sum_phi,
                r.imputed_mean,
                r.imputed_q05,
                r.imputed_q50,
                r.imputed_q95,
            ));
        }
        out
    }
}

/// Output of [`bayes_mipca`].
#[derive(Debug, Clone)]
pub struct ImputationSet {
    /// The captured completed datasets.
    pub completed: Vec<CompleteMatrix>,
    /// Chain iteration at which each dataset was captured.
    pub capture_iterations: Vec<usize>,
    /// Per-iteration chain trace.
    pub trace: TraceLog,
}

impl ImputationSet {
    /// Number of completed datasets.
    pub fn len(&self) -> usize {
        self.completed.len()
    }

    /// Whether no datasets were captured.
    pub fn is_empty(&self) -> bool {
        self.completed.is_empty()
    }
}

/// Runs the data-augmentation chain and captures `imputations` completed
/// datasets.
///
/// The chain runs for `burn_in + imputations * spacing` iterations and
/// captures the completed matrix of iterations `burn_in + k * spacing`
/// for `k = 1..=imputations`. A complete input (no missing cells) yields
/// `imputations` identical copies of it.
pub fn bayes_mipca(x: &IncompleteMatrix, config: &MiConfig) -> Result<ImputationSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SamplerState::init(x, config.rank, config.tol, config.max_iter)?;

    let missing: Vec<(usize, usize)> = {
        let (n, p) = (x.nrows(), x.ncols());
        let mut cells = Vec::with_capacity(x.n_missing());
        for j in 0..p {
            for i in 0..n {
                if !x.is_observed(i, j) {
                    cells.push((i, j));
                }
            }
        }
        cells
    };

    let total = config.burn_in + config.imputations * config.spacing;
    let mut records = Vec::with_capacity(total);
    let mut completed_sets = Vec::with_capacity(config.imputations);
    let mut capture_iterations = Vec::with_capacity(config.imputations);

    for iteration in 1..=total {
        let completed = state.impute(x, &mut rng);
        state.update(&completed, &mut rng)?;
        if !state.sigma2.is_finite() || completed.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration });
        }
        records.push(trace_record(iteration, &state, &completed, &missing));
        if iteration > config.burn_in
            && (iteration - config.burn_in).is_multiple_of(config.spacing)
        {
            completed_sets.push(CompleteMatrix::new(completed)?);
            capture_iterations.push(iteration);
        }
    }

    Ok(ImputationSet {
        completed: completed_sets,
        capture_iterations,
        trace: TraceLog { records },
    })
}

fn trace_record(
    iteration: usize,
    state: &SamplerState,
    completed: &DMatrix<f64>,
    missing: &[(usize, usize)],
) -> TraceRecord {
    let imputed: Vec<f64> = missing.iter().map(|&(i, j)| completed[(i, j)]).collect();
    let mut sorted = imputed.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    TraceRecord {
        iteration,
        sigma2: state.sigma2,
        sum_phi: state.sum_phi,
        imputed_mean: stats::mean(&imputed),
        imputed_q05: stats::quantile_type7(&sorted, 0.05),
        imputed_q50: stats::quantile_type7(&sorted, 0.50),
        imputed_q95: stats::quantile_type7(&sorted, 0.95),
    }
}

/// Lags at which [`diagnose_trace`] reports autocorrelations.
pub const DIAGNOSTIC_LAGS: [usize; 3] = [1, 10, 100];

/// Mixing summaries for one traced series.
#[derive(Debug, Clone)]
pub struct SeriesDiagnostics {
    /// Which trace column the summaries describe.
    pub name: &'static str,
    /// Mean over all iterations.
    pub mean: f64,
    /// Cumulative mean after each iteration.
    pub running_mean: Vec<f64>,
    /// `(lag, autocorrelation)` pairs; `None` marks lags that are not
    /// applicable because the series is shorter than the lag, constant,
    /// or contains non-finite values.
    pub autocorrelations: Vec<(usize, Option<f64>)>,
}

/// Summarizes the mixing of the noise-variance, shrinkage, and
/// imputed-mean series of a trace.
pub fn diagnose_trace(trace: &TraceLog) -> Vec<SeriesDiagnostics> {
    let pull = |f: fn(&TraceRecord) -> f64| -> Vec<f64> { trace.records.iter().map(f).collect() };
    vec![
        series_diagnostics("sigma2", &pull(|r| r.sigma2)),
        series_diagnostics("sum_phi", &pull(|r| r.sum_phi)),
        series_diagnostics("imputed_mean", &pull(|r| r.imputed_mean)),
    ]
}

fn series_diagnostics(name: &'static str, xs: &[f64]) -> SeriesDiagnostics {
    let mut running_mean = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (t, x) in xs.iter().enumerate() {
        sum += x;
        running_mean.push(sum / (t + 1) as f64);
    }
    SeriesDiagnostics {
        name,
        mean: stats::mean(xs),
        running_mean,
        autocorrelations: DIAGNOSTIC_LAGS
            .iter()
            .map(|&lag| (lag, autocorrelation(xs, lag)))
            .collect(),
    }
}

/// Sample autocorrelation at `lag`; `None` when not applicable.
fn autocorrelation(xs: &[f64], lag: usize) -> Option<f64> {
    let n = xs.len();
    if n <= lag || xs.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mean = stats::mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    if denom <= 0.0 {
        return None;
    }
    let num: f64 = (0..n - lag)
        .map(|t| (xs[t] - mean) * (xs[t + lag] - mean))
        .sum();
    Some(num / denom)
}
