//! Monte-Carlo evaluation harness.
//!
//! Each replication draws a complete Gaussian dataset, removes a fixed
//! share of cells completely at random, estimates the configured
//! quantities with each configured method, and scores the estimates and
//! their 95% intervals against the population truth. Replications run in
//! parallel; every random stream is derived from the master seed, the
//! replication number, and a fixed lane constant, so results do not
//! depend on scheduling.
//!
//! A method that fails on a replication (for example listwise deletion
//! with too few complete rows, or a correlation that cannot be
//! transformed) is excluded from that replication's summaries and counted
//! in the failure column instead.

use crate::analysis::{
    analyze, complete_case_analysis, complete_data_interval, rubin_pool, Quantity,
};
use crate::data::{CompleteMatrix, IncompleteMatrix};
use crate::error::Error;
use crate::impute::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rank::{cross_validate_rank, CvConfig};
use crate::sampler::{bayes_mipca, MiConfig};
use crate::stats;
use crate::Result;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// How many amputation draws are attempted before giving up.
const MAX_AMPUTE_ATTEMPTS: usize = 100;
/// How many preliminary datasets vote when the rank is cross-validated.
const RANK_VOTE_DATASETS: usize = 20;

/// Stream identifiers mixed into derived seeds, one per purpose, so the
/// independent random streams of a replication never overlap.
pub mod lanes {
    /// Complete-data generation.
    pub const DATA: u64 = 0;
    /// Cell amputation.
    pub const AMPUTE: u64 = 1;
    /// The imputation chain.
    pub const MI: u64 = 2;
    /// Covariance generation (random-correlation designs).
    pub const COV: u64 = 3;
    /// Preliminary rank-selection data (covariance, then cells).
    pub const CV_DATA: u64 = 4;
    /// Preliminary rank-selection amputation.
    pub const CV_AMPUTE: u64 = 5;
    /// Preliminary rank-selection fold draws.
    pub const CV_RUN: u64 = 6;
}

/// One application of the SplitMix64 finalizer.
fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of one random stream from the master seed, the
/// replication number, and a [`lanes`] constant.
pub fn derive_seed(master: u64, replication: u64, lane: u64) -> u64 {
    splitmix(splitmix(splitmix(master) ^ replication) ^ lane)
}

/// Population covariance used to generate complete data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceDesign {
    /// Two blocks of correlated variables: the first `ceil(2p/3)` columns
    /// share correlation `rho`, the remaining columns share `rho`, and
    /// the blocks are uncorrelated. Unit variances.
    Block {
        /// Within-block correlation.
        rho: f64,
    },
    /// A fresh random correlation matrix per replication (the normalized
    /// Gram matrix of a `p` by `p + 2` standard normal matrix).
    RandomCorrelation,
}

/// Builds the two-block correlation matrix of [`CovarianceDesign::Block`].
pub fn block_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    let first = (2 * p).div_ceil(3);
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if (i < first) == (j < first) {
            rho
        } else {
            0.0
        }
    })
}

/// Draws a random correlation matrix: the Gram matrix of a `p` by `p + 2`
/// standard normal matrix, rescaled to unit diagonal.
pub fn random_correlation<R: Rng>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p + 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let g = &a * a.transpose();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            g[(i, j)] / (g[(i, i)] * g[(j, j)]).sqrt()
        }
    })
}

/// Draws `n` rows from a centered Gaussian with the given covariance.
///
/// Fails with [`Error::NotPositiveDefinite`] when the covariance has no
/// Cholesky factor. Each row consumes `p` standard normal draws.
pub fn gen_gaussian<R: Rng>(n: usize, cov: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    if cov.ncols() != p {
        return Err(Error::config("covariance must be square"));
    }
    let chol = Cholesky::new(cov.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        let row = &l * &z;
        for j in 0..p {
            x[(i, j)] = row[j];
        }
    }
    Ok(x)
}

/// Hides exactly `floor(rate * n * p)` cells, chosen uniformly at random
/// without replacement.
///
/// Draws that would leave a column with no observed cells are redrawn; if
/// no valid pattern is found in 100 attempts this fails with
/// [`Error::CannotAmpute`].
pub fn ampute_mcar<R: Rng>(
    x: &CompleteMatrix,
    rate: f64,
    rng: &mut R,
) -> Result<IncompleteMatrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("missing rate must lie in [0, 1)"));
    }
    let (n, p) = (x.nrows(), x.ncols());
    let total = n * p;
    let k = (rate * total as f64).floor() as usize;
    if k == 0 {
        return Ok(IncompleteMatrix::from_complete(x));
    }
    for _ in 0..MAX_AMPUTE_ATTEMPTS {
        let picks = rand::seq::index::sample(rng, total, k);
        let mut mask = DMatrix::from_element(n, p, true);
        for idx in picks.iter() {
            mask[(idx % n, idx / n)] = false;
        }
        if (0..p).all(|j| (0..n).any(|i| mask[(i, j)])) {
            return IncompleteMatrix::from_parts(x.values().clone(), mask);
        }
    }
    Err(Error::CannotAmpute {
        attempts: MAX_AMPUTE_ATTEMPTS,
    })
}

/// How the imputation rank is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum RankChoice {
    /// Use this rank everywhere.
    Fixed(usize),
    /// Choose the modal cross-validated rank over preliminary datasets.
    CrossValidated {
        /// Candidate ranks offered to cross-validation.
        candidates: Vec<usize>,
    },
}

/// An estimation strategy compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Analyze the complete data before any cells are hidden.
    FullData,
    /// Analyze only the fully observed rows of the incomplete data.
    ListwiseDeletion,
    /// Multiply impute, analyze each completed dataset, and pool.
    BayesMipca,
}

impl Method {
    /// Stable text label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Method::FullData => "full_data",
            Method::ListwiseDeletion => "listwise_deletion",
            Method::BayesMipca => "bayes_mipca",
        }
    }
}

/// Settings for [`run_experiment`].
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Rows per dataset.
    pub n: usize,
    /// Columns per dataset.
    pub p: usize,
    /// Population covariance of the complete data.
    pub covariance: CovarianceDesign,
    /// Share of cells hidden per dataset, in `[0, 1)`.
    pub missing_rate: f64,
    /// How the imputation rank is chosen.
    pub rank: RankChoice,
    /// Quantities estimated on every dataset.
    pub quantities: Vec<Quantity>,
    /// Methods compared.
    pub methods: Vec<Method>,
    /// Number of replications.
    pub replications: usize,
    /// Master seed; all per-replication streams derive from it.
    pub master_seed: u64,
    /// Imputations per replication (multiple-imputation method).
    pub imputations: usize,
    /// Warm-up iterations of each imputation chain.
    pub burn_in: usize,
    /// Iterations between captured imputations.
    pub spacing: usize,
    /// Convergence threshold of inner single imputations.
    pub tol: f64,
    /// Iteration cap of inner single imputations.
    pub max_iter: usize,
}

impl SimConfig {
    /// A configuration that compares all three methods with the default
    /// chain lengths.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        p: usize,
        covariance: CovarianceDesign,
        missing_rate: f64,
        rank: RankChoice,
        quantities: Vec<Quantity>,
        replications: usize,
        master_seed: u64,
    ) -> Self {
        SimConfig {
            n,
            p,
            covariance,
            missing_rate,
            rank,
            quantities,
            methods: vec![Method::FullData, Method::ListwiseDeletion, Method::BayesMipca],
            replications,
            master_seed,
            imputations: MiConfig::DEFAULT_IMPUTATIONS,
            burn_in: MiConfig::DEFAULT_BURN_IN,
            spacing: MiConfig::DEFAULT_SPACING,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    /// Checks dimensions, rates, and that every quantity fits the data.
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(Error::config("need at least 2 rows and 1 column"));
        }
        if self.replications == 0 {
            return Err(Error::config("replications must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing rate must lie in [0, 1)"));
        }
        if self.quantities.is_empty() {
            return Err(Error::config("quantities must not be empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods must not be empty"));
        }
        for q in &self.quantities {
            if q.max_col() >= self.p {
                return Err(Error::config(format!(
                    "quantity {} references column {} but the data has {} columns",
                    q.label(),
                    q.max_col() + 1,
                    self.p
                )));
            }
        }
        let max_rank = self.n.saturating_sub(1).min(self.p);
        match &self.rank {
            RankChoice::Fixed(rank) => {
                if *rank > max_rank {
                    return Err(Error::RankTooLarge {
                        rank: *rank,
                        max: max_rank,
                        n: self.n,
                        p: self.p,
                    });
                }
            }
            RankChoice::CrossValidated { candidates } => {
                if candidates.is_empty() {
                    return Err(Error::config("rank candidates must not be empty"));
                }
                for &rank in candidates {
                    if rank > max_rank {
                        return Err(Error::RankTooLarge {
                            rank,
                            max: max_rank,
                            n: self.n,
                            p: self.p,
                        });
                    }
                }
            }
        }
        if self.imputations < 2 {
            return Err(Error::config("imputations must be at least 2 for pooling"));
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

/// Scores of one method on one quantity, over all replications.
#[derive(Debug, Clone)]
pub struct QuantitySummary {
    /// The estimated quantity.
    pub quantity: Quantity,
    /// The method that produced the estimates.
    pub method: Method,
    /// Mean of (estimate - truth) over successful replications.
    pub bias: f64,
    /// Standard error of the bias (sample sd of the errors over the
    /// square root of the success count).
    pub bias_se: f64,
    /// Root mean squared error over successful replications.
    pub rmse: f64,
    /// Median width of the 95% intervals.
    pub median_ci_width: f64,
    /// Share of intervals that contain the truth.
    pub coverage: f64,
    /// Number of intervals that contain the truth.
    pub hits: usize,
    /// Replications where the method produced an interval.
    pub successes: usize,
    /// Replications where it did not.
    pub failures: usize,
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct SimReport {
    /// One row per quantity and method, quantities outermost.
    pub rows: Vec<QuantitySummary>,
    /// The imputation rank actually used.
    pub rank_used: usize,
    /// Number of replications.
    pub replications: usize,
}

/// Quotes a label field when it contains the delimiter (for example
/// `corr:5,6` in a comma-separated report) or a quote character.
fn dsv_field(label: &str, delimiter: char) -> String {
    if label.contains(delimiter) || label.contains('"') {
        format!("\"{}\"", label.replace('"', "\"\""))
    } else {
        label.to_string()
    }
}

impl SimReport {
    /// Renders the report as delimiter-separated text with a header row.
    pub fn to_dsv(&self, delimiter: char) -> String {
        let d = delimiter;
        let mut out = format!(
            "quantity{d}method{d}bias{d}bias_se{d}rmse{d}median_ci_width{d}coverage{d}failures{d}K\n"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}{d}{}\n",
                dsv_field(&r.quantity.label(), d),
                r.method.label(),
                r.bias,
                r.bias_se,
                r.rmse,
                r.median_ci_width,
                r.coverage,
                r.failures,
                self.replications,
            ));
        }
        out
    }

    /// The row for one quantity and method, if present.
    pub fn row(&self, quantity: &Quantity, method: Method) -> Option<&QuantitySummary> {
        self.rows
            .iter()
            .find(|r| r.quantity == *quantity && r.method == method)
    }
}

/// Population value of a quantity under a covariance (means are zero).
fn true_value(quantity: &Quantity, cov: &DMatrix<f64>) -> Result<f64> {
    match quantity {
        Quantity::Mean { .. } => Ok(0.0),
        Quantity::Correlation { a, b } => {
            Ok(cov[(*a, *b)] / (cov[(*a, *a)] * cov[(*b, *b)]).sqrt())
        }
        Quantity::Regression {
            response,
            predictors,
        } => {
            let k = predictors.len();
            let spp = DMatrix::from_fn(k, k, |r, c| cov[(predictors[r], predictors[c])]);
            let spr = DVector::from_fn(k, |r, _| cov[(predictors[r], *response)]);
            let beta = Cholesky::new(spp)
                .ok_or(Error::SingularDesign)?
                .solve(&spr);
            Ok(beta[0])
        }
    }
}

/// One scored interval: signed error, width, and whether it covered.
#[derive(Debug, Clone, Copy)]
struct RepCell {
    error: f64,
    width: f64,
    covered: bool,
}

impl RepCell {
    fn score(estimate: f64, low: f64, high: f64, truth: f64) -> RepCell {
        RepCell {
            error: estimate - truth,
            width: high - low,
            covered: low <= truth && truth <= high,
        }
    }
}

/// Per-replication results: `cells[method][quantity]`, `None` on failure.
struct RepOutcome {
    cells: Vec<Vec<Option<RepCell>>>,
}

/// Runs the full experiment and summarizes every method and quantity.
///
/// Data generation, amputation, and imputation errors that reflect a bad
/// configuration (non-positive-definite covariance, impossible
/// amputation) abort the run; method-level failures on individual
/// replications are counted and excluded instead.
pub fn run_experiment(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let block_cov = match config.covariance {
        CovarianceDesign::Block { rho } => Some(block_covariance(config.p, rho)),
        CovarianceDesign::RandomCorrelation => None,
    };
    let rank_used = resolve_rank(config, block_cov.as_ref())?;

    let outcomes: Vec<RepOutcome> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, rep, rank_used, block_cov.as_ref()))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(config.quantities.len() * config.methods.len());
    for (qi, quantity) in config.quantities.iter().enumerate() {
        for (mi, method) in config.methods.iter().enumerate() {
            let cells: Vec<RepCell> = outcomes
                .iter()
                .filter_map(|o| o.cells[mi][qi])
                .collect();
            let successes = cells.len();
            let failures = config.replications - successes;
            let errors: Vec<f64> = cells.iter().map(|c| c.error).collect();
            let widths: Vec<f64> = cells.iter().map(|c| c.width).collect();
            let hits = cells.iter().filter(|c| c.covered).count();
            let bias = stats::mean(&errors);
            let bias_se = if successes >= 2 {
                let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>()
                    / (successes - 1) as f64;
                (var / successes as f64).sqrt()
            } else {
                f64::NAN
            };
            let rmse = stats::mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
            rows.push(QuantitySummary {
                quantity: quantity.clone(),
                method: *method,
                bias,
                bias_se,
                rmse,
                median_ci_width: stats::quantile_of(&widths, 0.5),
                coverage: hits as f64 / successes as f64,
                hits,
                successes,
                failures,
            });
        }
    }
    Ok(SimReport {
        rows,
        rank_used,
        replications: config.replications,
    })
}

/// Resolves the imputation rank, running the preliminary vote if needed.
///
/// Each preliminary dataset draws its covariance (when random) and its
/// data from one stream, is amputed like a real replication, and is
/// cross-validated; the modal selected rank wins, with ties going to the
/// smaller rank.
fn resolve_rank(config: &SimConfig, block_cov: Option<&DMatrix<f64>>) -> Result<usize> {
    let candidates = match &config.rank {
        RankChoice::Fixed(rank) => return Ok(*rank),
        RankChoice::CrossValidated { candidates } => candidates,
    };
    let mut votes: Vec<usize> = Vec::with_capacity(RANK_VOTE_DATASETS);
    for prelim in 0..RANK_VOTE_DATASETS as u64 {
        let mut data_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, prelim, lanes::CV_DATA));
        let cov_owned;
        let cov = match block_cov {
            Some(c) => c,
            None => {
                cov_owned = random_correlation(config.p, &mut data_rng);
                &cov_owned
            }
        };
        let complete = CompleteMatrix::new(gen_gaussian(config.n, cov, &mut data_rng)?)?;
        let mut ampute_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, prelim, lanes::CV_AMPUTE));
        let incomplete = ampute_mcar(&complete, config.missing_rate, &mut ampute_rng)?;
        let cv_config = CvConfig {
            seed: derive_seed(config.master_seed, prelim, lanes::CV_RUN),
            tol: config.tol,
            max_iter: config.max_iter,
            ..CvConfig::new(candidates.clone(), 0)
        };
        votes.push(cross_validate_rank(&incomplete, &cv_config)?.selected);
    }
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &v in &votes {
        match counts.iter_mut().find(|(rank, _)| *rank == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    let best = counts.iter().map(|&(_, c)| c).max().expect("votes exist");
    Ok(counts
        .iter()
        .filter(|&&(_, c)| c == best)
        .map(|&(rank, _)| rank)
        .min()
        .expect("votes exist"))
}

fn run_replication(
    config: &SimConfig,
    rep: u64,
    rank: usize,
    block_cov: Option<&DMatrix<f64>>,
) -> Result<RepOutcome> {
    let master = config.master_seed;
    let cov_owned;
    let cov = match block_cov {
        Some(c) => c,
        None => {
            let mut cov_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, rep, lanes::COV));
            cov_owned = random_correlation(config.p, &mut cov_rng);
            &cov_owned
        }
    };
    let truths: Vec<f64> = config
        .quantities
        .iter()
        .map(|q| true_value(q, cov))
        .collect::<Result<_>>()?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, rep, lanes::DATA));
    let complete = CompleteMatrix::new(gen_gaussian(config.n, cov, &mut data_rng)?)?;
    let mut ampute_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, rep, lanes::AMPUTE));
    let incomplete = ampute_mcar(&complete, config.missing_rate, &mut ampute_rng)?;

    let mut cells = vec![vec![None; config.quantities.len()]; config.methods.len()];
    for (mi, method) in config.methods.iter().enumerate() {
        match method {
            Method::FullData => {
                for (qi, q) in config.quantities.iter().enumerate() {
                    cells[mi][qi] = analyze(&complete, q).ok().map(|r| {
                        let iv = complete_data_interval(&r);
                        RepCell::score(iv.estimate, iv.low, iv.high, truths[qi])
                    });
                }
            }
            Method::ListwiseDeletion => {
                for (qi, q) in config.quantities.iter().enumerate() {
                    cells[mi][qi] = complete_case_analysis(&incomplete, q).ok().map(|r| {
                        let iv = complete_data_interval(&r);
                        RepCell::score(iv.estimate, iv.low, iv.high, truths[qi])
                    });
                }
            }
            Method::BayesMipca => {
                let mi_config = MiConfig {
                    rank,
                    imputations: config.imputations,
                    burn_in: config.burn_in,
                    spacing: config.spacing,
                    seed: derive_seed(master, rep, lanes::MI),
                    tol: config.tol,
                    max_iter: config.max_iter,
                };
                if let Ok(set) = bayes_mipca(&incomplete, &mi_config) {
                    for (qi, q) in config.quantities.iter().enumerate() {
                        let pooled = set
                            .completed
                            .iter()
                            .map(|d| analyze(d, q))
                            .collect::<Result<Vec<_>>>()
                            .and_then(|analyses| rubin_pool(&analyses));
                        cells[mi][qi] = pooled.ok().map(|p| {
                            let (low, high) = p.reported_interval();
                            RepCell::score(p.reported_estimate(), low, high, truths[qi])
                        });
                    }
                }
            }
        }
    }
    Ok(RepOutcome { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    #[test]
    fn block_covariance_matches_the_hand_matrix() {
        let c = block_covariance(6, 0.3);
        // First block: columns 0..4, second block: columns 4..6.
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(6, 6, &[
            1.0, 0.3, 0.3, 0.3, 0.0, 0.0,
            0.3, 1.0, 0.3, 0.3, 0.0, 0.0,
            0.3, 0.3, 1.0, 0.3, 0.0, 0.0,
            0.3, 0.3, 0.3, 1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 1.0, 0.3,
            0.0, 0.0, 0.0, 0.0, 0.3, 1.0,
        ]);
        assert_eq!(c, expected);
        assert!(Cholesky::new(block_covariance(6, 0.3)).is_some());
        assert!(Cholesky::new(block_covariance(9, 0.9)).is_some());
    }

    #[test]
    fn random_correlations_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let c = random_correlation(8, &mut rng);
            assert_eq!(c, c.transpose());
            for i in 0..8 {
                assert_eq!(c[(i, i)], 1.0);
                for j in 0..8 {
                    if i != j {
                        assert!(c[(i, j)].abs() < 1.0);
                    }
                }
            }
            assert!(Cholesky::new(c).is_some());
        }
    }

    #[test]
    fn generated_data_matches_its_population_moments() {
        let cov = block_covariance(3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = gen_gaussian(20_000, &cov, &mut rng).unwrap();
        let corr = |a: usize, b: usize| {
            let (ca, cb) = (x.column(a), x.column(b));
            let (ma, mb) = (ca.mean(), cb.mean());
            let num: f64 = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum();
            let da: f64 = ca.iter().map(|u| (u - ma) * (u - ma)).sum();
            let db: f64 = cb.iter().map(|v| (v - mb) * (v - mb)).sum();
            num / (da * db).sqrt()
        };
        for j in 0..3 {
            assert_abs_diff_eq!(x.column(j).mean(), 0.0, epsilon = 0.03);
            assert_abs_diff_eq!(x.column(j).variance(), 1.0, epsilon = 0.05);
        }
        assert_abs_diff_eq!(corr(0, 1), 0.5, epsilon = 0.03);
        assert_abs_diff_eq!(corr(0, 2), 0.0, epsilon = 0.03);
    }

    #[test]
    fn degenerate_covariance_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = gen_gaussian(10, &block_covariance(4, 1.0), &mut rng).unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite);
    }

    #[test]
    fn amputation_hides_exactly_the_requested_count() {
        let cov = DMatrix::identity(5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = CompleteMatrix::new(gen_gaussian(20, &cov, &mut rng).unwrap()).unwrap();
        // floor(0.13 * 100) = 13.
        let inc = ampute_mcar(&x, 0.13, &mut rng).unwrap();
        assert_eq!(inc.n_missing(), 13);
        for j in 0..5 {
            for i in 0..20 {
                if inc.is_observed(i, j) {
                    assert_eq!(inc.values()[(i, j)], x.values()[(i, j)]);
                }
            }
        }
        for bad_rate in [-0.1, 1.0, 1.5] {
            assert!(matches!(
                ampute_mcar(&x, bad_rate, &mut rng),
                Err(Error::InvalidConfig { .. })
            ));
        }
    }

    #[test]
    fn amputation_is_uniform_over_cells() {
        let cov = DMatrix::identity(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = CompleteMatrix::new(gen_gaussian(10, &cov, &mut rng).unwrap()).unwrap();
        let reps = 10_000;
        let mut miss_counts = DMatrix::zeros(10, 4);
        for _ in 0..reps {
            let inc = ampute_mcar(&x, 0.2, &mut rng).unwrap();
            assert_eq!(inc.n_missing(), 8);
            for j in 0..4 {
                assert!((0..10).any(|i| inc.is_observed(i, j)));
                for i in 0..10 {
                    if !inc.is_observed(i, j) {
                        miss_counts[(i, j)] += 1.0;
                    }
                }
            }
        }
        for rate in (miss_counts / reps as f64).iter() {
            assert_abs_diff_eq!(*rate, 0.2, epsilon = 0.015);
        }
    }

    #[test]
    fn impossible_amputation_gives_up() {
        let x = CompleteMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // floor(0.8 * 4) = 3 hidden cells always empty one column.
        let err = ampute_mcar(&x, 0.8, &mut rng).unwrap_err();
        assert_eq!(err, Error::CannotAmpute { attempts: 100 });
        // Rate zero keeps everything.
        let complete = ampute_mcar(&x, 0.0, &mut rng).unwrap();
        assert_eq!(complete.n_missing(), 0);
    }

    #[test]
    fn derived_seeds_do_not_collide_across_lanes_and_replications() {
        let mut seen = HashSet::new();
        for lane in 0..7 {
            for rep in 0..200 {
                assert!(seen.insert(derive_seed(42, rep, lane)));
            }
        }
        assert_ne!(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
    }

    #[test]
    fn population_regression_matches_a_large_sample() {
        let cov = block_covariance(4, 0.5);
        let q = Quantity::Regression {
            response: 0,
            predictors: vec![1, 2],
        };
        // With unit variances and equicorrelated predictors the slope of
        // the first predictor is rho / (1 + rho).
        let truth = true_value(&q, &cov).unwrap();
        assert_abs_diff_eq!(truth, 0.5 / 1.5, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = CompleteMatrix::new(gen_gaussian(100_000, &cov, &mut rng).unwrap()).unwrap();
        let fit = analyze(&x, &q).unwrap();
        assert_abs_diff_eq!(fit.estimate, truth, epsilon = 0.02);
    }

    #[test]
    fn full_data_intervals_cover_at_the_nominal_rate() {
        let config = SimConfig {
            methods: vec![Method::FullData],
            ..SimConfig::new(
                30,
                4,
                CovarianceDesign::Block { rho: 0.3 },
                0.0,
                RankChoice::Fixed(1),
                vec![Quantity::Mean { col: 0 }],
                500,
                2024,
            )
        };
        let report = run_experiment(&config).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.failures, 0);
        assert_eq!(row.successes, 500);
        assert!(
            row.coverage >= 0.92 && row.coverage <= 0.98,
            "coverage {}",
            row.coverage
        );
        assert_abs_diff_eq!(row.bias, 0.0, epsilon = 3.0 * row.bias_se);
        // Hits and coverage agree exactly.
        assert_eq!(row.hits as f64, row.coverage * row.successes as f64);
    }

    #[test]
    fn experiments_are_deterministic() {
        let config = SimConfig {
            imputations: 3,
            burn_in: 10,
            spacing: 2,
            ..SimConfig::new(
                20,
                4,
                CovarianceDesign::RandomCorrelation,
                0.1,
                RankChoice::Fixed(1),
                vec![Quantity::Mean { col: 1 }, Quantity::Correlation { a: 0, b: 1 }],
                5,
                7,
            )
        };
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.to_dsv(','), b.to_dsv(','));
        let c = run_experiment(&SimConfig {
            master_seed: 8,
            ..config
        })
        .unwrap();
        assert_ne!(a.to_dsv(','), c.to_dsv(','));
    }

    #[test]
    fn listwise_deletion_fails_when_complete_rows_run_out() {
        let config = SimConfig {
            methods: vec![Method::ListwiseDeletion],
            ..SimConfig::new(
                6,
                5,
                CovarianceDesign::Block { rho: 0.3 },
                0.35,
                RankChoice::Fixed(1),
                vec![Quantity::Correlation { a: 0, b: 1 }],
                50,
                11,
            )
        };
        let report = run_experiment(&config).unwrap();
        let row = &report.rows[0];
        assert!(row.failures > 0, "expected some failed replications");
        assert_eq!(row.successes + row.failures, 50);
    }

    #[test]
    fn cross_validated_rank_finds_the_block_structure() {
        let config = SimConfig {
            methods: vec![Method::FullData],
            ..SimConfig::new(
                40,
                6,
                CovarianceDesign::Block { rho: 0.85 },
                0.1,
                RankChoice::CrossValidated {
                    candidates: vec![1, 2, 3, 4],
                },
                vec![Quantity::Mean { col: 0 }],
                1,
                13,
            )
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.rank_used, 2);
    }

    #[test]
    fn bad_configurations_are_rejected() {
        let base = SimConfig::new(
            20,
            4,
            CovarianceDesign::Block { rho: 0.3 },
            0.1,
            RankChoice::Fixed(1),
            vec![Quantity::Mean { col: 0 }],
            5,
            1,
        );
        let cases = [
            SimConfig {
                missing_rate: 1.0,
                ..base.clone()
            },
            SimConfig {
                quantities: vec![],
                ..base.clone()
            },
            SimConfig {
                quantities: vec![Quantity::Mean { col: 4 }],
                ..base.clone()
            },
            SimConfig {
                imputations: 1,
                ..base.clone()
            },
        ];
        for bad in cases {
            assert!(matches!(
                run_experiment(&bad),
                Err(Error::InvalidConfig { .. })
            ));
        }
        let too_big = SimConfig {
            rank: RankChoice::Fixed(5),
            ..base
        };
        assert!(matches!(
            run_experiment(&too_big),
            Err(Error::RankTooLarge { .. })
        ));
    }

    #[test]
    fn report_dsv_lists_quantities_outermost() {
        let config = SimConfig {
            methods: vec![Method::FullData, Method::ListwiseDeletion],
            ..SimConfig::new(
                25,
                4,
                CovarianceDesign::Block { rho: 0.3 },
                0.05,
                RankChoice::Fixed(1),
                vec![Quantity::Mean { col: 0 }, Quantity::Mean { col: 1 }],
                3,
                21,
            )
        };
        let report = run_experiment(&config).unwrap();
        let dsv = report.to_dsv(',');
        let lines: Vec<&str> = dsv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(
            lines[0],
            "quantity,method,bias,bias_se,rmse,median_ci_width,coverage,failures,K"
        );
        assert!(lines[1].starts_with("mean:1,full_data,"));
        assert!(lines[2].starts_with("mean:1,listwise_deletion,"));
        assert!(lines[3].starts_with("mean:2,full_data,"));
        assert!(report.row(&Quantity::Mean { col: 1 }, Method::FullData).is_some());
    }
}
