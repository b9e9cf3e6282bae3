//! Complete-data analyzers, pooling of repeated analyses, and listwise
//! deletion.
//!
//! Each analyzer reduces a complete dataset to a scalar estimate with a
//! complete-data variance and degrees of freedom. Analyses of several
//! imputed datasets are combined with the usual pooling rules: the pooled
//! estimate is the mean of the per-dataset estimates, the total variance
//! adds the within-imputation average and the between-imputation spread
//! inflated by `1 + 1/M`, and the reference distribution is a Student t
//! whose degrees of freedom blend the between/within ratio with a
//! small-sample adjustment of the complete-data degrees of freedom.
//!
//! Correlations are analyzed on the variance-stabilized scale
//! `z = atanh(rho)` with variance `1/(n - 3)`; pooling happens on that
//! scale and results are transformed back for reporting.

use crate::data::{CompleteMatrix, IncompleteMatrix};
use crate::error::Error;
use crate::Result;
use nalgebra::{Cholesky, DMatrix};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Scale on which an analysis lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Estimate is reported as-is.
    None,
    /// Estimate is a Fisher-z transformed correlation.
    FisherZ,
}

/// A scalar quantity of interest, with 0-based column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Quantity {
    /// Mean of one column.
    Mean { col: usize },
    /// Pearson correlation between two columns.
    Correlation { a: usize, b: usize },
    /// Coefficient of the first listed predictor in an ordinary
    /// least-squares regression of `response` on `predictors` with an
    /// intercept.
    Regression {
        response: usize,
        predictors: Vec<usize>,
    },
}

impl Quantity {
    /// Parses the external 1-based syntax: `mean:J`, `corr:I,J`, or
    /// `reg:R~P1,P2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = |msg: &str| Error::config(format!("bad quantity '{spec}': {msg}"));
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| bad("expected kind:columns"))?;
        let col = |s: &str| -> Result<usize> {
            let v: usize = s
                .trim()
                .parse()
                .map_err(|_| bad("column indices must be positive integers"))?;
            if v == 0 {
                return Err(bad("column indices are 1-based"));
            }
            Ok(v - 1)
        };
        match kind.trim() {
            "mean" => Ok(Quantity::Mean { col: col(rest)? }),
            "corr" => {
                let (a, b) = rest
                    .split_once(',')
                    .ok_or_else(|| bad("corr needs two columns"))?;
                Ok(Quantity::Correlation {
                    a: col(a)?,
                    b: col(b)?,
                })
            }
            "reg" => {
                let (resp, preds) = rest
                    .split_once('~')
                    .ok_or_else(|| bad("reg needs response~predictors"))?;
                let predictors = preds
                    .split(',')
                    .map(col)
                    .collect::<Result<Vec<usize>>>()?;
                if predictors.is_empty() {
                    return Err(bad("reg needs at least one predictor"));
                }
                Ok(Quantity::Regression {
                    response: col(resp)?,
                    predictors,
                })
            }
            other => Err(bad(&format!("unknown kind '{other}'"))),
        }
    }

    /// The external 1-based label, the inverse of [`Quantity::parse`].
    pub fn label(&self) -> String {
        match self {
            Quantity::Mean { col } => format!("mean:{}", col + 1),
            Quantity::Correlation { a, b } => format!("corr:{},{}", a + 1, b + 1),
            Quantity::Regression {
                response,
                predictors,
            } => {
                let preds: Vec<String> = predictors.iter().map(|p| (p + 1).to_string()).collect();
                format!("reg:{}~{}", response + 1, preds.join(","))
            }
        }
    }

    /// Largest 0-based column index referenced.
    pub fn max_col(&self) -> usize {
        match self {
            Quantity::Mean { col } => *col,
            Quantity::Correlation { a, b } => (*a).max(*b),
            Quantity::Regression {
                response,
                predictors,
            } => predictors.iter().copied().max().unwrap_or(0).max(*response),
        }
    }
}

/// Result of one complete-data analysis.
#[derive(Debug, Clone)]
pub struct AnalysisResult {
    /// Point estimate, on the analysis scale.
    pub estimate: f64,
    /// Complete-data variance of the estimate, on the analysis scale.
    pub variance: f64,
    /// Number of rows analyzed.
    pub n_complete: usize,
    /// Scale of the estimate.
    pub transform: Transform,
    /// Complete-data degrees of freedom for interval construction.
    pub nu_complete: f64,
}

/// Mean of column `col`: variance `s^2 / n`, degrees of freedom `n - 1`.
pub fn analyze_mean(x: &CompleteMatrix, col: usize) -> Result<AnalysisResult> {
    check_cols(x, &[col])?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            found: n,
        });
    }
    let v = x.column(col);
    let mean = v.sum() / n as f64;
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let s2 = ss / (n - 1) as f64;
    Ok(AnalysisResult {
        estimate: mean,
        variance: s2 / n as f64,
        n_complete: n,
        transform: Transform::None,
        nu_complete: (n - 1) as f64,
    })
}

/// Variance-stabilizing transform for correlations, `0.5 ln((1+r)/(1-r))`.
///
/// Fails with [`Error::OutOfRange`] when `|rho| >= 1`.
pub fn fisher_z(rho: f64) -> Result<f64> {
    if !rho.is_finite() || rho.abs() >= 1.0 {
        return Err(Error::OutOfRange { value: rho });
    }
    Ok(0.5 * ((1.0 + rho) / (1.0 - rho)).ln())
}

/// Inverse of [`fisher_z`]; maps the real line into `(-1, 1)`.
pub fn inverse_fisher_z(z: f64) -> f64 {
    z.tanh()
}

/// Pearson correlation of columns `a` and `b`, analyzed on the Fisher-z
/// scale with variance `1/(n - 3)` and degrees of freedom `n - 3`.
///
/// Numerically collinear columns (`|rho| > 1 - 1e-12`) are rejected with
/// [`Error::OutOfRange`] because the transformed scale degenerates there.
pub fn analyze_correlation(x: &CompleteMatrix, a: usize, b: usize) -> Result<AnalysisResult> {
    check_cols(x, &[a, b])?;
    let n = x.nrows();
    if n < 4 {
        return Err(Error::TooFewRows {
            needed: 4,
            found: n,
        });
    }
    let va = x.column(a);
    let vb = x.column(b);
    let ma = va.sum() / n as f64;
    let mb = vb.sum() / n as f64;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for i in 0..n {
        let da = va[i] - ma;
        let db = vb[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 {
        return Err(Error::ConstantColumn { col: a });
    }
    if sbb == 0.0 {
        return Err(Error::ConstantColumn { col: b });
    }
    let rho = sab / (saa.sqrt() * sbb.sqrt());
    if rho.abs() > 1.0 - 1e-12 {
        return Err(Error::OutOfRange { value: rho });
    }
    Ok(AnalysisResult {
        estimate: fisher_z(rho)?,
        variance: 1.0 / (n - 3) as f64,
        n_complete: n,
        transform: Transform::FisherZ,
        nu_complete: (n - 3) as f64,
    })
}

/// Ordinary least squares of `response` on `predictors` with an
/// intercept; the estimate is the coefficient of the first listed
/// predictor, with its usual variance on `n - (1 + #predictors)` degrees
/// of freedom.
pub fn analyze_regression(
    x: &CompleteMatrix,
    response: usize,
    predictors: &[usize],
) -> Result<AnalysisResult> {
    if predictors.is_empty() {
        return Err(Error::config("regression needs at least one predictor"));
    }
    let mut cols = vec![response];
    cols.extend_from_slice(predictors);
    check_cols(x, &cols)?;
    let n = x.nrows();
    let p_design = predictors.len() + 1;
    if n < p_design + 1 {
        return Err(Error::TooFewRows {
            needed: p_design + 1,
            found: n,
        });
    }
    let mut design = DMatrix::zeros(n, p_design);
    for i in 0..n {
        design[(i, 0)] = 1.0;
    }
    for (k, &j) in predictors.iter().enumerate() {
        design.set_column(k + 1, &x.values().column(j));
    }
    let y = x.column(response);
    let gram = design.transpose() * &design;
    let chol = Cholesky::new(gram).ok_or(Error::SingularDesign)?;
    let beta = chol.solve(&(design.transpose() * &y));
    let resid = y - &design * &beta;
    let s2 = resid.norm_squared() / (n - p_design) as f64;
    let gram_inv = chol.inverse();
    Ok(AnalysisResult {
        estimate: beta[1],
        variance: s2 * gram_inv[(1, 1)],
        n_complete: n,
        transform: Transform::None,
        nu_complete: (n - p_design) as f64,
    })
}

/// Runs the analyzer selected by `quantity`.
pub fn analyze(x: &CompleteMatrix, quantity: &Quantity) -> Result<AnalysisResult> {
    match quantity {
        Quantity::Mean { col } => analyze_mean(x, *col),
        Quantity::Correlation { a, b } => analyze_correlation(x, *a, *b),
        Quantity::Regression {
            response,
            predictors,
        } => analyze_regression(x, *response, predictors),
    }
}

/// Drops every row with any missing cell and analyzes the remainder.
///
/// Fails with [`Error::TooFewCompleteRows`] when fewer complete rows
/// remain than the analysis needs (2 for a mean, 4 for a correlation,
/// `#predictors + 2` for a regression).
pub fn complete_case_analysis(x: &IncompleteMatrix, quantity: &Quantity) -> Result<AnalysisResult> {
    let rows = x.complete_rows();
    let needed = match quantity {
        Quantity::Mean { .. } => 2,
        Quantity::Correlation { .. } => 4,
        Quantity::Regression { predictors, .. } => predictors.len() + 2,
    };
    if rows.len() < needed {
        return Err(Error::TooFewCompleteRows {
            needed,
            found: rows.len(),
        });
    }
    let sub = DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x.values()[(rows[i], j)]);
    analyze(&CompleteMatrix::new(sub)?, quantity)
}

/// A pooled estimate with its variance decomposition and interval.
#[derive(Debug, Clone)]
pub struct PooledResult {
    /// Pooled estimate, on the analysis scale.
    pub estimate: f64,
    /// Average within-imputation variance.
    pub within: f64,
    /// Between-imputation variance.
    pub between: f64,
    /// Total variance `within + (1 + 1/M) * between`.
    pub total_variance: f64,
    /// Degrees of freedom of the pooled t reference.
    pub df: f64,
    /// Lower 95% bound, on the analysis scale.
    pub ci_low: f64,
    /// Upper 95% bound, on the analysis scale.
    pub ci_high: f64,
    /// Scale of the pooled analysis.
    pub transform: Transform,
    /// Estimate and interval mapped back to the natural scale when the
    /// analysis scale is transformed; `None` for untransformed analyses.
    pub back_transformed: Option<(f64, f64, f64)>,
}

impl PooledResult {
    /// Estimate on the reporting (natural) scale.
    pub fn reported_estimate(&self) -> f64 {
        self.back_transformed.map_or(self.estimate, |(e, _, _)| e)
    }

    /// Interval on the reporting (natural) scale.
    pub fn reported_interval(&self) -> (f64, f64) {
        self.back_transformed
            .map_or((self.ci_low, self.ci_high), |(_, lo, hi)| (lo, hi))
    }
}

/// Small-sample degrees of freedom for the pooled t reference.
///
/// With `r = (1 + 1/M) * between / within`, the large-sample value
/// `(M - 1)(1 + 1/r)^2` is harmonically combined with the
/// observed-data value
/// `((nu_com + 1)/(nu_com + 3)) * nu_com * within / (within + (1 + 1/M) * between)`.
/// When `between` is zero the observed-data value is returned, and when
/// `within` is zero the limit `M - 1` is returned, so the result is always
/// positive and finite.
pub fn barnard_rubin_df(m: usize, within: f64, between: f64, nu_complete: f64) -> f64 {
    let mf = m as f64;
    let obs_scale = (nu_complete + 1.0) / (nu_complete + 3.0) * nu_complete;
    if between <= 0.0 {
        return obs_scale;
    }
    if within <= 0.0 {
        return mf - 1.0;
    }
    let r = (1.0 + 1.0 / mf) * between / within;
    let nu_old = (mf - 1.0) * (1.0 + 1.0 / r).powi(2);
    let nu_obs = obs_scale * within / (within + (1.0 + 1.0 / mf) * between);
    1.0 / (1.0 / nu_old + 1.0 / nu_obs)
}

/// The 97.5% quantile of a standard normal.
const NORMAL_Q975: f64 = 1.959_963_984_540_054_4;

/// The 97.5% quantile of a Student t with (possibly fractional) `df`.
///
/// Small degrees of freedom use the exact inverse CDF; large ones use the
/// asymptotic expansion around the normal quantile, which is accurate to
/// well below 1e-8 where it takes over (the exact inverse degrades and can
/// fail to converge for very large `df`).
pub fn t_quantile_975(df: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    if df < 1000.0 {
        return StudentsT::new(0.0, 1.0, df)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
    }
    let u = NORMAL_Q975;
    let (u2, v) = (u * u, 1.0 / df);
    let c1 = u * (u2 + 1.0) / 4.0;
    let c2 = u * ((5.0 * u2 + 16.0) * u2 + 3.0) / 96.0;
    let c3 = u * (((3.0 * u2 + 19.0) * u2 + 17.0) * u2 - 15.0) / 384.0;
    let c4 = u * ((((79.0 * u2 + 776.0) * u2 + 1482.0) * u2 - 1920.0) * u2 - 945.0) / 92160.0;
    u + v * (c1 + v * (c2 + v * (c3 + v * c4)))
}

/// Pools repeated analyses of the same quantity.
///
/// All analyses must share the same transform; correlations are pooled on
/// the Fisher-z scale and the reported interval is transformed back. The
/// complete-data degrees of freedom are taken from the analyses.
pub fn rubin_pool(results: &[AnalysisResult]) -> Result<PooledResult> {
    let m = results.len();
    if m < 2 {
        return Err(Error::TooFewImputations { found: m });
    }
    let transform = results[0].transform;
    if results.iter().any(|r| r.transform != transform) {
        return Err(Error::MixedTransforms);
    }
    let mf = m as f64;
    // Identical analyses carry no between-imputation spread; short-circuit so
    // the round-off of averaging m equal values cannot produce a spurious
    // positive between-variance.
    let identical = results
        .iter()
        .all(|r| r.estimate == results[0].estimate && r.variance == results[0].variance);
    let (estimate, within, between) = if identical {
        (results[0].estimate, results[0].variance, 0.0)
    } else {
        let estimate = results.iter().map(|r| r.estimate).sum::<f64>() / mf;
        let within = results.iter().map(|r| r.variance).sum::<f64>() / mf;
        let between = results
            .iter()
            .map(|r| (r.estimate - estimate) * (r.estimate - estimate))
            .sum::<f64>()
            / (mf - 1.0);
        (estimate, within, between)
    };
    let total_variance = within + (1.0 + 1.0 / mf) * between;
    let df = barnard_rubin_df(m, within, between, results[0].nu_complete);
    let half = t_quantile_975(df) * total_variance.sqrt();
    let ci_low = estimate - half;
    let ci_high = estimate + half;
    let back_transformed = match transform {
        Transform::None => None,
        Transform::FisherZ => Some((
            inverse_fisher_z(estimate),
            inverse_fisher_z(ci_low),
            inverse_fisher_z(ci_high),
        )),
    };
    Ok(PooledResult {
        estimate,
        within,
        between,
        total_variance,
        df,
        ci_low,
        ci_high,
        transform,
        back_transformed,
    })
}

/// A complete-data interval (no pooling involved).
#[derive(Debug, Clone)]
pub struct Interval {
    /// Point estimate on the reporting (natural) scale.
    pub estimate: f64,
    /// Lower 95% bound on the reporting scale.
    pub low: f64,
    /// Upper 95% bound on the reporting scale.
    pub high: f64,
}

/// 95% interval of a single analysis using a Student t on its
/// complete-data degrees of freedom, reported on the natural scale.
pub fn complete_data_interval(r: &AnalysisResult) -> Interval {
    let half = t_quantile_975(r.nu_complete) * r.variance.sqrt();
    let (lo, hi) = (r.estimate - half, r.estimate + half);
    match r.transform {
        Transform::None => Interval {
            estimate: r.estimate,
            low: lo,
            high: hi,
        },
        Transform::FisherZ => Interval {
            estimate: inverse_fisher_z(r.estimate),
            low: inverse_fisher_z(lo),
            high: inverse_fisher_z(hi),
        },
    }
}

fn check_cols(x: &CompleteMatrix, cols: &[usize]) -> Result<()> {
    for &c in cols {
        if c >= x.ncols() {
            return Err(Error::config(format!(
                "column {} out of range for {} columns",
                c + 1,
                x.ncols()
            )));
        }
    }
    Ok(())
}
