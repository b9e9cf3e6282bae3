//! Fixed-effect PCA on a column-centered matrix.
//!
//! The model writes the data as a low-rank signal plus homoskedastic
//! Gaussian noise, `X = Xtilde + E` with `E ~ N(0, sigma^2)` cell-wise. The
//! rank-S maximum-likelihood signal estimate is the truncated SVD
//! reconstruction; the regularized estimate shrinks each component by a
//! signal-to-total variance ratio so that weak directions are damped
//! instead of copied verbatim into imputations.
//!
//! Conventions used throughout the crate:
//!
//! * [`SvdFactors::singular_values`] stores the singular values `d_s` of
//!   the centered matrix; reconstructions use `d_s * u_is * v_js`.
//! * The shrinkage formula operates on the component sums of squares
//!   `lambda_s = d_s^2` (the eigenvalues of `X^T X`).
//!
//! `truncated_svd` prefers a Gram-matrix eigendecomposition (much faster
//! than a full SVD when one dimension is small, which is the hot path of
//! the sampler) and falls back to a full Golub-Kahan SVD whenever the
//! spectrum is too degenerate for the Gram route to be accurate. Both
//! routes are deterministic, so identical input bits always yield
//! identical factors.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Maximum allowed departure from orthonormality in the Gram fast path.
const ORTHO_TOL: f64 = 1e-11;

/// Smallest eigenvalue ratio the Gram fast path accepts for the kept
/// components; below this the full SVD is used instead.
const GRAM_REL_EIG_MIN: f64 = 1e-6;

/// Rank-S factors of a matrix: `U` (n x S, orthonormal columns), singular
/// values (non-increasing, non-negative), and `V` (p x S, orthonormal
/// columns).
///
/// The sign of each component is fixed deterministically: the coordinate
/// of `v_s` with the largest absolute value is made non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// Left singular vectors, one column per component.
    pub u: DMatrix<f64>,
    /// Singular values `d_s`, sorted in non-increasing order.
    pub singular_values: DVector<f64>,
    /// Right singular vectors, one column per component.
    pub v: DMatrix<f64>,
}

impl SvdFactors {
    /// Number of retained components.
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Component sums of squares `lambda_s = d_s^2`, the spectrum the
    /// shrinkage formula operates on.
    pub fn component_sums_of_squares(&self) -> Vec<f64> {
        self.singular_values.iter().map(|d| d * d).collect()
    }
}

/// Best rank-`rank` factorization of `x` in the least-squares sense.
///
/// `rank` may be any value up to `min(n, p)`. Callers fitting the centered
/// mean-plus-signal model should use [`PcaFit::fit`], which enforces the
/// tighter `min(n - 1, p)` bound implied by centering.
pub fn truncated_svd(x: &DMatrix<f64>, rank: usize) -> Result<SvdFactors> {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return Err(Error::config("matrix must have at least one row and column"));
    }
    let max = n.min(p);
    if rank > max {
        return Err(Error::RankTooLarge { rank, max, n, p });
    }
    let mut max_abs = 0.0f64;
    for j in 0..p {
        for i in 0..n {
            let v = x[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFiniteInput { row: i, col: j });
            }
            max_abs = max_abs.max(v.abs());
        }
    }
    if rank == 0 {
        return Ok(SvdFactors {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v: DMatrix::zeros(p, 0),
        });
    }
    if max_abs == 0.0 {
        // The zero matrix: any orthonormal directions will do; use the
        // leading standard basis vectors for determinism.
        let u = DMatrix::from_fn(n, rank, |i, s| if i == s { 1.0 } else { 0.0 });
        let v = DMatrix::from_fn(p, rank, |j, s| if j == s { 1.0 } else { 0.0 });
        return Ok(SvdFactors {
            u,
            singular_values: DVector::zeros(rank),
            v,
        });
    }

    // Rescale extreme inputs so that squared norms cannot overflow.
    let scaled;
    let (work, scale) = if max_abs > 1e100 {
        scaled = x / max_abs;
        (&scaled, max_abs)
    } else {
        (x, 1.0)
    };

    let mut factors = match svd_gram(work, rank) {
        Some(f) => f,
        None => svd_robust(work, rank)?,
    };
    if scale != 1.0 {
        for d in factors.singular_values.iter_mut() {
            *d *= scale;
        }
    }
    apply_sign_convention(&mut factors);
    Ok(factors)
}

/// Gram-matrix route: eigendecompose `X^T X` (or `X X^T` when `n < p`) and
/// recover the other side's vectors by multiplication. Returns `None`
/// whenever the result could be inaccurate, in which case the caller falls
/// back to the full SVD.
fn svd_gram(x: &DMatrix<f64>, rank: usize) -> Option<SvdFactors> {
    let (n, p) = x.shape();
    let tall = p <= n;
    let gram = if tall {
        x.transpose() * x
    } else {
        x * x.transpose()
    };
    if !gram.iter().all(|v| v.is_finite()) {
        return None;
    }
    let q = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]];
    let kept = eig.eigenvalues[order[rank - 1]];
    let well_separated =
        top.is_finite() && top > 0.0 && kept.is_finite() && kept > top * GRAM_REL_EIG_MIN;
    if !well_separated {
        return None;
    }

    let mut near = DMatrix::zeros(if tall { p } else { n }, rank);
    let mut far = DMatrix::zeros(if tall { n } else { p }, rank);
    let mut d = DVector::zeros(rank);
    for s in 0..rank {
        let e = eig.eigenvectors.column(order[s]);
        near.set_column(s, &e);
        let w = if tall {
            x * e
        } else {
            x.transpose() * e
        };
        let norm = w.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        far.set_column(s, &(w / norm));
        d[s] = norm;
    }
    for s in 1..rank {
        if d[s] > d[s - 1] {
            // Eigenvalue ordering and vector norms disagree; be safe.
            return None;
        }
    }
    let (u, v) = if tall { (far, near) } else { (near, far) };
    if !is_orthonormal(&u) || !is_orthonormal(&v) {
        return None;
    }
    Some(SvdFactors {
        u,
        singular_values: d,
        v,
    })
}

/// Full Golub-Kahan SVD, sorted by singular value.
fn svd_robust(x: &DMatrix<f64>, rank: usize) -> Result<SvdFactors> {
    let svd = x.clone().svd(true, true);
    let u_full = svd.u.expect("U requested");
    let v_full = svd.v_t.expect("V requested").transpose();
    let d_full = svd.singular_values;
    let mut order: Vec<usize> = (0..d_full.len()).collect();
    order.sort_by(|&a, &b| {
        d_full[b]
            .partial_cmp(&d_full[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut u = DMatrix::zeros(x.nrows(), rank);
    let mut v = DMatrix::zeros(x.ncols(), rank);
    let mut d = DVector::zeros(rank);
    for s in 0..rank {
        let k = order[s];
        u.set_column(s, &u_full.column(k));
        v.set_column(s, &v_full.column(k));
        d[s] = d_full[k];
    }
    Ok(SvdFactors {
        u,
        singular_values: d,
        v,
    })
}

/// Checks that the columns of `m` are orthonormal to within [`ORTHO_TOL`].
fn is_orthonormal(m: &DMatrix<f64>) -> bool {
    let s = m.ncols();
    let gram = m.transpose() * m;
    for a in 0..s {
        for b in 0..s {
            let target = if a == b { 1.0 } else { 0.0 };
            let dev = (gram[(a, b)] - target).abs();
            // NaN deviations must fail the check too.
            if !(dev.is_finite() && dev <= ORTHO_TOL) {
                return false;
            }
        }
    }
    true
}

/// Makes the largest-magnitude coordinate of each right singular vector
/// non-negative, flipping the paired left vector to preserve the product.
fn apply_sign_convention(f: &mut SvdFactors) {
    for s in 0..f.rank() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for j in 0..f.v.nrows() {
            let a = f.v[(j, s)].abs();
            if a > best_abs {
                best_abs = a;
                best = j;
            }
        }
        if best_abs > 0.0 && f.v[(best, s)] < 0.0 {
            for j in 0..f.v.nrows() {
                f.v[(j, s)] = -f.v[(j, s)];
            }
            for i in 0..f.u.nrows() {
                f.u[(i, s)] = -f.u[(i, s)];
            }
        }
    }
}

/// Maximum-likelihood reconstruction `sum_s d_s u_s v_s^T`.
pub fn ml_reconstruct(f: &SvdFactors) -> DMatrix<f64> {
    scaled_reconstruct(f, |_, d| d)
}

/// Reconstruction with per-component scale `phi_s d_s`.
///
/// `phi` must hold one factor per retained component.
pub fn rpca_reconstruct(f: &SvdFactors, phi: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(phi.len(), f.rank());
    scaled_reconstruct(f, |s, d| phi[s] * d)
}

fn scaled_reconstruct(f: &SvdFactors, scale: impl Fn(usize, f64) -> f64) -> DMatrix<f64> {
    let mut u_scaled = f.u.clone();
    for s in 0..f.rank() {
        let w = scale(s, f.singular_values[s]);
        for i in 0..u_scaled.nrows() {
            u_scaled[(i, s)] *= w;
        }
    }
    u_scaled * f.v.transpose()
}

/// Residual noise variance of a rank-`rank` fit on a centered matrix.
///
/// The residual sum of squares is divided by the observations left after
/// paying for the column means and the rank-`rank` signal:
/// `np - (p + rank * (n - 1 + p - rank))`. Returns
/// [`Error::DegenerateDof`] when that count is not positive.
pub fn estimate_sigma2(x: &DMatrix<f64>, xhat: &DMatrix<f64>, rank: usize) -> Result<f64> {
    assert_eq!(x.shape(), xhat.shape(), "fit and data shapes differ");
    let (n, p) = x.shape();
    let dof = (n * p) as i64 - (p as i64 + rank as i64 * (n as i64 - 1 + p as i64 - rank as i64));
    if dof <= 0 {
        return Err(Error::DegenerateDof { n, p, rank });
    }
    let mut rss = 0.0;
    for j in 0..p {
        for i in 0..n {
            let r = x[(i, j)] - xhat[(i, j)];
            rss += r * r;
        }
    }
    Ok(rss / dof as f64)
}

/// Signal-to-total variance shrinkage factors, clamped to `[0, 1]`.
///
/// `lambda` holds the component sums of squares `d_s^2` (see
/// [`SvdFactors::component_sums_of_squares`]); each factor is
/// `(lambda_s - (np / min(n - 1, p)) * sigma2) / lambda_s`.
pub fn shrinkage_factors(lambda: &[f64], sigma2: f64, n: usize, p: usize) -> Vec<f64> {
    debug_assert!(n >= 2, "shrinkage needs at least two rows");
    let noise = (n * p) as f64 / (n - 1).min(p) as f64 * sigma2;
    lambda
        .iter()
        .map(|&l| {
            if l > 0.0 {
                ((l - noise) / l).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// A complete rank-`S` fit of the centered fixed-effect model: factors,
/// noise variance, shrinkage factors, and both reconstructions.
#[derive(Debug, Clone)]
pub struct PcaFit {
    /// Rank-S factors of the centered matrix.
    pub factors: SvdFactors,
    /// Estimated noise variance.
    pub sigma2: f64,
    /// Per-component shrinkage factors, in `[0, 1]`.
    pub phi: Vec<f64>,
    /// Maximum-likelihood reconstruction.
    pub xhat: DMatrix<f64>,
    /// Regularized (shrunk) reconstruction.
    pub xhat_rpca: DMatrix<f64>,
}

impl PcaFit {
    /// Fits the rank-`rank` model to a column-centered matrix.
    ///
    /// Centering spends one degree of freedom per column, so the rank is
    /// capped at `min(n - 1, p)`. Propagates [`Error::DegenerateDof`] when
    /// the noise variance has no degrees of freedom left.
    pub fn fit(centered: &DMatrix<f64>, rank: usize) -> Result<Self> {
        let (n, p) = centered.shape();
        let max = n.saturating_sub(1).min(p);
        if rank > max {
            return Err(Error::RankTooLarge { rank, max, n, p });
        }
        let factors = truncated_svd(centered, rank)?;
        let xhat = ml_reconstruct(&factors);
        let sigma2 = estimate_sigma2(centered, &xhat, rank)?;
        let phi = shrinkage_factors(&factors.component_sums_of_squares(), sigma2, n, p);
        let xhat_rpca = rpca_reconstruct(&factors, &phi);
        Ok(PcaFit {
            factors,
            sigma2,
            phi,
            xhat,
            xhat_rpca,
        })
    }
}
