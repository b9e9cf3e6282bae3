//! Small numeric helpers shared across modules.

/// Arithmetic mean; `NaN` for an empty slice.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolation quantile of an ascending-sorted slice (the common
/// "type 7" convention: `h = (n - 1) q`, interpolate between the floor and
/// ceiling order statistics). `NaN` for an empty slice.
pub(crate) fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Sorts a copy ascending and takes the quantile; `NaN` values sort last.
pub(crate) fn quantile_of(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    quantile_type7(&sorted, q)
}
