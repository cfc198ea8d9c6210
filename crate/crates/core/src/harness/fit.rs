//! Empirical rate fitting on traces.

use crate::error::{Error, Result};
use crate::trace::TraceRecord;

/// Gaps at or below `GAP_FLOOR_ULPS · ε_mach · max(|f*|, tiny)` are roundoff
/// and are left out of fits.
pub const GAP_FLOOR_ULPS: f64 = 64.0;

/// Least-squares slope of `ln y` against `ln x`.
///
/// Every `x` and `y` must be positive; fewer than three points is an error.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if points
        .iter()
        .any(|&(x, y)| !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite())
    {
        return Err(Error::InvalidArgument(
            "log-log fit needs positive finite points".into(),
        ));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), &(x, y)| (sx + x.ln(), sy + y.ln()));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::TooFewPoints(1));
    }
    Ok(sxy / sxx)
}

/// The `(k, f_k − f*)` pairs of `trace` with `k ∈ [k_lo, k_hi]` whose gap is
/// above the roundoff floor.
pub fn usable_gaps(
    trace: &[TraceRecord],
    k_lo: usize,
    k_hi: usize,
    f_star: f64,
) -> Vec<(f64, f64)> {
    let floor = GAP_FLOOR_ULPS * f64::EPSILON * f_star.abs();
    trace
        .iter()
        .filter(|r| r.k >= k_lo && r.k <= k_hi)
        .map(|r| (r.k as f64, r.f - f_star))
        .filter(|&(_, gap)| gap > floor && gap.is_finite())
        .collect()
}

/// Slope of `ln(f_k − f*)` against `ln k` over `k ∈ [k_lo, k_hi]`.
pub fn fit_rate(trace: &[TraceRecord], k_lo: usize, k_hi: usize, f_star: f64) -> Result<f64> {
    if k_lo < 1 || k_hi <= k_lo {
        return Err(Error::InvalidArgument(format!(
            "fit window needs 1 <= k_lo < k_hi, got [{k_lo}, {k_hi}]"
        )));
    }
    log_log_slope(&usable_gaps(trace, k_lo, k_hi, f_star))
}

/// `f_K − f*` at the row with `k = at`, if the trace reaches it.
pub fn gap_at(trace: &[TraceRecord], at: usize, f_star: f64) -> Option<f64> {
    trace.iter().find(|r| r.k == at).map(|r| r.f - f_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(f: impl Fn(f64) -> f64) -> Vec<TraceRecord> {
        (0..=40)
            .map(|k| TraceRecord {
                k,
                f: f(k as f64),
                grad_norm: 0.0,
                step_radius: 0.0,
                lambda: 0.0,
                a_acc: 0.0,
                inner_iters: 0,
                n_grad: 0,
                n_hess: 0,
                max_grad_norm: 0.0,
                max_hess_norm: 0.0,
                wall_ms: 0.0,
                components: None,
            })
            .collect()
    }

    #[test]
    fn exact_power_laws() {
        let t = synthetic(|k| 7.0 * k.powi(-5));
        assert!((fit_rate(&t, 3, 30, 0.0).unwrap() + 5.0).abs() <= 1e-9);
        let t = synthetic(|k| 3.0 * k.powi(-2));
        assert!((fit_rate(&t, 3, 30, 0.0).unwrap() + 2.0).abs() <= 1e-9);
        let t = synthetic(|_| 1.5);
        assert!(fit_rate(&t, 3, 30, 0.0).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn offset_by_fstar() {
        let t = synthetic(|k| -2.0 + 4.0 * k.powi(-3));
        assert!((fit_rate(&t, 2, 20, -2.0).unwrap() + 3.0).abs() <= 1e-8);
    }

    #[test]
    fn too_few_points() {
        let t = synthetic(|k| k.powi(-2));
        assert!(fit_rate(&t[..4], 1, 30, 0.0).is_ok());
        assert!(matches!(
            fit_rate(&t[..3], 1, 30, 0.0),
            Err(Error::TooFewPoints(2))
        ));
        // gaps at roundoff are ignored
        let flat = synthetic(|_| 1.0);
        assert!(matches!(
            fit_rate(&flat, 3, 30, 1.0),
            Err(Error::TooFewPoints(0))
        ));
        assert!(fit_rate(&t, 0, 30, 0.0).is_err());
    }
}
