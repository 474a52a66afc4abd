//! Fidelity metrics for reconstructed series: RMSE, cross-correlation lag,
//! and total variation (a roughness/spikiness measure).

use crate::signals::SignalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityReport {
    pub rmse: f64,
    /// Lag of the candidate behind the reference, in samples. Positive
    /// means the candidate trails the reference.
    pub lag_samples: i64,
    /// Sum of absolute first differences of the candidate.
    pub total_variation: f64,
}

/// Compare a candidate series against a reference on the same sampling
/// grid. `max_lag` bounds the cross-correlation search (clipped to the
/// series length).
pub fn fidelity_metrics(
    reference: &[f64],
    candidate: &[f64],
    max_lag: usize,
) -> Result<FidelityReport, SignalError> {
    if reference.len() != candidate.len() {
        return Err(SignalError::LengthMismatch {
            reference: reference.len(),
            candidate: candidate.len(),
        });
    }
    if reference.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let n = reference.len();
    let rmse = (reference
        .iter()
        .zip(candidate)
        .map(|(r, c)| (c - r) * (c - r))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let lag_samples = cross_correlation_lag(reference, candidate, max_lag);
    Ok(FidelityReport {
        rmse,
        lag_samples,
        total_variation: total_variation(candidate),
    })
}

pub fn total_variation(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn peak_to_peak(series: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in series {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

/// Lag (in samples) of the candidate behind the reference, as the argmax
/// of the normalized cross-correlation over `[-max_lag, +max_lag]`.
pub fn cross_correlation_lag(reference: &[f64], candidate: &[f64], max_lag: usize) -> i64 {
    cross_correlation_lag_impl(reference, candidate, max_lag, cfg!(feature = "parallel"))
}

/// As [`cross_correlation_lag`], with explicit control over the execution
/// strategy. With the `parallel` feature disabled, `parallel = true` falls
/// back to the sequential scan.
pub fn cross_correlation_lag_impl(
    reference: &[f64],
    candidate: &[f64],
    max_lag: usize,
    parallel: bool,
) -> i64 {
    let n = reference.len().min(candidate.len());
    if n < 2 {
        return 0;
    }
    let max_lag = max_lag.min(n - 1) as i64;
    let lags: Vec<i64> = (-max_lag..=max_lag).collect();

    let score = |&lag: &i64| (ncc_at_lag(reference, candidate, lag), lag);

    let best = crate::par::map_reduce(
        &lags,
        score,
        |a, b| if better(a, b) { a } else { b },
        parallel,
    );
    best.map(|(_, lag)| lag).unwrap_or(0)
}

/// Total order on (score, lag) candidates: higher score wins, ties prefer
/// the smaller |lag|, then the smaller lag. Keeping the order total makes
/// the parallel reduction deterministic.
fn better(a: (f64, i64), b: (f64, i64)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    let (la, lb) = (a.1.abs(), b.1.abs());
    if la != lb {
        return la < lb;
    }
    a.1 < b.1
}

/// Normalized cross-correlation of candidate shifted by `lag` against the
/// reference, computed over the overlap with means removed. Degenerate
/// overlaps (shorter than 2 samples or zero variance) score -inf so they
/// never win the argmax.
fn ncc_at_lag(reference: &[f64], candidate: &[f64], lag: i64) -> f64 {
    let n = reference.len().min(candidate.len()) as i64;
    // Pair r[i] with c[i + lag].
    let start = 0.max(-lag);
    let end = n.min(n - lag);
    if end - start < 2 {
        return f64::NEG_INFINITY;
    }
    let len = (end - start) as f64;
    let mut sum_r = 0.0;
    let mut sum_c = 0.0;
    for i in start..end {
        sum_r += reference[i as usize];
        sum_c += candidate[(i + lag) as usize];
    }
    let mean_r = sum_r / len;
    let mean_c = sum_c / len;
    let mut num = 0.0;
    let mut den_r = 0.0;
    let mut den_c = 0.0;
    for i in start..end {
        let r = reference[i as usize] - mean_r;
        let c = candidate[(i + lag) as usize] - mean_c;
        num += r * c;
        den_r += r * r;
        den_c += c * c;
    }
    if den_r <= 0.0 || den_c <= 0.0 {
        return f64::NEG_INFINITY;
    }
    num / (den_r * den_c).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_sine(n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| 0.3 * k as f64 + (k as f64 * 0.05).sin())
            .collect()
    }

    #[test]
    fn identical_series_score_zero_rmse_zero_lag() {
        let r = ramp_sine(500);
        let rep = fidelity_metrics(&r, &r, 100).unwrap();
        assert_eq!(rep.rmse, 0.0);
        assert_eq!(rep.lag_samples, 0);
    }

    #[test]
    fn shifted_candidate_reports_the_shift() {
        let r = ramp_sine(500);
        // candidate delayed by 5: c[k] = r[k-5]
        let mut c = vec![r[0]; 5];
        c.extend_from_slice(&r[..495]);
        let rep = fidelity_metrics(&r, &c, 50).unwrap();
        assert_eq!(rep.lag_samples, 5);
    }

    #[test]
    fn negative_lag_for_advanced_candidate() {
        let r = ramp_sine(500);
        // candidate ahead by 7: c[k] = r[k+7]
        let mut c = r[7..].to_vec();
        c.extend(std::iter::repeat_n(*r.last().unwrap(), 7));
        let rep = fidelity_metrics(&r, &c, 50).unwrap();
        assert_eq!(rep.lag_samples, -7);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a = vec![0.0; 10];
        let b = vec![0.0; 11];
        assert!(matches!(
            fidelity_metrics(&a, &b, 5),
            Err(SignalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn constant_series_falls_back_to_zero_lag() {
        let a = vec![1.0; 100];
        let rep = fidelity_metrics(&a, &a, 20).unwrap();
        assert_eq!(rep.lag_samples, 0);
        assert_eq!(rep.total_variation, 0.0);
    }

    #[test]
    fn total_variation_measures_roughness() {
        // Monotone series have TV equal to their net rise regardless of
        // shape; oscillation inflates it.
        let smooth: Vec<f64> = (0..100).map(|k| k as f64 * 0.01).collect();
        assert!((total_variation(&smooth) - 0.99).abs() < 1e-12);
        let spiky: Vec<f64> = (0..100)
            .map(|k| if k % 2 == 0 { 0.0 } else { 1.0 })
            .collect();
        assert!(total_variation(&spiky) > total_variation(&smooth));
    }

    #[test]
    fn peak_to_peak_basics() {
        assert_eq!(peak_to_peak(&[]), 0.0);
        assert_eq!(peak_to_peak(&[2.0]), 0.0);
        assert_eq!(peak_to_peak(&[-1.0, 3.0, 0.5]), 4.0);
    }

    #[test]
    fn parallel_and_sequential_lag_agree() {
        let r = ramp_sine(800);
        let mut c = vec![r[0]; 13];
        c.extend_from_slice(&r[..800 - 13]);
        for max_lag in [5usize, 13, 100, 799] {
            let s = cross_correlation_lag_impl(&r, &c, max_lag, false);
            let p = cross_correlation_lag_impl(&r, &c, max_lag, true);
            assert_eq!(s, p, "max_lag={max_lag}");
        }
    }
}
