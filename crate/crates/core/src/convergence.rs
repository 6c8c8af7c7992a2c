//! Least-squares slope of log(err) against log(h) for convergence checks.

/// Fit err ≈ C·h^p and return p. Pairs with nonpositive entries are skipped;
/// returns NaN when fewer than two usable pairs remain.
pub fn loglog_slope(hs: &[f64], errs: &[f64]) -> f64 {
    assert_eq!(hs.len(), errs.len());
    let pts: Vec<(f64, f64)> = hs
        .iter()
        .zip(errs)
        .filter(|(&h, &e)| h > 0.0 && e > 0.0)
        .map(|(&h, &e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_power_law() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs.iter().map(|h| 3.7 * h * h).collect();
        assert!((loglog_slope(&hs, &errs) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn skips_zero_errors() {
        let hs = [0.1, 0.05, 0.025];
        let errs = [1e-3, 0.0, 6.25e-5];
        let p = loglog_slope(&hs, &errs);
        assert!((p - 2.0).abs() < 1e-12);
    }
}
