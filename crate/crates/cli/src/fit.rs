//! Least-squares rate fits.

use fpme_core::{Error, Result};

/// Ordinary least squares of `log y` on `x`; returns `(slope, r²)`.
///
/// For an algebraic rate pass `x = log h`.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Argument(format!("fit_rate got {} abscissae and {} values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::Argument("fit_rate needs at least three points".into()));
    }
    if let Some(y) = ys.iter().find(|y| !(**y > 0.0 && y.is_finite())) {
        return Err(Error::Argument(format!("fit_rate needs positive values, got {y}")));
    }
    let n = xs.len() as f64;
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ls.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ls.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("fit_rate needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_exponential() {
        let xs: Vec<f64> = (0..6).map(|i| i as f64 * 0.7).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-2.0 * x).exp()).collect();
        let (slope, r2) = fit_rate(&xs, &ys).unwrap();
        assert!((slope + 2.0).abs() < 1e-10);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_on_log_axis() {
        let xs: Vec<f64> = [1e-3, 2e-3, 4e-3, 8e-3].iter().map(|h: &f64| h.ln()).collect();
        let ys: Vec<f64> = [1e-3, 2e-3, 4e-3, 8e-3].iter().map(|h| 3.0 * h).collect();
        let (slope, _) = fit_rate(&xs, &ys).unwrap();
        assert!((slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-1.5 * x + rng.random_range(-0.05..0.05)).exp()).collect();
        let (slope, r2) = fit_rate(&xs, &ys).unwrap();
        assert!((slope + 1.5).abs() < 0.02, "{slope}");
        assert!(r2 > 0.999);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_rate(&[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0]).is_err());
        assert!(fit_rate(&[0.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_rate(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
