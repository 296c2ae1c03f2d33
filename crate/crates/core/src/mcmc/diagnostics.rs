//! Convergence and Monte Carlo error summaries.

use crate::error::{Error, Result};

/// Potential scale reduction factor of one scalar across chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RHat {
    pub value: f64,
    /// Every chain had zero within-chain variance; `value` is reported as 1.
    pub degenerate: bool,
}

/// Between/within-variance R-hat. Chains must share a length of at least 10.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<RHat> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::DiagnosticInput(format!("need at least 2 chains, got {m}")));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::DiagnosticInput("chains must have equal length >= 10".into()));
    }
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / nf).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf / (m as f64 - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m as f64;
    if w <= 0.0 {
        return Ok(RHat { value: 1.0, degenerate: true });
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    Ok(RHat { value: (var_plus / w).sqrt(), degenerate: false })
}

/// Batch-means standard error of the mean of a correlated series.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let len = xs.len() / n_batches;
    if len == 0 || n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = xs.chunks_exact(len).take(n_batches).map(|b| b.iter().sum::<f64>() / len as f64).collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches as f64 - 1.0);
    (var / n_batches as f64).sqrt()
}

/// Effective sample size from initial positive autocorrelation pairs.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |k: usize| (0..n - k).map(|i| (xs[i] - mean) * (xs[i + k] - mean)).sum::<f64>() / n as f64 / c0;
    let mut tau = -1.0;
    let mut k = 0;
    while k + 1 < n {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 2;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn draws(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn identical_chains_are_flagged() {
        let c = vec![0.5; 20];
        let r = gelman_rubin(&[c.clone(), c]).unwrap();
        assert_eq!(r, RHat { value: 1.0, degenerate: true });
    }

    #[test]
    fn same_target_is_near_one() {
        let r = gelman_rubin(&[draws(0.0, 1000, 1), draws(0.0, 1000, 2)]).unwrap();
        assert!(r.value < 1.05, "{r:?}");
    }

    #[test]
    fn separated_targets_blow_up() {
        let r = gelman_rubin(&[draws(0.0, 1000, 1), draws(5.0, 1000, 2)]).unwrap();
        assert!(r.value > 1.1 * 2.0, "{r:?}");
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(gelman_rubin(&[vec![0.0; 20]]).is_err());
        assert!(gelman_rubin(&[vec![0.0; 5], vec![0.0; 5]]).is_err());
        assert!(gelman_rubin(&[vec![0.0; 20], vec![0.0; 21]]).is_err());
    }

    #[test]
    fn iid_standard_errors() {
        let x = draws(0.0, 40_000, 3);
        let se = batch_means_se(&x, 40);
        assert!((se / (1.0 / 200.0) - 1.0).abs() < 0.35, "{se}");
        let ess = effective_sample_size(&x[..4000]);
        assert!(ess > 3000.0 && ess < 5000.0, "{ess}");
    }
}
