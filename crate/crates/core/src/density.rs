//! Log-densities of the scalar distributions used by the model.
//!
//! Gamma is parameterized by shape and rate throughout.

use crate::num::Real;

pub fn normal_ln_pdf<T: Real>(x: T, mean: T, var: T) -> T {
    let z = x - mean;
    -T::lit(0.5) * ((T::TAU() * var).ln() + z * z / var)
}

/// Gamma(shape, rate) log-density; `-inf` outside the support.
pub fn gamma_ln_pdf<T: Real>(x: T, shape: T, rate: T) -> T {
    if !(x > T::zero()) || !x.is_finite() {
        return T::neg_infinity();
    }
    shape * rate.ln() - shape.lgamma() + (shape - T::one()) * x.ln() - rate * x
}

/// Beta(a, b) log-density at `y` in the open unit interval.
pub fn beta_ln_pdf<T: Real>(y: T, a: T, b: T) -> T {
    if !(y > T::zero() && y < T::one()) {
        return T::neg_infinity();
    }
    (a + b).lgamma() - a.lgamma() - b.lgamma() + (a - T::one()) * y.ln() + (b - T::one()) * (-y).ln_1p()
}

/// Normal(mean, var) truncated to `[lo, hi]`; `-inf` outside.
pub fn truncated_normal_ln_pdf<T: Real>(x: T, mean: T, var: T, lo: T, hi: T) -> T {
    if x < lo || x > hi {
        return T::neg_infinity();
    }
    let sd = var.sqrt();
    let upper = ((hi - mean) / sd).std_normal_cdf();
    let lower = ((lo - mean) / sd).std_normal_cdf();
    normal_ln_pdf(x, mean, var) - (upper - lower).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, Continuous, Gamma, Normal};

    #[test]
    fn gamma_matches_reference_at_five_points() {
        for &(a, b) in &[(2.0, 2.0), (2.0, 0.02), (5.0, 1.0), (1.0, 10.0)] {
            let reference = Gamma::new(a, b).unwrap();
            for &x in &[0.05, 0.5, 1.0, 3.7, 120.0] {
                let ours = gamma_ln_pdf(x, a, b);
                assert!((ours - reference.ln_pdf(x)).abs() < 1e-10, "a={a} b={b} x={x}");
            }
        }
        // Gamma(2,2) at 1: 4 e^-2
        assert!((gamma_ln_pdf(1.0f64, 2.0, 2.0) - (4.0f64 * (-2.0f64).exp()).ln()).abs() < 1e-14);
        assert_eq!(gamma_ln_pdf(0.0f64, 2.0, 2.0), f64::NEG_INFINITY);
        assert_eq!(gamma_ln_pdf(-1.0f64, 2.0, 2.0), f64::NEG_INFINITY);
    }

    #[test]
    fn beta_and_normal_match_reference() {
        let b = Beta::new(4500.0 * 0.03, 4500.0 * 0.97).unwrap();
        for &y in &[0.02, 0.03, 0.035] {
            assert!((beta_ln_pdf(y, 135.0, 4365.0) - b.ln_pdf(y)).abs() < 1e-8);
        }
        let n = Normal::new(-1.0, 0.3).unwrap();
        assert!((normal_ln_pdf(0.2, -1.0, 0.09) - n.ln_pdf(0.2)).abs() < 1e-12);
    }

    #[test]
    fn truncated_normal_integrates_to_one() {
        let (lo, hi) = (-3.8918202981106265, 3.8918202981106265);
        let (m, v) = (2.1972245773362196, 0.49);
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let integral: f64 = (0..n)
            .map(|k| truncated_normal_ln_pdf(lo + (k as f64 + 0.5) * h, m, v, lo, hi).exp() * h)
            .sum();
        assert!((integral - 1.0).abs() < 1e-6);
        assert_eq!(truncated_normal_ln_pdf(4.0, m, v, lo, hi), f64::NEG_INFINITY);
    }
}
