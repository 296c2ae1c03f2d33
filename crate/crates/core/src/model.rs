//! Joint probability model: Beta observations around a latent ILI proportion
//! whose logit is the SIR infectious curve plus a common and a season-specific
//! discrepancy, each a reverse-time random walk.
//!
//! ```text
//! y[j][t]            ~ Beta(lambda pi, lambda (1 - pi))
//! logit pi[j][t]     = logit I[j][t] + mu[t] + delta[j][t]
//! mu[T]              ~ N(0, s2_muT)          mu[t] | mu[t+1]       ~ N(mu[t+1], s2_mu)
//! delta[j][T]        = -logit I[j][T]        delta[j][t] | delta[j][t+1] ~ N(alpha_j delta[j][t+1], s2_delta_j)
//! ```
//!
//! The terminal constraint makes `pi[j][T] = inv_logit(mu[T])` for every season.

use serde::{Deserialize, Serialize};

use crate::data::SeasonPanel;
use crate::density::{beta_ln_pdf, gamma_ln_pdf, normal_ln_pdf, truncated_normal_ln_pdf};
use crate::error::{Error, Result};
use crate::num::{inv_logit, logit, Real};
use crate::priors::{sir_params, TruncatedMvnPrior};
use crate::sir::solve_sir;

/// Gamma(shape, rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub const fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        gamma_ln_pdf(x, self.shape, self.rate)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Fixed constants of the hyperprior layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperConstants {
    /// Prior on the precision of `mu[T]`.
    pub mu_terminal_precision: GammaPrior,
    /// Prior on the precision of the `mu` random-walk steps.
    pub mu_step_precision: GammaPrior,
    pub a_delta: GammaPrior,
    pub b_delta: GammaPrior,
    /// Prior on `sigma_alpha` itself (a standard deviation, not a precision).
    pub sigma_alpha: GammaPrior,
    /// `alpha` prior center before the logit transform.
    pub alpha_center: f64,
    pub alpha_lower: f64,
    pub alpha_upper: f64,
}

impl Default for HyperConstants {
    fn default() -> Self {
        Self {
            mu_terminal_precision: GammaPrior::new(2.0, 2.0),
            mu_step_precision: GammaPrior::new(2.0, 0.02),
            a_delta: GammaPrior::new(5.0, 1.0),
            b_delta: GammaPrior::new(1.0, 10.0),
            sigma_alpha: GammaPrior::new(2.0, 2.0),
            alpha_center: 0.9,
            alpha_lower: 0.02,
            alpha_upper: 0.98,
        }
    }
}

/// Observation model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataModelConfig {
    /// Beta concentration.
    pub lambda: f64,
    /// Season length in weeks.
    pub weeks: usize,
    pub hyper: HyperConstants,
}

impl Default for DataModelConfig {
    fn default() -> Self {
        Self { lambda: 4500.0, weeks: 35, hyper: HyperConstants::default() }
    }
}

impl DataModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.weeks < 2 {
            return Err(Error::Config("season length must be >= 2".into()));
        }
        let h = &self.hyper;
        if !(0.0 < h.alpha_lower && h.alpha_lower < h.alpha_center && h.alpha_center < h.alpha_upper && h.alpha_upper < 1.0) {
            return Err(Error::Config("alpha bounds must satisfy 0 < lower < center < upper < 1".into()));
        }
        for g in [h.mu_terminal_precision, h.mu_step_precision, h.a_delta, h.b_delta, h.sigma_alpha] {
            if !(g.shape > 0.0 && g.rate > 0.0) {
                return Err(Error::Config(format!("gamma prior {g:?} must have positive shape and rate")));
            }
        }
        Ok(())
    }

    pub(crate) fn logit_alpha_bounds(&self) -> (f64, f64) {
        (logit(self.hyper.alpha_lower), logit(self.hyper.alpha_upper))
    }
}

/// Latent quantities of one season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonState {
    pub(crate) sir: [f64; 3],
    pub(crate) logit_i: Vec<f64>,
    pub(crate) delta: Vec<f64>,
    pub(crate) alpha: f64,
    pub(crate) sigma2_delta: f64,
}

impl SeasonState {
    /// `sir` is `(i0, beta, rho)`; `delta` covers weeks `1..T-1` (week `T` is implied).
    pub fn new(sir: [f64; 3], delta: Vec<f64>, alpha: f64, sigma2_delta: f64) -> Result<Self> {
        let weeks = delta.len() + 1;
        let logit_i = logit_infectious(&sir, weeks)?;
        if !(sigma2_delta > 0.0) || !(alpha > 0.0 && alpha < 1.0) || delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::Domain("season state outside support".into()));
        }
        Ok(Self { sir, logit_i, delta, alpha, sigma2_delta })
    }

    pub fn sir(&self) -> [f64; 3] {
        self.sir
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn sigma2_delta(&self) -> f64 {
        self.sigma2_delta
    }
    pub fn weeks(&self) -> usize {
        self.logit_i.len()
    }

    /// Infectious proportion of the SIR component at 1-based `week`.
    pub fn infectious(&self, week: usize) -> f64 {
        inv_logit(self.logit_i[week - 1])
    }

    pub fn logit_infectious(&self, week: usize) -> f64 {
        self.logit_i[week - 1]
    }

    /// Season discrepancy at 1-based `week`; week `T` is `-logit I[T]`.
    pub fn delta(&self, week: usize) -> f64 {
        if week == self.weeks() {
            -self.logit_i[week - 1]
        } else {
            self.delta[week - 1]
        }
    }

    /// Full-length discrepancy path including the constrained terminal week.
    pub fn delta_path(&self) -> Vec<f64> {
        (1..=self.weeks()).map(|t| self.delta(t)).collect()
    }
}

/// `logit I[t]` for t = 1..weeks; fails when the SIR path is invalid or touches 0.
pub(crate) fn logit_infectious(sir: &[f64; 3], weeks: usize) -> Result<Vec<f64>> {
    let tr = solve_sir(&sir_params(sir)?, weeks)?;
    let out: Vec<f64> = tr.i.iter().map(|&i| logit(i)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("SIR infectious path reached 0".into()));
    }
    Ok(out)
}

/// One complete assignment of every latent variable and hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub(crate) seasons: Vec<SeasonState>,
    pub(crate) mu: Vec<f64>,
    pub(crate) sigma2_mu_t: f64,
    pub(crate) sigma2_mu: f64,
    pub(crate) sigma_alpha: f64,
    pub(crate) a_delta: f64,
    pub(crate) b_delta: f64,
}

impl ModelState {
    pub fn new(
        seasons: Vec<SeasonState>,
        mu: Vec<f64>,
        sigma2_mu_t: f64,
        sigma2_mu: f64,
        sigma_alpha: f64,
        a_delta: f64,
        b_delta: f64,
    ) -> Result<Self> {
        if seasons.iter().any(|s| s.weeks() != mu.len()) {
            return Err(Error::Domain("season and mu lengths disagree".into()));
        }
        if [sigma2_mu_t, sigma2_mu, sigma_alpha, a_delta, b_delta].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("variance and hyperparameters must be positive".into()));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain("mu must be finite".into()));
        }
        Ok(Self { seasons, mu, sigma2_mu_t, sigma2_mu, sigma_alpha, a_delta, b_delta })
    }

    pub fn weeks(&self) -> usize {
        self.mu.len()
    }
    pub fn n_seasons(&self) -> usize {
        self.seasons.len()
    }
    pub fn season(&self, j: usize) -> &SeasonState {
        &self.seasons[j]
    }
    pub fn seasons(&self) -> &[SeasonState] {
        &self.seasons
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn sigma2_mu_t(&self) -> f64 {
        self.sigma2_mu_t
    }
    pub fn sigma2_mu(&self) -> f64 {
        self.sigma2_mu
    }
    pub fn sigma_alpha(&self) -> f64 {
        self.sigma_alpha
    }
    pub fn a_delta(&self) -> f64 {
        self.a_delta
    }
    pub fn b_delta(&self) -> f64 {
        self.b_delta
    }

    pub fn logit_pi(&self, j: usize, week: usize) -> f64 {
        let s = &self.seasons[j];
        if week == self.weeks() {
            self.mu[week - 1]
        } else {
            s.logit_i[week - 1] + self.mu[week - 1] + s.delta[week - 1]
        }
    }

    /// Latent ILI proportion of season `j` at 1-based `week`.
    pub fn pi(&self, j: usize, week: usize) -> f64 {
        inv_logit(self.logit_pi(j, week))
    }

    /// Named scalar summaries: every latent quantity as `(name, value)`.
    pub fn scalars(&self, season_ids: &[i32]) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(8 + self.weeks() * (1 + self.n_seasons()) + 6 * self.n_seasons());
        for (t, m) in self.mu.iter().enumerate() {
            out.push((format!("mu[{}]", t + 1), *m));
        }
        out.push(("sigma2_muT".into(), self.sigma2_mu_t));
        out.push(("sigma2_mu".into(), self.sigma2_mu));
        out.push(("sigma_alpha".into(), self.sigma_alpha));
        out.push(("a_delta".into(), self.a_delta));
        out.push(("b_delta".into(), self.b_delta));
        for (j, s) in self.seasons.iter().enumerate() {
            let id = season_ids.get(j).copied().unwrap_or(j as i32);
            out.push((format!("i0[{id}]"), s.sir[0]));
            out.push((format!("beta[{id}]"), s.sir[1]));
            out.push((format!("rho[{id}]"), s.sir[2]));
            out.push((format!("alpha[{id}]"), s.alpha));
            out.push((format!("sigma2_delta[{id}]"), s.sigma2_delta));
            for (t, d) in s.delta.iter().enumerate() {
                out.push((format!("delta[{id}][{}]", t + 1), *d));
            }
        }
        out
    }
}

/// Beta(lambda pi, lambda (1 - pi)) log-density of one observation.
pub fn log_lik_obs<T: Real>(y: T, pi: T, lambda: T) -> Result<T> {
    let open = |v: T| v > T::zero() && v < T::one();
    if !open(y) {
        return Err(Error::Domain(format!("observation {y} outside (0, 1)")));
    }
    if !open(pi) || !(lambda > T::zero()) {
        return Err(Error::Domain(format!("pi = {pi}, lambda = {lambda} outside support")));
    }
    Ok(beta_ln_pdf(y, lambda * pi, lambda * (T::one() - pi)))
}

/// Standard deviation of an observation given `pi`.
pub fn obs_sd<T: Real>(pi: T, lambda: T) -> T {
    (pi * (T::one() - pi) / (T::one() + lambda)).sqrt()
}

/// Reverse random walk density of the common discrepancy.
pub fn log_prior_mu<T: Real>(mu: &[T], sigma2_mu_t: T, sigma2_mu: T) -> Result<T> {
    if mu.len() < 2 {
        return Err(Error::Domain("mu needs at least 2 weeks".into()));
    }
    if !(sigma2_mu_t > T::zero() && sigma2_mu > T::zero()) {
        return Err(Error::Domain("mu variances must be positive".into()));
    }
    let last = mu.len() - 1;
    let mut lp = normal_ln_pdf(mu[last], T::zero(), sigma2_mu_t);
    for t in 0..last {
        lp += normal_ln_pdf(mu[t], mu[t + 1], sigma2_mu);
    }
    Ok(lp)
}

/// Autoregressive reverse random walk density of one season's discrepancy.
///
/// `delta` is the full path; its last entry must equal `-logit(i_terminal)` and
/// carries no density.
pub fn log_prior_delta<T: Real>(delta: &[T], alpha: T, sigma2_delta: T, i_terminal: T) -> Result<T> {
    let last = delta.len() - 1;
    let expected = -logit(i_terminal);
    assert!(
        (delta[last] - expected).abs() <= T::lit(1e-9) * (T::one() + expected.abs()),
        "terminal discrepancy must equal -logit(I_T)"
    );
    if !(sigma2_delta > T::zero()) {
        return Err(Error::Domain("delta variance must be positive".into()));
    }
    Ok((0..last).map(|t| normal_ln_pdf(delta[t], alpha * delta[t + 1], sigma2_delta)).sum())
}

/// Hyperprior layer; `-inf` when any value is outside its support.
pub fn log_hyperpriors(state: &ModelState, config: &DataModelConfig) -> f64 {
    let h = &config.hyper;
    let (lo, hi) = config.logit_alpha_bounds();
    let mut lp = h.mu_terminal_precision.ln_pdf(1.0 / state.sigma2_mu_t)
        + h.mu_step_precision.ln_pdf(1.0 / state.sigma2_mu)
        + h.a_delta.ln_pdf(state.a_delta)
        + h.b_delta.ln_pdf(state.b_delta)
        + h.sigma_alpha.ln_pdf(state.sigma_alpha);
    let center = logit(h.alpha_center);
    let var_alpha = state.sigma_alpha * state.sigma_alpha;
    for s in &state.seasons {
        lp += gamma_ln_pdf(1.0 / s.sigma2_delta, state.a_delta, state.b_delta);
        if !(s.alpha > 0.0 && s.alpha < 1.0) {
            return f64::NEG_INFINITY;
        }
        lp += truncated_normal_ln_pdf(logit(s.alpha), center, var_alpha, lo, hi);
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Sum of observed-data log-likelihood terms; missing weeks contribute nothing.
pub fn log_likelihood(state: &ModelState, panel: &SeasonPanel, config: &DataModelConfig) -> f64 {
    let mut ll = 0.0;
    for j in 0..state.n_seasons() {
        for (t, y) in panel.season_values(j).iter().enumerate() {
            if let Some(y) = y {
                match log_lik_obs(*y, state.pi(j, t + 1), config.lambda) {
                    Ok(v) => ll += v,
                    Err(_) => return f64::NEG_INFINITY,
                }
            }
        }
    }
    ll
}

/// SIR prior summed over seasons (up to the truncation normalizer).
pub fn log_sir_prior(state: &ModelState, prior: &TruncatedMvnPrior) -> f64 {
    state.seasons.iter().map(|s| prior.ln_density(&s.sir)).sum()
}

/// Unnormalized log posterior of a state given a panel.
pub fn log_joint(state: &ModelState, panel: &SeasonPanel, config: &DataModelConfig, prior: &TruncatedMvnPrior) -> f64 {
    if panel.n_seasons() != state.n_seasons() || panel.weeks() != state.weeks() {
        return f64::NEG_INFINITY;
    }
    let mut lp = log_likelihood(state, panel, config) + log_sir_prior(state, prior) + log_hyperpriors(state, config);
    match log_prior_mu(&state.mu, state.sigma2_mu_t, state.sigma2_mu) {
        Ok(v) => lp += v,
        Err(_) => return f64::NEG_INFINITY,
    }
    for s in &state.seasons {
        let i_t = s.infectious(s.weeks());
        match log_prior_delta(&s.delta_path(), s.alpha, s.sigma2_delta, i_t) {
            Ok(v) => lp += v,
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_sd_formula() {
        assert!((obs_sd(0.5, 3.0) - 0.25f64).abs() < 1e-15);
        assert!((obs_sd(0.03, 4500.0) - 0.0025f64).abs() < 5e-5);
        assert!((obs_sd(0.06, 4500.0) - 0.0035f64).abs() < 5e-5);
    }

    #[test]
    fn likelihood_domain() {
        assert!(log_lik_obs(0.0, 0.03, 4500.0).is_err());
        assert!(log_lik_obs(1.0, 0.03, 4500.0).is_err());
        assert!(log_lik_obs(0.03f64, 0.03, 4500.0).unwrap().is_finite());
        assert!(log_lik_obs(0.03f32, 0.03, 4500.0).unwrap().is_finite());
    }

    #[test]
    fn likelihood_sharpens_with_lambda() {
        let mut prev = f64::NEG_INFINITY;
        for lambda in [10.0, 100.0, 1000.0, 4500.0, 20000.0] {
            let v = log_lik_obs(0.04, 0.04, lambda).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn constant_mu_scores_zero_increments() {
        let mu = vec![-4.0f64; 35];
        let lp = log_prior_mu(&mu, 1.0, 0.01).unwrap();
        let expected = normal_ln_pdf(-4.0f64, 0.0, 1.0) + 34.0 * normal_ln_pdf(0.0f64, 0.0, 0.01);
        assert!((lp - expected).abs() < 1e-10);
        assert!(log_prior_mu(&mu, 0.0, 0.01).is_err());
        assert!(log_prior_mu(&mu[..1], 1.0, 0.01).is_err());
    }

    #[test]
    fn mu_density_ratio_is_local() {
        let mut a = vec![-4.0; 10];
        for (t, v) in a.iter_mut().enumerate() {
            *v += 0.05 * t as f64;
        }
        let mut b = a.clone();
        b[0] += 0.3;
        let diff = log_prior_mu(&b, 1.0, 0.01).unwrap() - log_prior_mu(&a, 1.0, 0.01).unwrap();
        let single = normal_ln_pdf(b[0], a[1], 0.01) - normal_ln_pdf(a[0], a[1], 0.01);
        assert!((diff - single).abs() < 1e-10);
    }

    #[test]
    fn zero_alpha_scores_independent_normals() {
        let i_t = 0.002f64;
        let mut delta = vec![0.1, -0.2, 0.05, 0.3];
        delta.push(-logit(i_t));
        let lp = log_prior_delta(&delta, 0.0, 0.04, i_t).unwrap();
        let expected: f64 = delta[..4].iter().map(|&d| normal_ln_pdf(d, 0.0, 0.04)).sum();
        assert!((lp - expected).abs() < 1e-12);
        assert!((delta[4] - 6.212606095751519).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn terminal_constraint_violation_panics() {
        let _ = log_prior_delta(&[0.0, 0.0, 1.0], 0.5, 0.1, 0.002);
    }

    #[test]
    fn hyperpriors_reject_out_of_support_alpha() {
        let season = SeasonState::new([0.005, 1.2, 0.8], vec![0.0; 34], 0.9, 0.01).unwrap();
        let mut state = ModelState::new(vec![season], vec![-4.0; 35], 1.0, 0.01, 0.5, 5.0, 0.1).unwrap();
        let cfg = DataModelConfig::default();
        assert!(log_hyperpriors(&state, &cfg).is_finite());
        state.seasons[0].alpha = 0.99;
        assert_eq!(log_hyperpriors(&state, &cfg), f64::NEG_INFINITY);
        state.seasons[0].alpha = 0.01;
        assert_eq!(log_hyperpriors(&state, &cfg), f64::NEG_INFINITY);
    }

    #[test]
    fn step_precision_prior_mean_implies_small_steps() {
        let h = HyperConstants::default();
        assert!((h.mu_step_precision.mean() - 100.0).abs() < 1e-12);
        assert!((h.mu_terminal_precision.mean() - 1.0).abs() < 1e-12);
        assert!((1.0 / h.mu_step_precision.mean()).sqrt() < (1.0 / h.mu_terminal_precision.mean()).sqrt());
    }

    #[test]
    fn terminal_pi_shared_across_seasons() {
        let a = SeasonState::new([0.005, 1.2, 0.8], vec![0.1; 34], 0.9, 0.01).unwrap();
        let b = SeasonState::new([0.01, 2.0, 0.85], vec![-0.3; 34], 0.5, 0.2).unwrap();
        let state = ModelState::new(vec![a, b], vec![-4.56; 35], 1.0, 0.01, 0.5, 5.0, 0.1).unwrap();
        assert_eq!(state.pi(0, 35), state.pi(1, 35));
        assert_eq!(state.pi(0, 35), inv_logit(-4.56));
        let s = state.season(1);
        let reconstructed = s.logit_infectious(35) + state.mu()[34] + s.delta(35);
        assert!((reconstructed - state.logit_pi(1, 35)).abs() < 1e-12);
        assert!((s.logit_infectious(10) + state.mu()[9] + s.delta(10) - state.logit_pi(1, 10)).abs() < 1e-14);
    }

    #[test]
    fn config_validation() {
        assert!(DataModelConfig::default().validate().is_ok());
        let bad = DataModelConfig { lambda: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
