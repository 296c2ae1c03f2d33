//! Synthetic panels drawn from the model with fixed hyperparameters.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};

use crate::data::SeasonPanel;
use crate::error::{Error, Result};
use crate::model::{logit_infectious, DataModelConfig, ModelState, SeasonState};
use crate::num::{inv_logit, logit};
use crate::priors::TruncatedMvnPrior;

/// Fixed values for the top of the hierarchy. Per-season `alpha` and
/// `sigma2_delta` are drawn from their priors given these.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seasons: Vec<i32>,
    pub weeks: usize,
    pub lambda: f64,
    pub mu_terminal: f64,
    pub sigma_mu: f64,
    pub sigma_alpha: f64,
    pub a_delta: f64,
    pub b_delta: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seasons: (2010..2015).collect(),
            weeks: 35,
            lambda: 4500.0,
            mu_terminal: -4.56,
            sigma_mu: 0.1,
            sigma_alpha: 0.5,
            a_delta: 5.0,
            b_delta: 0.1,
        }
    }
}

/// Draws SIR triples from `prior`, discrepancies from their reverse walks and
/// observations from the Beta model. Returns the complete panel and the
/// generating state.
pub fn simulate_panel<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    prior: &TruncatedMvnPrior,
    rng: &mut R,
) -> Result<(SeasonPanel, ModelState)> {
    let weeks = spec.weeks;
    let bad = |e: rand_distr::NormalError| Error::Domain(format!("synthetic spec: {e}"));
    let mu_step = Normal::new(0.0, spec.sigma_mu).map_err(bad)?;
    let hyper = DataModelConfig::default().hyper;
    let logit_alpha = Normal::new(logit(hyper.alpha_center), spec.sigma_alpha).map_err(bad)?;
    let (lo, hi) = (logit(hyper.alpha_lower), logit(hyper.alpha_upper));
    let precision = Gamma::new(spec.a_delta, 1.0 / spec.b_delta)
        .map_err(|e| Error::Domain(format!("synthetic spec: {e}")))?;
    let mut mu = vec![spec.mu_terminal; weeks];
    for t in (0..weeks - 1).rev() {
        mu[t] = mu[t + 1] + mu_step.sample(rng);
    }
    let mut seasons = Vec::with_capacity(spec.seasons.len());
    for _ in &spec.seasons {
        let sir = prior.sample(rng)?;
        let logit_i = logit_infectious(&sir, weeks)?;
        let alpha = loop {
            let x = logit_alpha.sample(rng);
            if x > lo && x < hi {
                break inv_logit(x);
            }
        };
        let sigma2_delta = 1.0 / precision.sample(rng);
        let step = Normal::new(0.0, sigma2_delta.sqrt()).map_err(bad)?;
        let mut delta = vec![-logit_i[weeks - 1]; weeks];
        for t in (0..weeks - 1).rev() {
            delta[t] = alpha * delta[t + 1] + step.sample(rng);
        }
        delta.pop();
        seasons.push(SeasonState::new(sir, delta, alpha, sigma2_delta)?);
    }
    let state = ModelState::new(seasons, mu, 1.0, spec.sigma_mu.powi(2), spec.sigma_alpha, spec.a_delta, spec.b_delta)?;
    let mut rows = Vec::with_capacity(spec.seasons.len());
    for (j, &season) in spec.seasons.iter().enumerate() {
        let vals = (1..=weeks)
            .map(|t| {
                let pi = state.pi(j, t);
                Beta::new(spec.lambda * pi, spec.lambda * (1.0 - pi))
                    .map(|b| Some(b.sample(rng)))
                    .map_err(|e| Error::Domain(format!("synthetic Beta at pi = {pi}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((season, vals));
    }
    Ok((SeasonPanel::from_rows(weeks, rows)?, state))
}
