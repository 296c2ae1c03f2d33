//! Posterior sampling by Metropolis-within-Gibbs.
//!
//! Each iteration updates, in order: the per-season SIR triples, the common
//! discrepancy `mu`, the season discrepancies, the `alpha_j`, `sigma_alpha`,
//! the precisions (conjugate Gibbs), `a_delta` and `b_delta`. Step sizes adapt
//! during burn-in only.

mod diagnostics;
mod kernel;

use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SeasonPanel;
use crate::error::{Error, Result};
use crate::model::{log_joint, logit_infectious, DataModelConfig, ModelState, SeasonState};
use crate::num::logit;
use crate::priors::TruncatedMvnPrior;

pub use diagnostics::{batch_means_se, effective_sample_size, gelman_rubin, RHat};
use kernel::{Proposals, Sweep, Target};

/// Prior draws tried before initialization gives up.
pub const INIT_ATTEMPTS: usize = 100;
/// R-hat at or above this value triggers a convergence warning.
pub const RHAT_WARN: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Diagnostic,
    Production,
    Ci,
}

impl FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diagnostic" => Ok(Self::Diagnostic),
            "production" => Ok(Self::Production),
            "ci" => Ok(Self::Ci),
            other => Err(Error::Config(format!("unknown sampler mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    pub seed: u64,
    /// Iterations between step-size updates during burn-in.
    pub adapt_window: usize,
}

impl SamplerConfig {
    /// 4 chains x 100,000 iterations, half burn-in, thin 20.
    pub fn diagnostic(seed: u64) -> Self {
        Self { n_chains: 4, n_iter: 100_000, burn_in_fraction: 0.5, thin: 20, seed, adapt_window: 100 }
    }

    /// 1 chain x 50,000 iterations, half burn-in, thin 10.
    pub fn production(seed: u64) -> Self {
        Self { n_chains: 1, n_iter: 50_000, burn_in_fraction: 0.5, thin: 10, seed, adapt_window: 100 }
    }

    /// 1 chain x 10,000 iterations, half burn-in, thin 10.
    pub fn ci(seed: u64) -> Self {
        Self { n_chains: 1, n_iter: 10_000, burn_in_fraction: 0.5, thin: 10, seed, adapt_window: 50 }
    }

    pub fn for_mode(mode: SamplerMode, seed: u64) -> Self {
        match mode {
            SamplerMode::Diagnostic => Self::diagnostic(seed),
            SamplerMode::Production => Self::production(seed),
            SamplerMode::Ci => Self::ci(seed),
        }
    }

    pub fn burn_in(&self) -> usize {
        (self.n_iter as f64 * self.burn_in_fraction).round() as usize
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in()) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_iter == 0 || self.thin == 0 || self.adapt_window == 0 {
            return Err(Error::Config("chains, iterations, thin and adapt window must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Config(format!("burn-in fraction {} not in [0, 1)", self.burn_in_fraction)));
        }
        if self.draws_per_chain() == 0 {
            return Err(Error::Config("configuration keeps no draws".into()));
        }
        Ok(())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::production(1)
    }
}

/// Independent RNG stream for one chain.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Stored output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub id: usize,
    /// Post burn-in, thinned states.
    pub draws: Vec<ModelState>,
    /// 1-based iteration number of each stored draw.
    pub iterations: Vec<usize>,
    pub log_joint: Vec<f64>,
    /// Post burn-in acceptance rate per block kind.
    pub acceptance: Vec<(String, f64)>,
}

/// Draws from every chain plus convergence summaries.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub seasons: Vec<i32>,
    pub config: SamplerConfig,
    pub chains: Vec<Chain>,
    /// R-hat per named scalar; empty for a single chain.
    pub rhat: Vec<(String, RHat)>,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.draws.len()).sum()
    }

    /// All stored states, chain by chain.
    pub fn iter(&self) -> impl Iterator<Item = &ModelState> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// Per-chain series of one named scalar (see [`ModelState::scalars`]).
    pub fn series(&self, name: &str) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| {
                c.draws
                    .iter()
                    .map(|d| d.scalars(&self.seasons).into_iter().find(|(n, _)| n == name).map_or(f64::NAN, |(_, v)| v))
                    .collect()
            })
            .collect()
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.iter().map(|(_, r)| r.value).reduce(f64::max)
    }

    /// Long table: chain, iteration, name, value.
    pub fn write_draws_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["chain", "iteration", "name", "value"])?;
        for c in &self.chains {
            for (d, it) in c.draws.iter().zip(&c.iterations) {
                for (name, v) in d.scalars(&self.seasons) {
                    w.write_record([c.id.to_string(), it.to_string(), name, format!("{v}")])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<draws writer>", e))?;
        Ok(())
    }

    /// `key = value` lines: configuration, acceptance rates, R-hat, warnings.
    pub fn write_report<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<report writer>", e);
        let c = &self.config;
        let mut lines = vec![
            format!("seed = {}", c.seed),
            format!("n_chains = {}", c.n_chains),
            format!("n_iter = {}", c.n_iter),
            format!("burn_in = {}", c.burn_in()),
            format!("thin = {}", c.thin),
            format!("draws_per_chain = {}", c.draws_per_chain()),
        ];
        for ch in &self.chains {
            for (k, v) in &ch.acceptance {
                lines.push(format!("acceptance.chain{}.{k} = {v:.4}", ch.id));
            }
        }
        if let Some(m) = self.max_rhat() {
            lines.push(format!("rhat.max = {m:.5}"));
            lines.push(format!("converged = {}", m < RHAT_WARN));
        }
        for (k, r) in &self.rhat {
            let flag = if r.degenerate { " degenerate" } else { "" };
            lines.push(format!("rhat.{k} = {:.5}{flag}", r.value));
        }
        for warning in &self.warnings {
            lines.push(format!("warning = {warning}"));
        }
        for l in lines {
            writeln!(w, "{l}").map_err(io)?;
        }
        Ok(())
    }
}

/// Starting state: SIR from the prior, discrepancies matched to the data.
fn initial_state(
    panel: &SeasonPanel,
    prior: &TruncatedMvnPrior,
    config: &DataModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelState> {
    let weeks = panel.weeks();
    let h = &config.hyper;
    let alpha = h.alpha_center;
    let (a_delta, b_delta) = (h.a_delta.mean(), h.b_delta.mean());
    let sigma2_delta = b_delta / a_delta;
    let ybar: Vec<Option<f64>> = (0..weeks)
        .map(|t| {
            let obs: Vec<f64> = (0..panel.n_seasons()).filter_map(|j| panel.get(j, t + 1)).collect();
            (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
        })
        .collect();
    for _ in 0..INIT_ATTEMPTS {
        let Ok(sirs) = (0..panel.n_seasons()).map(|_| prior.sample(rng)).collect::<Result<Vec<_>>>() else {
            continue;
        };
        let Ok(paths) = sirs.iter().map(|s| logit_infectious(s, weeks)).collect::<Result<Vec<_>>>() else {
            continue;
        };
        let mut mu = vec![f64::NAN; weeks];
        for t in 0..weeks {
            if let Some(y) = ybar[t] {
                let base = if t == weeks - 1 { 0.0 } else { paths.iter().map(|p| p[t]).sum::<f64>() / paths.len() as f64 };
                mu[t] = logit(y) - base;
            }
        }
        fill_gaps(&mut mu);
        let mut seasons = Vec::with_capacity(sirs.len());
        for (j, (sir, path)) in sirs.iter().zip(&paths).enumerate() {
            let mut delta = vec![0.0; weeks];
            delta[weeks - 1] = -path[weeks - 1];
            for t in (0..weeks - 1).rev() {
                delta[t] = match panel.get(j, t + 1) {
                    Some(y) => logit(y) - path[t] - mu[t],
                    None => alpha * delta[t + 1],
                };
            }
            delta.pop();
            seasons.push(SeasonState::new(*sir, delta, alpha, sigma2_delta)?);
        }
        let state = ModelState::new(
            seasons,
            mu,
            1.0 / h.mu_terminal_precision.mean(),
            1.0 / h.mu_step_precision.mean(),
            h.sigma_alpha.mean(),
            a_delta,
            b_delta,
        )?;
        if log_joint(&state, panel, config, prior).is_finite() {
            return Ok(state);
        }
    }
    Err(Error::InitializationFailed(INIT_ATTEMPTS))
}

/// Fills missing entries from the nearest later value, else the nearest earlier, else 0.
fn fill_gaps(xs: &mut [f64]) {
    let mut next = None;
    for x in xs.iter_mut().rev() {
        if x.is_nan() {
            if let Some(v) = next {
                *x = v;
            }
        } else {
            next = Some(*x);
        }
    }
    let mut prev = None;
    for x in xs.iter_mut() {
        if x.is_nan() {
            *x = prev.unwrap_or(0.0);
        } else {
            prev = Some(*x);
        }
    }
}

fn check_inputs(panel: &SeasonPanel, model: &DataModelConfig, config: &SamplerConfig) -> Result<()> {
    config.validate()?;
    model.validate()?;
    if panel.is_empty() {
        return Err(Error::Domain("panel has no seasons".into()));
    }
    if panel.weeks() != model.weeks {
        return Err(Error::Config(format!("panel has {} weeks, model expects {}", panel.weeks(), model.weeks)));
    }
    Ok(())
}

/// Runs one chain; bit-identical for a given `(config.seed, chain_id)`.
pub fn run_chain(
    panel: &SeasonPanel,
    prior: &TruncatedMvnPrior,
    model: &DataModelConfig,
    config: &SamplerConfig,
    chain_id: usize,
) -> Result<Chain> {
    check_inputs(panel, model, config)?;
    let mut rng = chain_rng(config.seed, chain_id);
    let mut state = initial_state(panel, prior, model, &mut rng)?;
    let target = Target::new(panel, prior, model);
    let mut sweep = Sweep { target: &target, proposals: Proposals::new(panel.n_seasons(), panel.weeks(), prior), adapting: true };
    let burn = config.burn_in();
    let keep = config.draws_per_chain();
    let mut chain = Chain {
        id: chain_id,
        draws: Vec::with_capacity(keep),
        iterations: Vec::with_capacity(keep),
        log_joint: Vec::with_capacity(keep),
        acceptance: Vec::new(),
    };
    for iter in 1..=config.n_iter {
        sweep.adapting = iter <= burn;
        sweep.run(&mut state, &mut rng);
        if sweep.adapting && iter % config.adapt_window == 0 {
            sweep.proposals.adapt();
        }
        if iter > burn && (iter - burn) % config.thin == 0 && chain.draws.len() < keep {
            let lj = log_joint(&state, panel, model, prior);
            if !lj.is_finite() {
                return Err(Error::Domain(format!("chain {chain_id} reached a state with log-joint {lj} at iteration {iter}")));
            }
            chain.draws.push(state.clone());
            chain.iterations.push(iter);
            chain.log_joint.push(lj);
        }
    }
    chain.acceptance = sweep.proposals.acceptance();
    Ok(chain)
}

/// Runs every chain in parallel and attaches R-hat for each scalar.
pub fn sample_posterior(
    panel: &SeasonPanel,
    prior: &TruncatedMvnPrior,
    model: &DataModelConfig,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    check_inputs(panel, model, config)?;
    let chains: Vec<Chain> =
        (0..config.n_chains).into_par_iter().map(|id| run_chain(panel, prior, model, config, id)).collect::<Result<_>>()?;
    let seasons = panel.seasons().to_vec();
    let mut rhat = Vec::new();
    let mut warnings = Vec::new();
    if chains.len() >= 2 && config.draws_per_chain() >= 10 {
        let per_chain: Vec<Vec<Vec<(String, f64)>>> =
            chains.iter().map(|c| c.draws.iter().map(|d| d.scalars(&seasons)).collect()).collect();
        let names: Vec<String> = per_chain[0][0].iter().map(|(n, _)| n.clone()).collect();
        for (k, name) in names.into_iter().enumerate() {
            let series: Vec<Vec<f64>> = per_chain.iter().map(|c| c.iter().map(|d| d[k].1).collect()).collect();
            let r = gelman_rubin(&series)?;
            if r.value >= RHAT_WARN {
                warnings.push(format!("rhat for {name} is {:.3}", r.value));
            }
            rhat.push((name, r));
        }
    }
    Ok(PosteriorDraws { seasons, config: config.clone(), chains, rhat, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_arithmetic() {
        assert_eq!(SamplerConfig::diagnostic(1).draws_per_chain(), 2500);
        assert_eq!(SamplerConfig::production(1).draws_per_chain(), 2500);
        assert_eq!(SamplerConfig::ci(1).draws_per_chain(), 500);
        assert!(SamplerConfig { thin: 0, ..SamplerConfig::ci(1) }.validate().is_err());
        assert_eq!("CI".parse::<SamplerMode>().unwrap(), SamplerMode::Ci);
    }

    #[test]
    fn gap_filling() {
        let mut x = [f64::NAN, 1.0, f64::NAN, f64::NAN, 2.0, f64::NAN];
        fill_gaps(&mut x);
        assert_eq!(x, [1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        let mut y = [f64::NAN; 3];
        fill_gaps(&mut y);
        assert_eq!(y, [0.0; 3]);
    }
}
