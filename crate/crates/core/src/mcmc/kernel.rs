//! Block-local log targets and the Metropolis-within-Gibbs sweep.
//!
//! Every Metropolis block evaluates only the log-joint terms that involve the
//! variables it moves. Transformed-scale blocks add the log Jacobian of the
//! map back to the model scale.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::data::SeasonPanel;
use crate::density::{gamma_ln_pdf, normal_ln_pdf, truncated_normal_ln_pdf};
use crate::model::{logit_infectious, DataModelConfig, HyperConstants, ModelState, SeasonState};
use crate::num::{inv_logit, logit};
use crate::priors::{in_bounds, TruncatedMvnPrior, I0_BOUNDS, RHO_BOUNDS};

/// One Metropolis block. Week and season indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    /// Random walk on the transformed SIR triple with discrepancy held fixed.
    Sir(usize),
    /// Same proposal, with `delta` shifted so the latent proportion is unchanged.
    SirPreserving(usize),
    MuSite(usize),
    /// Adds a constant to the whole `mu` path.
    MuShift,
    /// `mu[t] += c`, `delta[j][t] -= c` for every season.
    MuSwap(usize),
    /// `mu[..=t] += c`, `delta[j][..=t] -= c` for every season.
    MuTail(usize),
    DeltaSite(usize, usize),
    /// Random walk on `logit alpha_j`.
    Alpha(usize),
    /// Random walk on `ln a_delta`.
    ADelta,
    /// Random walk on `ln sigma_alpha`.
    SigmaAlpha,
}

/// Log observations, pre-split for the Beta kernel.
struct Obs {
    cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl Obs {
    fn new(panel: &SeasonPanel) -> Self {
        let cells = (0..panel.n_seasons())
            .map(|j| panel.season_values(j).iter().map(|v| v.map(|y| (y.ln(), (-y).ln_1p()))).collect())
            .collect();
        Self { cells }
    }
}

/// Fixed ingredients of the target density.
pub(crate) struct Target<'a> {
    obs: Obs,
    /// Per season, maximal runs `[a, b]` of free delta weeks without data.
    delta_runs: Vec<Vec<(usize, usize)>>,
    /// Runs of weeks where no season has data.
    mu_runs: Vec<(usize, usize)>,
    prior: &'a TruncatedMvnPrior,
    hyper: HyperConstants,
    lambda: f64,
    weeks: usize,
    alpha_center: f64,
    alpha_bounds: (f64, f64),
}

impl<'a> Target<'a> {
    pub(crate) fn new(panel: &SeasonPanel, prior: &'a TruncatedMvnPrior, config: &DataModelConfig) -> Self {
        let weeks = panel.weeks();
        let obs = Obs::new(panel);
        let delta_runs = obs.cells.iter().map(|row| runs((0..weeks - 1).map(|t| row[t].is_none()))).collect();
        let mu_runs = runs((0..weeks).map(|t| obs.cells.iter().all(|row| row[t].is_none())));
        Self {
            obs,
            delta_runs,
            mu_runs,
            prior,
            hyper: config.hyper.clone(),
            lambda: config.lambda,
            weeks: panel.weeks(),
            alpha_center: logit(config.hyper.alpha_center),
            alpha_bounds: config.logit_alpha_bounds(),
        }
    }

    /// Beta log-likelihood of cell `(j, t)` without the constant `lgamma(lambda)`.
    fn cell(&self, state: &ModelState, j: usize, t: usize) -> f64 {
        let Some((ly, l1y)) = self.obs.cells[j][t] else {
            return 0.0;
        };
        let pi = inv_logit(state.logit_pi(j, t + 1));
        let a = self.lambda * pi;
        let b = self.lambda * (1.0 - pi);
        if !(a > 0.0 && b > 0.0) {
            return f64::NEG_INFINITY;
        }
        -ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y
    }

    fn season_cells(&self, state: &ModelState, j: usize) -> f64 {
        (0..self.weeks).map(|t| self.cell(state, j, t)).sum()
    }

    fn week_cells(&self, state: &ModelState, t: usize) -> f64 {
        (0..state.n_seasons()).map(|j| self.cell(state, j, t)).sum()
    }

    /// `delta[t] | delta[t+1]` for `t < T - 1`.
    fn delta_term(&self, s: &SeasonState, t: usize) -> f64 {
        normal_ln_pdf(s.delta(t + 1), s.alpha * s.delta(t + 2), s.sigma2_delta)
    }

    fn delta_prior(&self, s: &SeasonState) -> f64 {
        (0..self.weeks - 1).map(|t| self.delta_term(s, t)).sum()
    }

    fn mu_step(&self, state: &ModelState, t: usize) -> f64 {
        normal_ln_pdf(state.mu[t], state.mu[t + 1], state.sigma2_mu)
    }

    fn mu_terminal(&self, state: &ModelState) -> f64 {
        normal_ln_pdf(state.mu[self.weeks - 1], 0.0, state.sigma2_mu_t)
    }

    fn alpha_prior(&self, state: &ModelState, s: &SeasonState) -> f64 {
        let sa = state.sigma_alpha;
        truncated_normal_ln_pdf(logit(s.alpha), self.alpha_center, sa * sa, self.alpha_bounds.0, self.alpha_bounds.1)
    }

    /// Log-joint terms touched by `block`.
    pub(crate) fn local(&self, state: &ModelState, block: Block) -> f64 {
        let last = self.weeks - 1;
        let v = match block {
            Block::Sir(j) => {
                let s = &state.seasons[j];
                self.prior.ln_density(&s.sir) + self.season_cells(state, j) + self.delta_prior(s)
            }
            Block::SirPreserving(j) => {
                let s = &state.seasons[j];
                self.prior.ln_density(&s.sir) + self.delta_prior(s)
            }
            Block::MuSite(t) => {
                let mut v = self.week_cells(state, t);
                if t < last {
                    v += self.mu_step(state, t);
                } else {
                    v += self.mu_terminal(state);
                }
                if t > 0 {
                    v += self.mu_step(state, t - 1);
                }
                v
            }
            Block::MuShift => (0..self.weeks).map(|t| self.week_cells(state, t)).sum::<f64>() + self.mu_terminal(state),
            Block::MuSwap(t) => {
                let mut v = self.mu_step(state, t);
                if t > 0 {
                    v += self.mu_step(state, t - 1);
                }
                for s in &state.seasons {
                    v += self.delta_term(s, t);
                    if t > 0 {
                        v += self.delta_term(s, t - 1);
                    }
                }
                v
            }
            Block::MuTail(t) => {
                let mut v = self.mu_step(state, t);
                for s in &state.seasons {
                    v += (0..=t).map(|k| self.delta_term(s, k)).sum::<f64>();
                }
                v
            }
            Block::DeltaSite(j, t) => {
                let s = &state.seasons[j];
                let mut v = self.cell(state, j, t) + self.delta_term(s, t);
                if t > 0 {
                    v += self.delta_term(s, t - 1);
                }
                v
            }
            Block::Alpha(j) => {
                let s = &state.seasons[j];
                self.alpha_prior(state, s) + self.delta_prior(s)
            }
            Block::ADelta => {
                let h = &self.hyper;
                h.a_delta.ln_pdf(state.a_delta)
                    + state
                        .seasons
                        .iter()
                        .map(|s| gamma_ln_pdf(1.0 / s.sigma2_delta, state.a_delta, state.b_delta))
                        .sum::<f64>()
            }
            Block::SigmaAlpha => {
                self.hyper.sigma_alpha.ln_pdf(state.sigma_alpha)
                    + state.seasons.iter().map(|s| self.alpha_prior(state, s)).sum::<f64>()
            }
        };
        let v = v + self.log_jacobian(state, block);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Log Jacobian from the proposal scale back to the model scale.
    pub(crate) fn log_jacobian(&self, state: &ModelState, block: Block) -> f64 {
        match block {
            Block::Sir(j) | Block::SirPreserving(j) => sir_log_jacobian(&state.seasons[j].sir),
            Block::ADelta => state.a_delta.ln(),
            Block::SigmaAlpha => state.sigma_alpha.ln(),
            _ => 0.0,
        }
    }
}

/// Maximal runs of `true` as inclusive index pairs.
fn runs(flags: impl Iterator<Item = bool>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut last = 0;
    for (i, f) in flags.enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(a)) => {
                out.push((a, i - 1));
                start = None;
            }
            _ => {}
        }
        last = i;
    }
    if let Some(a) = start {
        out.push((a, last));
    }
    out
}

/// Exact draw of `x[a..=b]` from a reverse autoregression
/// `x[s] ~ N(c x[s+1], v)` started from `x[b] ~ N(c * right, v_right)`,
/// conditioned on `left = x[a-1] ~ N(c x[a], v)` when present.
pub(crate) fn draw_reverse_ar<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    c: f64,
    v: f64,
    right: f64,
    v_right: f64,
    left: Option<f64>,
) -> Vec<f64> {
    let mut x = vec![0.0; len];
    let mut var = vec![0.0; len];
    for k in (0..len).rev() {
        let (mean, vk, prev_var) = if k + 1 == len { (c * right, v_right, 0.0) } else { (c * x[k + 1], v, var[k + 1]) };
        x[k] = mean + vk.sqrt() * normal(rng);
        var[k] = c * c * prev_var + vk;
    }
    if let Some(obs) = left {
        let z = c * x[0] + v.sqrt() * normal(rng);
        let var_z = c * c * var[0] + v;
        let resid = (obs - z) / var_z;
        let mut cpow = c;
        for k in 0..len {
            x[k] += cpow * var[k] * resid;
            cpow *= c;
        }
    }
    x
}

/// Gibbs draws of every delta and mu run that has no data.
pub(crate) fn gibbs_unobserved<R: Rng + ?Sized>(state: &mut ModelState, target: &Target<'_>, rng: &mut R) {
    let weeks = state.weeks();
    for (j, season_runs) in target.delta_runs.iter().enumerate() {
        for &(a, b) in season_runs {
            let s = &state.seasons[j];
            let right = s.delta(b + 2);
            let left = (a > 0).then(|| s.delta[a - 1]);
            let x = draw_reverse_ar(rng, b - a + 1, s.alpha, s.sigma2_delta, right, s.sigma2_delta, left);
            state.seasons[j].delta[a..=b].copy_from_slice(&x);
        }
    }
    for &(a, b) in &target.mu_runs {
        let (right, v_right) = if b + 1 == weeks { (0.0, state.sigma2_mu_t) } else { (state.mu[b + 1], state.sigma2_mu) };
        let left = (a > 0).then(|| state.mu[a - 1]);
        let x = draw_reverse_ar(rng, b - a + 1, 1.0, state.sigma2_mu, right, v_right, left);
        state.mu[a..=b].copy_from_slice(&x);
    }
}

pub(crate) fn to_unconstrained(x: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(logit(x[0] / I0_BOUNDS.1), x[1].ln(), logit(x[2] / RHO_BOUNDS.1))
}

pub(crate) fn from_unconstrained(u: &Vector3<f64>) -> [f64; 3] {
    [I0_BOUNDS.1 * inv_logit(u[0]), u[1].exp(), RHO_BOUNDS.1 * inv_logit(u[2])]
}

fn sir_log_jacobian(x: &[f64; 3]) -> f64 {
    let (c0, c2) = (I0_BOUNDS.1, RHO_BOUNDS.1);
    (x[0] * (c0 - x[0]) / c0).ln() + x[1].ln() + (x[2] * (c2 - x[2]) / c2).ln()
}

/// Robbins–Monro scale adaptation toward a target acceptance rate.
#[derive(Debug, Clone)]
pub(crate) struct Scale {
    pub(crate) log_scale: f64,
    target: f64,
    window_acc: u32,
    window_prop: u32,
    pub(crate) accepted: u64,
    pub(crate) proposed: u64,
}

impl Scale {
    fn new(scale: f64, target: f64) -> Self {
        Self { log_scale: scale.ln(), target, window_acc: 0, window_prop: 0, accepted: 0, proposed: 0 }
    }

    fn value(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool, counting: bool) {
        self.window_prop += 1;
        self.window_acc += accepted as u32;
        if counting {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    fn adapt(&mut self, round: usize) {
        if self.window_prop > 0 {
            let rate = self.window_acc as f64 / self.window_prop as f64;
            self.log_scale += (rate - self.target) * 3.0 / (round as f64).sqrt();
            self.log_scale = self.log_scale.clamp(-25.0, 5.0);
        }
        self.window_acc = 0;
        self.window_prop = 0;
    }
}

const SINGLE_SITE_TARGET: f64 = 0.44;
const BLOCK_TARGET: f64 = 0.234;
/// Minimum burn-in samples before the SIR proposal shape is learned.
const SHAPE_MIN_SAMPLES: usize = 100;

/// Running moments of the transformed SIR triple of one season.
#[derive(Debug, Clone)]
struct ShapeLearner {
    n: usize,
    sum: Vector3<f64>,
    outer: Matrix3<f64>,
    chol: Matrix3<f64>,
}

impl ShapeLearner {
    fn new(chol: Matrix3<f64>) -> Self {
        Self { n: 0, sum: Vector3::zeros(), outer: Matrix3::zeros(), chol }
    }

    fn push(&mut self, u: &Vector3<f64>) {
        self.n += 1;
        self.sum += u;
        self.outer += u * u.transpose();
    }

    fn refresh(&mut self) {
        if self.n < SHAPE_MIN_SAMPLES {
            return;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let cov = (self.outer - mean * mean.transpose() * n) / (n - 1.0);
        let ridge = 1e-10 + 1e-6 * cov.diagonal().mean();
        if let Some(c) = (cov + Matrix3::identity() * ridge).cholesky() {
            self.chol = c.l();
        }
    }
}

/// Adaptive proposal state for every block.
pub(crate) struct Proposals {
    sir: Vec<Scale>,
    sir_preserving: Vec<Scale>,
    shapes: Vec<ShapeLearner>,
    mu_site: Vec<Scale>,
    mu_shift: Scale,
    mu_swap: Vec<Scale>,
    mu_tail: Vec<Scale>,
    delta: Vec<Vec<Scale>>,
    alpha: Vec<Scale>,
    a_delta: Scale,
    sigma_alpha: Scale,
    round: usize,
}

impl Proposals {
    pub(crate) fn new(n_seasons: usize, weeks: usize, prior: &TruncatedMvnPrior) -> Self {
        let chol = prior_shape(prior);
        let site = |s: f64| Scale::new(s, SINGLE_SITE_TARGET);
        Self {
            sir: (0..n_seasons).map(|_| Scale::new(0.5, BLOCK_TARGET)).collect(),
            sir_preserving: (0..n_seasons).map(|_| Scale::new(0.5, BLOCK_TARGET)).collect(),
            shapes: (0..n_seasons).map(|_| ShapeLearner::new(chol)).collect(),
            mu_site: (0..weeks).map(|_| site(0.05)).collect(),
            mu_shift: site(0.02),
            mu_swap: (0..weeks - 1).map(|_| site(0.05)).collect(),
            mu_tail: (0..weeks - 1).map(|_| site(0.05)).collect(),
            delta: (0..n_seasons).map(|_| (0..weeks - 1).map(|_| site(0.05)).collect()).collect(),
            alpha: (0..n_seasons).map(|_| site(0.5)).collect(),
            a_delta: site(0.5),
            sigma_alpha: site(0.5),
            round: 0,
        }
    }

    fn all_mut(&mut self) -> impl Iterator<Item = &mut Scale> {
        self.sir
            .iter_mut()
            .chain(self.sir_preserving.iter_mut())
            .chain(self.mu_site.iter_mut())
            .chain(std::iter::once(&mut self.mu_shift))
            .chain(self.mu_swap.iter_mut())
            .chain(self.mu_tail.iter_mut())
            .chain(self.delta.iter_mut().flatten())
            .chain(self.alpha.iter_mut())
            .chain([&mut self.a_delta, &mut self.sigma_alpha])
    }

    /// Ends an adaptation window.
    pub(crate) fn adapt(&mut self) {
        self.round += 1;
        let round = self.round;
        self.all_mut().for_each(|s| s.adapt(round));
        self.shapes.iter_mut().for_each(ShapeLearner::refresh);
    }

    /// Post-adaptation acceptance rates grouped by block kind.
    pub(crate) fn acceptance(&self) -> Vec<(String, f64)> {
        let rate = |v: &mut dyn Iterator<Item = &Scale>| {
            let (a, p) = v.fold((0u64, 0u64), |(a, p), s| (a + s.accepted, p + s.proposed));
            if p == 0 {
                f64::NAN
            } else {
                a as f64 / p as f64
            }
        };
        vec![
            ("sir".into(), rate(&mut self.sir.iter())),
            ("sir_preserving".into(), rate(&mut self.sir_preserving.iter())),
            ("mu_site".into(), rate(&mut self.mu_site.iter())),
            ("mu_shift".into(), rate(&mut std::iter::once(&self.mu_shift))),
            ("mu_swap".into(), rate(&mut self.mu_swap.iter())),
            ("mu_tail".into(), rate(&mut self.mu_tail.iter())),
            ("delta".into(), rate(&mut self.delta.iter().flatten())),
            ("alpha".into(), rate(&mut self.alpha.iter())),
            ("a_delta".into(), rate(&mut std::iter::once(&self.a_delta))),
            ("sigma_alpha".into(), rate(&mut std::iter::once(&self.sigma_alpha))),
        ]
    }
}

/// Cholesky factor of the prior covariance mapped to the unconstrained scale.
fn prior_shape(prior: &TruncatedMvnPrior) -> Matrix3<f64> {
    let m = prior.mean();
    let m = [m[0].clamp(1e-6, I0_BOUNDS.1 * 0.99), m[1].max(1e-3), m[2].clamp(1e-3, RHO_BOUNDS.1 * 0.99)];
    let d = Vector3::new(
        I0_BOUNDS.1 / (m[0] * (I0_BOUNDS.1 - m[0])),
        1.0 / m[1],
        RHO_BOUNDS.1 / (m[2] * (RHO_BOUNDS.1 - m[2])),
    );
    let c = prior.cov();
    let cov = Matrix3::from_fn(|r, k| c[r][k] * d[r] * d[k]) + Matrix3::identity() * 1e-10;
    cov.cholesky().map(|c| c.l()).unwrap_or_else(|| Matrix3::identity() * 0.1)
}

/// Metropolis accept/reject on a log ratio.
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// One full sweep of every block in the fixed order.
pub(crate) struct Sweep<'t, 'p> {
    pub(crate) target: &'t Target<'p>,
    pub(crate) proposals: Proposals,
    pub(crate) adapting: bool,
}

impl Sweep<'_, '_> {
    pub(crate) fn run<R: Rng + ?Sized>(&mut self, state: &mut ModelState, rng: &mut R) {
        let counting = !self.adapting;
        let weeks = self.target.weeks;
        for j in 0..state.n_seasons() {
            for preserving in [false, true] {
                let ok = self.sir_step(state, j, preserving, rng);
                let scale = if preserving { &mut self.proposals.sir_preserving[j] } else { &mut self.proposals.sir[j] };
                scale.record(ok, counting);
            }
            if self.adapting {
                self.proposals.shapes[j].push(&to_unconstrained(&state.seasons[j].sir));
            }
        }
        for t in 0..weeks {
            let step = self.proposals.mu_site[t].value() * normal(rng);
            let ok = self.additive(state, Block::MuSite(t), step, rng);
            self.proposals.mu_site[t].record(ok, counting);
        }
        let step = self.proposals.mu_shift.value() * normal(rng);
        let ok = self.additive(state, Block::MuShift, step, rng);
        self.proposals.mu_shift.record(ok, counting);
        for t in 0..weeks - 1 {
            let step = self.proposals.mu_swap[t].value() * normal(rng);
            let ok = self.additive(state, Block::MuSwap(t), step, rng);
            self.proposals.mu_swap[t].record(ok, counting);
            let step = self.proposals.mu_tail[t].value() * normal(rng);
            let ok = self.additive(state, Block::MuTail(t), step, rng);
            self.proposals.mu_tail[t].record(ok, counting);
        }
        for j in 0..state.n_seasons() {
            for t in 0..weeks - 1 {
                let step = self.proposals.delta[j][t].value() * normal(rng);
                let ok = self.additive(state, Block::DeltaSite(j, t), step, rng);
                self.proposals.delta[j][t].record(ok, counting);
            }
        }
        gibbs_unobserved(state, self.target, rng);
        for j in 0..state.n_seasons() {
            let step = self.proposals.alpha[j].value() * normal(rng);
            let ok = self.additive(state, Block::Alpha(j), step, rng);
            self.proposals.alpha[j].record(ok, counting);
        }
        let step = self.proposals.sigma_alpha.value() * normal(rng);
        let ok = self.additive(state, Block::SigmaAlpha, step, rng);
        self.proposals.sigma_alpha.record(ok, counting);
        gibbs_precisions(state, &self.target.hyper, rng);
        let step = self.proposals.a_delta.value() * normal(rng);
        let ok = self.additive(state, Block::ADelta, step, rng);
        self.proposals.a_delta.record(ok, counting);
        gibbs_b_delta(state, &self.target.hyper, rng);
    }

    fn sir_step<R: Rng + ?Sized>(&mut self, state: &mut ModelState, j: usize, preserving: bool, rng: &mut R) -> bool {
        let block = if preserving { Block::SirPreserving(j) } else { Block::Sir(j) };
        let scale = if preserving { &self.proposals.sir_preserving[j] } else { &self.proposals.sir[j] }.value();
        let chol = self.proposals.shapes[j].chol;
        let z = Vector3::new(normal(rng), normal(rng), normal(rng));
        let u = to_unconstrained(&state.seasons[j].sir) + chol * z * (scale * 2.38 / 3f64.sqrt());
        let proposal = from_unconstrained(&u);
        if !in_bounds(&proposal) {
            return false;
        }
        let Ok(logit_i) = logit_infectious(&proposal, self.target.weeks) else {
            return false;
        };
        let current = self.target.local(state, block);
        let saved = state.seasons[j].clone();
        apply_sir(&mut state.seasons[j], proposal, logit_i, preserving);
        let ok = accept(rng, self.target.local(state, block) - current);
        if !ok {
            state.seasons[j] = saved;
        }
        ok
    }

    /// Additive random-walk blocks; values are restored exactly on rejection.
    fn additive<R: Rng + ?Sized>(&mut self, state: &mut ModelState, block: Block, step: f64, rng: &mut R) -> bool {
        let current = self.target.local(state, block);
        let saved = Saved::take(state, block);
        if !shift(state, block, step, self.target.alpha_bounds) {
            saved.restore(state);
            return false;
        }
        let ok = accept(rng, self.target.local(state, block) - current);
        if !ok {
            saved.restore(state);
        }
        ok
    }
}

/// Replaces a season's SIR triple; the preserving variant keeps `logit pi` fixed.
pub(crate) fn apply_sir(season: &mut SeasonState, sir: [f64; 3], logit_i: Vec<f64>, preserving: bool) {
    if preserving {
        for (t, d) in season.delta.iter_mut().enumerate() {
            *d += season.logit_i[t] - logit_i[t];
        }
    }
    season.sir = sir;
    season.logit_i = logit_i;
}

/// Applies an additive move; `false` when it leaves the support.
pub(crate) fn shift(state: &mut ModelState, block: Block, c: f64, alpha_bounds: (f64, f64)) -> bool {
    match block {
        Block::MuSite(t) => state.mu[t] += c,
        Block::MuShift => state.mu.iter_mut().for_each(|m| *m += c),
        Block::MuSwap(t) => {
            state.mu[t] += c;
            state.seasons.iter_mut().for_each(|s| s.delta[t] -= c);
        }
        Block::MuTail(t) => {
            state.mu[..=t].iter_mut().for_each(|m| *m += c);
            for s in &mut state.seasons {
                s.delta[..=t].iter_mut().for_each(|d| *d -= c);
            }
        }
        Block::DeltaSite(j, t) => state.seasons[j].delta[t] += c,
        Block::Alpha(j) => {
            let w = logit(state.seasons[j].alpha) + c;
            if !(w > alpha_bounds.0 && w < alpha_bounds.1) {
                return false;
            }
            state.seasons[j].alpha = inv_logit(w);
        }
        Block::ADelta => state.a_delta *= c.exp(),
        Block::SigmaAlpha => state.sigma_alpha *= c.exp(),
        Block::Sir(_) | Block::SirPreserving(_) => unreachable!("SIR blocks are not additive"),
    }
    true
}

/// Snapshot of exactly the values an additive block may change.
enum Saved {
    Mu(Vec<f64>, Vec<Vec<f64>>),
    Scalar(usize, f64),
    Delta(usize, usize, f64),
    Alpha(usize, f64),
    ADelta(f64),
    SigmaAlpha(f64),
}

impl Saved {
    fn take(state: &ModelState, block: Block) -> Self {
        match block {
            Block::MuSite(t) => Saved::Scalar(t, state.mu[t]),
            Block::MuShift | Block::MuSwap(_) | Block::MuTail(_) => {
                Saved::Mu(state.mu.clone(), state.seasons.iter().map(|s| s.delta.clone()).collect())
            }
            Block::DeltaSite(j, t) => Saved::Delta(j, t, state.seasons[j].delta[t]),
            Block::Alpha(j) => Saved::Alpha(j, state.seasons[j].alpha),
            Block::ADelta => Saved::ADelta(state.a_delta),
            Block::SigmaAlpha => Saved::SigmaAlpha(state.sigma_alpha),
            Block::Sir(_) | Block::SirPreserving(_) => unreachable!("SIR blocks save the season"),
        }
    }

    fn restore(self, state: &mut ModelState) {
        match self {
            Saved::Mu(mu, deltas) => {
                state.mu = mu;
                for (s, d) in state.seasons.iter_mut().zip(deltas) {
                    s.delta = d;
                }
            }
            Saved::Scalar(t, v) => state.mu[t] = v,
            Saved::Delta(j, t, v) => state.seasons[j].delta[t] = v,
            Saved::Alpha(j, v) => state.seasons[j].alpha = v,
            Saved::ADelta(v) => state.a_delta = v,
            Saved::SigmaAlpha(v) => state.sigma_alpha = v,
        }
    }
}

fn gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

/// Full-conditional shape and rate of `1 / sigma2_delta_j`.
pub(crate) fn delta_precision_conditional(season: &SeasonState, a_delta: f64, b_delta: f64) -> (f64, f64) {
    let weeks = season.weeks();
    let ss: f64 = (1..weeks).map(|t| (season.delta(t) - season.alpha * season.delta(t + 1)).powi(2)).sum();
    (a_delta + (weeks - 1) as f64 / 2.0, b_delta + ss / 2.0)
}

/// Conjugate draws of the three precision families.
pub(crate) fn gibbs_precisions<R: Rng + ?Sized>(state: &mut ModelState, hyper: &HyperConstants, rng: &mut R) {
    let weeks = state.weeks();
    let mu_t = state.mu[weeks - 1];
    let p = hyper.mu_terminal_precision;
    state.sigma2_mu_t = 1.0 / gamma_draw(rng, p.shape + 0.5, p.rate + mu_t * mu_t / 2.0);
    let ss: f64 = state.mu.windows(2).map(|w| (w[0] - w[1]).powi(2)).sum();
    let p = hyper.mu_step_precision;
    state.sigma2_mu = 1.0 / gamma_draw(rng, p.shape + (weeks - 1) as f64 / 2.0, p.rate + ss / 2.0);
    let (a, b) = (state.a_delta, state.b_delta);
    for s in &mut state.seasons {
        let (shape, rate) = delta_precision_conditional(s, a, b);
        s.sigma2_delta = 1.0 / gamma_draw(rng, shape, rate);
    }
}

pub(crate) fn gibbs_b_delta<R: Rng + ?Sized>(state: &mut ModelState, hyper: &HyperConstants, rng: &mut R) {
    let p = hyper.b_delta;
    let tau: f64 = state.seasons.iter().map(|s| 1.0 / s.sigma2_delta).sum();
    state.b_delta = gamma_draw(rng, p.shape + state.n_seasons() as f64 * state.a_delta, p.rate + tau);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::log_joint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior() -> TruncatedMvnPrior {
        TruncatedMvnPrior::new(
            [0.004, 1.4, 0.83],
            [[4e-6, 0.0, 0.0], [0.0, 0.09, 0.004], [0.0, 0.004, 0.0004]],
        )
        .unwrap()
    }

    fn setup() -> (SeasonPanel, ModelState) {
        let weeks = 12;
        let rows = vec![
            (2001, (0..weeks).map(|t| Some(0.01 + 0.002 * t as f64)).collect()),
            (2002, (0..weeks).map(|t| if t % 3 == 0 { None } else { Some(0.015 + 0.001 * t as f64) }).collect()),
        ];
        let panel = SeasonPanel::from_rows(weeks, rows).unwrap();
        let seasons = vec![
            SeasonState::new([0.004, 1.3, 0.82], (0..weeks - 1).map(|t| 0.1 * (t as f64).sin()).collect(), 0.85, 0.03).unwrap(),
            SeasonState::new([0.006, 1.6, 0.85], (0..weeks - 1).map(|t| -0.05 * t as f64).collect(), 0.7, 0.05).unwrap(),
        ];
        let mu = (0..weeks).map(|t| -0.3 + 0.02 * t as f64).collect();
        (panel, ModelState::new(seasons, mu, 0.8, 0.02, 0.9, 4.0, 0.2).unwrap())
    }

    fn blocks(weeks: usize) -> Vec<Block> {
        let mut b = vec![Block::Sir(0), Block::SirPreserving(1), Block::MuShift, Block::Alpha(1), Block::ADelta, Block::SigmaAlpha];
        for t in [0, 5, weeks - 1] {
            b.push(Block::MuSite(t));
        }
        for t in [0, 4, weeks - 2] {
            b.extend([Block::MuSwap(t), Block::MuTail(t), Block::DeltaSite(1, t)]);
        }
        b
    }

    fn propose(state: &ModelState, block: Block, c: f64, weeks: usize, bounds: (f64, f64)) -> ModelState {
        let mut next = state.clone();
        match block {
            Block::Sir(j) | Block::SirPreserving(j) => {
                let u = to_unconstrained(&next.seasons[j].sir) + Vector3::new(c, -c, 0.5 * c);
                let x = from_unconstrained(&u);
                let li = logit_infectious(&x, weeks).unwrap();
                apply_sir(&mut next.seasons[j], x, li, matches!(block, Block::SirPreserving(_)));
            }
            _ => assert!(shift(&mut next, block, c, bounds)),
        }
        next
    }

    #[test]
    fn local_ratios_are_antisymmetric_and_match_the_joint() {
        let (panel, a) = setup();
        let p = prior();
        let config = DataModelConfig { weeks: panel.weeks(), ..DataModelConfig::default() };
        let target = Target::new(&panel, &p, &config);
        for block in blocks(panel.weeks()) {
            let b = propose(&a, block, 0.07, panel.weeks(), target.alpha_bounds);
            let forward = target.local(&b, block) - target.local(&a, block);
            let backward = target.local(&a, block) - target.local(&b, block);
            assert_eq!(forward, -backward, "{block:?}");
            let joint = log_joint(&b, &panel, &config, &p) - log_joint(&a, &panel, &config, &p);
            let jac = target.log_jacobian(&b, block) - target.log_jacobian(&a, block);
            assert!((forward - (joint + jac)).abs() < 1e-7, "{block:?}: local {forward} joint {joint} jac {jac}");
        }
    }

    #[test]
    fn preserving_move_keeps_latent_proportion() {
        let (panel, a) = setup();
        let b = propose(&a, Block::SirPreserving(1), 0.2, panel.weeks(), (-4.0, 4.0));
        assert_ne!(a.seasons[1].sir, b.seasons[1].sir);
        for t in 1..=panel.weeks() {
            assert!((a.logit_pi(1, t) - b.logit_pi(1, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_precision_update_matches_closed_form() {
        let (_, state) = setup();
        let s = &state.seasons[0];
        let (shape, rate) = delta_precision_conditional(s, state.a_delta, state.b_delta);
        // Normalized full conditional on a grid, built only from the joint density.
        let unnorm = |tau: f64| {
            let mut season = s.clone();
            season.sigma2_delta = 1.0 / tau;
            gamma_ln_pdf(tau, state.a_delta, state.b_delta)
                + (1..s.weeks())
                    .map(|t| normal_ln_pdf(season.delta(t), season.alpha * season.delta(t + 1), season.sigma2_delta))
                    .sum::<f64>()
        };
        let h = 0.01;
        let grid: Vec<f64> = (1..20_000).map(|k| k as f64 * h).collect();
        let peak = grid.iter().map(|&t| unnorm(t)).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = grid.iter().map(|&t| (unnorm(t) - peak).exp() * h).sum();
        for &tau in &[1.0, 5.0, 20.0, 60.0] {
            let numeric = unnorm(tau) - peak - z.ln();
            assert!((numeric - gamma_ln_pdf(tau, shape, rate)).abs() < 1e-4, "tau={tau}");
        }
        // Sampled moments of the Gibbs draw agree with the closed form.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hyper = HyperConstants::default();
        let mut st = state.clone();
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            gibbs_precisions(&mut st, &hyper, &mut rng);
            sum += 1.0 / st.seasons[0].sigma2_delta;
        }
        let mean = sum / n as f64;
        let sd = (shape / (rate * rate)).sqrt();
        assert!((mean - shape / rate).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {}", shape / rate);
    }

    #[test]
    fn run_detection() {
        assert_eq!(runs([true, true, false, true, false, false, true].into_iter()), vec![(0, 1), (3, 3), (6, 6)]);
        assert!(runs([false, false].into_iter()).is_empty());
    }

    /// Conditional moments by dense Gaussian algebra on the joint precision.
    fn dense_conditional(len: usize, c: f64, v: f64, right: f64, v_right: f64, left: Option<f64>) -> (Vec<f64>, Vec<f64>) {
        let n = len;
        let mut prec = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut lin = nalgebra::DVector::<f64>::zeros(n);
        // x[n-1] ~ N(c right, v_right)
        prec[(n - 1, n - 1)] += 1.0 / v_right;
        lin[n - 1] += c * right / v_right;
        // x[k] ~ N(c x[k+1], v)
        for k in 0..n - 1 {
            prec[(k, k)] += 1.0 / v;
            prec[(k + 1, k + 1)] += c * c / v;
            prec[(k, k + 1)] -= c / v;
            prec[(k + 1, k)] -= c / v;
        }
        if let Some(l) = left {
            prec[(0, 0)] += c * c / v;
            lin[0] += c * l / v;
        }
        let cov = prec.try_inverse().unwrap();
        let mean = &cov * lin;
        (mean.iter().copied().collect(), (0..n).map(|k| cov[(k, k)]).collect())
    }

    #[test]
    fn reverse_ar_bridge_matches_dense_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(len, c, v, right, v_right, left) in
            &[(6, 0.9, 0.04, 3.0, 0.04, Some(0.5)), (4, 1.0, 0.01, -4.5, 1.0, Some(-4.0)), (5, 0.7, 0.2, 1.0, 0.2, None)]
        {
            let (mean, var) = dense_conditional(len, c, v, right, v_right, left);
            let n = 40_000;
            let mut m = vec![0.0; len];
            let mut m2 = vec![0.0; len];
            for _ in 0..n {
                let x = draw_reverse_ar(&mut rng, len, c, v, right, v_right, left);
                for k in 0..len {
                    m[k] += x[k] / n as f64;
                    m2[k] += x[k] * x[k] / n as f64;
                }
            }
            for k in 0..len {
                let se = (var[k] / n as f64).sqrt();
                assert!((m[k] - mean[k]).abs() < 5.0 * se, "mean k={k}: {} vs {}", m[k], mean[k]);
                let sample_var = m2[k] - m[k] * m[k];
                assert!((sample_var / var[k] - 1.0).abs() < 0.05, "var k={k}: {sample_var} vs {}", var[k]);
            }
        }
    }

    #[test]
    fn unconstrained_map_round_trips() {
        let x = [0.0042, 1.37, 0.81];
        let y = from_unconstrained(&to_unconstrained(&x));
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-12);
        }
    }
}
