//! Empirical-Bayes prior on the per-season SIR parameters `(i0, beta, rho)`.
//!
//! Each fully observed season gets a least-squares SIR fit with `s0` pinned;
//! the fits of all seasons except the forecast target are summarized by a
//! Gaussian (sample mean and covariance, untransformed coordinates) that is
//! truncated to the parameter bounds by rejection.

use std::io::{Read, Write};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::SeasonPanel;
use crate::error::{Error, Result};
use crate::num::{inv_logit, logit};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::sir::{solve_sir, SirParams};

/// Susceptible fraction at week 1, fixed for identifiability.
pub const S0: f64 = 0.9;
pub const I0_BOUNDS: (f64, f64) = (0.0, 0.1);
pub const BETA_BOUNDS: (f64, f64) = (0.0, f64::INFINITY);
pub const RHO_BOUNDS: (f64, f64) = (0.0, 0.9);
/// Upper limit on beta used only while fitting, to keep a weekly RK4 step stable.
pub const FIT_BETA_MAX: f64 = 5.0;
/// Consecutive rejections after which sampling gives up.
pub const MAX_REJECTIONS: usize = 1_000_000;
/// Relative diagonal jitter tried once before declaring a covariance singular.
pub const COV_JITTER: f64 = 1e-10;
pub const MIN_OBSERVED_WEEKS: usize = 10;
pub const MIN_PRIOR_FITS: usize = 3;

/// Multistart grid for the season fits: (i0, beta, rho).
const STARTS: [(f64, f64, f64); 10] = [
    (0.001, 0.8, 0.6),
    (0.001, 1.5, 0.85),
    (0.003, 1.0, 0.75),
    (0.003, 2.5, 0.88),
    (0.01, 0.6, 0.5),
    (0.01, 1.2, 0.8),
    (0.03, 0.8, 0.7),
    (0.03, 2.0, 0.85),
    (0.06, 0.5, 0.3),
    (0.002, 3.5, 0.87),
];

/// Least-squares SIR fit of one season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonSirFit {
    pub season: i32,
    pub params: SirParams<f64>,
    pub sse: f64,
}

impl SeasonSirFit {
    pub fn triple(&self) -> [f64; 3] {
        [self.params.i0(), self.params.beta(), self.params.rho()]
    }
}

/// `true` when `(i0, beta, rho)` is strictly inside the truncation region.
pub fn in_bounds(x: &[f64; 3]) -> bool {
    x[0] > I0_BOUNDS.0 && x[0] < I0_BOUNDS.1 && x[1] > BETA_BOUNDS.0 && x[1] < BETA_BOUNDS.1 && x[2] > RHO_BOUNDS.0 && x[2] < RHO_BOUNDS.1
}

pub fn sir_params(x: &[f64; 3]) -> Result<SirParams<f64>> {
    SirParams::new(S0, x[0], x[1], x[2])
}

fn to_unconstrained(x: &[f64; 3]) -> Vec<f64> {
    vec![logit(x[0] / I0_BOUNDS.1), logit(x[1] / FIT_BETA_MAX), logit(x[2] / RHO_BOUNDS.1)]
}

fn from_unconstrained(u: &[f64]) -> [f64; 3] {
    [inv_logit(u[0]) * I0_BOUNDS.1, inv_logit(u[1]) * FIT_BETA_MAX, inv_logit(u[2]) * RHO_BOUNDS.1]
}

fn sse(x: &[f64; 3], wili: &[Option<f64>]) -> f64 {
    let Ok(p) = sir_params(x) else { return f64::INFINITY };
    match solve_sir(&p, wili.len()) {
        Ok(tr) => wili.iter().zip(&tr.i).filter_map(|(y, i)| y.map(|y| (y - i) * (y - i))).sum(),
        Err(_) => f64::INFINITY,
    }
}

/// Least-squares fit of `(i0, beta, rho)` with `s0 = 0.9` to one season's wILI.
pub fn fit_sir_to_season(season: i32, wili: &[Option<f64>]) -> Result<SeasonSirFit> {
    let observed = wili.iter().flatten().count();
    if observed < MIN_OBSERVED_WEEKS {
        return Err(Error::OptimizationFailed(format!("season {season}: {observed} observed weeks, need {MIN_OBSERVED_WEEKS}")));
    }
    if wili.iter().flatten().any(|&y| !(y > 0.0 && y < 1.0)) {
        return Err(Error::OptimizationFailed(format!("season {season}: observations must lie in (0, 1)")));
    }
    let objective = |u: &[f64]| sse(&from_unconstrained(u), wili);
    let mut best: Option<([f64; 3], f64)> = None;
    for start in STARTS {
        let x0 = to_unconstrained(&[start.0, start.1, start.2]);
        let mut m = nelder_mead(objective, &x0, &NelderMeadOptions::default());
        for step in [0.1, 0.01] {
            let again = nelder_mead(objective, &m.x, &NelderMeadOptions { initial_step: step, ..Default::default() });
            if again.f <= m.f {
                m = again;
            }
        }
        let x = from_unconstrained(&m.x);
        if !m.f.is_finite() || !in_bounds(&x) || x[1] >= FIT_BETA_MAX || !epidemic_shaped(&x, wili.len()) {
            continue;
        }
        best = match best {
            None => Some((x, m.f)),
            Some((bx, bf)) => {
                if m.f < bf || (m.f == bf && x[1] < bx[1]) {
                    Some((x, m.f))
                } else {
                    Some((bx, bf))
                }
            }
        };
    }
    let (x, f) = best.ok_or_else(|| Error::OptimizationFailed(format!("season {season}: no start converged to a feasible epidemic fit")))?;
    Ok(SeasonSirFit { season, params: sir_params(&x)?, sse: f })
}

fn epidemic_shaped(x: &[f64; 3], weeks: usize) -> bool {
    // an epidemic by classification whose fitted curve rises after week 1
    match sir_params(x).and_then(|p| solve_sir(&p, weeks)) {
        Ok(tr) => S0 > x[2] && tr.peak().0 > 1,
        Err(_) => false,
    }
}

/// Fits every season of the panel except `exclude`, in parallel. The excluded
/// season's values are never read.
pub fn fit_seasons(panel: &SeasonPanel, exclude: Option<i32>) -> Result<Vec<SeasonSirFit>> {
    panel
        .seasons()
        .par_iter()
        .enumerate()
        .filter(|(_, &s)| Some(s) != exclude)
        .map(|(idx, &s)| fit_sir_to_season(s, panel.season_values(idx)))
        .collect()
}

/// Multivariate Gaussian on `(i0, beta, rho)` truncated to the parameter bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedMvnPrior {
    mean: Vector3<f64>,
    cov: Matrix3<f64>,
    chol: Matrix3<f64>,
    cov_inv: Matrix3<f64>,
    ln_norm: f64,
}

impl TruncatedMvnPrior {
    pub fn new(mean: [f64; 3], cov: [[f64; 3]; 3]) -> Result<Self> {
        let cov = Matrix3::from_fn(|r, c| cov[r][c]);
        Self::from_matrix(Vector3::from(mean), cov)
    }

    fn from_matrix(mean: Vector3<f64>, cov: Matrix3<f64>) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite prior moments".into()));
        }
        if (cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1e-300) {
            return Err(Error::Domain("prior covariance is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(cov);
        if eig.eigenvalues.min() <= 0.0 {
            return Err(Error::SingularCovariance);
        }
        let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
        let l = chol.l();
        let ln_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let cov_inv = chol.inverse();
        Ok(Self {
            mean,
            cov,
            chol: l,
            cov_inv,
            ln_norm: -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + ln_det),
        })
    }

    pub fn mean(&self) -> [f64; 3] {
        [self.mean[0], self.mean[1], self.mean[2]]
    }

    pub fn cov(&self) -> [[f64; 3]; 3] {
        let c = &self.cov;
        [[c[(0, 0)], c[(0, 1)], c[(0, 2)]], [c[(1, 0)], c[(1, 1)], c[(1, 2)]], [c[(2, 0)], c[(2, 1)], c[(2, 2)]]]
    }

    pub fn bounds(&self) -> [(f64, f64); 3] {
        [I0_BOUNDS, BETA_BOUNDS, RHO_BOUNDS]
    }

    /// Log-density up to the (constant) truncation normalizer; `-inf` outside the bounds.
    pub fn ln_density(&self, x: &[f64; 3]) -> f64 {
        if !in_bounds(x) {
            return f64::NEG_INFINITY;
        }
        let d = Vector3::from(*x) - self.mean;
        self.ln_norm - 0.5 * (d.transpose() * self.cov_inv * d)[(0, 0)]
    }

    /// One draw of `(i0, beta, rho)` by rejection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 3]> {
        self.sample_counted(rng).map(|(x, _)| x)
    }

    /// One draw plus the number of rejected proposals before it.
    pub fn sample_counted<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<([f64; 3], usize)> {
        for rejected in 0..MAX_REJECTIONS {
            let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let x = self.mean + self.chol * z;
            let x = [x[0], x[1], x[2]];
            if in_bounds(&x) {
                return Ok((x, rejected));
            }
        }
        Err(Error::RejectionExhausted(MAX_REJECTIONS))
    }

    /// A draw as SIR parameters (`s0 = 0.9`, `r0 = 1 - s0 - i0`).
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SirParams<f64>> {
        sir_params(&self.sample(rng)?)
    }

    /// Fraction of untruncated proposals accepted over `n` draws.
    pub fn acceptance_rate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<f64> {
        let mut rejected = 0usize;
        for _ in 0..n {
            rejected += self.sample_counted(rng)?.1;
        }
        Ok(n as f64 / (n + rejected) as f64)
    }

    /// Writes mean, covariance rows and bounds as a small table.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "i0", "beta", "rho"])?;
        let m = self.mean();
        w.write_record(["mean".to_string(), fmt(m[0]), fmt(m[1]), fmt(m[2])])?;
        for (name, row) in ["cov_i0", "cov_beta", "cov_rho"].iter().zip(self.cov()) {
            w.write_record([name.to_string(), fmt(row[0]), fmt(row[1]), fmt(row[2])])?;
        }
        let b = self.bounds();
        w.write_record(["lower".to_string(), fmt(b[0].0), fmt(b[1].0), fmt(b[2].0)])?;
        w.write_record(["upper".to_string(), fmt(b[0].1), fmt(b[1].1), fmt(b[2].1)])?;
        w.flush().map_err(|e| Error::io("<prior writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, path: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut mean = None;
        let mut cov = [[f64::NAN; 3]; 3];
        for (n, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = (1..4)
                .map(|i| rec.get(i).and_then(|s| s.trim().parse().ok()))
                .collect::<Option<_>>()
                .ok_or_else(|| Error::parse(path, n + 2, "non-numeric prior entry"))?;
            match rec.get(0).unwrap_or("") {
                "mean" => mean = Some([vals[0], vals[1], vals[2]]),
                "cov_i0" => cov[0] = [vals[0], vals[1], vals[2]],
                "cov_beta" => cov[1] = [vals[0], vals[1], vals[2]],
                "cov_rho" => cov[2] = [vals[0], vals[1], vals[2]],
                _ => {}
            }
        }
        let mean = mean.ok_or_else(|| Error::parse(path, 0, "prior file has no mean row"))?;
        Self::new(mean, cov)
    }
}

fn fmt(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

/// Sample mean and covariance of the included fits (all but `exclude`).
pub fn fit_prior(fits: &[SeasonSirFit], exclude: Option<i32>) -> Result<TruncatedMvnPrior> {
    let triples: Vec<[f64; 3]> = fits.iter().filter(|f| Some(f.season) != exclude).map(SeasonSirFit::triple).collect();
    if triples.len() < MIN_PRIOR_FITS {
        return Err(Error::Domain(format!("{} fits available, need at least {MIN_PRIOR_FITS}", triples.len())));
    }
    let n = triples.len() as f64;
    let mut mean = Vector3::zeros();
    for t in &triples {
        mean += Vector3::from(*t) / n;
    }
    let mut cov = Matrix3::zeros();
    for t in &triples {
        let d = Vector3::from(*t) - mean;
        cov += d * d.transpose() / (n - 1.0);
    }
    match TruncatedMvnPrior::from_matrix(mean, cov) {
        Err(Error::SingularCovariance) => {
            let scale = cov.diagonal().mean();
            TruncatedMvnPrior::from_matrix(mean, cov + Matrix3::identity() * (COV_JITTER * scale))
        }
        other => other,
    }
}

pub fn write_fits_csv<W: Write>(fits: &[SeasonSirFit], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["season", "i0", "beta", "rho", "sse"])?;
    for f in fits {
        w.write_record([f.season.to_string(), fmt(f.params.i0()), fmt(f.params.beta()), fmt(f.params.rho()), fmt(f.sse)])?;
    }
    w.flush().map_err(|e| Error::io("<fits writer>", e))?;
    Ok(())
}

pub fn read_fits_csv<R: Read>(reader: R, path: &str) -> Result<Vec<SeasonSirFit>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = || Error::parse(path, n + 2, "malformed fits row");
        let season: i32 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: Vec<f64> = (1..5).map(|i| rec.get(i).and_then(|s| s.parse().ok())).collect::<Option<_>>().ok_or_else(bad)?;
        out.push(SeasonSirFit { season, params: sir_params(&[v[0], v[1], v[2]])?, sse: v[3] });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fit(season: i32, x: [f64; 3]) -> SeasonSirFit {
        SeasonSirFit { season, params: sir_params(&x).unwrap(), sse: 0.0 }
    }

    #[test]
    fn identical_fits_are_singular() {
        let fits: Vec<_> = (0..5).map(|s| fit(s, [0.005, 1.2, 0.8])).collect();
        assert!(matches!(fit_prior(&fits, None), Err(Error::SingularCovariance)));
    }

    #[test]
    fn too_few_fits_rejected() {
        let fits = vec![fit(1, [0.005, 1.2, 0.8]), fit(2, [0.004, 1.1, 0.7]), fit(3, [0.006, 1.3, 0.75])];
        assert!(fit_prior(&fits, Some(2)).is_err());
    }

    #[test]
    fn exclusion_drops_exactly_that_season() {
        let fits = vec![
            fit(2012, [0.004, 1.1, 0.81]),
            fit(2013, [0.006, 1.4, 0.84]),
            fit(2014, [0.003, 0.9, 0.78]),
            fit(2015, [0.009, 2.0, 0.70]),
            fit(2011, [0.005, 1.2, 0.83]),
        ];
        let with = fit_prior(&fits, Some(2015)).unwrap();
        let manual = fit_prior(&fits[..3].iter().chain(&fits[4..]).cloned().collect::<Vec<_>>(), None).unwrap();
        assert_eq!(with, manual);
        assert_ne!(with, fit_prior(&fits, None).unwrap());
    }

    #[test]
    fn draws_respect_bounds_and_point_mass_concentrates() {
        let prior = TruncatedMvnPrior::new([0.005, 1.2, 0.8], [[1e-5, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.01]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let x = prior.sample(&mut rng).unwrap();
            assert!(in_bounds(&x));
        }
        let tight = TruncatedMvnPrior::new([0.005, 1.2, 0.8], [[1e-14, 0.0, 0.0], [0.0, 1e-14, 0.0], [0.0, 0.0, 1e-14]]).unwrap();
        let x = tight.sample(&mut rng).unwrap();
        assert!((x[0] - 0.005).abs() < 1e-5 && (x[1] - 1.2).abs() < 1e-5 && (x[2] - 0.8).abs() < 1e-5);
        let p = tight.sample_params(&mut rng).unwrap();
        assert_eq!(p.s0(), 0.9);
        assert!((p.r0() - (1.0 - 0.9 - p.i0())).abs() < 1e-15);
    }

    #[test]
    fn degenerate_prior_exhausts_rejection() {
        let prior = TruncatedMvnPrior::new([0.5, 1.0, 0.5], [[1e-8, 0.0, 0.0], [0.0, 1e-8, 0.0], [0.0, 0.0, 1e-8]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(prior.sample(&mut rng), Err(Error::RejectionExhausted(_))));
    }

    #[test]
    fn density_outside_bounds_is_neg_inf() {
        let prior = TruncatedMvnPrior::new([0.005, 1.2, 0.8], [[1e-5, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.01]]).unwrap();
        assert_eq!(prior.ln_density(&[0.005, 1.2, 0.95]), f64::NEG_INFINITY);
        assert_eq!(prior.ln_density(&[0.0, 1.2, 0.5]), f64::NEG_INFINITY);
        assert!(prior.ln_density(&[0.005, 1.2, 0.8]).is_finite());
    }

    #[test]
    fn prior_file_round_trip() {
        let prior = TruncatedMvnPrior::new([0.005, 1.2, 0.8], [[1e-5, 1e-4, 0.0], [1e-4, 0.1, 0.003], [0.0, 0.003, 0.01]]).unwrap();
        let mut buf = Vec::new();
        prior.write_csv(&mut buf).unwrap();
        let back = TruncatedMvnPrior::read_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, prior);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("upper,0.1,inf,0.9"));
    }

    #[test]
    fn fits_table_columns() {
        let mut buf = Vec::new();
        write_fits_csv(&[fit(2015, [0.005, 1.2, 0.8])], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("season,i0,beta,rho,sse\n"));
        assert_eq!(read_fits_csv(buf.as_slice(), "mem").unwrap()[0].season, 2015);
    }

    #[test]
    fn fit_rejects_sparse_or_invalid_input() {
        let mut w = vec![None; 35];
        for v in w.iter_mut().take(9) {
            *v = Some(0.02);
        }
        assert!(matches!(fit_sir_to_season(1, &w), Err(Error::OptimizationFailed(_))));
    }
}
