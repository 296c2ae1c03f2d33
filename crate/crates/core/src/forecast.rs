//! Posterior-predictive trajectories, CDC targets and binned forecasts.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

use crate::data::{season_week_to_mmwr, SeasonPanel};
use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;

/// National ILI baseline used for onset.
pub const BASELINE: f64 = 0.021;
/// Forecasting window for the observed-through week.
pub const FIRST_FIT_WEEK: usize = 3;
pub const LAST_FIT_WEEK: usize = 30;
pub const MIN_SAMPLES: usize = 500;
pub const MAX_AHEAD: usize = 4;
pub const INTENSITY_BIN_WIDTH: f64 = 0.005;
/// Number of width-0.005 intensity bins below the catch-all.
pub const INTENSITY_REGULAR_BINS: usize = 26;
pub const INTENSITY_BINS: usize = INTENSITY_REGULAR_BINS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    PeakIntensity,
    PeakTiming,
    Onset,
    /// `k` weeks past the last observed week, `k` in 1..=4.
    Ahead(usize),
}

impl TargetKind {
    pub const ALL: [TargetKind; 7] = [
        TargetKind::PeakIntensity,
        TargetKind::PeakTiming,
        TargetKind::Onset,
        TargetKind::Ahead(1),
        TargetKind::Ahead(2),
        TargetKind::Ahead(3),
        TargetKind::Ahead(4),
    ];

    pub fn scheme(&self, weeks: usize) -> BinScheme {
        match self {
            TargetKind::PeakIntensity | TargetKind::Ahead(_) => BinScheme::Intensity,
            TargetKind::PeakTiming => BinScheme::Week { weeks },
            TargetKind::Onset => BinScheme::Onset { weeks },
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::PeakIntensity => f.write_str("PI"),
            TargetKind::PeakTiming => f.write_str("PT"),
            TargetKind::Onset => f.write_str("Onset"),
            TargetKind::Ahead(k) => write!(f, "{k}wk"),
        }
    }
}

impl FromStr for TargetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let lower = t.to_ascii_lowercase();
        match lower.as_str() {
            "pi" | "peak intensity" | "season peak percentage" => return Ok(Self::PeakIntensity),
            "pt" | "peak timing" | "season peak week" => return Ok(Self::PeakTiming),
            "onset" | "season onset" => return Ok(Self::Onset),
            _ => {}
        }
        let k = lower
            .strip_suffix("wk")
            .or_else(|| lower.strip_suffix(" wk ahead"))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .filter(|k| (1..=MAX_AHEAD).contains(k));
        k.map(Self::Ahead).ok_or_else(|| Error::Domain(format!("unknown target {t:?}")))
    }
}

/// Half-open bin layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinScheme {
    /// `[0, 0.005), ..., [0.125, 0.13)` plus the catch-all `[0.13, 1]`.
    Intensity,
    /// One bin per season week.
    Week { weeks: usize },
    /// One bin per season week plus a final "no onset" bin.
    Onset { weeks: usize },
}

impl BinScheme {
    pub fn len(&self) -> usize {
        match self {
            BinScheme::Intensity => INTENSITY_BINS,
            BinScheme::Week { weeks } => *weeks,
            BinScheme::Onset { weeks } => weeks + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether bin `i` has ordinal neighbors (everything except "no onset").
    pub fn is_ordinal(&self, i: usize) -> bool {
        !matches!(self, BinScheme::Onset { weeks } if i == *weeks)
    }

    /// Lower edge of intensity bin `k`.
    pub fn intensity_edge(k: usize) -> f64 {
        k as f64 / 200.0
    }

    /// Bin of an intensity value in `[0, 1]`.
    pub fn intensity_bin(v: f64) -> Option<usize> {
        if !(0.0..=1.0).contains(&v) {
            return None;
        }
        let mut k = ((v / INTENSITY_BIN_WIDTH).floor() as usize).min(INTENSITY_REGULAR_BINS);
        while k > 0 && v < Self::intensity_edge(k) {
            k -= 1;
        }
        while k < INTENSITY_REGULAR_BINS && v >= Self::intensity_edge(k + 1) {
            k += 1;
        }
        Some(k)
    }

    /// Bin of a 1-based season week, `None` meaning "no onset".
    pub fn week_bin(&self, week: Option<usize>) -> Option<usize> {
        match (self, week) {
            (BinScheme::Week { weeks }, Some(w)) | (BinScheme::Onset { weeks }, Some(w)) if (1..=*weeks).contains(&w) => {
                Some(w - 1)
            }
            (BinScheme::Onset { weeks }, None) => Some(*weeks),
            _ => None,
        }
    }
}

/// Target values of one full-season trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetValues {
    pub peak_intensity: f64,
    /// 1-based; earliest week on ties.
    pub peak_week: usize,
    pub onset: Option<usize>,
    /// Values at `observed_through + k`; `None` past the season end.
    pub ahead: [Option<f64>; MAX_AHEAD],
}

impl TargetValues {
    /// Bin index of `target`, or `None` when the target is undefined.
    pub fn bin(&self, target: TargetKind, weeks: usize) -> Option<usize> {
        let scheme = target.scheme(weeks);
        match target {
            TargetKind::PeakIntensity => BinScheme::intensity_bin(self.peak_intensity),
            TargetKind::PeakTiming => scheme.week_bin(Some(self.peak_week)),
            TargetKind::Onset => scheme.week_bin(self.onset),
            TargetKind::Ahead(k) => self.ahead.get(k - 1).copied().flatten().and_then(BinScheme::intensity_bin),
        }
    }
}

/// First week starting three consecutive weeks strictly above `baseline`.
pub fn onset_week(trajectory: &[f64], baseline: f64) -> Option<usize> {
    trajectory.windows(3).position(|w| w.iter().all(|&v| v > baseline)).map(|i| i + 1)
}

pub fn compute_targets(trajectory: &[f64], baseline: f64, observed_through: usize) -> TargetValues {
    let mut peak_week = 1;
    for (t, &v) in trajectory.iter().enumerate() {
        if v > trajectory[peak_week - 1] {
            peak_week = t + 1;
        }
    }
    let mut ahead = [None; MAX_AHEAD];
    for (k, slot) in ahead.iter_mut().enumerate() {
        *slot = trajectory.get(observed_through + k).copied();
    }
    TargetValues { peak_intensity: trajectory[peak_week - 1], peak_week, onset: onset_week(trajectory, baseline), ahead }
}

fn check_week(week: usize) -> Result<()> {
    if !(FIRST_FIT_WEEK..=LAST_FIT_WEEK).contains(&week) {
        return Err(Error::Config(format!("observed-through week {week} outside {FIRST_FIT_WEEK}..={LAST_FIT_WEEK}")));
    }
    Ok(())
}

/// Full-season predictive samples for one season, one per posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveTrajectorySet {
    pub season: i32,
    pub observed_through: usize,
    /// Which weeks were taken from the data rather than simulated.
    pub observed: Vec<bool>,
    pub samples: Vec<Vec<f64>>,
}

impl PredictiveTrajectorySet {
    pub fn weeks(&self) -> usize {
        self.observed.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sorted sample values at 1-based `week`.
    pub fn sorted_week(&self, week: usize) -> Vec<f64> {
        let mut v: Vec<f64> = self.samples.iter().map(|s| s[week - 1]).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Pointwise mean and equal-tailed interval at `level`.
    pub fn intervals(&self, level: f64) -> Vec<PointInterval> {
        let lo = (1.0 - level) / 2.0;
        (1..=self.weeks())
            .map(|week| {
                let v = self.sorted_week(week);
                PointInterval {
                    week,
                    observed: self.observed[week - 1],
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    lower: quantile(&v, lo),
                    upper: quantile(&v, 1.0 - lo),
                }
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h - h.floor());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointInterval {
    pub week: usize,
    pub observed: bool,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Simulates the unobserved weeks of `season` from every posterior draw.
///
/// `panel` must be the panel the draws were fit to (seasons in the same
/// order). Weeks `1..=observed_through` with data are copied; every other week
/// is drawn from the Beta observation model. Per-draw streams make the output
/// independent of thread scheduling.
pub fn predictive_simulate(
    draws: &PosteriorDraws,
    panel: &SeasonPanel,
    season: i32,
    observed_through: usize,
    lambda: f64,
    seed: u64,
) -> Result<PredictiveTrajectorySet> {
    check_week(observed_through)?;
    let j = panel.index_of(season).ok_or_else(|| Error::Domain(format!("season {season} not in panel")))?;
    if draws.seasons != panel.seasons() {
        return Err(Error::Domain("draws were fit to a different panel".into()));
    }
    let weeks = panel.weeks();
    let observed: Vec<bool> = (1..=weeks).map(|t| t <= observed_through && panel.get(j, t).is_some()).collect();
    let states: Vec<_> = draws.iter().collect();
    let samples = states
        .par_iter()
        .enumerate()
        .map(|(n, state)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            (1..=weeks)
                .map(|t| match (observed[t - 1], panel.get(j, t)) {
                    (true, Some(y)) => Ok(y),
                    _ => {
                        let pi = state.pi(j, t);
                        Beta::new(lambda * pi, lambda * (1.0 - pi))
                            .map(|b| b.sample(&mut rng))
                            .map_err(|e| Error::Domain(format!("predictive Beta at pi = {pi}: {e}")))
                    }
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveTrajectorySet { season, observed_through, observed, samples })
}

/// Probabilities over the bins of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedForecast {
    pub target: TargetKind,
    pub season: i32,
    /// Observed-through season week of the submission.
    pub submission_week: usize,
    pub scheme: BinScheme,
    pub probs: Vec<f64>,
}

/// Empirical bin frequencies of `target` over the samples.
///
/// `floor`, when set, adds that mass to every bin before renormalizing.
/// Returns `Ok(None)` for a k-week-ahead target past the season end.
pub fn bin_forecast(
    samples: &PredictiveTrajectorySet,
    target: TargetKind,
    baseline: f64,
    floor: Option<f64>,
) -> Result<Option<BinnedForecast>> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::Domain(format!("{} predictive samples, need at least {MIN_SAMPLES}", samples.len())));
    }
    let weeks = samples.weeks();
    if let TargetKind::Ahead(k) = target {
        if samples.observed_through + k > weeks {
            return Ok(None);
        }
    }
    let scheme = target.scheme(weeks);
    let mut counts = vec![0usize; scheme.len()];
    for s in &samples.samples {
        let t = compute_targets(s, baseline, samples.observed_through);
        let bin = t.bin(target, weeks).ok_or_else(|| Error::Domain(format!("sample value outside the {target} bins")))?;
        counts[bin] += 1;
    }
    let n = samples.len() as f64;
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    if let Some(eps) = floor.filter(|e| *e > 0.0) {
        let total = 1.0 + eps * probs.len() as f64;
        probs.iter_mut().for_each(|p| *p = (*p + eps) / total);
    }
    Ok(Some(BinnedForecast { target, season: samples.season, submission_week: samples.observed_through, scheme, probs }))
}

/// All defined targets for one submission.
pub fn bin_all(samples: &PredictiveTrajectorySet, baseline: f64, floor: Option<f64>) -> Result<Vec<BinnedForecast>> {
    let mut out = Vec::with_capacity(TargetKind::ALL.len());
    for target in TargetKind::ALL {
        if let Some(f) = bin_forecast(samples, target, baseline, floor)? {
            out.push(f);
        }
    }
    Ok(out)
}

/// Bin labels as written in submissions: intensity edges, MMWR weeks, or `none`.
pub fn bin_labels(scheme: BinScheme, season: i32, bin: usize) -> Result<(String, String)> {
    match scheme {
        BinScheme::Intensity => {
            if bin < INTENSITY_REGULAR_BINS {
                Ok((format!("{:.3}", BinScheme::intensity_edge(bin)), format!("{:.3}", BinScheme::intensity_edge(bin + 1))))
            } else {
                Ok((format!("{:.3}", BinScheme::intensity_edge(INTENSITY_REGULAR_BINS)), "1.000".into()))
            }
        }
        BinScheme::Onset { weeks } if bin == weeks => Ok(("none".into(), "none".into())),
        BinScheme::Week { .. } | BinScheme::Onset { .. } => {
            let start = season_week_to_mmwr(season, bin + 1)?;
            let end = season_week_to_mmwr(season, bin + 2).unwrap_or_else(|_| start.offset(1));
            Ok((start.week.to_string(), end.week.to_string()))
        }
    }
}

/// Submission table: target, bin_start, bin_end, probability.
pub fn write_submission<W: Write>(forecasts: &[BinnedForecast], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "bin_start", "bin_end", "probability"])?;
    for f in forecasts {
        for (i, p) in f.probs.iter().enumerate() {
            let (lo, hi) = bin_labels(f.scheme, f.season, i)?;
            w.write_record([f.target.to_string(), lo, hi, format!("{p}")])?;
        }
    }
    w.flush().map_err(|e| Error::io("<submission writer>", e))?;
    Ok(())
}

/// Interval table: week, observed, mean, lower, upper.
pub fn write_intervals<W: Write>(intervals: &[PointInterval], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["week", "observed", "mean", "lower", "upper"])?;
    for i in intervals {
        w.write_record([i.week.to_string(), i.observed.to_string(), format!("{}", i.mean), format!("{}", i.lower), format!("{}", i.upper)])?;
    }
    w.flush().map_err(|e| Error::io("<interval writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(samples: Vec<Vec<f64>>, through: usize) -> PredictiveTrajectorySet {
        let weeks = samples[0].len();
        PredictiveTrajectorySet { season: 2015, observed_through: through, observed: vec![false; weeks], samples }
    }

    #[test]
    fn onset_needs_three_strict_exceedances() {
        assert_eq!(onset_week(&[0.01; 35], BASELINE), None);
        let mut x = vec![0.01; 35];
        x[4] = 0.03;
        x[5] = 0.03;
        assert_eq!(onset_week(&x, BASELINE), None);
        x[6] = 0.021;
        assert_eq!(onset_week(&x, BASELINE), None);
        x[6] = 0.0211;
        assert_eq!(onset_week(&x, BASELINE), Some(5));
    }

    #[test]
    fn peak_ties_take_the_earliest_week() {
        let mut x = vec![0.01; 35];
        x[9] = 0.05;
        x[19] = 0.05;
        let t = compute_targets(&x, BASELINE, 33);
        assert_eq!((t.peak_week, t.peak_intensity), (10, 0.05));
        assert_eq!(t.ahead, [Some(0.01), Some(0.01), None, None]);
    }

    #[test]
    fn intensity_bins_cover_unit_interval() {
        assert_eq!(BinScheme::intensity_bin(0.0), Some(0));
        assert_eq!(BinScheme::intensity_bin(0.0312), Some(6));
        assert_eq!(BinScheme::intensity_bin(0.03), Some(6));
        assert_eq!(BinScheme::intensity_bin(0.13), Some(26));
        assert_eq!(BinScheme::intensity_bin(1.0), Some(26));
        assert_eq!(BinScheme::intensity_bin(0.1299999), Some(25));
        assert_eq!(BinScheme::intensity_bin(-0.1), None);
    }

    #[test]
    fn point_mass_peak() {
        let s = set(vec![(0..35).map(|t| if t == 12 { 0.0312 } else { 0.01 }).collect(); 600], 5);
        let f = bin_forecast(&s, TargetKind::PeakIntensity, BASELINE, None).unwrap().unwrap();
        assert_eq!(f.probs.len(), 27);
        assert_eq!(f.probs[6], 1.0);
        let all = bin_all(&s, BASELINE, None).unwrap();
        assert_eq!(all.len(), 7);
        for f in &all {
            assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(all.iter().find(|f| f.target == TargetKind::Onset).unwrap().probs.len(), 36);
        assert_eq!(all.iter().find(|f| f.target == TargetKind::PeakTiming).unwrap().probs.len(), 35);
    }

    #[test]
    fn too_few_samples_and_late_ahead_targets() {
        assert!(bin_forecast(&set(vec![vec![0.01; 35]; 10], 5), TargetKind::PeakIntensity, BASELINE, None).is_err());
        let s = set(vec![vec![0.01; 35]; 500], 32);
        assert!(bin_forecast(&s, TargetKind::Ahead(4), BASELINE, None).unwrap().is_none());
        assert!(bin_forecast(&s, TargetKind::Ahead(3), BASELINE, None).unwrap().is_some());
    }

    #[test]
    fn floor_keeps_normalization() {
        let s = set(vec![vec![0.01; 35]; 500], 5);
        let f = bin_forecast(&s, TargetKind::PeakTiming, BASELINE, Some(1e-3)).unwrap().unwrap();
        assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn target_names_round_trip() {
        for t in TargetKind::ALL {
            assert_eq!(t.to_string().parse::<TargetKind>().unwrap(), t);
        }
        assert_eq!("1 wk ahead".parse::<TargetKind>().unwrap(), TargetKind::Ahead(1));
        assert!("5wk".parse::<TargetKind>().is_err());
    }

    #[test]
    fn labels_use_mmwr_weeks() {
        let s = BinScheme::Week { weeks: 35 };
        assert_eq!(bin_labels(s, 2015, 0).unwrap(), ("40".to_string(), "41".to_string()));
        assert_eq!(bin_labels(BinScheme::Onset { weeks: 35 }, 2015, 35).unwrap().0, "none");
        assert_eq!(bin_labels(BinScheme::Intensity, 2015, 26).unwrap(), ("0.130".to_string(), "1.000".to_string()));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
