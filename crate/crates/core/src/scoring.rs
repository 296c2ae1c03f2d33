//! Challenge log score with neighbor-bin credit and the -10 floor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use crate::data::mmwr_to_season_week;
use crate::error::{Error, Result};
use crate::forecast::{compute_targets, BinScheme, BinnedForecast, TargetKind, INTENSITY_BIN_WIDTH, INTENSITY_REGULAR_BINS};
use crate::num::Real;

pub const SCORE_FLOOR: f64 = -10.0;
/// Submissions whose probabilities sum past this are invalid.
pub const MAX_TOTAL: f64 = 1.1;

/// Why a score took the floor value, or a note on how it was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFlag {
    ZeroMass,
    ExcessTotal,
    NegativeEntry,
    Late,
    /// Truth was "no onset", credited without neighbors.
    NoOnsetExact,
}

impl fmt::Display for ScoreFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreFlag::ZeroMass => "zero_mass",
            ScoreFlag::ExcessTotal => "excess_total",
            ScoreFlag::NegativeEntry => "negative_entry",
            ScoreFlag::Late => "late",
            ScoreFlag::NoOnsetExact => "no_onset_exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogScore<T> {
    pub value: T,
    pub flag: Option<ScoreFlag>,
}

/// `ln(p[i-1] + p[i] + p[i+1])` with neighbors clipped to `range`, floored at -10.
pub fn log_score_in<T: Real>(probs: &[T], truth: usize, range: std::ops::Range<usize>) -> Result<LogScore<T>> {
    if truth >= probs.len() || !range.contains(&truth) || range.end > probs.len() {
        return Err(Error::Domain(format!("truth bin {truth} outside {} bins", probs.len())));
    }
    let floor = |flag| Ok(LogScore { value: T::lit(SCORE_FLOOR), flag: Some(flag) });
    if probs.iter().any(|p| *p < T::zero() || p.is_nan()) {
        return floor(ScoreFlag::NegativeEntry);
    }
    if probs.iter().copied().sum::<T>() > T::lit(MAX_TOTAL) {
        return floor(ScoreFlag::ExcessTotal);
    }
    let lo = truth.saturating_sub(1).max(range.start);
    let hi = (truth + 2).min(range.end);
    let mass: T = probs[lo..hi].iter().copied().sum();
    if !(mass > T::zero()) {
        return floor(ScoreFlag::ZeroMass);
    }
    Ok(LogScore { value: mass.ln().max(T::lit(SCORE_FLOOR)), flag: None })
}

/// Log score with neighbors clipped to the ends of the vector.
pub fn log_score<T: Real>(probs: &[T], truth: usize) -> Result<LogScore<T>> {
    log_score_in(probs, truth, 0..probs.len())
}

/// Scores one forecast under its bin scheme; "no onset" gets no neighbors
/// and is never a neighbor of a week bin.
pub fn score_forecast(forecast: &BinnedForecast, truth: usize, late: bool) -> Result<LogScore<f64>> {
    if late {
        return Ok(LogScore { value: SCORE_FLOOR, flag: Some(ScoreFlag::Late) });
    }
    match forecast.scheme {
        BinScheme::Onset { weeks } if truth == weeks => {
            let s = log_score_in(&forecast.probs, truth, truth..truth + 1)?;
            Ok(LogScore { flag: s.flag.or(Some(ScoreFlag::NoOnsetExact)), ..s })
        }
        BinScheme::Onset { weeks } => log_score_in(&forecast.probs, truth, 0..weeks),
        _ => log_score(&forecast.probs, truth),
    }
}

/// Final-data target values of one season.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonTruth {
    pub season: i32,
    pub values: Vec<f64>,
    pub baseline: f64,
}

impl SeasonTruth {
    /// Truth bin for `target` submitted after `week`; `None` when undefined.
    pub fn bin(&self, target: TargetKind, week: usize) -> Option<usize> {
        compute_targets(&self.values, self.baseline, week).bin(target, self.values.len())
    }
}

/// Requires a complete season.
pub fn resolve_truth(season: i32, final_values: &[Option<f64>], baseline: f64) -> Result<SeasonTruth> {
    let missing: Vec<usize> = final_values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(t, _)| t + 1).collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteSeason { season, missing });
    }
    Ok(SeasonTruth { season, values: final_values.iter().flatten().copied().collect(), baseline })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub model: String,
    pub season: i32,
    pub submission_week: usize,
    pub target: TargetKind,
    pub log_score: f64,
    pub truth_bin: usize,
    pub flag: Option<ScoreFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub records: Vec<ScoreRecord>,
    pub per_target: BTreeMap<TargetKind, f64>,
    /// Mean of the per-target means.
    pub overall: f64,
}

/// Scores a model's submissions for one season.
///
/// Every `(target, week)` in `late` scores -10 whether or not a forecast is present.
pub fn score_submission_set(
    model: &str,
    submissions: &[BinnedForecast],
    truth: &SeasonTruth,
    late: &[(TargetKind, usize)],
) -> Result<ScoreSummary> {
    let late: BTreeSet<_> = late.iter().copied().collect();
    let mut records = Vec::with_capacity(submissions.len() + late.len());
    let mut seen = BTreeSet::new();
    for f in submissions {
        let key = (f.target, f.submission_week);
        let truth_bin = truth
            .bin(f.target, f.submission_week)
            .ok_or_else(|| Error::MissingTruth(format!("{} after week {} of {}", f.target, f.submission_week, truth.season)))?;
        let s = score_forecast(f, truth_bin, late.contains(&key))?;
        seen.insert(key);
        records.push(ScoreRecord {
            model: model.to_string(),
            season: truth.season,
            submission_week: f.submission_week,
            target: f.target,
            log_score: s.value,
            truth_bin,
            flag: s.flag,
        });
    }
    for &(target, week) in late.difference(&seen) {
        let truth_bin =
            truth.bin(target, week).ok_or_else(|| Error::MissingTruth(format!("{target} after week {week} of {}", truth.season)))?;
        records.push(ScoreRecord {
            model: model.to_string(),
            season: truth.season,
            submission_week: week,
            target,
            log_score: SCORE_FLOOR,
            truth_bin,
            flag: Some(ScoreFlag::Late),
        });
    }
    let mut sums: BTreeMap<TargetKind, (f64, usize)> = BTreeMap::new();
    for r in &records {
        let e = sums.entry(r.target).or_default();
        e.0 += r.log_score;
        e.1 += 1;
    }
    let per_target: BTreeMap<_, _> = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let overall = if per_target.is_empty() { f64::NAN } else { per_target.values().sum::<f64>() / per_target.len() as f64 };
    Ok(ScoreSummary { records, per_target, overall })
}

pub fn write_scores<W: Write>(records: &[ScoreRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "season", "week", "target", "log_score", "truth_bin", "flag"])?;
    for r in records {
        w.write_record([
            r.model.clone(),
            r.season.to_string(),
            r.submission_week.to_string(),
            r.target.to_string(),
            format!("{}", r.log_score),
            r.truth_bin.to_string(),
            r.flag.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<score writer>", e))?;
    Ok(())
}

/// Per-target and overall means: model, target, mean_log_score.
pub fn write_summary<W: Write>(summaries: &[(String, ScoreSummary)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "target", "mean_log_score"])?;
    for (model, s) in summaries {
        for (t, v) in &s.per_target {
            w.write_record([model.clone(), t.to_string(), format!("{v}")])?;
        }
        w.write_record([model.clone(), "overall".to_string(), format!("{}", s.overall)])?;
    }
    w.flush().map_err(|e| Error::io("<summary writer>", e))?;
    Ok(())
}

/// Reads external submissions: model, week, target, bin_start, bin_end, probability.
///
/// `week` is the season week the submission was made after. Week bins are
/// labeled by MMWR week; intensity edges may be proportions or percentages.
pub fn read_submissions<R: Read>(reader: R, path: &str, season: i32, weeks: usize) -> Result<Vec<(String, BinnedForecast)>> {
    parse_submissions(reader, path, season, weeks, None)
}

/// Reads one cell's own submission file, which has no model or week column.
pub fn read_cell_submission<R: Read>(reader: R, path: &str, season: i32, week: usize, weeks: usize) -> Result<Vec<BinnedForecast>> {
    Ok(parse_submissions(reader, path, season, weeks, Some(week))?.into_iter().map(|(_, f)| f).collect())
}

fn parse_submissions<R: Read>(
    reader: R,
    path: &str,
    season: i32,
    weeks: usize,
    fixed_week: Option<usize>,
) -> Result<Vec<(String, BinnedForecast)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(path, 1, format!("missing column {name}")))
    };
    let (ct, cs, cp) = (col("target")?, col("bin_start")?, col("probability")?);
    let (cm, cw) = match fixed_week {
        Some(_) => (None, None),
        None => (Some(col("model")?), Some(col("week")?)),
    };
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let field = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let week: usize = match (cw, fixed_week) {
            (Some(c), _) => field(c).parse().map_err(|_| Error::parse(path, line, "bad week"))?,
            (None, w) => w.unwrap_or_default(),
        };
        let model = cm.map(field).unwrap_or_default();
        let target: TargetKind = field(ct).parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        let p: f64 = field(cp).parse().map_err(|_| Error::parse(path, line, "bad probability"))?;
        rows.push((line, model, week, target, field(cs), p));
    }
    let percent = rows
        .iter()
        .filter(|r| matches!(r.3, TargetKind::PeakIntensity | TargetKind::Ahead(_)))
        .filter_map(|r| r.4.parse::<f64>().ok())
        .any(|v| v > 0.13 + 1e-9);
    let mut grouped: BTreeMap<(String, TargetKind, usize), Vec<f64>> = BTreeMap::new();
    for (line, model, week, target, start, p) in rows {
        let scheme = target.scheme(weeks);
        let bin = match scheme {
            BinScheme::Intensity => {
                let mut v: f64 = start.parse().map_err(|_| Error::parse(path, line, "bad bin_start"))?;
                if percent {
                    v /= 100.0;
                }
                ((v / INTENSITY_BIN_WIDTH).round() as usize).min(INTENSITY_REGULAR_BINS)
            }
            _ if start.eq_ignore_ascii_case("none") => {
                scheme.week_bin(None).ok_or_else(|| Error::parse(path, line, "\"none\" only valid for onset"))?
            }
            _ => {
                let mmwr: u32 = start.parse().map_err(|_| Error::parse(path, line, "bad week bin"))?;
                let year = if mmwr >= 40 { season } else { season + 1 };
                let (s, w) = mmwr_to_season_week(year, mmwr)?;
                if s != season {
                    return Err(Error::parse(path, line, format!("MMWR week {mmwr} outside season {season}")));
                }
                scheme.week_bin(Some(w)).ok_or_else(|| Error::parse(path, line, format!("week {w} outside the season")))?
            }
        };
        let probs = grouped.entry((model, target, week)).or_insert_with(|| vec![0.0; scheme.len()]);
        probs[bin] += p;
    }
    Ok(grouped
        .into_iter()
        .map(|((model, target, week), probs)| {
            (model, BinnedForecast { target, season, submission_week: week, scheme: target.scheme(weeks), probs })
        })
        .collect())
}
