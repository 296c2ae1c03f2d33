//! Leave-one-season-out sequential backtests, coverage tables and the
//! season-typicality diagnostic.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{season_week_to_mmwr, SeasonPanel, VintageStore};
use crate::error::{Error, Result};
use crate::forecast::{
    bin_all, predictive_simulate, quantile, write_intervals, write_submission, PointInterval, PredictiveTrajectorySet,
    BASELINE, FIRST_FIT_WEEK, LAST_FIT_WEEK,
};
use crate::mcmc::{sample_posterior, PosteriorDraws, SamplerConfig};
use crate::model::DataModelConfig;
use crate::priors::{fit_prior, fit_sir_to_season, SeasonSirFit, TruncatedMvnPrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VintagePolicy {
    /// Latest revision of every week.
    #[default]
    Final,
    /// The snapshot published at each submission week.
    Faithful,
}

impl FromStr for VintagePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "final" => Ok(Self::Final),
            "faithful" => Ok(Self::Faithful),
            other => Err(Error::Config(format!("unknown vintage policy {other:?}"))),
        }
    }
}

/// Where each cell's SIR prior comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorPolicy {
    /// Refit from every other season of the cell's panel.
    Refit,
    Fixed(TruncatedMvnPrior),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestPlan {
    pub seasons: Vec<i32>,
    pub first_week: usize,
    pub last_week: usize,
    pub sampler: SamplerConfig,
    pub model: DataModelConfig,
    pub vintage: VintagePolicy,
    /// Pointwise predictive interval level.
    pub level: f64,
    pub baseline: f64,
    /// Optional probability floor for submissions.
    pub floor: Option<f64>,
    /// Cells run concurrently.
    pub workers: usize,
}

impl BacktestPlan {
    pub fn new(seasons: Vec<i32>, sampler: SamplerConfig) -> Self {
        Self {
            seasons,
            first_week: FIRST_FIT_WEEK,
            last_week: LAST_FIT_WEEK,
            sampler,
            model: DataModelConfig::default(),
            vintage: VintagePolicy::Final,
            level: 0.95,
            baseline: BASELINE,
            floor: None,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.first_week < FIRST_FIT_WEEK || self.last_week > LAST_FIT_WEEK || self.first_week > self.last_week {
            return Err(Error::Config(format!(
                "week range {}..={} must lie within {FIRST_FIT_WEEK}..={LAST_FIT_WEEK}",
                self.first_week, self.last_week
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("interval level {} not in (0, 1)", self.level)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        self.sampler.validate()?;
        self.model.validate()
    }

    /// Every (season, week) cell in run order.
    pub fn cells(&self) -> Vec<(i32, usize)> {
        self.seasons.iter().flat_map(|&s| (self.first_week..=self.last_week).map(move |w| (s, w))).collect()
    }
}

/// Reproducible per-cell seed: SplitMix64 over `(base, season, week)`.
pub fn cell_seed(base: u64, season: i32, week: usize) -> u64 {
    let mut x = base;
    for v in [season as i64 as u64, week as u64] {
        x = splitmix(x ^ splitmix(v));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn cell_dir(out: &Path, season: i32, week: usize) -> PathBuf {
    out.join("cells").join(season.to_string()).join(format!("w{week:02}"))
}

/// Training panel of one cell: every season, with the target cut after `week`.
pub fn cell_panel(store: &VintageStore, policy: VintagePolicy, season: i32, week: usize) -> Result<SeasonPanel> {
    let panel = match policy {
        VintagePolicy::Final => store.final_panel(),
        VintagePolicy::Faithful => store.snapshot(season_week_to_mmwr(season, week)?),
    };
    if panel.index_of(season).is_none() {
        return Err(Error::Domain(format!("season {season} has no data in the cell panel")));
    }
    Ok(panel.masked(season, week))
}

/// SIR fits of every season except `exclude`; seasons that cannot be fit are skipped.
pub fn fits_excluding(panel: &SeasonPanel, exclude: i32) -> Vec<SeasonSirFit> {
    panel
        .seasons()
        .par_iter()
        .enumerate()
        .filter(|(_, &s)| s != exclude)
        .filter_map(|(j, &s)| fit_sir_to_season(s, panel.season_values(j)).ok())
        .collect()
}

/// Everything produced for one cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub season: i32,
    pub week: usize,
    pub draws: PosteriorDraws,
    pub predictive: PredictiveTrajectorySet,
}

/// Fits one cell and simulates its predictive trajectories.
pub fn run_cell(
    plan: &BacktestPlan,
    store: &VintageStore,
    prior: &PriorPolicy,
    season: i32,
    week: usize,
) -> Result<CellOutput> {
    let panel = cell_panel(store, plan.vintage, season, week)?;
    let prior = match prior {
        PriorPolicy::Fixed(p) => p.clone(),
        PriorPolicy::Refit => fit_prior(&fits_excluding(&panel, season), Some(season))?,
    };
    let seed = cell_seed(plan.sampler.seed, season, week);
    let sampler = SamplerConfig { seed, ..plan.sampler.clone() };
    let draws = sample_posterior(&panel, &prior, &plan.model, &sampler)?;
    let predictive = predictive_simulate(&draws, &panel, season, week, plan.model.lambda, seed.rotate_left(17))?;
    Ok(CellOutput { season, week, draws, predictive })
}

/// Writes a cell atomically: into a sibling temporary directory, then renamed.
pub fn write_cell(plan: &BacktestPlan, cell: &CellOutput, out: &Path) -> Result<()> {
    let dir = cell_dir(out, cell.season, cell.week);
    let parent = dir.parent().expect("cell dir has a parent");
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = parent.join(format!(".{}.tmp{}", dir.file_name().unwrap().to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let create = |name: &str| {
        let p = tmp.join(name);
        fs::File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(&p, e))
    };
    let forecasts = bin_all(&cell.predictive, plan.baseline, plan.floor)?;
    write_submission(&forecasts, create("submission.csv")?)?;
    write_intervals(&cell.predictive.intervals(plan.level), create("intervals.csv")?)?;
    cell.draws.write_report(create("report.txt")?)?;
    write_posterior_summary(&cell.draws, plan.level, create("posterior_summary.csv")?)?;
    fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
    Ok(())
}

/// Mean and equal-tailed interval of every scalar: name, mean, lower, upper.
pub fn write_posterior_summary<W: Write>(draws: &PosteriorDraws, level: f64, writer: W) -> Result<()> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for state in draws.iter() {
        for (name, v) in state.scalars(&draws.seasons) {
            let col = columns.entry(name.clone()).or_insert_with(|| {
                order.push(name);
                Vec::new()
            });
            col.push(v);
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "mean", "lower", "upper"])?;
    let lo = (1.0 - level) / 2.0;
    for name in order {
        let mut v = columns.remove(&name).unwrap_or_default();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        w.write_record([name, format!("{mean}"), format!("{}", quantile(&v, lo)), format!("{}", quantile(&v, 1.0 - lo))])?;
    }
    w.flush().map_err(|e| Error::io("<summary writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BacktestSummary {
    pub completed: Vec<(i32, usize)>,
    /// Cells already present from an earlier run.
    pub skipped: Vec<(i32, usize)>,
    pub failed: Vec<(i32, usize, String)>,
}

/// Runs every missing cell of the plan, recording failures without stopping.
pub fn run_backtest(plan: &BacktestPlan, store: &VintageStore, prior: &PriorPolicy, out: &Path) -> Result<BacktestSummary> {
    plan.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let (todo, skipped): (Vec<_>, Vec<_>) = plan.cells().into_iter().partition(|&(s, w)| !cell_dir(out, s, w).exists());
    let results: Vec<((i32, usize), Result<()>)> = pool.install(|| {
        todo.par_iter()
            .map(|&(s, w)| ((s, w), run_cell(plan, store, prior, s, w).and_then(|c| write_cell(plan, &c, out))))
            .collect()
    });
    let mut summary = BacktestSummary { skipped, ..Default::default() };
    for (cell, r) in results {
        match r {
            Ok(()) => summary.completed.push(cell),
            Err(e) => summary.failed.push((cell.0, cell.1, e.to_string())),
        }
    }
    let path = out.join("failures.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["season", "week", "error"])?;
    for (s, wk, e) in &summary.failed {
        w.write_record([s.to_string(), wk.to_string(), e.clone()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Reads a cell's interval table.
pub fn read_intervals(path: &Path) -> Result<Vec<PointInterval>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let p = path.display().to_string();
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| Error::parse(&p, n + 2, format!("bad column {i}")))
        };
        out.push(PointInterval {
            week: num(0)? as usize,
            observed: rec.get(1) == Some("true"),
            mean: num(2)?,
            lower: num(3)?,
            upper: num(4)?,
        })
    }
    Ok(out)
}

/// One pointwise forecast checked against final data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRecord {
    pub season: i32,
    pub fit_week: usize,
    pub target_week: usize,
    pub lower: f64,
    pub upper: f64,
    pub truth: f64,
    pub covered: bool,
}

impl CoverageRecord {
    pub fn weeks_ahead(&self) -> usize {
        self.target_week - self.fit_week
    }
}

/// Forecasts for every week after the fit week that has a final value.
pub fn coverage_records(season: i32, fit_week: usize, intervals: &[PointInterval], truth: &[Option<f64>]) -> Vec<CoverageRecord> {
    intervals
        .iter()
        .filter(|i| i.week > fit_week)
        .filter_map(|i| {
            truth.get(i.week - 1).copied().flatten().map(|y| CoverageRecord {
                season,
                fit_week,
                target_week: i.week,
                lower: i.lower,
                upper: i.upper,
                truth: y,
                covered: i.lower <= y && y <= i.upper,
            })
        })
        .collect()
}

/// Equal-tailed predictive intervals of an in-memory set at `level`.
pub fn coverage_from_set(set: &PredictiveTrajectorySet, truth: &[Option<f64>], level: f64) -> Vec<CoverageRecord> {
    coverage_records(set.season, set.observed_through, &set.intervals(level), truth)
}

/// Coverage records for every completed cell under `out`.
pub fn collect_coverage(plan: &BacktestPlan, out: &Path, final_panel: &SeasonPanel) -> Result<Vec<CoverageRecord>> {
    let mut records = Vec::new();
    for (season, week) in plan.cells() {
        let path = cell_dir(out, season, week).join("intervals.csv");
        if !path.exists() {
            continue;
        }
        let truth = final_panel.values_for(season).ok_or_else(|| Error::MissingTruth(format!("season {season}")))?;
        records.extend(coverage_records(season, week, &read_intervals(&path)?, truth));
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Rate {
    pub covered: usize,
    pub total: usize,
}

impl Rate {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }

    fn add(&mut self, covered: bool) {
        self.total += 1;
        self.covered += covered as usize;
    }
}

/// Coverage overall and by the four partitionings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoverageReport {
    pub overall: Rate,
    pub by_season: BTreeMap<i32, Rate>,
    pub by_target_week: BTreeMap<usize, Rate>,
    pub by_fit_week: BTreeMap<usize, Rate>,
    pub by_weeks_ahead: BTreeMap<usize, Rate>,
}

pub fn coverage_report(records: &[CoverageRecord]) -> CoverageReport {
    let mut r = CoverageReport::default();
    for c in records {
        r.overall.add(c.covered);
        r.by_season.entry(c.season).or_default().add(c.covered);
        r.by_target_week.entry(c.target_week).or_default().add(c.covered);
        r.by_fit_week.entry(c.fit_week).or_default().add(c.covered);
        r.by_weeks_ahead.entry(c.weeks_ahead()).or_default().add(c.covered);
    }
    r
}

impl CoverageReport {
    /// Writes `coverage_<partition>.csv` files and `coverage_overall.csv` into `dir`.
    pub fn write_tables(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let table = |name: &str, key: &str, rows: Vec<(String, Rate)>| -> Result<()> {
            let path = dir.join(format!("coverage_{name}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([key, "covered", "total", "rate"])?;
            for (k, r) in rows {
                w.write_record([k, r.covered.to_string(), r.total.to_string(), format!("{}", r.rate())])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        let rows = |m: &BTreeMap<usize, Rate>| m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        table("season", "season", self.by_season.iter().map(|(k, v)| (k.to_string(), *v)).collect())?;
        table("target_week", "target_week", rows(&self.by_target_week))?;
        table("fit_week", "fit_week", rows(&self.by_fit_week))?;
        table("weeks_ahead", "weeks_ahead", rows(&self.by_weeks_ahead))?;
        table("overall", "scope", vec![("overall".into(), self.overall)])
    }
}

/// Pointwise forecasts a season contributes: one per later week with a final value.
pub fn expected_forecasts(first_week: usize, last_week: usize, available_weeks: usize) -> usize {
    (first_week..=last_week).map(|w| available_weeks.saturating_sub(w)).sum()
}

/// Per-season MSE against the week-wise mean of the other seasons, most atypical first.
pub fn mse_typicality(panel: &SeasonPanel) -> Result<Vec<(i32, f64)>> {
    check_typicality_input(panel)?;
    let weeks = panel.weeks();
    let mut sum = vec![0.0; weeks];
    let mut count = vec![0usize; weeks];
    for j in 0..panel.n_seasons() {
        for (t, v) in panel.season_values(j).iter().enumerate() {
            if let Some(v) = v {
                sum[t] += v;
                count[t] += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(panel.n_seasons());
    for (j, &season) in panel.seasons().iter().enumerate() {
        let (se, n) = panel
            .season_values(j)
            .iter()
            .enumerate()
            .filter_map(|(t, v)| v.filter(|_| count[t] > 1).map(|y| (y - (sum[t] - y) / (count[t] - 1) as f64).powi(2)))
            .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
        out.push((season, if n == 0 { f64::NAN } else { se / n as f64 }));
    }
    sort_desc(&mut out);
    Ok(out)
}

/// Direct double-loop version of [`mse_typicality`].
pub fn mse_typicality_loop(panel: &SeasonPanel) -> Result<Vec<(i32, f64)>> {
    check_typicality_input(panel)?;
    let mut out = Vec::new();
    for (j, &season) in panel.seasons().iter().enumerate() {
        let mut se = 0.0;
        let mut n = 0;
        for week in 1..=panel.weeks() {
            let Some(y) = panel.get(j, week) else { continue };
            let others: Vec<f64> = (0..panel.n_seasons()).filter(|&k| k != j).filter_map(|k| panel.get(k, week)).collect();
            if others.is_empty() {
                continue;
            }
            let avg = others.iter().sum::<f64>() / others.len() as f64;
            se += (y - avg) * (y - avg);
            n += 1;
        }
        out.push((season, if n == 0 { f64::NAN } else { se / n as f64 }));
    }
    sort_desc(&mut out);
    Ok(out)
}

fn check_typicality_input(panel: &SeasonPanel) -> Result<()> {
    if panel.n_seasons() < 3 {
        return Err(Error::Domain(format!("typicality needs at least 3 seasons, got {}", panel.n_seasons())));
    }
    Ok(())
}

fn sort_desc(v: &mut [(i32, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}
