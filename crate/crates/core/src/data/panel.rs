//! Season-by-week wILI panels, revision snapshots, and their tabular file format.
//!
//! File format: comma-delimited with a header. Columns, by name:
//!
//! * `season,week` (season week, 1-based) **or** `year,mmwr_week` **or** `epiweek` (`YYYYWW`)
//! * `wili` (proportion, or percent auto-detected when any value exceeds 1),
//!   `wili_percent` / `wili_pct` (always percent)
//! * optional `issue` (`YYYYWW` of the release the row was published in)
//!
//! Empty or `NA` values load as missing. Proportions are the internal unit.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::data::calendar::{mmwr_to_season_week, Epiweek, SEASON_WEEKS};
use crate::error::{Error, Result};

/// Observed values of exactly 0 or 1 are moved this far inside the unit interval.
pub const BOUNDARY_CLAMP: f64 = 1e-6;

/// Seasons dropped by default (pandemic H1N1).
pub const PANDEMIC_SEASONS: [i32; 2] = [2008, 2009];

/// wILI by season and season week, with missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonPanel {
    weeks: usize,
    seasons: Vec<i32>,
    values: Vec<Vec<Option<f64>>>,
    vintage: Option<Epiweek>,
}

impl SeasonPanel {
    pub fn new(weeks: usize) -> Self {
        Self { weeks, seasons: Vec::new(), values: Vec::new(), vintage: None }
    }

    /// Builds a panel from complete rows; `values[j]` must have length `weeks`.
    pub fn from_rows(weeks: usize, rows: Vec<(i32, Vec<Option<f64>>)>) -> Result<Self> {
        let mut panel = Self::new(weeks);
        for (season, vals) in rows {
            panel.insert_season(season, vals)?;
        }
        Ok(panel)
    }

    /// Adds (or replaces) a season. Values are validated and boundary-clamped.
    pub fn insert_season(&mut self, season: i32, mut vals: Vec<Option<f64>>) -> Result<()> {
        if vals.len() != self.weeks {
            return Err(Error::Domain(format!(
                "season {season} has {} weeks, panel expects {}",
                vals.len(),
                self.weeks
            )));
        }
        for (t, v) in vals.iter_mut().enumerate() {
            if let Some(x) = v {
                *x = validate_value(*x).map_err(|m| Error::Domain(format!("season {season} week {}: {m}", t + 1)))?;
            }
        }
        match self.seasons.binary_search(&season) {
            Ok(idx) => self.values[idx] = vals,
            Err(idx) => {
                self.seasons.insert(idx, season);
                self.values.insert(idx, vals);
            }
        }
        Ok(())
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn seasons(&self) -> &[i32] {
        &self.seasons
    }

    pub fn n_seasons(&self) -> usize {
        self.seasons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seasons.is_empty()
    }

    pub fn vintage(&self) -> Option<Epiweek> {
        self.vintage
    }

    pub fn set_vintage(&mut self, vintage: Option<Epiweek>) {
        self.vintage = vintage;
    }

    pub fn index_of(&self, season: i32) -> Option<usize> {
        self.seasons.binary_search(&season).ok()
    }

    /// Values of the season at position `idx`, indexed by `week - 1`.
    pub fn season_values(&self, idx: usize) -> &[Option<f64>] {
        &self.values[idx]
    }

    pub fn values_for(&self, season: i32) -> Option<&[Option<f64>]> {
        self.index_of(season).map(|i| self.values[i].as_slice())
    }

    /// Value at position `idx`, 1-based `week`.
    pub fn get(&self, idx: usize, week: usize) -> Option<f64> {
        self.values[idx][week - 1]
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().flatten().filter(|v| v.is_some()).count()
    }

    /// Copy with `season` removed.
    pub fn without(&self, season: i32) -> Self {
        let mut out = self.clone();
        if let Some(i) = out.index_of(season) {
            out.seasons.remove(i);
            out.values.remove(i);
        }
        out
    }

    /// Copy restricted to the listed seasons (those present).
    pub fn restrict(&self, keep: &[i32]) -> Self {
        let mut out = Self::new(self.weeks);
        out.vintage = self.vintage;
        for (s, v) in self.seasons.iter().zip(&self.values) {
            if keep.contains(s) {
                out.seasons.push(*s);
                out.values.push(v.clone());
            }
        }
        out
    }

    /// Copy where `season` keeps only weeks `1..=through`; later weeks become missing.
    /// The season is added with no observations if absent.
    pub fn masked(&self, season: i32, through: usize) -> Self {
        let mut out = self.clone();
        let idx = match out.index_of(season) {
            Some(i) => i,
            None => {
                out.insert_season(season, vec![None; self.weeks]).expect("empty season is valid");
                out.index_of(season).unwrap()
            }
        };
        for v in out.values[idx].iter_mut().skip(through) {
            *v = None;
        }
        out
    }

    /// Sets a single observation (validated), e.g. to add one week of data.
    pub fn set(&mut self, idx: usize, week: usize, value: Option<f64>) -> Result<()> {
        let v = match value {
            Some(x) => Some(validate_value(x).map_err(Error::Domain)?),
            None => None,
        };
        self.values[idx][week - 1] = v;
        Ok(())
    }

    /// Weeks of the season at `idx` that are missing.
    pub fn missing_weeks(&self, idx: usize) -> Vec<usize> {
        self.values[idx].iter().enumerate().filter(|(_, v)| v.is_none()).map(|(t, _)| t + 1).collect()
    }

    /// Writes the panel in the `season,week,wili[,issue]` form; missing cells are omitted.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let issue = self.vintage.map(|v| v.compact().to_string());
        if issue.is_some() {
            w.write_record(["season", "week", "wili", "issue"])?;
        } else {
            w.write_record(["season", "week", "wili"])?;
        }
        for (s, vals) in self.seasons.iter().zip(&self.values) {
            for (t, v) in vals.iter().enumerate() {
                if let Some(x) = v {
                    let mut rec = vec![s.to_string(), (t + 1).to_string(), format!("{x}")];
                    if let Some(i) = &issue {
                        rec.push(i.clone());
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("<panel writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

fn validate_value(x: f64) -> std::result::Result<f64, String> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(format!("wILI value {x} outside [0, 1]"));
    }
    Ok(x.clamp(BOUNDARY_CLAMP, 1.0 - BOUNDARY_CLAMP))
}

/// Percent handling for the value column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    /// Divide by 100 when any value exceeds 1.
    #[default]
    Auto,
    Proportion,
    Percent,
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub weeks: usize,
    pub units: Units,
    pub exclude_seasons: Vec<i32>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { weeks: SEASON_WEEKS, units: Units::Auto, exclude_seasons: PANDEMIC_SEASONS.to_vec() }
    }
}

/// Every row of a panel file, keyed by cell and issue (`None` = unversioned).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VintageStore {
    weeks: usize,
    cells: BTreeMap<(i32, usize), BTreeMap<Option<Epiweek>, f64>>,
}

impl VintageStore {
    pub fn new(weeks: usize) -> Self {
        Self { weeks, cells: BTreeMap::new() }
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    /// Store holding every observed cell of `panel` as an unversioned row.
    pub fn from_panel(panel: &SeasonPanel) -> Self {
        let mut store = Self::new(panel.weeks());
        for (j, &season) in panel.seasons().iter().enumerate() {
            for (t, v) in panel.season_values(j).iter().enumerate() {
                if let Some(v) = v {
                    store.cells.entry((season, t + 1)).or_default().insert(None, *v);
                }
            }
        }
        store
    }

    pub fn insert(&mut self, season: i32, week: usize, issue: Option<Epiweek>, value: f64) -> Result<()> {
        if week == 0 || week > self.weeks {
            return Err(Error::Domain(format!("week {week} outside 1..={}", self.weeks)));
        }
        let value = validate_value(value).map_err(Error::Domain)?;
        let slot = self.cells.entry((season, week)).or_default();
        if slot.contains_key(&issue) {
            return Err(Error::Domain(format!("duplicate row season {season} week {week} issue {issue:?}")));
        }
        slot.insert(issue, value);
        Ok(())
    }

    pub fn issues(&self) -> Vec<Epiweek> {
        let mut out: Vec<_> = self.cells.values().flat_map(|m| m.keys().flatten().copied()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn seasons(&self) -> Vec<i32> {
        let mut out: Vec<_> = self.cells.keys().map(|(s, _)| *s).collect();
        out.dedup();
        out
    }

    /// Writes every row as `season,week,wili,issue`; unversioned rows leave `issue` empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["season", "week", "wili", "issue"])?;
        for ((season, week), versions) in &self.cells {
            for (issue, v) in versions {
                let issue = issue.map(|i| i.compact().to_string()).unwrap_or_default();
                w.write_record([season.to_string(), week.to_string(), format!("{v}"), issue])?;
            }
        }
        w.flush().map_err(|e| Error::io("<vintage writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    /// Latest-known value of every cell.
    pub fn final_panel(&self) -> SeasonPanel {
        self.build(|versions| {
            // Unversioned rows count as the final word; otherwise take the newest issue.
            versions.get(&None).copied().or_else(|| versions.values().next_back().copied())
        }, self.issues().last().copied())
    }

    /// Panel as it was known at release `issue`.
    ///
    /// A versioned cell takes the newest value issued at or before `issue`.
    /// Unversioned cells are visible when their week was already reported by `issue`.
    pub fn snapshot(&self, issue: Epiweek) -> SeasonPanel {
        let mut panel = SeasonPanel::new(self.weeks);
        panel.vintage = Some(issue);
        let mut rows: BTreeMap<i32, Vec<Option<f64>>> = BTreeMap::new();
        for (&(season, week), versions) in &self.cells {
            let row = rows.entry(season).or_insert_with(|| vec![None; self.weeks]);
            let versioned = versions.range(Some(Epiweek { year: i32::MIN, week: 0 })..=Some(issue)).next_back();
            let value = match versioned {
                Some((_, v)) => Some(*v),
                None if versions.keys().all(|k| k.is_none()) => {
                    let reported = crate::data::calendar::season_week_to_mmwr(season, week).map(|ew| ew <= issue).unwrap_or(false);
                    if reported { versions.get(&None).copied() } else { None }
                }
                None => None,
            };
            row[week - 1] = value;
        }
        for (season, vals) in rows {
            if vals.iter().any(|v| v.is_some()) {
                panel.seasons.push(season);
                panel.values.push(vals);
            }
        }
        panel
    }

    fn build(&self, pick: impl Fn(&BTreeMap<Option<Epiweek>, f64>) -> Option<f64>, vintage: Option<Epiweek>) -> SeasonPanel {
        let mut panel = SeasonPanel::new(self.weeks);
        panel.vintage = vintage;
        let mut rows: BTreeMap<i32, Vec<Option<f64>>> = BTreeMap::new();
        for (&(season, week), versions) in &self.cells {
            rows.entry(season).or_insert_with(|| vec![None; self.weeks])[week - 1] = pick(versions);
        }
        for (season, vals) in rows {
            panel.seasons.push(season);
            panel.values.push(vals);
        }
        panel
    }
}

struct Columns {
    season: Option<usize>,
    week: Option<usize>,
    year: Option<usize>,
    mmwr_week: Option<usize>,
    epiweek: Option<usize>,
    value: usize,
    percent: bool,
    issue: Option<usize>,
}

fn locate_columns(headers: &csv::StringRecord, path: &str) -> Result<Columns> {
    let find = |names: &[&str]| headers.iter().position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)));
    let pct = find(&["wili_percent", "wili_pct", "wili%"]);
    let value = pct.or_else(|| find(&["wili"])).ok_or_else(|| Error::parse(path, 1, "missing wili column"))?;
    let cols = Columns {
        season: find(&["season"]),
        week: find(&["week", "season_week"]),
        year: find(&["year"]),
        mmwr_week: find(&["mmwr_week"]),
        epiweek: find(&["epiweek"]),
        value,
        percent: pct.is_some(),
        issue: find(&["issue"]),
    };
    let season_week = cols.season.is_some() && cols.week.is_some();
    let mmwr = cols.year.is_some() && cols.mmwr_week.is_some();
    if !(season_week || mmwr || cols.epiweek.is_some()) {
        return Err(Error::parse(path, 1, "need season+week, year+mmwr_week, or epiweek columns"));
    }
    Ok(cols)
}

fn parse_int<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, path: &str, line: usize, what: &str) -> Result<T> {
    rec.get(idx)
        .map(str::trim)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(path, line, format!("bad {what}: {:?}", rec.get(idx).unwrap_or(""))))
}

/// Reads every row of a panel file into a [`VintageStore`].
pub fn read_vintages<R: Read>(reader: R, path: &str, opts: &ParseOptions) -> Result<VintageStore> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = locate_columns(&headers, path)?;
    let mut raw: Vec<(i32, usize, Option<Epiweek>, f64, usize)> = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec?;
        let (season, week) = if let (Some(s), Some(w)) = (cols.season, cols.week) {
            (parse_int::<i32>(&rec, s, path, line, "season")?, parse_int::<usize>(&rec, w, path, line, "week")?)
        } else {
            let ew = if let (Some(y), Some(w)) = (cols.year, cols.mmwr_week) {
                Epiweek::new(parse_int(&rec, y, path, line, "year")?, parse_int(&rec, w, path, line, "mmwr_week")?)
            } else {
                Epiweek::from_compact(parse_int(&rec, cols.epiweek.unwrap(), path, line, "epiweek")?)
            }
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
            let (season, week) = mmwr_to_season_week(ew.year, ew.week).map_err(|e| Error::parse(path, line, e.to_string()))?;
            if week > opts.weeks {
                // summer weeks outside the modeled season
                continue;
            }
            (season, week)
        };
        if week == 0 || week > opts.weeks {
            return Err(Error::parse(path, line, format!("week {week} outside calendar 1..={}", opts.weeks)));
        }
        if opts.exclude_seasons.contains(&season) {
            continue;
        }
        let text = rec.get(cols.value).unwrap_or("").trim();
        if text.is_empty() || text.eq_ignore_ascii_case("na") {
            continue;
        }
        let value: f64 = text.parse().map_err(|_| Error::parse(path, line, format!("non-numeric wILI {text:?}")))?;
        if !value.is_finite() || value < 0.0 {
            return Err(Error::parse(path, line, format!("wILI {value} out of range")));
        }
        let issue = match cols.issue {
            Some(i) => {
                let t = rec.get(i).unwrap_or("").trim();
                if t.is_empty() {
                    None
                } else {
                    let code: u32 = t.parse().map_err(|_| Error::parse(path, line, format!("bad issue {t:?}")))?;
                    Some(Epiweek::from_compact(code).map_err(|e| Error::parse(path, line, e.to_string()))?)
                }
            }
            None => None,
        };
        raw.push((season, week, issue, value, line));
    }
    let percent = match opts.units {
        Units::Percent => true,
        Units::Proportion => cols.percent,
        Units::Auto => cols.percent || raw.iter().any(|r| r.3 > 1.0),
    };
    let mut store = VintageStore::new(opts.weeks);
    for (season, week, issue, value, line) in raw {
        let v = if percent { value / 100.0 } else { value };
        if v > 1.0 {
            return Err(Error::parse(path, line, format!("wILI {value} out of range")));
        }
        store.insert(season, week, issue, v).map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(store)
}

/// Parses a panel file; revised cells resolve to their latest issue.
pub fn parse_panel<R: Read>(reader: R, path: &str, opts: &ParseOptions) -> Result<SeasonPanel> {
    Ok(read_vintages(reader, path, opts)?.final_panel())
}

pub fn load_panel(path: &Path, opts: &ParseOptions) -> Result<SeasonPanel> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_panel(f, &path.display().to_string(), opts)
}

pub fn load_vintages(path: &Path, opts: &ParseOptions) -> Result<VintageStore> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_vintages(f, &path.display().to_string(), opts)
}
