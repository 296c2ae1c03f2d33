//! MMWR epidemiological calendar and its mapping onto season weeks.
//!
//! MMWR weeks run Sunday through Saturday; week 1 of a year is the first
//! week with at least four days in that year. A season starts at MMWR week 40
//! and season weeks are counted consecutively from there, so in a 53-week
//! year MMWR week 53 takes season week 14 and every later week shifts by
//! one. Only season weeks `1..=SEASON_WEEKS` are modeled.

use std::fmt;

use chrono::{Datelike, Duration, NaiveDate};

use crate::error::{Error, Result};

/// Season length in weeks.
pub const SEASON_WEEKS: usize = 35;
/// MMWR week that opens a season.
pub const SEASON_START_WEEK: u32 = 40;

/// An MMWR (year, week) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Epiweek {
    pub year: i32,
    pub week: u32,
}

impl Epiweek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        let n = weeks_in_year(year);
        if week == 0 || week > n {
            return Err(Error::Calendar(format!("MMWR week {week} invalid for {year} ({n} weeks)")));
        }
        Ok(Self { year, week })
    }

    /// Parses the compact `YYYYWW` form.
    pub fn from_compact(code: u32) -> Result<Self> {
        Self::new((code / 100) as i32, code % 100)
    }

    pub fn compact(&self) -> u32 {
        self.year as u32 * 100 + self.week
    }

    /// Sunday that starts this week.
    pub fn start_date(&self) -> NaiveDate {
        year_start(self.year) + Duration::weeks(self.week as i64 - 1)
    }

    pub fn from_date(date: NaiveDate) -> Self {
        let mut year = date.year() + 1;
        while year_start(year) > date {
            year -= 1;
        }
        let week = ((date - year_start(year)).num_days() / 7) as u32 + 1;
        Self { year, week }
    }

    pub fn offset(&self, weeks: i64) -> Self {
        Self::from_date(self.start_date() + Duration::weeks(weeks))
    }
}

impl fmt::Display for Epiweek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.year, self.week)
    }
}

/// Sunday starting MMWR week 1 of `year`.
pub fn year_start(year: i32) -> NaiveDate {
    let jan4 = NaiveDate::from_ymd_opt(year, 1, 4).expect("valid year");
    jan4 - Duration::days(jan4.weekday().num_days_from_sunday() as i64)
}

pub fn weeks_in_year(year: i32) -> u32 {
    ((year_start(year + 1) - year_start(year)).num_days() / 7) as u32
}

/// Season containing `ew` (the year in which the season starts).
pub fn season_of(ew: Epiweek) -> i32 {
    if ew.week >= SEASON_START_WEEK {
        ew.year
    } else {
        ew.year - 1
    }
}

/// Maps an MMWR week to `(season, season_week)`; the season week is 1-based and
/// may exceed [`SEASON_WEEKS`] for summer weeks.
pub fn mmwr_to_season_week(year: i32, week: u32) -> Result<(i32, usize)> {
    let ew = Epiweek::new(year, week)?;
    let season = season_of(ew);
    let first = Epiweek { year: season, week: SEASON_START_WEEK }.start_date();
    let idx = (ew.start_date() - first).num_days() / 7 + 1;
    Ok((season, idx as usize))
}

/// Inverse of [`mmwr_to_season_week`].
pub fn season_week_to_mmwr(season: i32, season_week: usize) -> Result<Epiweek> {
    let span = ((year_start(season + 1) + Duration::weeks(SEASON_START_WEEK as i64 - 1))
        - Epiweek { year: season, week: SEASON_START_WEEK }.start_date())
    .num_days()
        / 7;
    if season_week == 0 || season_week as i64 > span {
        return Err(Error::Calendar(format!("season week {season_week} outside season {season}")));
    }
    Ok(Epiweek { year: season, week: SEASON_START_WEEK }.offset(season_week as i64 - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Weekday;

    // Reference calendar values computed with an independent MMWR implementation.
    const WEEKS_IN_YEAR: &[(i32, u32)] = &[
        (1997, 53), (1998, 52), (2001, 52), (2003, 53), (2004, 52), (2008, 53),
        (2009, 52), (2014, 53), (2015, 52), (2020, 53),
    ];

    #[test]
    fn year_lengths_match_reference() {
        for &(y, n) in WEEKS_IN_YEAR {
            assert_eq!(weeks_in_year(y), n, "{y}");
        }
        assert_eq!(year_start(2015), NaiveDate::from_ymd_opt(2015, 1, 4).unwrap());
        assert_eq!(year_start(2001), NaiveDate::from_ymd_opt(2000, 12, 31).unwrap());
        assert_eq!(year_start(2026).weekday(), Weekday::Sun);
    }

    #[test]
    fn season_weeks_match_reference() {
        assert_eq!(mmwr_to_season_week(1998, 40).unwrap(), (1998, 1));
        assert_eq!(mmwr_to_season_week(1999, 1).unwrap(), (1998, 14));
        assert_eq!(mmwr_to_season_week(2004, 1).unwrap(), (2003, 15));
        assert_eq!(mmwr_to_season_week(2003, 53).unwrap(), (2003, 14));
        assert_eq!(mmwr_to_season_week(2016, 3).unwrap(), (2015, 16));
        assert_eq!(season_week_to_mmwr(1998, 35).unwrap(), Epiweek { year: 1999, week: 22 });
        assert_eq!(season_week_to_mmwr(2014, 35).unwrap(), Epiweek { year: 2015, week: 21 });
        assert_eq!(season_week_to_mmwr(2015, 35).unwrap(), Epiweek { year: 2016, week: 22 });
    }

    #[test]
    fn invalid_weeks_rejected() {
        assert!(mmwr_to_season_week(2015, 53).is_err());
        assert!(mmwr_to_season_week(2015, 0).is_err());
        assert!(season_week_to_mmwr(2015, 0).is_err());
        assert!(season_week_to_mmwr(2015, 53).is_err());
        assert!(season_week_to_mmwr(2014, 53).is_ok());
    }

    #[test]
    fn forward_inverse_identity_by_enumeration() {
        // Day-by-day walk: each Sunday starts a new MMWR week.
        let mut d = NaiveDate::from_ymd_opt(1995, 1, 1).unwrap();
        let end = NaiveDate::from_ymd_opt(2030, 12, 31).unwrap();
        let mut prev: Option<Epiweek> = None;
        while d <= end {
            let ew = Epiweek::from_date(d);
            if d.weekday() == Weekday::Sun {
                assert_eq!(ew.start_date(), d);
                if let Some(p) = prev {
                    let expected = if p.week == weeks_in_year(p.year) { Epiweek { year: p.year + 1, week: 1 } } else { Epiweek { year: p.year, week: p.week + 1 } };
                    assert_eq!(ew, expected);
                }
                prev = Some(ew);
                let (season, sw) = mmwr_to_season_week(ew.year, ew.week).unwrap();
                assert_eq!(season_week_to_mmwr(season, sw).unwrap(), ew);
            }
            d += Duration::days(1);
        }
    }
}
