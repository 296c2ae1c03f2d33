//! Surveillance data: calendar, panels and revision snapshots, API client.

pub mod calendar;
pub mod fetch;
pub mod panel;

pub use calendar::{mmwr_to_season_week, season_week_to_mmwr, Epiweek, SEASON_WEEKS};
pub use panel::{load_panel, load_vintages, parse_panel, read_vintages, ParseOptions, SeasonPanel, Units, VintageStore};
