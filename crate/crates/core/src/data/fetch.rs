//! Client for a fluview-style surveillance API with an on-disk response cache.
//!
//! Requests are `GET {endpoint}?regions=..&epiweeks=START-END[&issues=ISSUE]`
//! and the JSON response carries `result`, `message` and an `epidata` array
//! of rows with `epiweek`, `issue` and `wili` (percent). Raw response bodies
//! are cached per (region, range, issue); a cached request never touches the
//! network again.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::data::calendar::{mmwr_to_season_week, Epiweek};
use crate::data::panel::VintageStore;
use crate::error::{Error, Result};

/// Environment variable overriding the configured endpoint.
pub const ENDPOINT_ENV: &str = "DBFLU_EPIDATA_URL";
/// Environment variable overriding the request timeout in seconds.
pub const TIMEOUT_ENV: &str = "DBFLU_EPIDATA_TIMEOUT";
pub const DEFAULT_ENDPOINT: &str = "https://api.delphi.cmu.edu/epidata/fluview/";

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub endpoint: String,
    pub timeout_secs: u64,
    pub cache_dir: PathBuf,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self { endpoint: DEFAULT_ENDPOINT.into(), timeout_secs: 30, cache_dir: PathBuf::from("cache/fluview") }
    }
}

impl FetchConfig {
    /// Applies the environment overrides.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = url;
        }
        if let Some(t) = std::env::var(TIMEOUT_ENV).ok().and_then(|s| s.parse().ok()) {
            self.timeout_secs = t;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchRequest {
    pub region: String,
    pub start: Epiweek,
    pub end: Epiweek,
    /// Release to request; `None` asks for the latest values.
    pub issue: Option<Epiweek>,
}

impl FetchRequest {
    pub fn cache_key(&self) -> String {
        let issue = self.issue.map(|i| i.to_string()).unwrap_or_else(|| "latest".into());
        format!("{}_{}-{}_{}.json", self.region, self.start, self.end, issue)
    }
}

/// One row of an API response.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawRow {
    pub epiweek: u32,
    pub issue: u32,
    pub wili: f64,
    #[serde(default)]
    pub region: Option<String>,
}

#[derive(Debug, Deserialize)]
struct Envelope {
    result: i64,
    #[serde(default)]
    message: String,
    #[serde(default)]
    epidata: Vec<RawRow>,
}

/// Outcome of a fetch, with where the bytes came from.
#[derive(Debug, Clone)]
pub struct Fetched {
    pub rows: Vec<RawRow>,
    pub body: Vec<u8>,
    pub from_cache: bool,
}

pub struct SurveillanceClient {
    config: FetchConfig,
    agent: ureq::Agent,
}

impl SurveillanceClient {
    pub fn new(config: FetchConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn cache_path(&self, req: &FetchRequest) -> PathBuf {
        self.config.cache_dir.join(req.cache_key())
    }

    /// Returns rows for the request, from cache when present.
    pub fn fetch(&self, req: &FetchRequest) -> Result<Fetched> {
        let path = self.cache_path(req);
        if path.exists() {
            let body = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rows = decode(&body, req)?;
            return Ok(Fetched { rows, body, from_cache: true });
        }
        let body = self.download(req)?;
        let rows = decode(&body, req)?;
        write_atomic(&path, &body)?;
        Ok(Fetched { rows, body, from_cache: false })
    }

    fn download(&self, req: &FetchRequest) -> Result<Vec<u8>> {
        let mut call = self
            .agent
            .get(&self.config.endpoint)
            .query("regions", &req.region)
            .query("epiweeks", format!("{}-{}", req.start, req.end));
        if let Some(issue) = req.issue {
            call = call.query("issues", issue.to_string());
        }
        let mut resp = call.call().map_err(|e| Error::Fetch { retryable: is_transport_retryable(&e), msg: e.to_string() })?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retryable = status == 429 || status >= 500;
            return Err(Error::Fetch { retryable, msg: format!("HTTP {status}") });
        }
        resp.body_mut()
            .read_to_vec()
            .map_err(|e| Error::Fetch { retryable: true, msg: format!("reading body: {e}") })
    }
}

fn is_transport_retryable(err: &ureq::Error) -> bool {
    matches!(err, ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)
}

fn decode(body: &[u8], req: &FetchRequest) -> Result<Vec<RawRow>> {
    let env: Envelope =
        serde_json::from_slice(body).map_err(|e| Error::Fetch { retryable: false, msg: format!("malformed response: {e}") })?;
    if env.result != 1 {
        return Err(Error::Fetch { retryable: false, msg: format!("api result {}: {}", env.result, env.message) });
    }
    if let Some(issue) = req.issue {
        if let Some(bad) = env.epidata.iter().find(|r| r.issue != issue.compact()) {
            return Err(Error::Fetch {
                retryable: false,
                msg: format!("requested issue {issue} but response carries issue {}", bad.issue),
            });
        }
    }
    Ok(env.epidata)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("part");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Adds fetched rows (wILI in percent) to a store under their issue.
pub fn rows_into_store(rows: &[RawRow], store: &mut VintageStore) -> Result<()> {
    for row in rows {
        let ew = Epiweek::from_compact(row.epiweek)?;
        let (season, week) = mmwr_to_season_week(ew.year, ew.week)?;
        if week > store.weeks() {
            continue;
        }
        store.insert(season, week, Some(Epiweek::from_compact(row.issue)?), row.wili / 100.0)?;
    }
    Ok(())
}
