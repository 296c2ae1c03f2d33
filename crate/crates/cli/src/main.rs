//! `dbflu` command-line interface.

mod chart;
mod manifest;
mod plotdata;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dbflu::backtest::{
    cell_dir, collect_coverage, coverage_report, run_backtest, run_cell, write_cell, BacktestPlan, PriorPolicy, VintagePolicy,
};
use dbflu::config::Config;
use dbflu::data::fetch::{rows_into_store, FetchRequest, SurveillanceClient};
use dbflu::data::{load_vintages, season_week_to_mmwr, SeasonPanel, VintageStore};
use dbflu::forecast::{FIRST_FIT_WEEK, LAST_FIT_WEEK};
use dbflu::mcmc::{SamplerConfig, SamplerMode};
use dbflu::priors::{fit_prior, fit_seasons, write_fits_csv, TruncatedMvnPrior};
use dbflu::scoring::{read_cell_submission, read_submissions, resolve_truth, score_submission_set, write_scores, write_summary};

use crate::manifest::{digest_inputs, now, sha256_hex, RunManifest};

/// Usage and configuration problems; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "dbflu", version, about = "Dynamic Bayesian influenza forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Diagnostic,
    Production,
    Ci,
}

#[derive(Clone, Copy, ValueEnum)]
enum VintageArg {
    Final,
    Faithful,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; overrides `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    vintage: Option<VintageArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit per-season SIR curves and the leave-one-season-out priors.
    FitPriors(Common),
    /// Fit one (season, week) cell and write its submission.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        season: i32,
        #[arg(long)]
        week: usize,
    },
    /// Run the sequential backtest; completed cells are kept.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Seasons to backtest; defaults to the plan, then to every season.
        #[arg(long)]
        season: Vec<i32>,
    },
    /// Score backtest submissions and any external submission files.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        season: Vec<i32>,
        /// External submissions (model, week, target, bin_start, bin_end, probability).
        #[arg(long = "submissions")]
        submissions: Vec<PathBuf>,
    },
    /// Coverage tables over a completed backtest.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        season: Vec<i32>,
    },
    /// Tidy tables and SVG charts for the standard figures.
    Plotdata {
        #[command(flatten)]
        common: Common,
        /// Season shown in the forecast figure.
        #[arg(long)]
        season: Option<i32>,
    },
    /// Download national wILI into a panel (final) or vintage table (faithful).
    Fetch {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        season: Vec<i32>,
    },
}

/// Config plus command-line overrides.
struct Ctx {
    config: Config,
    config_path: Option<PathBuf>,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(p) => {
                if !p.exists() {
                    return Err(usage(format!("config file not found: {}", p.display())));
                }
                Config::load(p)?
            }
            None => Config::default(),
        };
        if let Some(seed) = common.seed {
            config.sampler.seed = seed;
        }
        if let Some(m) = common.mode {
            config.sampler.mode = match m {
                ModeArg::Diagnostic => SamplerMode::Diagnostic,
                ModeArg::Production => SamplerMode::Production,
                ModeArg::Ci => SamplerMode::Ci,
            };
        }
        if let Some(v) = common.vintage {
            config.plan.vintage = match v {
                VintageArg::Final => VintagePolicy::Final,
                VintageArg::Faithful => VintagePolicy::Faithful,
            };
        }
        config.validate()?;
        let out = common.out.clone().unwrap_or_else(|| config.paths.out.clone());
        Ok(Self { config, config_path: common.config.clone(), out })
    }

    fn sampler(&self) -> SamplerConfig {
        self.config.sampler.resolve()
    }

    fn panel_path(&self) -> Result<PathBuf> {
        let p = self.config.data.panel.clone().ok_or_else(|| usage("no input panel: set data.panel in the config"))?;
        if !p.exists() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
        Ok(p)
    }

    fn store(&self) -> Result<VintageStore> {
        Ok(load_vintages(&self.panel_path()?, &self.config.parse_options()?)?)
    }

    fn prior_policy(&self) -> Result<(PriorPolicy, Option<PathBuf>)> {
        match &self.config.plan.prior {
            None => Ok((PriorPolicy::Refit, None)),
            Some(p) => {
                let f = fs::File::open(p).map_err(|_| usage(format!("input file not found: {}", p.display())))?;
                Ok((PriorPolicy::Fixed(TruncatedMvnPrior::read_csv(f, &p.display().to_string())?), Some(p.clone())))
            }
        }
    }

    fn plan(&self, seasons: &[i32], store: &VintageStore) -> BacktestPlan {
        let mut plan = self.config.plan(self.sampler());
        if !seasons.is_empty() {
            plan.seasons = seasons.to_vec();
        } else if plan.seasons.is_empty() {
            plan.seasons = store.seasons();
        }
        plan
    }

    fn manifest(&self, command: &str, inputs: &[PathBuf], started: String) -> Result<RunManifest> {
        let mut all = inputs.to_vec();
        all.extend(self.config_path.clone());
        Ok(RunManifest {
            command: command.to_string(),
            config_hash: sha256_hex(&serde_json::to_vec(&self.config)?),
            seed: self.config.sampler.seed,
            inputs: digest_inputs(&all)?,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started,
            finished: now(),
        })
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn fit_priors(common: &Common) -> Result<()> {
    let started = now();
    let ctx = Ctx::new(common)?;
    let panel = ctx.store()?.final_panel();
    let fits = fit_seasons(&panel, None)?;
    let dir = ctx.out.join("priors");
    write_fits_csv(&fits, create(&dir.join("fits.csv"))?)?;
    fit_prior(&fits, None)?.write_csv(create(&dir.join("prior_all.csv"))?)?;
    for f in &fits {
        let prior = fit_prior(&fits, Some(f.season)).with_context(|| format!("prior excluding {}", f.season))?;
        prior.write_csv(create(&dir.join(format!("prior_excl_{}.csv", f.season)))?)?;
    }
    ctx.manifest("fit-priors", &[ctx.panel_path()?], started)?.write(&dir)?;
    eprintln!("{} season fits, {} priors written to {}", fits.len(), fits.len() + 1, dir.display());
    Ok(())
}

fn forecast(common: &Common, season: i32, week: usize) -> Result<()> {
    if !(FIRST_FIT_WEEK..=LAST_FIT_WEEK).contains(&week) {
        return Err(usage(format!("--week {week} outside {FIRST_FIT_WEEK}..={LAST_FIT_WEEK}")));
    }
    let started = now();
    let ctx = Ctx::new(common)?;
    let store = ctx.store()?;
    let (prior, prior_path) = ctx.prior_policy()?;
    let plan = ctx.plan(&[season], &store);
    let root = ctx.out.join("forecast");
    let dir = cell_dir(&root, season, week);
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    let cell = run_cell(&plan, &store, &prior, season, week)?;
    write_cell(&plan, &cell, &root)?;
    let mut inputs = vec![ctx.panel_path()?];
    inputs.extend(prior_path);
    ctx.manifest(&format!("forecast --season {season} --week {week}"), &inputs, started)?.write(&dir)?;
    if let Some(r) = cell.draws.max_rhat() {
        eprintln!("max R-hat {r:.3}");
    }
    eprintln!("forecast written to {}", dir.display());
    Ok(())
}

fn backtest(common: &Common, seasons: &[i32]) -> Result<()> {
    let started = now();
    let ctx = Ctx::new(common)?;
    let store = ctx.store()?;
    let (prior, prior_path) = ctx.prior_policy()?;
    let plan = ctx.plan(seasons, &store);
    let dir = ctx.out.join("backtest");
    let summary = run_backtest(&plan, &store, &prior, &dir)?;
    let mut inputs = vec![ctx.panel_path()?];
    inputs.extend(prior_path);
    ctx.manifest("backtest", &inputs, started)?.write(&dir)?;
    eprintln!(
        "{} cells completed, {} already present, {} failed",
        summary.completed.len(),
        summary.skipped.len(),
        summary.failed.len()
    );
    if !summary.failed.is_empty() {
        bail!("{} cells failed; see {}", summary.failed.len(), dir.join("failures.csv").display());
    }
    Ok(())
}

fn score(common: &Common, seasons: &[i32], external: &[PathBuf]) -> Result<()> {
    let started = now();
    let ctx = Ctx::new(common)?;
    let store = ctx.store()?;
    let plan = ctx.plan(seasons, &store);
    let truth_panel = store.final_panel();
    let backtest_dir = ctx.out.join("backtest");
    let weeks = plan.model.weeks;
    for p in external {
        if !p.exists() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
    }
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &season in &plan.seasons {
        let Some(values) = truth_panel.values_for(season) else { continue };
        let truth = match resolve_truth(season, values, plan.baseline) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("skipping season {season}: {e}");
                continue;
            }
        };
        let mut own = Vec::new();
        for week in plan.first_week..=plan.last_week {
            let path = cell_dir(&backtest_dir, season, week).join("submission.csv");
            if path.exists() {
                let f = fs::File::open(&path).with_context(|| format!("reading {}", path.display()))?;
                own.extend(read_cell_submission(f, &path.display().to_string(), season, week, weeks)?);
            }
        }
        let mut by_model: Vec<(String, Vec<_>)> = Vec::new();
        if !own.is_empty() {
            by_model.push(("dbflu".to_string(), own));
        }
        for p in external {
            let f = fs::File::open(p).with_context(|| format!("reading {}", p.display()))?;
            for (model, fc) in read_submissions(f, &p.display().to_string(), season, weeks)? {
                match by_model.iter_mut().find(|(m, _)| *m == model) {
                    Some((_, v)) => v.push(fc),
                    None => by_model.push((model, vec![fc])),
                }
            }
        }
        for (model, fcs) in by_model {
            let s = score_submission_set(&model, &fcs, &truth, &[])?;
            records.extend(s.records.iter().cloned());
            summaries.push((format!("{model}:{season}"), s));
        }
    }
    if records.is_empty() {
        bail!("nothing to score: no backtest submissions under {} and no external files", backtest_dir.display());
    }
    let dir = ctx.out.join("score");
    write_scores(&records, create(&dir.join("scores.csv"))?)?;
    write_summary(&summaries, create(&dir.join("summary.csv"))?)?;
    let mut inputs = vec![ctx.panel_path()?];
    inputs.extend(external.iter().cloned());
    ctx.manifest("score", &inputs, started)?.write(&dir)?;
    eprintln!("{} scores written to {}", records.len(), dir.display());
    Ok(())
}

fn coverage(common: &Common, seasons: &[i32]) -> Result<()> {
    let started = now();
    let ctx = Ctx::new(common)?;
    let store = ctx.store()?;
    let plan = ctx.plan(seasons, &store);
    let backtest_dir = ctx.out.join("backtest");
    if !backtest_dir.exists() {
        return Err(usage(format!("backtest directory not found: {}", backtest_dir.display())));
    }
    let records = collect_coverage(&plan, &backtest_dir, &store.final_panel())?;
    let report = coverage_report(&records);
    let dir = ctx.out.join("coverage");
    report.write_tables(&dir)?;
    ctx.manifest("coverage", &[ctx.panel_path()?], started)?.write(&dir)?;
    eprintln!(
        "coverage {:.4} ({}/{}) written to {}",
        report.overall.rate(),
        report.overall.covered,
        report.overall.total,
        dir.display()
    );
    Ok(())
}

fn fetch(common: &Common, seasons: &[i32]) -> Result<()> {
    let started = now();
    let ctx = Ctx::new(common)?;
    let client = SurveillanceClient::new(ctx.config.fetch_config());
    let weeks = ctx.config.model.weeks;
    let region = ctx.config.fetch.region.clone();
    let mut store = VintageStore::new(weeks);
    let faithful = ctx.config.plan.vintage == VintagePolicy::Faithful;
    for &season in seasons {
        let start = season_week_to_mmwr(season, 1)?;
        let end = season_week_to_mmwr(season, weeks)?;
        if faithful {
            for w in 1..=weeks {
                let issue = season_week_to_mmwr(season, w)?;
                let req = FetchRequest { region: region.clone(), start, end: issue, issue: Some(issue) };
                rows_into_store(&fetch_with_retry(&client, &req)?.rows, &mut store)?;
            }
        } else {
            let req = FetchRequest { region: region.clone(), start, end, issue: None };
            rows_into_store(&fetch_with_retry(&client, &req)?.rows, &mut store)?;
        }
    }
    let dir = ctx.out.join("fetch");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = if faithful {
        let p = dir.join("vintages.csv");
        store.save(&p)?;
        p
    } else {
        let p = dir.join("wili.csv");
        let panel: SeasonPanel = store.final_panel();
        panel.save(&p)?;
        p
    };
    ctx.manifest("fetch", &[], started)?.write(&dir)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn fetch_with_retry(client: &SurveillanceClient, req: &FetchRequest) -> Result<dbflu::data::fetch::Fetched> {
    let mut delay = std::time::Duration::from_secs(1);
    for attempt in 1.. {
        match client.fetch(req) {
            Err(dbflu::Error::Fetch { retryable: true, msg }) if attempt < 4 => {
                eprintln!("fetch attempt {attempt} failed ({msg}); retrying");
                std::thread::sleep(delay);
                delay *= 2;
            }
            other => return Ok(other?),
        }
    }
    unreachable!()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<dbflu::Error>() {
            return match e {
                dbflu::Error::Config(_) => 2,
                dbflu::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::FitPriors(c) => fit_priors(c),
        Command::Forecast { common, season, week } => forecast(common, *season, *week),
        Command::Backtest { common, season } => backtest(common, season),
        Command::Score { common, season, submissions } => score(common, season, submissions),
        Command::Coverage { common, season } => coverage(common, season),
        Command::Plotdata { common, season } => Ctx::new(common).and_then(|ctx| plotdata::run(&ctx, *season)),
        Command::Fetch { common, season } => fetch(common, season),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
