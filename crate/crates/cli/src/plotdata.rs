//! Tidy tables and charts behind the standard figures.
//!
//! Figures whose inputs are absent (no backtest, no score summary) are skipped
//! with a note on stderr.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dbflu::backtest::{cell_dir, collect_coverage, coverage_report, mse_typicality, read_intervals, Rate};
use dbflu::data::{season_week_to_mmwr, SeasonPanel};
use dbflu::priors::{fit_sir_to_season, write_fits_csv};
use dbflu::sir::solve_sir;

use crate::chart::{self, Facet, Mark};
use crate::manifest::now;
use crate::{create, Ctx};

fn writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn panel_series(panel: &SeasonPanel, j: usize) -> Vec<(f64, f64)> {
    panel.season_values(j).iter().enumerate().filter_map(|(t, v)| v.map(|y| ((t + 1) as f64, y))).collect()
}

fn fig1(panel: &SeasonPanel, dir: &Path) -> Result<()> {
    let mut w = writer(&dir.join("fig1_wili.csv"))?;
    w.write_record(["season", "week", "mmwr_week", "wili"])?;
    let mut facet = Facet::new("wILI by season week");
    for (j, &s) in panel.seasons().iter().enumerate() {
        for (t, v) in panel.season_values(j).iter().enumerate() {
            if let Some(y) = v {
                let mmwr = season_week_to_mmwr(s, t + 1)?;
                w.write_record([s.to_string(), (t + 1).to_string(), mmwr.week.to_string(), format!("{y}")])?;
            }
        }
        facet = facet.with(Mark::Line(panel_series(panel, j)));
    }
    w.flush()?;
    chart::save(&dir.join("fig1_wili.svg"), "National wILI", &[facet])
}

fn fig2(panel: &SeasonPanel, dir: &Path) -> Result<()> {
    let mse = mse_typicality(panel)?;
    let mut w = writer(&dir.join("fig2_mse.csv"))?;
    w.write_record(["rank", "season", "mse"])?;
    for (k, (s, m)) in mse.iter().enumerate() {
        w.write_record([(k + 1).to_string(), s.to_string(), format!("{m}")])?;
    }
    w.flush()?;
    let pts = mse.iter().enumerate().map(|(k, (_, m))| ((k + 1) as f64, *m)).collect();
    let order: Vec<String> = mse.iter().map(|(s, _)| s.to_string()).collect();
    let title = format!("MSE from the mean season, descending: {}", order.join(" "));
    chart::save(&dir.join("fig2_mse.svg"), &title, &[Facet::new("rank vs MSE").with(Mark::Points(pts))])
}

fn fig4(panel: &SeasonPanel, dir: &Path) -> Result<()> {
    let mut w = writer(&dir.join("fig4_sir_fits.csv"))?;
    w.write_record(["season", "week", "wili", "fitted"])?;
    let mut fits = Vec::new();
    let mut facets = Vec::new();
    for (j, &s) in panel.seasons().iter().enumerate() {
        let values = panel.season_values(j);
        let Ok(fit) = fit_sir_to_season(s, values) else {
            eprintln!("fig4: season {s} could not be fit");
            continue;
        };
        let i = solve_sir(&fit.params, values.len())?.i;
        for (t, fitted) in i.iter().enumerate() {
            let y = values[t].map(|v| format!("{v}")).unwrap_or_default();
            w.write_record([s.to_string(), (t + 1).to_string(), y, format!("{fitted}")])?;
        }
        let line = i.iter().enumerate().map(|(t, v)| ((t + 1) as f64, *v)).collect();
        facets.push(Facet::new(s.to_string()).with(Mark::Points(panel_series(panel, j))).with(Mark::Line(line)));
        fits.push(fit);
    }
    w.flush()?;
    write_fits_csv(&fits, create(&dir.join("fig4_sir_params.csv"))?)?;
    chart::save(&dir.join("fig4_sir_fits.svg"), "Least-squares SIR fits (S0 = 0.9)", &facets)
}

fn fig6(panel: &SeasonPanel, backtest: &Path, season: i32, weeks: (usize, usize), dir: &Path) -> Result<bool> {
    let truth = panel.values_for(season).map(<[_]>::to_vec).unwrap_or_default();
    let mut w = writer(&dir.join("fig6_forecasts.csv"))?;
    w.write_record(["season", "fit_week", "week", "observed", "mean", "lower", "upper", "truth"])?;
    let mut facets = Vec::new();
    for fit_week in weeks.0..=weeks.1 {
        let path = cell_dir(backtest, season, fit_week).join("intervals.csv");
        if !path.exists() {
            continue;
        }
        let intervals = read_intervals(&path)?;
        for i in &intervals {
            let y = truth.get(i.week - 1).copied().flatten().map(|v| format!("{v}")).unwrap_or_default();
            w.write_record([
                season.to_string(),
                fit_week.to_string(),
                i.week.to_string(),
                i.observed.to_string(),
                format!("{}", i.mean),
                format!("{}", i.lower),
                format!("{}", i.upper),
                y,
            ])?;
        }
        let future: Vec<_> = intervals.iter().filter(|i| !i.observed).collect();
        let band = future.iter().map(|i| (i.week as f64, i.lower, i.upper)).collect();
        let mean = intervals.iter().map(|i| (i.week as f64, i.mean)).collect();
        let pts = truth.iter().enumerate().filter_map(|(t, v)| v.map(|y| ((t + 1) as f64, y))).collect();
        facets.push(Facet::new(format!("{season}.{fit_week}")).with(Mark::Band(band)).with(Mark::Line(mean)).with(Mark::Points(pts)));
    }
    w.flush()?;
    if facets.is_empty() {
        std::fs::remove_file(dir.join("fig6_forecasts.csv")).ok();
        return Ok(false);
    }
    chart::save(&dir.join("fig6_forecasts.svg"), &format!("{season} forecasts with 95% pointwise intervals"), &facets)?;
    Ok(true)
}

fn fig9(ctx: &Ctx, panel: &SeasonPanel, backtest: &Path, dir: &Path) -> Result<bool> {
    let mut plan = ctx.config.plan(ctx.sampler());
    if plan.seasons.is_empty() {
        plan.seasons = panel.seasons().to_vec();
    }
    let records = collect_coverage(&plan, backtest, panel)?;
    if records.is_empty() {
        return Ok(false);
    }
    let r = coverage_report(&records);
    let mut w = writer(&dir.join("fig9_coverage.csv"))?;
    w.write_record(["partition", "key", "covered", "total", "rate"])?;
    let mut facets = Vec::new();
    let parts: [(&str, Vec<(f64, Rate)>); 4] = [
        ("season", r.by_season.iter().map(|(k, v)| (*k as f64, *v)).collect()),
        ("target_week", r.by_target_week.iter().map(|(k, v)| (*k as f64, *v)).collect()),
        ("fit_week", r.by_fit_week.iter().map(|(k, v)| (*k as f64, *v)).collect()),
        ("weeks_ahead", r.by_weeks_ahead.iter().map(|(k, v)| (*k as f64, *v)).collect()),
    ];
    for (name, rows) in &parts {
        for (k, v) in rows {
            w.write_record([name.to_string(), k.to_string(), v.covered.to_string(), v.total.to_string(), format!("{}", v.rate())])?;
        }
        let pts = rows.iter().map(|(k, v)| (*k, v.rate())).collect();
        let nominal = rows.iter().map(|(k, _)| (*k, 0.95)).collect();
        facets.push(Facet::new(format!("by {name}")).with(Mark::Points(pts)).with(Mark::Line(nominal)));
    }
    let o = r.overall;
    w.write_record(["overall".into(), "all".into(), o.covered.to_string(), o.total.to_string(), format!("{}", o.rate())])?;
    w.flush()?;
    chart::save(&dir.join("fig9_coverage.svg"), &format!("Empirical 95% coverage, overall {:.3}", o.rate()), &facets)?;
    Ok(true)
}

fn fig11(summary: &Path, dir: &Path) -> Result<bool> {
    if !summary.exists() {
        return Ok(false);
    }
    let mut rdr = csv::Reader::from_path(summary).with_context(|| format!("reading {}", summary.display()))?;
    let mut rows: Vec<(String, String, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let score: f64 = rec.get(2).unwrap_or("").parse().with_context(|| format!("bad score in {}", summary.display()))?;
        rows.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string(), score));
    }
    let mut w = writer(&dir.join("fig11_scores.csv"))?;
    w.write_record(["model", "target", "mean_log_score"])?;
    for (m, t, s) in &rows {
        w.write_record([m.clone(), t.clone(), format!("{s}")])?;
    }
    w.flush()?;
    let mut overall: Vec<_> = rows.iter().filter(|r| r.1 == "overall").collect();
    overall.sort_by(|a, b| b.2.total_cmp(&a.2));
    let names: Vec<&str> = overall.iter().map(|r| r.0.as_str()).collect();
    let pts = overall.iter().enumerate().map(|(k, r)| ((k + 1) as f64, r.2)).collect();
    let title = format!("Mean log score, best first: {}", names.join(" "));
    chart::save(&dir.join("fig11_scores.svg"), &title, &[Facet::new("overall").with(Mark::Points(pts))])?;
    Ok(true)
}

pub fn run(ctx: &Ctx, season: Option<i32>) -> Result<()> {
    let started = now();
    let panel = ctx.store()?.final_panel();
    let dir = ctx.out.join("plotdata");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fig1(&panel, &dir)?;
    fig2(&panel, &dir)?;
    fig4(&panel, &dir)?;
    let backtest: PathBuf = ctx.out.join("backtest");
    let season = season.or_else(|| ctx.config.plan.seasons.last().copied()).or_else(|| panel.seasons().last().copied());
    let weeks = (ctx.config.plan.first_week, ctx.config.plan.last_week);
    let mut skipped = Vec::new();
    let shown = match season {
        Some(s) => fig6(&panel, &backtest, s, weeks, &dir)?,
        None => false,
    };
    if !shown {
        skipped.push("fig6");
    }
    if !fig9(ctx, &panel, &backtest, &dir)? {
        skipped.push("fig9");
    }
    if !fig11(&ctx.out.join("score").join("summary.csv"), &dir)? {
        skipped.push("fig11");
    }
    if !skipped.is_empty() {
        eprintln!("skipped {} (no backtest or score output under {})", skipped.join(", "), ctx.out.display());
    }
    ctx.manifest("plotdata", &[ctx.panel_path()?], started)?.write(&dir)?;
    eprintln!("plot data written to {}", dir.display());
    Ok(())
}
