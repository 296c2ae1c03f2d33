use std::fs;
use std::path::Path;

use dbflu::backtest::{
    cell_dir, collect_coverage, coverage_report, expected_forecasts, mse_typicality, mse_typicality_loop, run_backtest, run_cell,
    BacktestPlan, PriorPolicy,
};
use dbflu::data::{SeasonPanel, VintageStore};
use dbflu::mcmc::SamplerConfig;
use dbflu::priors::TruncatedMvnPrior;
use dbflu::simulate::{simulate_panel, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn prior() -> TruncatedMvnPrior {
    TruncatedMvnPrior::new([0.01, 0.55, 0.65], [[9e-6, 0.0, 0.0], [0.0, 0.01, 0.002], [0.0, 0.002, 0.0009]]).unwrap()
}

fn tiny_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 1, n_iter: 1000, burn_in_fraction: 0.5, thin: 1, seed, adapt_window: 50 }
}

fn synthetic(seasons: Vec<i32>, seed: u64) -> SeasonPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_panel(&SyntheticSpec { seasons, ..Default::default() }, &prior(), &mut rng).unwrap().0
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn resumed_backtest_is_byte_identical() {
    let panel = synthetic(vec![2012, 2013], 31);
    let store = VintageStore::from_panel(&panel);
    let mut plan = BacktestPlan::new(vec![2013], tiny_sampler(8));
    plan.last_week = 5;
    let fixed = PriorPolicy::Fixed(prior());

    let whole = tempfile::tempdir().unwrap();
    let s = run_backtest(&plan, &store, &fixed, whole.path()).unwrap();
    assert_eq!((s.completed.len(), s.failed.len()), (3, 0));

    let resumed = tempfile::tempdir().unwrap();
    let partial = BacktestPlan { last_week: 3, ..plan.clone() };
    run_backtest(&partial, &store, &fixed, resumed.path()).unwrap();
    let s = run_backtest(&plan, &store, &fixed, resumed.path()).unwrap();
    assert_eq!(s.skipped, vec![(2013, 3)]);
    assert_eq!(s.completed.len(), 2);

    assert_eq!(read_tree(whole.path()), read_tree(resumed.path()));
    for w in 3..=5 {
        for f in ["submission.csv", "intervals.csv", "report.txt", "posterior_summary.csv"] {
            assert!(cell_dir(whole.path(), 2013, w).join(f).exists());
        }
    }
}

#[test]
fn future_weeks_never_reach_the_fit() {
    let panel = synthetic(vec![2010, 2011, 2012, 2013], 32);
    let clean = VintageStore::from_panel(&panel);
    let mut poisoned_panel = panel.clone();
    let j = panel.index_of(2013).unwrap();
    for t in 7..=35 {
        poisoned_panel.set(j, t, Some(0.4)).unwrap();
    }
    let poisoned = VintageStore::from_panel(&poisoned_panel);
    let plan = BacktestPlan::new(vec![2013], tiny_sampler(5));
    let a = run_cell(&plan, &clean, &PriorPolicy::Refit, 2013, 6).unwrap();
    let b = run_cell(&plan, &poisoned, &PriorPolicy::Refit, 2013, 6).unwrap();
    assert_eq!(a.predictive, b.predictive);
    assert_eq!(a.draws.chains[0].draws, b.draws.chains[0].draws);
}

#[test]
fn coverage_partitions_sum_to_the_total() {
    let panel = synthetic(vec![2011, 2012], 33);
    let store = VintageStore::from_panel(&panel);
    let mut plan = BacktestPlan::new(vec![2011, 2012], tiny_sampler(6));
    plan.last_week = 4;
    let dir = tempfile::tempdir().unwrap();
    run_backtest(&plan, &store, &PriorPolicy::Fixed(prior()), dir.path()).unwrap();
    let records = collect_coverage(&plan, dir.path(), &panel).unwrap();
    assert_eq!(records.len(), 2 * expected_forecasts(3, 4, 35));
    assert_eq!(records.iter().filter(|r| r.fit_week == 3 && r.season == 2011).count(), 32);
    let r = coverage_report(&records);
    let total = r.overall.total;
    for part in [
        r.by_season.values().map(|v| v.total).sum::<usize>(),
        r.by_target_week.values().map(|v| v.total).sum(),
        r.by_fit_week.values().map(|v| v.total).sum(),
        r.by_weeks_ahead.values().map(|v| v.total).sum(),
    ] {
        assert_eq!(part, total);
    }
    r.write_tables(&dir.path().join("coverage")).unwrap();
    for name in ["season", "target_week", "fit_week", "weeks_ahead", "overall"] {
        assert!(dir.path().join("coverage").join(format!("coverage_{name}.csv")).exists());
    }
}

#[test]
fn forecast_count_arithmetic() {
    assert_eq!(expected_forecasts(3, 3, 35), 32);
    assert_eq!(expected_forecasts(3, 30, 35), 518);
    assert_eq!(expected_forecasts(3, 30, 33), 462);
    assert_eq!(12 * 518 + 4 * 462, 8064);
}

#[test]
fn identical_seasons_have_equal_typicality() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let a: Vec<Option<f64>> = (0..35).map(|_| Some(rng.random_range(0.005..0.06))).collect();
    let c: Vec<Option<f64>> = (0..35).map(|_| Some(rng.random_range(0.005..0.06))).collect();
    let panel = SeasonPanel::from_rows(35, vec![(2001, a.clone()), (2002, a), (2003, c)]).unwrap();
    let mse = mse_typicality(&panel).unwrap();
    let get = |s| mse.iter().find(|(k, _)| *k == s).unwrap().1;
    assert_eq!(get(2001), get(2002));
    assert_eq!(mse[0].0, 2003);
}

#[test]
fn typicality_loop_and_vectorized_agree() {
    let mut panel = synthetic(vec![2001, 2002, 2003, 2004, 2005, 2006], 41);
    for j in 0..2 {
        panel.set(j, 34, None).unwrap();
        panel.set(j, 35, None).unwrap();
    }
    let fast = mse_typicality(&panel).unwrap();
    let slow = mse_typicality_loop(&panel).unwrap();
    assert_eq!(fast.iter().map(|x| x.0).collect::<Vec<_>>(), slow.iter().map(|x| x.0).collect::<Vec<_>>());
    for (f, s) in fast.iter().zip(&slow) {
        assert!((f.1 - s.1).abs() <= 1e-12 * s.1.abs(), "{f:?} vs {s:?}");
    }
    assert!(mse_typicality(&panel.restrict(&[2001, 2002])).is_err());
}
