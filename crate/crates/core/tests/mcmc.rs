use dbflu::data::SeasonPanel;
use dbflu::forecast::quantile;
use dbflu::mcmc::{gelman_rubin, run_chain, sample_posterior, SamplerConfig};
use dbflu::model::DataModelConfig;
use dbflu::priors::TruncatedMvnPrior;
use dbflu::simulate::{simulate_panel, SyntheticSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn prior() -> TruncatedMvnPrior {
    TruncatedMvnPrior::new([0.01, 0.55, 0.65], [[9e-6, 0.0, 0.0], [0.0, 0.01, 0.002], [0.0, 0.002, 0.0009]]).unwrap()
}

fn empty_panel(n: usize) -> SeasonPanel {
    SeasonPanel::from_rows(35, (0..n).map(|j| (2000 + j as i32, vec![None; 35])).collect()).unwrap()
}

fn small_config(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 1, n_iter: 2000, burn_in_fraction: 0.5, thin: 10, seed, adapt_window: 50 }
}

#[test]
fn fixed_seed_gives_identical_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (panel, _) = simulate_panel(&SyntheticSpec { seasons: vec![2010, 2011], ..Default::default() }, &prior(), &mut rng).unwrap();
    let cfg = small_config(77);
    let model = DataModelConfig::default();
    let a = run_chain(&panel, &prior(), &model, &cfg, 0).unwrap();
    let b = run_chain(&panel, &prior(), &model, &cfg, 0).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(a.log_joint, b.log_joint);
    let c = run_chain(&panel, &prior(), &model, &cfg, 1).unwrap();
    assert_ne!(a.draws, c.draws);
}

#[test]
fn stored_draws_are_finite_and_respect_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (panel, _) = simulate_panel(&SyntheticSpec { seasons: vec![2010, 2011], ..Default::default() }, &prior(), &mut rng).unwrap();
    let chain = run_chain(&panel, &prior(), &DataModelConfig::default(), &small_config(3), 0).unwrap();
    assert_eq!(chain.draws.len(), 100);
    assert!(chain.log_joint.iter().all(|v| v.is_finite()));
    for d in &chain.draws {
        let want = dbflu::num::inv_logit(d.mu()[34]);
        for j in 0..2 {
            assert!((d.pi(j, 35) - want).abs() < 1e-12);
            assert!(d.season(j).alpha() > 0.02 && d.season(j).alpha() < 0.98);
        }
    }
}

#[test]
fn single_chain_production_preset_has_no_rhat() {
    let cfg = SamplerConfig::production(5);
    let draws = sample_posterior(&empty_panel(1), &prior(), &DataModelConfig::default(), &cfg).unwrap();
    assert_eq!(draws.chains.len(), 1);
    assert_eq!(draws.n_draws(), 2500);
    assert!(draws.rhat.is_empty() && draws.max_rhat().is_none());
}

#[test]
fn multiple_chains_report_rhat_for_every_scalar() {
    let cfg = SamplerConfig { n_chains: 2, ..small_config(9) };
    let panel = empty_panel(2);
    let draws = sample_posterior(&panel, &prior(), &DataModelConfig::default(), &cfg).unwrap();
    let n_scalars = draws.chains[0].draws[0].scalars(&draws.seasons).len();
    assert_eq!(draws.rhat.len(), n_scalars);
    let mut report = Vec::new();
    draws.write_report(&mut report).unwrap();
    let text = String::from_utf8(report).unwrap();
    assert!(text.contains("rhat.max = ") && text.contains("rhat.mu[1] = "));
}

#[test]
fn rhat_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let n51 = Normal::new(5.0, 1.0).unwrap();
    let a: Vec<f64> = (0..1000).map(|_| n01.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..1000).map(|_| n01.sample(&mut rng)).collect();
    let c: Vec<f64> = (0..1000).map(|_| n51.sample(&mut rng)).collect();
    assert!(gelman_rubin(&[a.clone(), b]).unwrap().value < 1.05);
    assert!(gelman_rubin(&[a.clone(), c]).unwrap().value > 1.1);
    let same = gelman_rubin(&[a.clone(), a.clone()]).unwrap();
    assert!((same.value - 1.0).abs() < 1e-2);
    let flat = gelman_rubin(&[vec![2.0; 20], vec![2.0; 20]]).unwrap();
    assert!(flat.degenerate && flat.value == 1.0);
    assert!(gelman_rubin(&[a]).is_err());
    assert!(gelman_rubin(&[vec![0.0; 5], vec![0.0; 5]]).is_err());
}

/// Posterior 95% intervals of the common discrepancy cover the generating path.
#[test]
fn three_season_panel_covers_generating_mu() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = SyntheticSpec { seasons: vec![2010, 2011, 2012], ..Default::default() };
    let (panel, truth) = simulate_panel(&spec, &prior(), &mut rng).unwrap();
    let draws = sample_posterior(&panel, &prior(), &DataModelConfig::default(), &SamplerConfig::ci(21)).unwrap();
    let mut covered = 0;
    for t in 0..35 {
        let mut xs: Vec<f64> = draws.iter().map(|d| d.mu()[t]).collect();
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile(&xs, 0.025), quantile(&xs, 0.975));
        if lo <= truth.mu()[t] && truth.mu()[t] <= hi {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.9 * 35.0, "covered {covered} of 35");
}
