use dbflu::data::SeasonPanel;
use dbflu::forecast::{
    bin_all, bin_forecast, compute_targets, onset_week, predictive_simulate, write_submission, BinScheme, PredictiveTrajectorySet,
    TargetKind, BASELINE,
};
use dbflu::mcmc::{sample_posterior, SamplerConfig};
use dbflu::model::DataModelConfig;
use dbflu::priors::TruncatedMvnPrior;
use dbflu::simulate::{simulate_panel, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scans explicit edges; independent of the floor-based lookup.
fn brute_bin(v: f64) -> usize {
    let edges: Vec<f64> = (0..=26).map(|k| k as f64 * 0.005).collect();
    for k in 0..26 {
        if v >= edges[k] && v < edges[k + 1] {
            return k;
        }
    }
    26
}

#[test]
fn intensity_binning_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10_000 {
        let v: f64 = if rng.random_bool(0.2) { rng.random_range(0.0..1.0) } else { rng.random_range(0.0..0.14) };
        assert_eq!(BinScheme::intensity_bin(v), Some(brute_bin(v)), "{v}");
    }
    for k in 0..=26 {
        let edge = k as f64 * 0.005;
        assert_eq!(BinScheme::intensity_bin(edge), Some(brute_bin(edge)), "edge {edge}");
    }
    assert_eq!(BinScheme::intensity_bin(0.0312), Some(6));
    assert_eq!(BinScheme::intensity_bin(1.0), Some(26));
    assert_eq!(BinScheme::intensity_bin(1.5), None);
}

fn brute_onset(x: &[f64], base: f64) -> Option<usize> {
    for start in 0..x.len() {
        if start + 3 <= x.len() && x[start] > base && x[start + 1] > base && x[start + 2] > base {
            return Some(start + 1);
        }
    }
    None
}

#[test]
fn onset_matches_run_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let x: Vec<f64> = (0..35).map(|_| if rng.random_bool(0.4) { 0.03 } else { 0.01 }).collect();
        assert_eq!(onset_week(&x, BASELINE), brute_onset(&x, BASELINE));
    }
    let mut dip = vec![0.01; 35];
    dip[5] = 0.03;
    dip[6] = 0.03;
    assert_eq!(onset_week(&dip, BASELINE), None);
    assert_eq!(onset_week(&vec![0.015; 35], BASELINE), None);
}

#[test]
fn onset_boundary_is_strict() {
    let mut x = vec![0.01; 35];
    x[9] = 0.021;
    x[10] = 0.03;
    x[11] = 0.03;
    x[12] = 0.03;
    assert_eq!(onset_week(&x, 0.021), Some(11));
    x[9] = 0.0210001;
    assert_eq!(onset_week(&x, 0.021), Some(10));
}

#[test]
fn ahead_targets_index_directly() {
    let x: Vec<f64> = (1..=35).map(|t| t as f64 / 1000.0).collect();
    let tv = compute_targets(&x, BASELINE, 30);
    for k in 1..=4 {
        assert_eq!(tv.ahead[k - 1], Some(x[30 + k - 1]));
    }
    let late = compute_targets(&x, BASELINE, 33);
    assert_eq!(late.ahead, [Some(x[33]), Some(x[34]), None, None]);
}

#[test]
fn forecast_probabilities_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let samples: Vec<Vec<f64>> =
        (0..800).map(|_| (0..35).map(|_| rng.random_range(0.001..0.09)).collect()).collect();
    let set = PredictiveTrajectorySet { season: 2015, observed_through: 10, observed: vec![false; 35], samples };
    let all = bin_all(&set, BASELINE, None).unwrap();
    assert_eq!(all.len(), 7);
    for f in &all {
        assert!((f.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(f.probs.iter().all(|&p| p >= 0.0));
        let want = match f.target {
            TargetKind::PeakTiming => 35,
            TargetKind::Onset => 36,
            _ => 27,
        };
        assert_eq!(f.probs.len(), want);
    }
    let mut out = Vec::new();
    write_submission(&all, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 27 * 5 + 35 + 36);
    let late = PredictiveTrajectorySet { observed_through: 33, ..set };
    assert!(bin_forecast(&late, TargetKind::Ahead(3), BASELINE, None).unwrap().is_none());
}

#[test]
fn predictive_samples_pass_observed_weeks_through() {
    let prior = TruncatedMvnPrior::new([0.01, 0.55, 0.65], [[9e-6, 0.0, 0.0], [0.0, 0.01, 0.002], [0.0, 0.002, 0.0009]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (full, _) = simulate_panel(&SyntheticSpec { seasons: vec![2013, 2014], ..Default::default() }, &prior, &mut rng).unwrap();
    let panel: SeasonPanel = full.masked(2014, 8);
    let cfg = SamplerConfig { n_iter: 2000, thin: 2, adapt_window: 50, ..SamplerConfig::ci(3) };
    let draws = sample_posterior(&panel, &prior, &DataModelConfig::default(), &cfg).unwrap();
    let set = predictive_simulate(&draws, &panel, 2014, 8, 4500.0, 99).unwrap();
    assert_eq!(set.len(), draws.n_draws());
    let j = panel.index_of(2014).unwrap();
    for s in &set.samples {
        for t in 1..=8 {
            assert_eq!(s[t - 1], panel.get(j, t).unwrap());
        }
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }
    assert!(set.observed[..8].iter().all(|&o| o) && set.observed[8..].iter().all(|&o| !o));
    let again = predictive_simulate(&draws, &panel, 2014, 8, 4500.0, 99).unwrap();
    assert_eq!(set, again);
    assert!(predictive_simulate(&draws, &panel, 2014, 2, 4500.0, 99).is_err());
}
