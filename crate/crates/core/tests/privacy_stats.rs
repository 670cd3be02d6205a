use dprl_core::poc::{build_instance, InstanceName};
use dprl_core::privacy::{
    advanced_composition, audit_sensitivity, exponential_mechanism, invert_budget, residual_range,
    residual_sensitivity, sensitivity_bound, utility_gap, InversionMode, PrivacyBudget, Setting,
};
use dprl_core::rng::{substream, StreamPurpose};
use dprl_core::validate::random_table_class;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn draw_counts(scores: &[f64], beta: f64, draws: u64, seed: u64) -> Vec<u64> {
    let mut counts = vec![0u64; scores.len()];
    for i in 0..draws {
        let mut rng = substream(seed, StreamPurpose::Mechanism, i);
        counts[exponential_mechanism(scores, beta, &mut rng).unwrap().id] += 1;
    }
    counts
}

#[test]
fn zero_temperature_is_uniform() {
    let n = 20_000;
    let counts = draw_counts(&[0.3, -2.0, 5.0, 1.0, 0.0, 7.5, -1.0, 2.0, 2.0, 0.1], 0.0, n, 1);
    let expected = n as f64 / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = ChiSquared::new((counts.len() - 1) as f64).unwrap().sf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

#[test]
fn two_member_odds_follow_the_exponential_weights() {
    let n = 20_000;
    let beta: f64 = 0.7;
    let counts = draw_counts(&[0.0, 1.0], beta, n, 2);
    let p = beta.exp() / (1.0 + beta.exp());
    let freq = counts[1] as f64 / n as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * sigma, "freq {freq}, want {p} ± {}", 3.0 * sigma);
}

#[test]
fn huge_temperature_picks_the_maximum() {
    let n = 20_000;
    let counts = draw_counts(&[0.0, 0.5, 1.0], 1e6, n, 3);
    assert!(counts[2] as f64 / n as f64 >= 0.9999, "{counts:?}");
}

#[test]
fn utility_bound_holds_on_random_scores() {
    let (k, alpha, f) = (1000usize, 0.05, 50usize);
    let mut violations = 0;
    let mut rng = substream(4, StreamPurpose::Other(1), 0);
    for i in 0..1000u64 {
        let scores: Vec<f64> = (0..f).map(|_| rand::Rng::gen_range(&mut rng, 0.0..20.0)).collect();
        let beta = 0.05 * (1 + i % 20) as f64;
        let mut m = substream(4, StreamPurpose::Mechanism, i);
        let id = exponential_mechanism(&scores, beta, &mut m).unwrap().id;
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if best - scores[id] > utility_gap(beta, f, k, alpha) {
            violations += 1;
        }
    }
    assert!(violations <= 1, "{violations} violations");
}

#[test]
fn audits_stay_within_the_declared_bounds() {
    for (setting, horizon) in [(Setting::General, 1), (Setting::General, 2), (Setting::Deterministic, 2), (Setting::Deterministic, 4)] {
        let mut rng = substream(6, StreamPurpose::Audit, horizon as u64);
        let class = random_table_class(3, 2, horizon, 4, &mut rng);
        let report = audit_sensitivity(setting, &class, 3, 3000, &mut rng).unwrap();
        let bound: f64 = sensitivity_bound(setting, horizon);
        assert!(report.max_change <= bound, "{setting:?} H={horizon}: {} > {bound}", report.max_change);
        assert!(report.max_change > 0.0);
    }
    assert_eq!(sensitivity_bound::<f64>(Setting::General, 4), 32.0);
    assert_eq!(sensitivity_bound::<f64>(Setting::Deterministic, 4), 25.0);
}

#[test]
fn rule_classes_have_unit_residual_range() {
    for name in InstanceName::ALL {
        let inst = build_instance::<f64>(name);
        let (lo, hi) = residual_range(&inst.class, &inst.mdp).unwrap();
        assert_eq!((lo, hi), (0.0, 1.0));
        assert_eq!(residual_sensitivity(lo, hi), 1.0);
    }
}

#[test]
fn budget_composes_back() {
    let b = PrivacyBudget::new(5.0, 2.5e-7, 200, 1.0, InversionMode::Exact).unwrap();
    assert!(b.composed_epsilon() <= 5.0 && b.composed_epsilon() >= 5.0 - 1e-9);
    assert_eq!(b.beta, b.eps0 / 2.0);
    assert!(PrivacyBudget::new(5.0, 1.0, 10, 1.0, InversionMode::Exact).is_err());
    assert!(PrivacyBudget::new(-1.0, 0.1, 10, 1.0, InversionMode::Exact).is_err());
}

proptest! {
    #[test]
    fn exact_inversion_lands_in_window(eps in 0.01f64..20.0, log_delta in -12.0f64..-1.0, m in 1usize..5000) {
        let delta = 10f64.powf(log_delta);
        let e0 = invert_budget(eps, delta, m, InversionMode::Exact).unwrap();
        let back = advanced_composition(e0, m, delta);
        prop_assert!(back <= eps && back >= eps - 1e-9, "eps {} composed {}", eps, back);
    }

    #[test]
    fn inversion_is_monotone(eps in 0.01f64..20.0, de in 0.0f64..5.0, log_delta in -12.0f64..-1.0, m in 1usize..2000, dm in 0usize..2000) {
        let delta = 10f64.powf(log_delta);
        for mode in [InversionMode::Exact, InversionMode::Simplified] {
            let base = invert_budget(eps, delta, m, mode).unwrap();
            prop_assert!(invert_budget(eps + de, delta, m, mode).unwrap() >= base);
            prop_assert!(invert_budget(eps, delta, m + dm, mode).unwrap() <= base);
        }
    }
}
