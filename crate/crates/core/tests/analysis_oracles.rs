mod common;

use common::{random_mdp, random_mdp_from};
use dprl_core::analysis::{
    averaged_coverability, coverability, per_context_coverability, plateau_episode, reachability_count, RegretSeries,
};
use dprl_core::mdp::{occupancy, GreedyPolicy};
use dprl_core::poc::{build_instance, InstanceName, HORIZON};
use dprl_core::rng::{substream, StreamPurpose};
use dprl_core::validate::random_table_class;
use proptest::prelude::*;

/// `min_μ max_c m[c] / μ[c]` over the 4-cell simplex by exhaustive grids,
/// zooming in around the best point found so far.
fn grid_minimax(m: &[f64; 4]) -> f64 {
    let eval = |mu: [f64; 4]| {
        m.iter().zip(&mu).fold(0.0f64, |acc, (&x, &p)| {
            if x == 0.0 {
                acc
            } else if p <= 0.0 {
                f64::INFINITY
            } else {
                acc.max(x / p)
            }
        })
    };
    let steps = 40;
    let mut center = [0.5, 0.5, 0.5];
    let mut width = 0.5;
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let mut round_best = (f64::INFINITY, center);
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let at = |c: f64, t: usize| c - width + 2.0 * width * t as f64 / steps as f64;
                    let p = [at(center[0], i), at(center[1], j), at(center[2], k)];
                    let last = 1.0 - p[0] - p[1] - p[2];
                    if p.iter().any(|&x| x < 0.0) || last < 0.0 {
                        continue;
                    }
                    let v = eval([p[0], p[1], p[2], last]);
                    if v < round_best.0 {
                        round_best = (v, p);
                    }
                }
            }
        }
        best = best.min(round_best.0);
        center = round_best.1;
        width /= 4.0;
    }
    best
}

#[test]
fn closed_form_coverability_matches_grid_search() {
    for trial in 0..10u64 {
        let mut rng = substream(trial, StreamPurpose::Other(11), 0);
        let mdp = random_mdp(&mut rng, 2, 2, 2 + (trial as usize % 2), false);
        let class = random_table_class(2, 2, mdp.horizon(), 2 + trial as usize % 3, &mut rng);
        let occ: Vec<_> = class.members().iter().map(|f| occupancy(&mdp, &GreedyPolicy::new(f))).collect();
        let grid = (0..mdp.horizon())
            .map(|h| {
                let mut m = [0.0; 4];
                for (c, slot) in m.iter_mut().enumerate() {
                    *slot = occ.iter().map(|d| d[h][c]).fold(0.0, f64::max);
                }
                grid_minimax(&m)
            })
            .fold(0.0, f64::max);
        let closed = coverability(&mdp, &class);
        assert!((closed - grid).abs() <= 1e-3, "trial {trial}: closed {closed}, grid {grid}");
    }
}

#[test]
fn reachability_count_is_bounded_by_coverability() {
    for name in InstanceName::ALL {
        let inst = build_instance::<f64>(name);
        for (s1, _, c) in per_context_coverability(&inst.mdp, &inst.class).unwrap() {
            let n = reachability_count(&inst.mdp, &inst.class, s1).unwrap();
            assert!(n as f64 <= HORIZON as f64 * c + 1e-9, "{name} context {s1}: N {n}, C {c}");
        }
        let pooled = coverability(&inst.mdp, &inst.class);
        let averaged = averaged_coverability(&inst.mdp, &inst.class).unwrap();
        assert!(averaged >= pooled - 1e-9, "{name}: C' {averaged} < C {pooled}");
    }
}

proptest! {
    #[test]
    fn averaged_coverability_dominates_pooled(seed in any::<u64>()) {
        let mut rng = substream(seed, StreamPurpose::Other(12), 0);
        let mdp = random_mdp_from(&mut rng, 3, 2, 2, false, vec![(0, 0.2), (1, 0.3), (2, 0.5)]);
        let class = random_table_class(3, 2, 2, 3, &mut rng);
        let pooled = coverability(&mdp, &class);
        let averaged = averaged_coverability(&mdp, &class).unwrap();
        prop_assert!(averaged >= pooled - 1e-12);
    }

    #[test]
    fn cumulative_regret_is_monotone(inst in proptest::collection::vec(0.0f64..1.0, 1..200)) {
        let s = RegretSeries::from_instantaneous("r".into(), "m".into(), "easy".into(), 0, inst);
        prop_assert!(s.cumulative.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn plateau_is_monotone_in_the_fraction(inst in proptest::collection::vec(0.0f64..1.0, 1..200), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let s = RegretSeries::from_instantaneous("r".into(), "m".into(), "easy".into(), 0, inst);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = plateau_episode(&s.cumulative, lo);
        let p_hi = plateau_episode(&s.cumulative, hi);
        prop_assert!(p_lo <= p_hi);
        prop_assert!(p_hi >= 1 && p_hi <= s.episodes());
    }
}
