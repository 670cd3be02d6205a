#![allow(dead_code)]

use dprl_core::mdp::{RewardMode, TabularMdp};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random MDP with rewards in `[0, 1/H]`, so every return lies in `[0, 1]`.
pub fn random_mdp(
    rng: &mut ChaCha8Rng,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    deterministic: bool,
) -> TabularMdp<f64> {
    random_mdp_from(rng, num_states, num_actions, horizon, deterministic, vec![(0, 1.0)])
}

pub fn random_mdp_from(
    rng: &mut ChaCha8Rng,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    deterministic: bool,
    initial: Vec<(usize, f64)>,
) -> TabularMdp<f64> {
    let cells = num_states * num_actions;
    let row = |rng: &mut ChaCha8Rng| -> Vec<(usize, f64)> {
        if deterministic {
            return vec![(rng.gen_range(0..num_states), 1.0)];
        }
        let w: Vec<f64> = (0..num_states).map(|_| rng.gen::<f64>() + 0.05).collect();
        let total: f64 = w.iter().sum();
        let mut out: Vec<(usize, f64)> = w.iter().enumerate().map(|(s, &x)| (s, x / total)).collect();
        // absorb rounding so the row sums to one
        let rest: f64 = out[1..].iter().map(|&(_, p)| p).sum();
        out[0].1 = 1.0 - rest;
        out
    };
    let transitions = (0..horizon - 1)
        .map(|_| (0..cells).map(|_| row(rng)).collect())
        .collect();
    let scale = 1.0 / horizon as f64;
    let rewards = (0..horizon)
        .map(|_| (0..cells).map(|_| scale * rng.gen::<f64>()).collect())
        .collect();
    TabularMdp::new(
        num_states,
        num_actions,
        horizon,
        transitions,
        rewards,
        initial,
        RewardMode::PerStep,
    )
    .expect("random MDP is valid")
}

/// Every deterministic Markov policy as a flat `[h][s]` action table.
pub fn all_policies(num_states: usize, num_actions: usize, horizon: usize) -> Vec<Vec<usize>> {
    let slots = num_states * horizon;
    let total = num_actions.pow(slots as u32);
    (0..total)
        .map(|mut code| {
            (0..slots)
                .map(|_| {
                    let a = code % num_actions;
                    code /= num_actions;
                    a
                })
                .collect()
        })
        .collect()
}
