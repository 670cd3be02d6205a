//! Finite-horizon episodic tabular MDPs: construction, trajectory sampling,
//! exact policy evaluation, optimal values and the Bellman operator.
//!
//! Steps are indexed `0..horizon` internally; step `h` here is step `h + 1`
//! in the usual one-based notation. State-action tables are flat vectors
//! indexed by `s * num_actions + a`.

use std::marker::PhantomData;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax_lowest, Scalar};

pub type StateId = usize;
pub type ActionId = usize;

/// Whether per-step rewards are revealed or only their sum at the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    PerStep,
    OutcomeOnly,
}

/// Sparse distribution over successor states.
pub type TransitionRow<T> = Vec<(StateId, T)>;

#[derive(Debug, Clone)]
pub struct TabularMdp<T> {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    /// `transitions[h][s * A + a]` for `h < horizon - 1`; the episode ends after the last step.
    transitions: Vec<Vec<TransitionRow<T>>>,
    /// `rewards[h][s * A + a]`.
    rewards: Vec<Vec<T>>,
    initial: TransitionRow<T>,
    reward_mode: RewardMode,
    deterministic: bool,
}

fn tolerance<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

impl<T: Scalar> TabularMdp<T> {
    /// Validates and builds an MDP.
    ///
    /// `transitions` must hold `horizon - 1` layers of `num_states * num_actions`
    /// rows; `rewards` must hold `horizon` layers.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        transitions: Vec<Vec<TransitionRow<T>>>,
        rewards: Vec<Vec<T>>,
        initial: TransitionRow<T>,
        reward_mode: RewardMode,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::InvalidMdp(
                "states, actions and horizon must be positive".into(),
            ));
        }
        let cells = num_states * num_actions;
        if transitions.len() != horizon - 1 {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition layers, got {}",
                horizon - 1,
                transitions.len()
            )));
        }
        if rewards.len() != horizon || rewards.iter().any(|r| r.len() != cells) {
            return Err(Error::InvalidMdp("reward tables have the wrong shape".into()));
        }
        let tol = tolerance::<T>();
        let check_row = |row: &TransitionRow<T>, what: &str| -> Result<()> {
            let mut total = T::zero();
            for &(s, p) in row {
                if s >= num_states {
                    return Err(Error::InvalidMdp(format!("{what}: state {s} out of range")));
                }
                if !(p >= T::zero()) {
                    return Err(Error::InvalidMdp(format!("{what}: negative probability")));
                }
                total = total + p;
            }
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidMdp(format!("{what}: sums to {total}, not 1")));
            }
            Ok(())
        };
        for (h, layer) in transitions.iter().enumerate() {
            if layer.len() != cells {
                return Err(Error::InvalidMdp(format!("transition layer {h} has the wrong shape")));
            }
            for (idx, row) in layer.iter().enumerate() {
                check_row(row, &format!("P[{h}][{idx}]"))?;
            }
        }
        check_row(&initial, "initial distribution")?;
        for layer in &rewards {
            if layer.iter().any(|&r| !(r >= T::zero() && r <= T::one())) {
                return Err(Error::InvalidMdp("rewards must lie in [0, 1]".into()));
            }
        }
        let deterministic = transitions
            .iter()
            .flatten()
            .all(|row| row.len() == 1 && row[0].1 == T::one());
        let mdp = TabularMdp {
            num_states,
            num_actions,
            horizon,
            transitions,
            rewards,
            initial,
            reward_mode,
            deterministic,
        };
        let max_return = mdp.max_reachable_return();
        if max_return > T::one() + tol {
            return Err(Error::InvalidMdp(format!(
                "returns must be normalised to [0, 1]; a reachable trajectory earns {max_return}"
            )));
        }
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    /// True when every transition row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// The initial state when `ρ` is a point mass.
    pub fn fixed_initial_state(&self) -> Option<StateId> {
        match self.initial.as_slice() {
            [(s, p)] if *p == T::one() => Some(*s),
            _ => None,
        }
    }

    pub fn initial_distribution(&self) -> &[(StateId, T)] {
        &self.initial
    }

    #[inline]
    pub fn cell(&self, s: StateId, a: ActionId) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn reward(&self, h: usize, s: StateId, a: ActionId) -> T {
        self.rewards[h][self.cell(s, a)]
    }

    /// Successor distribution of `(s, a)` at step `h`; empty at the last step.
    #[inline]
    pub fn successors(&self, h: usize, s: StateId, a: ActionId) -> &[(StateId, T)] {
        if h + 1 >= self.horizon {
            &[]
        } else {
            &self.transitions[h][self.cell(s, a)]
        }
    }

    /// Unique successor in a deterministic MDP (`None` after the last step).
    pub fn next_state(&self, h: usize, s: StateId, a: ActionId) -> Option<StateId> {
        self.successors(h, s, a).first().map(|&(n, _)| n)
    }

    /// Same dynamics and rewards, but with a point-mass initial distribution at `s`.
    pub fn with_initial_state(&self, s: StateId) -> Result<Self> {
        if s >= self.num_states {
            return Err(Error::InvalidMdp(format!("state {s} out of range")));
        }
        let mut out = self.clone();
        out.initial = vec![(s, T::one())];
        Ok(out)
    }

    /// Per-step sets of states reachable under some action sequence.
    pub fn reachable_states(&self) -> Vec<Vec<bool>> {
        let mut reach = vec![vec![false; self.num_states]; self.horizon];
        for &(s, p) in &self.initial {
            if p > T::zero() {
                reach[0][s] = true;
            }
        }
        for h in 0..self.horizon.saturating_sub(1) {
            for s in 0..self.num_states {
                if !reach[h][s] {
                    continue;
                }
                for a in 0..self.num_actions {
                    for &(n, p) in self.successors(h, s, a) {
                        if p > T::zero() {
                            reach[h + 1][n] = true;
                        }
                    }
                }
            }
        }
        reach
    }

    /// Largest return of any trajectory starting in the support of `ρ`.
    pub fn max_reachable_return(&self) -> T {
        let reach = self.reachable_states();
        let mut next = vec![T::zero(); self.num_states];
        for h in (0..self.horizon).rev() {
            let mut cur = vec![T::zero(); self.num_states];
            for s in (0..self.num_states).filter(|&s| reach[h][s]) {
                let mut best = T::neg_infinity();
                for a in 0..self.num_actions {
                    let mut v = self.reward(h, s, a);
                    let cont = self
                        .successors(h, s, a)
                        .iter()
                        .filter(|(_, p)| *p > T::zero())
                        .map(|&(n, _)| next[n])
                        .fold(T::zero(), T::max);
                    v = v + cont;
                    best = best.max(v);
                }
                cur[s] = best;
            }
            next = cur;
        }
        self.initial
            .iter()
            .filter(|(_, p)| *p > T::zero())
            .map(|&(s, _)| next[s])
            .fold(T::zero(), T::max)
    }
}

/// Action-value accessor `f_h(s, a)`, with `f_H ≡ 0` past the horizon.
pub trait QFunction<T: Scalar> {
    fn horizon(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn q(&self, h: usize, s: StateId, a: ActionId) -> T;

    /// `max_a f_h(s, a)`, zero past the horizon.
    fn state_value(&self, h: usize, s: StateId) -> T {
        if h >= self.horizon() {
            return T::zero();
        }
        (0..self.num_actions())
            .map(|a| self.q(h, s, a))
            .fold(T::neg_infinity(), T::max)
    }

    /// Greedy action, lowest index on ties.
    fn greedy_action(&self, h: usize, s: StateId) -> ActionId {
        let values: Vec<T> = (0..self.num_actions()).map(|a| self.q(h, s, a)).collect();
        argmax_lowest(&values).unwrap_or(0)
    }
}

/// Deterministic Markov policy.
pub trait Policy {
    fn action(&self, h: usize, s: StateId) -> ActionId;
}

impl<F: Fn(usize, StateId) -> ActionId> Policy for F {
    fn action(&self, h: usize, s: StateId) -> ActionId {
        self(h, s)
    }
}

/// `π_f`: greedy with respect to a Q-function, lowest action index on ties.
pub struct GreedyPolicy<'a, T, Q: ?Sized> {
    q: &'a Q,
    _scalar: PhantomData<T>,
}

impl<'a, T: Scalar, Q: QFunction<T> + ?Sized> GreedyPolicy<'a, T, Q> {
    pub fn new(q: &'a Q) -> Self {
        GreedyPolicy {
            q,
            _scalar: PhantomData,
        }
    }

    pub fn q_function(&self) -> &Q {
        self.q
    }
}

impl<'a, T: Scalar, Q: QFunction<T> + ?Sized> Policy for GreedyPolicy<'a, T, Q> {
    fn action(&self, h: usize, s: StateId) -> ActionId {
        self.q.greedy_action(h, s)
    }
}

/// One executed step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step<T> {
    pub state: StateId,
    pub action: ActionId,
    /// Present only in per-step reward mode.
    pub reward: Option<T>,
}

/// One episode: `H` steps plus the trajectory return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
    /// `Σ_h R_h(s_h, a_h)`; always populated.
    pub outcome: T,
    pub episode: usize,
}

impl<T: Scalar> Trajectory<T> {
    pub fn has_step_rewards(&self) -> bool {
        self.steps.iter().all(|s| s.reward.is_some())
    }
}

fn draw<T: Scalar, R: Rng + ?Sized>(row: &[(StateId, T)], rng: &mut R) -> StateId {
    if let [(s, _)] = row {
        return *s;
    }
    let u = T::lit(rng.gen::<f64>());
    let mut acc = T::zero();
    for &(s, p) in row {
        acc = acc + p;
        if u < acc {
            return s;
        }
    }
    // rounding: fall back to the last state with positive mass
    row.iter()
        .rev()
        .find(|(_, p)| *p > T::zero())
        .map(|&(s, _)| s)
        .expect("distribution has positive mass")
}

/// Runs one episode of `policy` in `mdp`.
pub fn sample_trajectory<T: Scalar, P: Policy + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMdp<T>,
    policy: &P,
    rng: &mut R,
    episode: usize,
) -> Trajectory<T> {
    let mut s = draw(&mdp.initial, rng);
    let mut steps = Vec::with_capacity(mdp.horizon);
    let mut outcome = T::zero();
    for h in 0..mdp.horizon {
        assert!(s < mdp.num_states, "state {s} out of range");
        let a = policy.action(h, s);
        assert!(a < mdp.num_actions, "action {a} out of range");
        let r = mdp.reward(h, s, a);
        outcome = outcome + r;
        steps.push(Step {
            state: s,
            action: a,
            reward: (mdp.reward_mode == RewardMode::PerStep).then_some(r),
        });
        if h + 1 < mdp.horizon {
            s = draw(mdp.successors(h, s, a), rng);
        }
    }
    Trajectory {
        steps,
        outcome,
        episode,
    }
}

/// `V^π_h(s)` for every step, with a trailing all-zero layer for `h = H`.
pub fn policy_state_values<T: Scalar, P: Policy + ?Sized>(
    mdp: &TabularMdp<T>,
    policy: &P,
) -> Vec<Vec<T>> {
    let mut values = vec![vec![T::zero(); mdp.num_states]; mdp.horizon + 1];
    for h in (0..mdp.horizon).rev() {
        for s in 0..mdp.num_states {
            let a = policy.action(h, s);
            let mut v = mdp.reward(h, s, a);
            for &(n, p) in mdp.successors(h, s, a) {
                v = v + p * values[h + 1][n];
            }
            values[h][s] = v;
        }
    }
    values
}

/// Exact `J(π) = E_{s₁∼ρ} V^π_1(s₁)`.
pub fn policy_value<T: Scalar, P: Policy + ?Sized>(mdp: &TabularMdp<T>, policy: &P) -> T {
    let values = policy_state_values(mdp, policy);
    mdp.initial
        .iter()
        .fold(T::zero(), |acc, &(s, p)| acc + p * values[0][s])
}

/// `Q★`, `V★` and `J★` from backward induction.
#[derive(Debug, Clone)]
pub struct OptimalSolution<T> {
    /// `q[h][s * A + a]`.
    pub q: Vec<Vec<T>>,
    /// `v[h][s]`, with `v[H] ≡ 0`.
    pub v: Vec<Vec<T>>,
    pub value: T,
    num_actions: usize,
}

impl<T: Scalar> QFunction<T> for OptimalSolution<T> {
    fn horizon(&self) -> usize {
        self.q.len()
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn q(&self, h: usize, s: StateId, a: ActionId) -> T {
        self.q[h][s * self.num_actions + a]
    }
}

/// `[T_h f](s, a) = R_h(s, a) + E_{s'} max_{a'} f(s', a')` for every `(s, a)`.
///
/// `next_q` is the step-`h + 1` action-value table; it is ignored at the last
/// step, where the continuation is zero.
pub fn apply_bellman<T: Scalar>(mdp: &TabularMdp<T>, h: usize, next_q: &[T]) -> Vec<T> {
    let a_n = mdp.num_actions;
    let last = h + 1 >= mdp.horizon;
    if !last {
        assert_eq!(next_q.len(), mdp.num_states * a_n, "next-step table has the wrong shape");
    }
    let next_v: Vec<T> = if last {
        Vec::new()
    } else {
        next_q
            .chunks(a_n)
            .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
            .collect()
    };
    let mut out = Vec::with_capacity(mdp.num_states * a_n);
    for s in 0..mdp.num_states {
        for a in 0..a_n {
            let mut v = mdp.reward(h, s, a);
            for &(n, p) in mdp.successors(h, s, a) {
                v = v + p * next_v[n];
            }
            out.push(v);
        }
    }
    out
}

/// Backward induction for `Q★`; `J★ = E_ρ max_a Q★_1(s, a)`.
pub fn optimal_value<T: Scalar>(mdp: &TabularMdp<T>) -> OptimalSolution<T> {
    let a_n = mdp.num_actions;
    let mut q = vec![Vec::new(); mdp.horizon];
    let mut v = vec![vec![T::zero(); mdp.num_states]; mdp.horizon + 1];
    for h in (0..mdp.horizon).rev() {
        let next: &[T] = if h + 1 < mdp.horizon { &q[h + 1] } else { &[] };
        let qh = apply_bellman(mdp, h, next);
        for s in 0..mdp.num_states {
            v[h][s] = qh[s * a_n..(s + 1) * a_n]
                .iter()
                .copied()
                .fold(T::neg_infinity(), T::max);
        }
        q[h] = qh;
    }
    let value = mdp
        .initial
        .iter()
        .fold(T::zero(), |acc, &(s, p)| acc + p * v[0][s]);
    OptimalSolution {
        q,
        v,
        value,
        num_actions: a_n,
    }
}

/// Occupancy measures `d^π_h(s, a)` by forward propagation, `[h][s * A + a]`.
pub fn occupancy<T: Scalar, P: Policy + ?Sized>(mdp: &TabularMdp<T>, policy: &P) -> Vec<Vec<T>> {
    let a_n = mdp.num_actions;
    let mut state_mass = vec![T::zero(); mdp.num_states];
    for &(s, p) in &mdp.initial {
        state_mass[s] = state_mass[s] + p;
    }
    let mut out = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let mut layer = vec![T::zero(); mdp.num_states * a_n];
        let mut next_mass = vec![T::zero(); mdp.num_states];
        for s in 0..mdp.num_states {
            let m = state_mass[s];
            if m == T::zero() {
                continue;
            }
            let a = policy.action(h, s);
            layer[s * a_n + a] = layer[s * a_n + a] + m;
            for &(n, p) in mdp.successors(h, s, a) {
                next_mass[n] = next_mass[n] + m * p;
            }
        }
        out.push(layer);
        state_mass = next_mass;
    }
    out
}
