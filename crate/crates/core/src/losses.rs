//! Empirical losses and score functions.
//!
//! * Bellman-error loss with infimum correction, for MDPs with per-step rewards.
//! * Outcome Bellman-residual loss, for deterministic MDPs with outcome rewards.
//!
//! The free functions recompute everything from a [`Dataset`]; the
//! incremental scorers keep running sums over an append-only stream and
//! produce bit-identical results because they add terms in the same order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::{HypothesisClass, QHypothesis};
use crate::mdp::{QFunction, StateId, Trajectory};
use crate::scalar::Scalar;

/// Append-only trajectory store; insertion order is episode order.
#[derive(Debug, Clone, Default)]
pub struct Dataset<T> {
    records: Vec<Trajectory<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new() -> Self {
        Dataset {
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, tau: Trajectory<T>) {
        self.records.push(tau);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Trajectory<T>] {
        &self.records
    }

    /// Copy with record `i` swapped for `tau`.
    pub fn replaced(&self, i: usize, tau: Trajectory<T>) -> Self {
        let mut out = self.clone();
        out.records[i] = tau;
        out
    }
}

impl<T: Scalar> FromIterator<Trajectory<T>> for Dataset<T> {
    fn from_iter<I: IntoIterator<Item = Trajectory<T>>>(iter: I) -> Self {
        Dataset {
            records: iter.into_iter().collect(),
        }
    }
}

/// Per-hypothesis score breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry<T> {
    pub id: usize,
    /// `η · f₁(s₁)` or `η · f̄₁`.
    pub optimism: T,
    pub loss: T,
    pub score: T,
}

impl<T: Scalar> ScoreEntry<T> {
    fn new(id: usize, optimism: T, loss: T) -> Self {
        ScoreEntry {
            id,
            optimism,
            loss,
            score: optimism - loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<T> {
    pub eta: T,
    pub entries: Vec<ScoreEntry<T>>,
}

impl<T: Scalar> ScoreReport<T> {
    pub fn scores(&self) -> Vec<T> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score report serialises")
    }
}

fn step_reward<T: Scalar>(tau: &Trajectory<T>, h: usize) -> Result<T> {
    tau.steps[h].reward.ok_or(Error::MissingStepRewards)
}

/// `max_{a'} f_{h+1}(s_{h+1}, a')`, zero after the last step.
fn continuation<T: Scalar, Q: QFunction<T> + ?Sized>(f_next: &Q, tau: &Trajectory<T>, h: usize) -> T {
    match tau.steps.get(h + 1) {
        Some(step) => f_next.state_value(h + 1, step.state),
        None => T::zero(),
    }
}

fn bellman_error_with<T, V, Q>(value_at: V, f_next: &Q, dataset: &Dataset<T>, h: usize) -> Result<T>
where
    T: Scalar,
    V: Fn(StateId, usize) -> T,
    Q: QFunction<T> + ?Sized,
{
    let mut total = T::zero();
    for tau in dataset.records() {
        let step = &tau.steps[h];
        let resid = value_at(step.state, step.action) - step_reward(tau, h)? - continuation(f_next, tau, h);
        total = total + resid * resid;
    }
    Ok(total)
}

/// `E_{D,h}(f_h, f_{h+1}) = Σ_τ (f_h(s_h, a_h) − r_h − max_{a'} f_{h+1}(s_{h+1}, a'))²`.
///
/// `f_h` supplies the step-`h` values and `f_next` the step-`h + 1` values.
pub fn squared_bellman_error<T, Q1, Q2>(f_h: &Q1, f_next: &Q2, dataset: &Dataset<T>, h: usize) -> Result<T>
where
    T: Scalar,
    Q1: QFunction<T> + ?Sized,
    Q2: QFunction<T> + ?Sized,
{
    bellman_error_with(|s, a| f_h.q(h, s, a), f_next, dataset, h)
}

/// `L^BE(f) = Σ_h E_h(f_h, f_{h+1}) − inf_{f'} Σ_h E_h(f'_h, f_{h+1})`.
///
/// For product classes the infimum splits per step; otherwise the joint class
/// is enumerated.
pub fn bellman_error_loss<T: Scalar>(
    f: &QHypothesis<T>,
    class: &HypothesisClass<T>,
    dataset: &Dataset<T>,
) -> Result<T> {
    let horizon = class.horizon();
    let mut own = T::zero();
    for h in 0..horizon {
        own = own + squared_bellman_error(f, f, dataset, h)?;
    }
    let inf = match class.factors() {
        Some(factors) => {
            let a_n = f.num_actions();
            let mut total = T::zero();
            for h in 0..horizon {
                let mut best = T::infinity();
                for layer in &factors.layers[h] {
                    let e = bellman_error_with(|s, a| layer[s * a_n + a], f, dataset, h)?;
                    best = best.min(e);
                }
                total = total + best;
            }
            total
        }
        None => {
            let mut best = T::infinity();
            for g in class.members() {
                let mut total = T::zero();
                for h in 0..horizon {
                    total = total + squared_bellman_error(g, f, dataset, h)?;
                }
                best = best.min(total);
            }
            best
        }
    };
    Ok(own - inf)
}

/// `R^(f)(τ) = Σ_h [f_h(s_h, a_h) − f_{h+1}(s_{h+1})]` with `f_{H+1} ≡ 0`.
pub fn residual_prediction<T: Scalar, Q: QFunction<T> + ?Sized>(f: &Q, tau: &Trajectory<T>) -> T {
    tau.steps.iter().enumerate().fold(T::zero(), |acc, (h, step)| {
        acc + f.q(h, step.state, step.action) - continuation(f, tau, h)
    })
}

/// `L^BR(f) = Σ_{(τ, r) ∈ D} (R^(f)(τ) − r)²`.
pub fn bellman_residual_loss<T: Scalar, Q: QFunction<T> + ?Sized>(f: &Q, dataset: &Dataset<T>) -> T {
    dataset.records().iter().fold(T::zero(), |acc, tau| {
        let d = residual_prediction(f, tau) - tau.outcome;
        acc + d * d
    })
}

/// `η · max_a f₁(s₁, a) − L^BE(f)`.
pub fn score_general<T: Scalar>(
    f: &QHypothesis<T>,
    class: &HypothesisClass<T>,
    dataset: &Dataset<T>,
    eta: T,
    initial_state: StateId,
) -> Result<ScoreEntry<T>> {
    let loss = bellman_error_loss(f, class, dataset)?;
    Ok(ScoreEntry::new(f.id, eta * f.state_value(0, initial_state), loss))
}

/// `f̄₁ = E_{s₁∼ρ} max_a f₁(s₁, a)`, by enumeration of `ρ`'s support.
pub fn distributional_optimism<T: Scalar, Q: QFunction<T> + ?Sized>(f: &Q, rho: &[(StateId, T)]) -> T {
    rho.iter()
        .fold(T::zero(), |acc, &(s, p)| acc + p * f.state_value(0, s))
}

/// `η · f̄₁ − L^BR(f)`. Reads only the dataset, `ρ` and `η`.
pub fn score_deterministic<T: Scalar>(
    f: &QHypothesis<T>,
    dataset: &Dataset<T>,
    eta: T,
    rho: &[(StateId, T)],
) -> ScoreEntry<T> {
    ScoreEntry::new(
        f.id,
        eta * distributional_optimism(f, rho),
        bellman_residual_loss(f, dataset),
    )
}

/// Running score state over an append-only dataset.
pub trait IncrementalScorer<T: Scalar>: Send {
    fn observe(&mut self, tau: &Trajectory<T>) -> Result<()>;
    fn report(&self, eta: T) -> ScoreReport<T>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Incremental form of [`score_deterministic`] for every class member.
pub struct ResidualScorer<'a, T> {
    class: &'a HypothesisClass<T>,
    optimism: Vec<T>,
    loss: Vec<T>,
    count: usize,
}

impl<'a, T: Scalar> ResidualScorer<'a, T> {
    pub fn new(class: &'a HypothesisClass<T>, rho: &[(StateId, T)]) -> Self {
        ResidualScorer {
            class,
            optimism: class
                .members()
                .iter()
                .map(|f| distributional_optimism(f, rho))
                .collect(),
            loss: vec![T::zero(); class.len()],
            count: 0,
        }
    }
}

impl<'a, T: Scalar> IncrementalScorer<T> for ResidualScorer<'a, T> {
    fn observe(&mut self, tau: &Trajectory<T>) -> Result<()> {
        for (f, loss) in self.class.members().iter().zip(self.loss.iter_mut()) {
            let d = residual_prediction(f, tau) - tau.outcome;
            *loss = *loss + d * d;
        }
        self.count += 1;
        Ok(())
    }

    fn report(&self, eta: T) -> ScoreReport<T> {
        ScoreReport {
            eta,
            entries: self
                .optimism
                .iter()
                .zip(&self.loss)
                .enumerate()
                .map(|(id, (&o, &l))| ScoreEntry::new(id, eta * o, l))
                .collect(),
        }
    }

    fn len(&self) -> usize {
        self.count
    }
}

/// Incremental form of [`score_general`] for every class member.
///
/// Keeps per-step accumulators `E_h(g_h, f_{h+1})` for every candidate `g`
/// (a factor layer for product classes, a member otherwise) and every `f`.
pub struct BellmanErrorScorer<'a, T> {
    class: &'a HypothesisClass<T>,
    initial_state: StateId,
    /// `cross[f][g][h]`.
    cross: Vec<Vec<Vec<T>>>,
    /// `own[f][h] = E_h(f_h, f_{h+1})`.
    own: Vec<Vec<T>>,
    count: usize,
}

impl<'a, T: Scalar> BellmanErrorScorer<'a, T> {
    pub fn new(class: &'a HypothesisClass<T>, initial_state: StateId) -> Self {
        let horizon = class.horizon();
        let candidates = match class.factors() {
            Some(f) => f.layers.iter().map(Vec::len).max().unwrap_or(0),
            None => class.len(),
        };
        BellmanErrorScorer {
            class,
            initial_state,
            cross: vec![vec![vec![T::zero(); horizon]; candidates]; class.len()],
            own: vec![vec![T::zero(); horizon]; class.len()],
            count: 0,
        }
    }
}

impl<'a, T: Scalar> IncrementalScorer<T> for BellmanErrorScorer<'a, T> {
    fn observe(&mut self, tau: &Trajectory<T>) -> Result<()> {
        let horizon = self.class.horizon();
        for h in 0..horizon {
            step_reward(tau, h)?;
        }
        for f in self.class.members() {
            for h in 0..horizon {
                let step = tau.steps[h];
                let r = step_reward(tau, h)?;
                let cont = continuation(f, tau, h);
                let own = f.q(h, step.state, step.action) - r - cont;
                self.own[f.id][h] = self.own[f.id][h] + own * own;
                match self.class.factors() {
                    Some(factors) => {
                        let a_n = f.num_actions();
                        for (i, layer) in factors.layers[h].iter().enumerate() {
                            let d = layer[step.state * a_n + step.action] - r - cont;
                            self.cross[f.id][i][h] = self.cross[f.id][i][h] + d * d;
                        }
                    }
                    None => {
                        for g in self.class.members() {
                            let d = g.q(h, step.state, step.action) - r - cont;
                            self.cross[f.id][g.id][h] = self.cross[f.id][g.id][h] + d * d;
                        }
                    }
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    fn report(&self, eta: T) -> ScoreReport<T> {
        let horizon = self.class.horizon();
        let entries = self
            .class
            .members()
            .iter()
            .map(|f| {
                let own = self.own[f.id].iter().fold(T::zero(), |acc, &e| acc + e);
                let inf = match self.class.factors() {
                    Some(factors) => (0..horizon).fold(T::zero(), |acc, h| {
                        let best = (0..factors.layers[h].len())
                            .map(|i| self.cross[f.id][i][h])
                            .fold(T::infinity(), T::min);
                        acc + best
                    }),
                    None => self.cross[f.id]
                        .iter()
                        .map(|per_step| per_step.iter().fold(T::zero(), |acc, &e| acc + e))
                        .fold(T::infinity(), T::min),
                };
                ScoreEntry::new(f.id, eta * f.state_value(0, self.initial_state), own - inf)
            })
            .collect();
        ScoreReport { eta, entries }
    }

    fn len(&self) -> usize {
        self.count
    }
}
