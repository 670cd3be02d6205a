//! Exponential mechanism, score sensitivity and the (ε, δ) accountant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::HypothesisClass;
use crate::losses::{bellman_error_loss, bellman_residual_loss, Dataset};
use crate::mdp::{QFunction, Step, TabularMdp, Trajectory};
use crate::scalar::Scalar;

/// Which learner a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Per-step rewards, Bellman-error loss.
    General,
    /// Deterministic transitions, outcome reward, Bellman-residual loss.
    Deterministic,
}

/// How the per-update budget is derived from the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionMode {
    /// Root of the full advanced-composition formula.
    #[default]
    Exact,
    /// `ε / √(2M ln(1/δ))`, dropping the second-order term.
    Simplified,
}

impl std::str::FromStr for InversionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(InversionMode::Exact),
            "simplified" => Ok(InversionMode::Simplified),
            other => Err(Error::Config(format!(
                "unknown inversion mode {other:?} (expected exact or simplified)"
            ))),
        }
    }
}

/// `ε' = ε₀ √(2k ln(1/δ')) + k ε₀ (e^{ε₀} − 1)`.
pub fn advanced_composition<T: Scalar>(eps0: T, k: usize, delta: T) -> T {
    let k = T::from_count(k);
    let two = T::lit(2.0);
    eps0 * (two * k * (T::one() / delta).ln()).sqrt() + k * eps0 * eps0.exp_m1()
}

fn check_budget<T: Scalar>(epsilon: T, delta: T, num_updates: usize) -> Result<()> {
    if !(epsilon > T::zero()) || epsilon.is_nan() {
        return Err(Error::InvalidPrivacy(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::InvalidPrivacy(format!("delta must lie in (0, 1), got {delta}")));
    }
    if num_updates == 0 {
        return Err(Error::InvalidPrivacy("number of updates must be >= 1".into()));
    }
    Ok(())
}

/// Per-update `ε₀` such that `M` compositions stay within `ε` at `δ`.
///
/// Exact mode bisects on `(0, ε]` and returns the lower bracket, so the
/// composed value never exceeds `ε`.
pub fn invert_budget<T: Scalar>(epsilon: T, delta: T, num_updates: usize, mode: InversionMode) -> Result<T> {
    check_budget(epsilon, delta, num_updates)?;
    match mode {
        InversionMode::Simplified => {
            let m = T::from_count(num_updates);
            Ok(epsilon / (T::lit(2.0) * m * (T::one() / delta).ln()).sqrt())
        }
        InversionMode::Exact => {
            if epsilon.is_infinite() {
                return Ok(epsilon);
            }
            let compose = |e: T| advanced_composition(e, num_updates, delta);
            let (mut lo, mut hi) = (T::zero(), epsilon);
            if compose(hi) <= epsilon {
                return Ok(hi);
            }
            // bisect to machine precision: near the root the composed map has
            // slope ≥ √(2M ln(1/δ)), so a fixed 1e-10 bracket on ε₀ could leave
            // ε' further than 1e-9 below ε for large M
            loop {
                let mid = lo + (hi - lo) / T::lit(2.0);
                if mid <= lo || mid >= hi {
                    break;
                }
                if compose(mid) <= epsilon {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
    }
}

/// Worst-case score sensitivity: `8H` (general) or `(H + 1)²` (deterministic).
pub fn sensitivity_bound<T: Scalar>(setting: Setting, horizon: usize) -> T {
    let h = T::from_count(horizon);
    match setting {
        Setting::General => T::lit(8.0) * h,
        Setting::Deterministic => (h + T::one()) * (h + T::one()),
    }
}

/// Range `[lo, hi]` of `R^(f)(τ)` over every member and every trajectory the
/// deterministic MDP can produce.
///
/// Both the class and the MDP are public, so a bound derived from them is
/// data independent. Enumerates `|supp ρ| · A^H` action sequences.
pub fn residual_range<T: Scalar>(class: &HypothesisClass<T>, mdp: &TabularMdp<T>) -> Result<(T, T)> {
    if !mdp.is_deterministic() {
        return Err(Error::NotDeterministic);
    }
    let horizon = mdp.horizon();
    let a_n = mdp.num_actions();
    let sequences = a_n.pow(horizon as u32);
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let mut states = vec![0; horizon];
    let mut actions = vec![0; horizon];
    for &(s0, _) in mdp.initial_distribution() {
        for code in 0..sequences {
            let mut c = code;
            let mut s = s0;
            for h in 0..horizon {
                actions[h] = c % a_n;
                c /= a_n;
                states[h] = s;
                if h + 1 < horizon {
                    s = mdp.next_state(h, s, actions[h]).expect("deterministic successor");
                }
            }
            for f in class.members() {
                let mut r = T::zero();
                for h in 0..horizon {
                    r = r + f.q(h, states[h], actions[h]);
                    if h + 1 < horizon {
                        r = r - f.state_value(h + 1, states[h + 1]);
                    }
                }
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
    }
    Ok((lo, hi))
}

/// Sensitivity of the Bellman-residual score when every prediction lies in
/// `[lo, hi]` and outcomes lie in `[0, 1]`: the largest `(R − r)²`.
pub fn residual_sensitivity<T: Scalar>(lo: T, hi: T) -> T {
    [lo, hi]
        .iter()
        .flat_map(|&p| [p, p - T::one()])
        .map(|d| d * d)
        .fold(T::zero(), T::max)
}

/// Accounting state of one private run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget<T> {
    pub epsilon: T,
    pub delta: T,
    pub num_updates: usize,
    pub eps0: T,
    pub beta: T,
    pub sensitivity: T,
    pub mode: InversionMode,
}

impl<T: Scalar> PrivacyBudget<T> {
    pub fn new(epsilon: T, delta: T, num_updates: usize, sensitivity: T, mode: InversionMode) -> Result<Self> {
        if !(sensitivity > T::zero()) {
            return Err(Error::InvalidPrivacy(format!(
                "sensitivity must be > 0, got {sensitivity}"
            )));
        }
        let eps0 = invert_budget(epsilon, delta, num_updates, mode)?;
        Ok(PrivacyBudget {
            epsilon,
            delta,
            num_updates,
            eps0,
            beta: eps0 / (T::lit(2.0) * sensitivity),
            sensitivity,
            mode,
        })
    }

    /// `ε'` actually spent by `num_updates` releases at `eps0`.
    pub fn composed_epsilon(&self) -> T {
        advanced_composition(self.eps0, self.num_updates, self.delta)
    }
}

/// Result of one exponential-mechanism release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismDraw<T> {
    pub id: usize,
    /// `β · S_i − max_j β · S_j`.
    pub log_weights: Vec<T>,
    /// Word position of the stream before the draw.
    pub stream_position: u128,
}

/// Samples `i` with probability `exp(β S_i) / Σ_j exp(β S_j)` from one uniform.
pub fn exponential_mechanism<T: Scalar>(scores: &[T], beta: T, rng: &mut ChaCha8Rng) -> Result<MechanismDraw<T>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(beta >= T::zero()) {
        return Err(Error::InvalidPrivacy(format!("temperature must be >= 0, got {beta}")));
    }
    let stream_position = rng.get_word_pos();
    let scaled: Vec<T> = scores
        .iter()
        .map(|&s| if beta == T::zero() { T::zero() } else { beta * s })
        .collect();
    let max = scaled.iter().copied().fold(T::neg_infinity(), T::max);
    let log_weights: Vec<T> = scaled.iter().map(|&x| x - max).collect();
    let weights: Vec<T> = log_weights.iter().map(|&l| l.exp()).collect();
    let total = weights.iter().fold(T::zero(), |acc, &w| acc + w);
    let u = T::lit(rng.gen::<f64>()) * total;
    let mut acc = T::zero();
    let mut id = None;
    for (i, &w) in weights.iter().enumerate() {
        acc = acc + w;
        if w > T::zero() && u < acc {
            id = Some(i);
            break;
        }
    }
    // rounding can leave u ≥ acc; fall back to the last positive weight
    let id = id.unwrap_or_else(|| {
        weights
            .iter()
            .rposition(|&w| w > T::zero())
            .expect("the maximum has weight one")
    });
    Ok(MechanismDraw {
        id,
        log_weights,
        stream_position,
    })
}

/// `(2Δ_S / ε₀) log(|F| K / α) = log(|F| K / α) / β`: with probability
/// `≥ 1 − α/K` the released score is within this gap of the maximum.
pub fn utility_gap<T: Scalar>(beta: T, class_size: usize, episodes: usize, alpha: T) -> T {
    (T::from_count(class_size) * T::from_count(episodes) / alpha).ln() / beta
}

/// Outcome of a randomized neighbouring-dataset audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport<T> {
    pub trials: usize,
    pub max_change: T,
}

fn random_trajectory<T: Scalar>(
    setting: Setting,
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Trajectory<T> {
    // rewards at the corners of the admissible region stress the bound
    let total = match rng.gen_range(0..3) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen::<f64>(),
    };
    let mut raw: Vec<f64> = (0..horizon).map(|_| rng.gen::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    for r in &mut raw {
        *r = if sum > 0.0 { total * *r / sum } else { 0.0 };
    }
    let steps = raw
        .iter()
        .map(|&r| Step {
            state: rng.gen_range(0..num_states),
            action: rng.gen_range(0..num_actions),
            reward: (setting == Setting::General).then(|| T::lit(r)),
        })
        .collect();
    Trajectory {
        steps,
        outcome: T::lit(total),
        episode: 0,
    }
}

/// Largest `|S(f; D) − S(f; D')|` over random datasets `D`, neighbours `D'`
/// obtained by replacing one trajectory, and members `f`.
///
/// The optimism term does not depend on the data, so only the loss moves.
pub fn audit_sensitivity<T: Scalar>(
    setting: Setting,
    class: &HypothesisClass<T>,
    num_states: usize,
    num_trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AuditReport<T>> {
    if class.is_empty() {
        return Err(Error::InvalidClass("empty class".into()));
    }
    let horizon = class.horizon();
    let num_actions = class.get(0).num_actions();
    let loss = |f, d: &Dataset<T>| -> Result<T> {
        match setting {
            Setting::General => bellman_error_loss(f, class, d),
            Setting::Deterministic => Ok(bellman_residual_loss(f, d)),
        }
    };
    let mut max_change = T::zero();
    for _ in 0..num_trials {
        let n = rng.gen_range(1..=8);
        let data: Dataset<T> = (0..n)
            .map(|_| random_trajectory(setting, num_states, num_actions, horizon, rng))
            .collect();
        let i = rng.gen_range(0..n);
        let neighbour = data.replaced(i, random_trajectory(setting, num_states, num_actions, horizon, rng));
        let f = class.get(rng.gen_range(0..class.len()));
        let change = (loss(f, &data)? - loss(f, &neighbour)?).abs();
        max_change = max_change.max(change);
    }
    Ok(AuditReport {
        trials: num_trials,
        max_change,
    })
}
