//! Batched exponential-mechanism learners, their non-private ablations and
//! the parameter tuner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypothesis::HypothesisClass;
use crate::losses::{BellmanErrorScorer, IncrementalScorer, ResidualScorer};
use crate::mdp::{optimal_value, policy_value, sample_trajectory, GreedyPolicy, RewardMode, TabularMdp};
use crate::privacy::{exponential_mechanism, invert_budget, sensitivity_bound, InversionMode, PrivacyBudget, Setting};
use crate::rng::{substream, StreamPurpose};
use crate::scalar::{argmax_lowest, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact argmax after every episode.
    NonprivateNobatch,
    /// Exact argmax at batch starts.
    NonprivateBatched,
    /// Exponential mechanism at batch starts.
    Private,
}

impl Method {
    pub fn is_private(self) -> bool {
        self == Method::Private
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig<T> {
    pub method: Method,
    pub setting: Setting,
    pub episodes: usize,
    pub batch_size: usize,
    pub eta: T,
    pub budget: Option<PrivacyBudget<T>>,
    pub seed: u64,
}

impl<T: Scalar> MethodConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.eta > T::zero()) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be finite and > 0, got {}", self.eta)));
        }
        match self.method {
            Method::NonprivateNobatch if self.batch_size != 1 => Err(Error::Config(format!(
                "non-batched method requires batch size 1, got {}",
                self.batch_size
            ))),
            Method::Private => match &self.budget {
                None => Err(Error::Config("private method requires a privacy budget".into())),
                Some(b) if b.num_updates != num_updates(self.episodes, self.batch_size) => {
                    Err(Error::Config(format!(
                        "budget accounts for {} updates but the schedule performs {}",
                        b.num_updates,
                        num_updates(self.episodes, self.batch_size)
                    )))
                }
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// `[k] = i·B + 1` for the batch `i` containing episode `k` (1-based).
pub fn batch_start(k: usize, batch_size: usize) -> usize {
    assert!(k >= 1 && batch_size >= 1, "episode and batch size are 1-based");
    (k - 1) / batch_size * batch_size + 1
}

/// `M = ⌈K / B⌉`.
pub fn num_updates(episodes: usize, batch_size: usize) -> usize {
    episodes.div_ceil(batch_size)
}

/// Everything a run released or observed, indexed by episode (`k − 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace<T> {
    pub method: Method,
    pub setting: Setting,
    pub batch_size: usize,
    pub eta: T,
    pub hypothesis_ids: Vec<usize>,
    /// Exact `J(π_k)`.
    pub policy_values: Vec<T>,
    /// 1-based episodes at which the policy was (re)selected.
    pub update_episodes: Vec<usize>,
    /// `max_f S(f) − S(f^(k))` at each update.
    pub utility_gaps: Vec<T>,
    pub optimal_value: T,
}

impl<T: Scalar> RunTrace<T> {
    pub fn episodes(&self) -> usize {
        self.hypothesis_ids.len()
    }
}

fn run_loop<T: Scalar, S: IncrementalScorer<T>>(
    mdp: &TabularMdp<T>,
    class: &HypothesisClass<T>,
    config: &MethodConfig<T>,
    mut scorer: S,
) -> Result<RunTrace<T>> {
    config.validate()?;
    if class.is_empty() {
        return Err(Error::InvalidClass("empty class".into()));
    }
    if class.horizon() != mdp.horizon() {
        return Err(Error::InvalidClass(format!(
            "class horizon {} differs from MDP horizon {}",
            class.horizon(),
            mdp.horizon()
        )));
    }
    let k_total = config.episodes;
    let mut values: Vec<Option<T>> = vec![None; class.len()];
    let mut trace = RunTrace {
        method: config.method,
        setting: config.setting,
        batch_size: config.batch_size,
        eta: config.eta,
        hypothesis_ids: Vec::with_capacity(k_total),
        policy_values: Vec::with_capacity(k_total),
        update_episodes: Vec::new(),
        utility_gaps: Vec::new(),
        optimal_value: optimal_value(mdp).value,
    };
    let mut current = 0;
    for k in 1..=k_total {
        if batch_start(k, config.batch_size) == k {
            let scores = scorer.report(config.eta).scores();
            current = match (config.method, &config.budget) {
                (Method::Private, Some(budget)) => {
                    let index = trace.update_episodes.len() as u64;
                    let mut rng = substream(config.seed, StreamPurpose::Mechanism, index);
                    exponential_mechanism(&scores, budget.beta, &mut rng)?.id
                }
                _ => argmax_lowest(&scores).ok_or(Error::EmptyScores)?,
            };
            let best = scores.iter().copied().fold(T::neg_infinity(), T::max);
            trace.utility_gaps.push(best - scores[current]);
            trace.update_episodes.push(k);
        }
        let f = class.get(current);
        let policy = GreedyPolicy::new(f);
        let j = *values[current].get_or_insert_with(|| policy_value(mdp, &policy));
        let mut rng = substream(config.seed, StreamPurpose::Environment, k as u64);
        let tau = sample_trajectory(mdp, &policy, &mut rng, k);
        scorer.observe(&tau)?;
        trace.hypothesis_ids.push(current);
        trace.policy_values.push(j);
    }
    Ok(trace)
}

/// Learner for MDPs with per-step rewards and a fixed initial state, scoring
/// with the Bellman-error loss.
pub fn run_algorithm_general<T: Scalar>(
    mdp: &TabularMdp<T>,
    class: &HypothesisClass<T>,
    config: &MethodConfig<T>,
) -> Result<RunTrace<T>> {
    if mdp.reward_mode() != RewardMode::PerStep {
        return Err(Error::MissingStepRewards);
    }
    let s1 = mdp.fixed_initial_state().ok_or(Error::StochasticInitialState)?;
    run_loop(mdp, class, config, BellmanErrorScorer::new(class, s1))
}

/// Learner for deterministic MDPs with outcome rewards, scoring with the
/// Bellman-residual loss and distributional optimism over the public `ρ`.
pub fn run_algorithm_deterministic<T: Scalar>(
    mdp: &TabularMdp<T>,
    class: &HypothesisClass<T>,
    config: &MethodConfig<T>,
) -> Result<RunTrace<T>> {
    if !mdp.is_deterministic() {
        return Err(Error::NotDeterministic);
    }
    run_loop(mdp, class, config, ResidualScorer::new(class, mdp.initial_distribution()))
}

pub fn run<T: Scalar>(mdp: &TabularMdp<T>, class: &HypothesisClass<T>, config: &MethodConfig<T>) -> Result<RunTrace<T>> {
    match config.setting {
        Setting::General => run_algorithm_general(mdp, class, config),
        Setting::Deterministic => run_algorithm_deterministic(mdp, class, config),
    }
}

/// Value of the uniform mixture over `π_1..π_K`: `(1/K) Σ_k J(π_k)`.
pub fn final_policy_value<T: Scalar>(trace: &RunTrace<T>) -> T {
    let n = trace.policy_values.len();
    if n == 0 {
        return T::zero();
    }
    trace.policy_values.iter().fold(T::zero(), |a, &v| a + v) / T::from_count(n)
}

/// Multiplicative constants of the tuning formulas (all 1 by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConstants {
    pub batch: f64,
    pub eta: f64,
    pub kappa: f64,
}

impl Default for TuningConstants {
    fn default() -> Self {
        TuningConstants {
            batch: 1.0,
            eta: 1.0,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningInputs<T> {
    pub setting: Setting,
    pub episodes: usize,
    pub class_size: usize,
    pub horizon: usize,
    pub alpha: T,
    pub epsilon: T,
    pub delta: T,
    /// `C_cov` (general) or `C'_cov` (deterministic).
    pub coverability: T,
    /// Score sensitivity; the worst-case bound when `None`.
    pub sensitivity: Option<T>,
    pub mode: InversionMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedParameters<T> {
    pub eta: T,
    /// Rounded and clamped to `[1, K]`.
    pub batch_size: usize,
    /// Formula value before rounding.
    pub batch_size_raw: T,
    pub num_updates: usize,
    pub eps0: T,
    pub beta: T,
    pub kappa: T,
    /// `C = H · C_cov · log(1 + C_cov K / κ)` or `H · C'_cov · log(1 + KH / κ)`.
    pub c: T,
    pub sensitivity: T,
}

/// Batch size and `η` balancing the regret terms, with `β` from the budget.
///
/// `B = K^{3/5} Δ^{2/5} (log(|F|K/α))^{2/5} (log(1/δ))^{1/5} / (ε^{2/5} C^{2/5})`
/// and `η = max{√(c₀ K κ / C), K^{3/4} Δ^{1/2} (log(|F|K/α))^{1/2} (log 1/δ)^{1/4} / (B^{1/4} ε^{1/2} C^{1/2})}`
/// with `c₀ = 3H` (general) or `2` (deterministic).
pub fn tune_parameters<T: Scalar>(inputs: &TuningInputs<T>, constants: &TuningConstants) -> Result<TunedParameters<T>> {
    let TuningInputs {
        setting,
        episodes,
        class_size,
        horizon,
        alpha,
        epsilon,
        delta,
        coverability,
        sensitivity,
        mode,
    } = *inputs;
    if episodes == 0 || class_size == 0 || horizon == 0 {
        return Err(Error::Config("episodes, class size and horizon must be >= 1".into()));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(coverability > T::zero()) {
        return Err(Error::Config(format!("coverability must be > 0, got {coverability}")));
    }
    let k = T::from_count(episodes);
    let h = T::from_count(horizon);
    let f = T::from_count(class_size);
    let one = T::one();
    let delta_s = sensitivity.unwrap_or_else(|| sensitivity_bound(setting, horizon));
    let log_fk = (f * k / alpha).ln();
    let kappa = T::lit(constants.kappa)
        * match setting {
            Setting::General => (f / alpha).ln() + (h / alpha).ln(),
            Setting::Deterministic => h * h * h * log_fk,
        };
    let c = match setting {
        Setting::General => h * coverability * (one + coverability * k / kappa).ln(),
        Setting::Deterministic => h * coverability * (one + k * h / kappa).ln(),
    };
    let log_delta = (one / delta).ln();
    let frac = |p: f64| T::lit(p);
    let batch_raw = T::lit(constants.batch) * k.powf(frac(0.6)) * delta_s.powf(frac(0.4)) * log_fk.powf(frac(0.4))
        * log_delta.powf(frac(0.2))
        / (epsilon.powf(frac(0.4)) * c.powf(frac(0.4)));
    let batch_size = if batch_raw.is_finite() {
        batch_raw.round().max(one).min(k).to_usize().unwrap_or(1)
    } else {
        episodes
    };
    let b = T::from_count(batch_size);
    let lead = match setting {
        Setting::General => T::lit(3.0) * h,
        Setting::Deterministic => T::lit(2.0),
    };
    let eta_np = (lead * k * kappa / c).sqrt();
    let eta_priv = k.powf(frac(0.75)) * delta_s.sqrt() * log_fk.sqrt() * log_delta.powf(frac(0.25))
        / (b.powf(frac(0.25)) * epsilon.sqrt() * c.sqrt());
    let eta = T::lit(constants.eta) * if eta_priv.is_finite() { eta_np.max(eta_priv) } else { eta_np };
    let m = num_updates(episodes, batch_size);
    let eps0 = invert_budget(epsilon, delta, m, mode)?;
    Ok(TunedParameters {
        eta,
        batch_size,
        batch_size_raw: batch_raw,
        num_updates: m,
        eps0,
        beta: eps0 / (T::lit(2.0) * delta_s),
        kappa,
        c,
        sensitivity: delta_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::QTable;

    #[test]
    fn batch_start_examples() {
        assert_eq!(batch_start(1, 5), 1);
        assert_eq!(batch_start(7, 5), 6);
        assert!((1..50).all(|k| batch_start(k, 1) == k));
        assert_eq!(num_updates(10, 3), 4);
    }

    fn bandit() -> (TabularMdp<f64>, HypothesisClass<f64>) {
        let mdp = TabularMdp::new(1, 2, 1, vec![], vec![vec![0.2, 0.9]], vec![(0, 1.0)], RewardMode::PerStep).unwrap();
        let class = HypothesisClass::from_tables(vec![
            QTable {
                num_actions: 2,
                layers: vec![vec![0.2, 0.0]],
            },
            QTable {
                num_actions: 2,
                layers: vec![vec![0.0, 0.9]],
            },
        ])
        .unwrap();
        (mdp, class)
    }

    fn config(method: Method, episodes: usize, batch_size: usize) -> MethodConfig<f64> {
        MethodConfig {
            method,
            setting: Setting::General,
            episodes,
            batch_size,
            eta: 1.0,
            budget: None,
            seed: 3,
        }
    }

    #[test]
    fn first_update_is_pure_optimism() {
        let (mdp, class) = bandit();
        let trace = run_algorithm_general(&mdp, &class, &config(Method::NonprivateNobatch, 1, 1)).unwrap();
        assert_eq!(trace.hypothesis_ids, vec![1]);
        assert_eq!(trace.policy_values, vec![0.9]);
    }

    #[test]
    fn updates_happen_at_batch_starts_only() {
        let (mdp, class) = bandit();
        let trace = run_algorithm_general(&mdp, &class, &config(Method::NonprivateBatched, 11, 4)).unwrap();
        assert_eq!(trace.update_episodes, vec![1, 5, 9]);
        for k in 1..=11 {
            assert_eq!(trace.hypothesis_ids[k - 1], trace.hypothesis_ids[batch_start(k, 4) - 1]);
        }
    }

    #[test]
    fn config_errors() {
        let (mdp, class) = bandit();
        let err = run_algorithm_general(&mdp, &class, &config(Method::Private, 4, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = run_algorithm_general(&mdp, &class, &config(Method::NonprivateNobatch, 4, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let mut c = config(Method::Private, 4, 2);
        c.budget = Some(PrivacyBudget::new(1.0, 0.1, 3, 8.0, InversionMode::Exact).unwrap());
        assert!(matches!(run_algorithm_general(&mdp, &class, &c), Err(Error::Config(_))));
    }

    #[test]
    fn mixture_value() {
        let (mdp, class) = bandit();
        let mut trace = run_algorithm_general(&mdp, &class, &config(Method::NonprivateNobatch, 2, 1)).unwrap();
        trace.policy_values = vec![0.0, 1.0];
        assert_eq!(final_policy_value(&trace), 0.5);
    }

    #[test]
    fn tuner_batch_exponent() {
        let base = TuningInputs {
            setting: Setting::Deterministic,
            episodes: 1000,
            class_size: 243,
            horizon: 4,
            alpha: 0.05,
            epsilon: 5.0,
            delta: 1e-6,
            coverability: 15.0,
            sensitivity: Some(1.0),
            mode: InversionMode::Exact,
        };
        let a = tune_parameters(&base, &TuningConstants::default()).unwrap();
        assert!(a.batch_size >= 1 && a.batch_size <= 1000);
        assert!(a.eta > 0.0);
        assert_eq!(a.beta, a.eps0 / 2.0);
    }
}
