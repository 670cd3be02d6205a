//! Regret series, plateau metric, coverability oracles and result files.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algorithms::RunTrace;
use crate::error::{Error, Result};
use crate::hypothesis::HypothesisClass;
use crate::mdp::{occupancy, GreedyPolicy, Policy, StateId, TabularMdp};
use crate::scalar::Scalar;

/// Exact expected regret of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries<T> {
    pub run_id: String,
    pub method: String,
    pub env: String,
    pub seed: u64,
    /// `J★ − J(π_k)`.
    pub instantaneous: Vec<T>,
    pub cumulative: Vec<T>,
}

impl<T: Scalar> RegretSeries<T> {
    pub fn from_instantaneous(run_id: String, method: String, env: String, seed: u64, instantaneous: Vec<T>) -> Self {
        let mut acc = T::zero();
        let cumulative = instantaneous
            .iter()
            .map(|&r| {
                acc = acc + r;
                acc
            })
            .collect();
        RegretSeries {
            run_id,
            method,
            env,
            seed,
            instantaneous,
            cumulative,
        }
    }

    pub fn episodes(&self) -> usize {
        self.instantaneous.len()
    }

    pub fn final_cumulative(&self) -> T {
        self.cumulative.last().copied().unwrap_or_else(T::zero)
    }
}

/// Per-episode `J★ − J(π_k)` from the exact values recorded in the trace.
pub fn regret_series<T: Scalar>(trace: &RunTrace<T>, run_id: &str, method: &str, env: &str, seed: u64) -> RegretSeries<T> {
    let inst = trace
        .policy_values
        .iter()
        .map(|&j| trace.optimal_value - j)
        .collect();
    RegretSeries::from_instantaneous(run_id.into(), method.into(), env.into(), seed, inst)
}

/// `min{k : cum[k] ≥ fraction · cum[K]}` (1-based); 1 when no regret accrues.
pub fn plateau_episode<T: Scalar>(cumulative: &[T], fraction: T) -> usize {
    let total = match cumulative.last() {
        Some(&t) if t > T::zero() => t,
        _ => return 1,
    };
    let threshold = fraction * total;
    cumulative
        .iter()
        .position(|&c| c >= threshold)
        .map_or(cumulative.len(), |i| i + 1)
}

fn greedy_occupancies<T: Scalar>(mdp: &TabularMdp<T>, class: &HypothesisClass<T>) -> Vec<Vec<Vec<T>>> {
    class
        .members()
        .iter()
        .map(|f| occupancy(mdp, &GreedyPolicy::new(f)))
        .collect()
}

/// `max_h Σ_{s,a} max_{π ∈ Π_F} d^π_h(s, a)`.
///
/// This is the value of `min_μ max_π ‖d^π_h / μ_h‖_∞`: taking `μ_h`
/// proportional to the pointwise maximum occupancy is optimal.
pub fn coverability<T: Scalar>(mdp: &TabularMdp<T>, class: &HypothesisClass<T>) -> T {
    let occ = greedy_occupancies(mdp, class);
    (0..mdp.horizon())
        .map(|h| {
            let cells = mdp.num_states() * mdp.num_actions();
            (0..cells)
                .map(|c| occ.iter().map(|d| d[h][c]).fold(T::zero(), T::max))
                .fold(T::zero(), |a, m| a + m)
        })
        .fold(T::zero(), T::max)
}

/// Coverability of the MDP restarted from each state in the support of `ρ`.
pub fn per_context_coverability<T: Scalar>(
    mdp: &TabularMdp<T>,
    class: &HypothesisClass<T>,
) -> Result<Vec<(StateId, T, T)>> {
    mdp.initial_distribution()
        .iter()
        .map(|&(s, p)| Ok((s, p, coverability(&mdp.with_initial_state(s)?, class))))
        .collect()
}

/// `C'_cov = E_{s₁∼ρ} C_cov(Π_F; M_{s₁})`.
pub fn averaged_coverability<T: Scalar>(mdp: &TabularMdp<T>, class: &HypothesisClass<T>) -> Result<T> {
    Ok(per_context_coverability(mdp, class)?
        .iter()
        .fold(T::zero(), |a, &(_, p, c)| a + p * c))
}

/// `N(s₁) = Σ_h |{(s, a) reached at step h by some π ∈ Π_F from s₁}|`.
pub fn reachability_count<T: Scalar>(mdp: &TabularMdp<T>, class: &HypothesisClass<T>, s1: StateId) -> Result<usize> {
    if !mdp.is_deterministic() {
        return Err(Error::NotDeterministic);
    }
    if s1 >= mdp.num_states() {
        return Err(Error::InvalidMdp(format!("state {s1} out of range")));
    }
    let mut layers: Vec<BTreeSet<(StateId, usize)>> = vec![BTreeSet::new(); mdp.horizon()];
    for f in class.members() {
        let policy = GreedyPolicy::new(f);
        let mut s = s1;
        for (h, layer) in layers.iter_mut().enumerate() {
            let a = policy.action(h, s);
            layer.insert((s, a));
            if let Some(n) = mdp.next_state(h, s, a) {
                s = n;
            }
        }
    }
    Ok(layers.iter().map(BTreeSet::len).sum())
}

/// Median of a non-empty sample; mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Plateaus of every seed of one `(method, env)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub env: String,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub plateaus: Vec<usize>,
    pub final_cum_regrets: Vec<f64>,
    pub median_plateau: f64,
    pub median_final_cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSummary {
    pub fraction: f64,
    pub cells: Vec<CellSummary>,
}

impl PlateauSummary {
    pub fn cell(&self, method: &str, env: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.method == method && c.env == env)
    }
}

/// Groups runs by `(method, env)` in order of first appearance and takes
/// medians across seeds.
pub fn aggregate<T: Scalar>(results: &[RegretSeries<T>], fraction: T) -> Result<PlateauSummary> {
    let mut cells: Vec<CellSummary> = Vec::new();
    for r in results {
        let idx = match cells.iter().position(|c| c.method == r.method && c.env == r.env) {
            Some(i) => i,
            None => {
                cells.push(CellSummary {
                    method: r.method.clone(),
                    env: r.env.clone(),
                    episodes: r.episodes(),
                    seeds: Vec::new(),
                    plateaus: Vec::new(),
                    final_cum_regrets: Vec::new(),
                    median_plateau: 0.0,
                    median_final_cum_regret: 0.0,
                });
                cells.len() - 1
            }
        };
        let cell = &mut cells[idx];
        if cell.episodes != r.episodes() {
            return Err(Error::MixedEpisodeCounts {
                group: format!("{}/{}", r.method, r.env),
                first: cell.episodes,
                other: r.episodes(),
            });
        }
        cell.seeds.push(r.seed);
        cell.plateaus.push(plateau_episode(&r.cumulative, fraction));
        cell.final_cum_regrets.push(r.final_cumulative().as_f64());
    }
    for cell in &mut cells {
        let p: Vec<f64> = cell.plateaus.iter().map(|&p| p as f64).collect();
        cell.median_plateau = median(&p);
        cell.median_final_cum_regret = median(&cell.final_cum_regrets);
    }
    Ok(PlateauSummary {
        fraction: fraction.as_f64(),
        cells,
    })
}

pub const CSV_HEADER: [&str; 7] = ["run_id", "method", "env", "seed", "episode", "inst_regret", "cum_regret"];

/// One row per episode, header first, LF line endings.
pub fn write_csv<T: Scalar, W: Write>(out: W, results: &[RegretSeries<T>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in results {
        let seed = r.seed.to_string();
        for (k, (inst, cum)) in r.instantaneous.iter().zip(&r.cumulative).enumerate() {
            w.write_record([
                r.run_id.as_str(),
                r.method.as_str(),
                r.env.as_str(),
                seed.as_str(),
                &(k + 1).to_string(),
                &inst.to_string(),
                &cum.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
