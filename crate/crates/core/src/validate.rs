//! Fast self-checks of the invariants the learners rely on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::hypothesis::{check_realizability, HypothesisClass, QTable};
use crate::losses::{bellman_residual_loss, residual_prediction, Dataset};
use crate::mdp::{optimal_value, sample_trajectory, GreedyPolicy, QFunction};
use crate::poc::{build_instance, InstanceName};
use crate::privacy::{advanced_composition, audit_sensitivity, invert_budget, sensitivity_bound, InversionMode, Setting};
use crate::rng::{substream, StreamPurpose};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Trials per setting in the sensitivity audit.
    pub audit_trials: usize,
    /// Replaces the declared sensitivity bound; used to check that the audit
    /// catches a wrong bound.
    pub injected_sensitivity: Option<f64>,
}

impl ValidateOptions {
    pub fn new(seed: u64) -> Self {
        ValidateOptions {
            seed,
            audit_trials: 2000,
            injected_sensitivity: None,
        }
    }
}

/// Class of `size` random tables with values in `[0, 1]`.
pub fn random_table_class(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> HypothesisClass<f64> {
    let tables = (0..size)
        .map(|_| QTable {
            num_actions,
            layers: (0..horizon)
                .map(|_| {
                    (0..num_states * num_actions)
                        .map(|_| match rng.gen_range(0..4) {
                            0 => 0.0,
                            1 => 1.0,
                            _ => rng.gen::<f64>(),
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    HypothesisClass::from_tables(tables).expect("values lie in [0, 1]")
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        detail,
    }
}

fn telescoping(opts: &ValidateOptions) -> CheckResult {
    let mut failures = 0;
    let mut trials = 0;
    for name in InstanceName::ALL {
        let inst = build_instance::<f64>(name);
        let mut rng = substream(opts.seed, StreamPurpose::Other(1), name as u64);
        for episode in 0..500 {
            let f = inst.class.get(rng.gen_range(0..inst.class.len()));
            let tau = sample_trajectory(&inst.mdp, &GreedyPolicy::new(f), &mut rng, episode);
            let first = &tau.steps[0];
            trials += 1;
            if residual_prediction(f, &tau) != f.q(0, first.state, first.action) {
                failures += 1;
            }
        }
    }
    check(
        "telescoping",
        failures == 0,
        format!("{failures} mismatches in {trials} on-policy trajectories"),
    )
}

fn residual_identity(opts: &ValidateOptions) -> CheckResult {
    let mut worst = 0.0f64;
    for name in InstanceName::ALL {
        let inst = build_instance::<f64>(name);
        let opt = optimal_value(&inst.mdp);
        let mut rng = substream(opts.seed, StreamPurpose::Other(2), name as u64);
        let data: Dataset<f64> = (0..200)
            .map(|k| {
                let f = inst.class.get(rng.gen_range(0..inst.class.len()));
                sample_trajectory(&inst.mdp, &GreedyPolicy::new(f), &mut rng, k)
            })
            .collect();
        worst = worst.max(bellman_residual_loss(&opt, &data));
    }
    check(
        "optimal residual loss",
        worst == 0.0,
        format!("largest L^BR(Q*) = {worst}"),
    )
}

fn sensitivity(opts: &ValidateOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (setting, horizon) in [(Setting::General, 2), (Setting::Deterministic, 4)] {
        let mut rng = substream(opts.seed, StreamPurpose::Audit, horizon as u64);
        let class = random_table_class(3, 2, horizon, 4, &mut rng);
        let report = audit_sensitivity(setting, &class, 3, opts.audit_trials, &mut rng)?;
        let bound = opts
            .injected_sensitivity
            .unwrap_or_else(|| sensitivity_bound(setting, horizon));
        out.push(check(
            &format!("sensitivity audit ({setting:?}, H={horizon})"),
            report.max_change <= bound,
            format!(
                "max change {:.4} over {} trials, declared bound {bound}",
                report.max_change, report.trials
            ),
        ));
    }
    Ok(out)
}

fn accountant(opts: &ValidateOptions) -> Result<CheckResult> {
    let mut rng = substream(opts.seed, StreamPurpose::Other(3), 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let eps = rng.gen_range(0.05..10.0);
        let delta = 10f64.powf(rng.gen_range(-10.0..-1.0));
        let m = rng.gen_range(1..=500);
        let e0 = invert_budget(eps, delta, m, InversionMode::Exact)?;
        let composed = advanced_composition(e0, m, delta);
        if composed > eps {
            worst = f64::INFINITY;
        } else {
            worst = worst.max(eps - composed);
        }
    }
    Ok(check(
        "accountant inversion",
        worst <= 1e-9,
        format!("largest shortfall eps - eps' = {worst:e}"),
    ))
}

fn realizability() -> CheckResult {
    let mut detail = Vec::new();
    let mut passed = true;
    for name in InstanceName::ALL {
        let inst = build_instance::<f64>(name);
        let witness = check_realizability(&inst.class, &inst.mdp);
        passed &= witness == Some(inst.hidden_id());
        detail.push(format!("{name}: witness {witness:?}, hidden {}", inst.hidden_id()));
    }
    check("realizability", passed, detail.join("; "))
}

pub fn run_checks(opts: &ValidateOptions) -> Result<Vec<CheckResult>> {
    let mut out = vec![telescoping(opts), residual_identity(opts)];
    out.extend(sensitivity(opts)?);
    out.push(accountant(opts)?);
    out.push(realizability());
    Ok(out)
}
