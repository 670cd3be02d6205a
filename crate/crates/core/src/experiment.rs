//! Seeded experiment grids over the outcome-reward environments.
//!
//! A JSON [`ExperimentConfig`] names environments, methods and seeds. Every
//! `(env, method, seed)` cell is an independent run; cells execute in
//! parallel and results are merged in grid order, so output bytes do not
//! depend on the thread count.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::algorithms::{
    num_updates, run_algorithm_deterministic, tune_parameters, Method, MethodConfig, TunedParameters,
    TuningConstants, TuningInputs,
};
use crate::analysis::{aggregate, averaged_coverability, coverability, plateau_episode, regret_series, write_csv, PlateauSummary};
use crate::error::{Error, Result};
use crate::poc::{build_instance, InstanceName, PocInstance, HORIZON};
use crate::privacy::{residual_range, residual_sensitivity, sensitivity_bound, InversionMode, PrivacyBudget, Setting};
use crate::rng::run_seed;

/// `"auto"` or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AutoOr<T> {
    #[default]
    Auto,
    Value(T),
}

impl<T: Serialize> Serialize for AutoOr<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AutoOr::Auto => s.serialize_str("auto"),
            AutoOr::Value(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for AutoOr<usize> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = AutoOr<usize>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"auto\" or a non-negative integer")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "auto" {
                    Ok(AutoOr::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                usize::try_from(v)
                    .map(AutoOr::Value)
                    .map_err(|_| E::invalid_value(de::Unexpected::Unsigned(v), &self))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                usize::try_from(v)
                    .map(AutoOr::Value)
                    .map_err(|_| E::invalid_value(de::Unexpected::Signed(v), &self))
            }
        }
        d.deserialize_any(V)
    }
}

impl<'de> Deserialize<'de> for AutoOr<f64> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = AutoOr<f64>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"auto\" or a number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v == "auto" {
                    Ok(AutoOr::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                Ok(AutoOr::Value(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(AutoOr::Value(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                Ok(AutoOr::Value(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

/// A seed count (labels `0..n`) or an explicit list of seed labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn labels(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }
}

/// Score sensitivity used to set the mechanism temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityChoice {
    /// `(H + 1)²`, valid for every class with values in `[0, 1]`.
    #[default]
    WorstCase,
    /// Largest `(R^(f)(τ) − r)²` over the class and every trajectory of the
    /// (public) environment.
    Class,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    /// Label used in result files.
    pub name: String,
    pub kind: Method,
    /// Required for private methods and for auto batch size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `1/K²` when auto.
    #[serde(default)]
    pub delta: AutoOr<f64>,
    #[serde(default)]
    pub batch_size: AutoOr<usize>,
    #[serde(default)]
    pub eta: AutoOr<f64>,
}

fn default_fraction() -> f64 {
    0.95
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub episodes: usize,
    pub seeds: SeedSpec,
    pub envs: Vec<InstanceName>,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub inversion_mode: InversionMode,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Failure probability in the tuning formulas.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub sensitivity: SensitivityChoice,
    /// `C'_cov` used by the tuner; computed from the environment when auto.
    #[serde(default)]
    pub coverability: AutoOr<f64>,
    #[serde(default)]
    pub constants: TuningConstants,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Parses a config; errors name the offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("{path}: {}", e.into_inner()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&fs::read_to_string(path)?)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.episodes == 0 {
            return bad("episodes".into(), "must be >= 1".into());
        }
        if self.seeds.labels().is_empty() {
            return bad("seeds".into(), "need at least one seed".into());
        }
        if self.envs.is_empty() {
            return bad("envs".into(), "need at least one environment".into());
        }
        if self.methods.is_empty() {
            return bad("methods".into(), "need at least one method".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad("fraction".into(), format!("must lie in (0, 1], got {}", self.fraction));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha".into(), format!("must lie in (0, 1), got {}", self.alpha));
        }
        if let AutoOr::Value(c) = self.coverability {
            if !(c > 0.0) {
                return bad("coverability".into(), format!("must be > 0, got {c}"));
            }
        }
        for (name, v) in [
            ("batch", self.constants.batch),
            ("eta", self.constants.eta),
            ("kappa", self.constants.kappa),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("constants.{name}"), format!("must be finite and > 0, got {v}"));
            }
        }
        for (i, m) in self.methods.iter().enumerate() {
            let field = |f: &str| format!("methods[{i}].{f}");
            if self.methods[..i].iter().any(|o| o.name == m.name) {
                return bad(field("name"), format!("duplicate method name {:?}", m.name));
            }
            if let Some(e) = m.epsilon {
                if !(e > 0.0) {
                    return bad(field("epsilon"), format!("must be > 0, got {e}"));
                }
            }
            if let AutoOr::Value(d) = m.delta {
                if !(d > 0.0 && d < 1.0) {
                    return bad(field("delta"), format!("must lie in (0, 1), got {d}"));
                }
            }
            if let AutoOr::Value(e) = m.eta {
                if !(e > 0.0 && e.is_finite()) {
                    return bad(field("eta"), format!("must be finite and > 0, got {e}"));
                }
            }
            match (m.kind, m.batch_size) {
                (_, AutoOr::Value(0)) => return bad(field("batch_size"), "must be >= 1".into()),
                (Method::NonprivateNobatch, AutoOr::Value(b)) if b != 1 => {
                    return bad(field("batch_size"), format!("must be 1 for non-batched updates, got {b}"))
                }
                (Method::NonprivateBatched, AutoOr::Auto) if m.epsilon.is_none() => {
                    return bad(
                        field("batch_size"),
                        "auto batch size needs an epsilon for the tuning formula".into(),
                    )
                }
                _ => {}
            }
            if m.kind == Method::Private && m.epsilon.is_none() {
                return bad(field("epsilon"), "required for private methods".into());
            }
        }
        Ok(())
    }

    pub fn delta_for(&self, m: &MethodSpec) -> f64 {
        match m.delta {
            AutoOr::Value(d) => d,
            AutoOr::Auto => 1.0 / (self.episodes as f64 * self.episodes as f64),
        }
    }
}

/// Environment facts the tuner and the summary rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub env: InstanceName,
    pub optimal_value: f64,
    pub class_size: usize,
    pub hidden_id: usize,
    pub coverability: f64,
    pub averaged_coverability: f64,
    pub residual_range: (f64, f64),
    pub sensitivity: f64,
}

/// A method's parameters after auto values are filled in, per environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedMethod {
    pub env: InstanceName,
    pub name: String,
    pub kind: Method,
    pub episodes: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub num_updates: usize,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub eps0: Option<f64>,
    pub beta: Option<f64>,
    pub composed_epsilon: Option<f64>,
    pub sensitivity: f64,
    pub tuned: TunedParameters<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub method: String,
    pub env: InstanceName,
    pub seed: u64,
    #[serde(rename = "K")]
    pub episodes: usize,
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub eta: f64,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub eps0: Option<f64>,
    pub beta: Option<f64>,
    pub plateau: usize,
    pub final_cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub environments: Vec<EnvironmentInfo>,
    pub resolved: Vec<ResolvedMethod>,
    pub runs: Vec<RunSummary>,
    pub aggregate: PlateauSummary,
}

pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub series: Vec<crate::analysis::RegretSeries<f64>>,
}

impl ExperimentOutput {
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.series)?;
        Ok(buf)
    }

    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serialises");
        s.push('\n');
        s
    }

    /// Writes `results.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.csv_bytes()?)?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}

pub fn environment_info(inst: &PocInstance<f64>, choice: SensitivityChoice, coverability_override: AutoOr<f64>) -> Result<EnvironmentInfo> {
    let (lo, hi) = residual_range(&inst.class, &inst.mdp)?;
    let sensitivity = match choice {
        SensitivityChoice::WorstCase => sensitivity_bound(Setting::Deterministic, inst.mdp.horizon()),
        SensitivityChoice::Class => residual_sensitivity(lo, hi),
    };
    let averaged = match coverability_override {
        AutoOr::Value(c) => c,
        AutoOr::Auto => averaged_coverability(&inst.mdp, &inst.class)?,
    };
    Ok(EnvironmentInfo {
        env: inst.name,
        optimal_value: crate::mdp::optimal_value(&inst.mdp).value,
        class_size: inst.class.len(),
        hidden_id: inst.hidden_id(),
        coverability: coverability(&inst.mdp, &inst.class),
        averaged_coverability: averaged,
        residual_range: (lo, hi),
        sensitivity,
    })
}

pub fn resolve_method(config: &ExperimentConfig, env: &EnvironmentInfo, m: &MethodSpec) -> Result<ResolvedMethod> {
    let k = config.episodes;
    let delta = config.delta_for(m);
    let tune_eps = match m.kind {
        Method::NonprivateNobatch => f64::INFINITY,
        _ => m.epsilon.unwrap_or(f64::INFINITY),
    };
    let tuned = tune_parameters(
        &TuningInputs {
            setting: Setting::Deterministic,
            episodes: k,
            class_size: env.class_size,
            horizon: HORIZON,
            alpha: config.alpha,
            epsilon: tune_eps,
            delta,
            coverability: env.averaged_coverability,
            sensitivity: Some(env.sensitivity),
            mode: config.inversion_mode,
        },
        &config.constants,
    )?;
    let batch_size = match (m.kind, m.batch_size) {
        (Method::NonprivateNobatch, _) => 1,
        (_, AutoOr::Value(b)) => b.min(k),
        (_, AutoOr::Auto) => tuned.batch_size,
    };
    let eta = match m.eta {
        AutoOr::Value(e) => e,
        AutoOr::Auto => tuned.eta,
    };
    let updates = num_updates(k, batch_size);
    let budget = match (m.kind, m.epsilon) {
        (Method::Private, Some(eps)) => Some(PrivacyBudget::new(eps, delta, updates, env.sensitivity, config.inversion_mode)?),
        _ => None,
    };
    Ok(ResolvedMethod {
        env: env.env,
        name: m.name.clone(),
        kind: m.kind,
        episodes: k,
        batch_size,
        eta,
        num_updates: updates,
        epsilon: budget.map(|b| b.epsilon),
        delta: budget.map(|b| b.delta),
        eps0: budget.map(|b| b.eps0),
        beta: budget.map(|b| b.beta),
        composed_epsilon: budget.map(|b| b.composed_epsilon()),
        sensitivity: env.sensitivity,
        tuned,
    })
}

/// Runs every cell of the grid on a pool of `jobs` threads (`0` = all cores).
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_grid(config))
}

fn run_grid(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let instances: Vec<PocInstance<f64>> = config.envs.par_iter().map(|&e| build_instance(e)).collect();
    let environments = instances
        .par_iter()
        .map(|inst| environment_info(inst, config.sensitivity, config.coverability))
        .collect::<Result<Vec<_>>>()?;
    let mut resolved = Vec::new();
    for env in &environments {
        for m in &config.methods {
            resolved.push(resolve_method(config, env, m)?);
        }
    }
    let seeds = config.seeds.labels();
    let cells: Vec<(usize, &ResolvedMethod, u64)> = resolved
        .iter()
        .map(|r| (config.envs.iter().position(|&e| e == r.env).expect("resolved env is configured"), r))
        .flat_map(|(i, r)| seeds.iter().map(move |&s| (i, r, s)))
        .collect();
    let fraction = config.fraction;
    let results = cells
        .par_iter()
        .map(|&(i, r, seed)| {
            let inst = &instances[i];
            let method_config = MethodConfig {
                method: r.kind,
                setting: Setting::Deterministic,
                episodes: r.episodes,
                batch_size: r.batch_size,
                eta: r.eta,
                budget: match (r.epsilon, r.delta) {
                    (Some(eps), Some(delta)) => Some(PrivacyBudget::new(
                        eps,
                        delta,
                        r.num_updates,
                        r.sensitivity,
                        config.inversion_mode,
                    )?),
                    _ => None,
                },
                seed: run_seed(config.master_seed, seed),
            };
            let trace = run_algorithm_deterministic(&inst.mdp, &inst.class, &method_config)?;
            let run_id = format!("{}-{}-{}", r.env, r.name, seed);
            let series = regret_series(&trace, &run_id, &r.name, r.env.as_str(), seed);
            let summary = RunSummary {
                run_id,
                method: r.name.clone(),
                env: r.env,
                seed,
                episodes: r.episodes,
                batch_size: r.batch_size,
                eta: r.eta,
                epsilon: r.epsilon,
                delta: r.delta,
                eps0: r.eps0,
                beta: r.beta,
                plateau: plateau_episode(&series.cumulative, fraction),
                final_cum_regret: series.final_cumulative(),
            };
            Ok((series, summary))
        })
        .collect::<Result<Vec<_>>>()?;
    let (series, runs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let aggregate = aggregate(&series, fraction)?;
    Ok(ExperimentOutput {
        summary: ExperimentSummary {
            config: config.clone(),
            environments,
            resolved,
            runs,
            aggregate,
        },
        series,
    })
}
