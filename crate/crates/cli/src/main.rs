use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dprl_core::algorithms::{tune_parameters, TuningConstants, TuningInputs};
use dprl_core::experiment::{environment_info, load_config, run_experiment, AutoOr, SensitivityChoice};
use dprl_core::poc::{build_instance, InstanceName, HORIZON};
use dprl_core::privacy::{InversionMode, Setting};
use dprl_core::validate::{run_checks, ValidateOptions};
use dprl_core::Error;

#[derive(Parser)]
#[command(name = "dprl", version, about = "Private online RL experiments on outcome-reward environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (environment, method, seed) cell of a config and write
    /// results.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Per-update budget inversion; overrides the config.
        #[arg(long)]
        mode: Option<InversionMode>,
        /// Plateau threshold; overrides the config.
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Print the tuned batch size, eta and temperature for one environment.
    Tune {
        #[arg(long, default_value = "easy")]
        env: InstanceName,
        #[arg(long, default_value_t = 2000)]
        episodes: usize,
        #[arg(long, default_value_t = 5.0)]
        epsilon: f64,
        /// Defaults to 1/K².
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value = "exact")]
        mode: InversionMode,
        /// Use the class-specific residual bound instead of (H+1)².
        #[arg(long)]
        class_sensitivity: bool,
    },
    /// Run the fast invariant checks.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, hide = true)]
        inject_sensitivity: Option<f64>,
    },
}

/// Errors caused by the user's input rather than a runtime fault.
fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Config(_) | Error::InvalidPrivacy(_) | Error::UnknownEnvironment(_))
        )
    })
}

fn cmd_run(
    config: PathBuf,
    out: Option<PathBuf>,
    jobs: usize,
    mode: Option<InversionMode>,
    fraction: Option<f64>,
) -> Result<bool> {
    let mut cfg = load_config(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Ok(seed) = std::env::var("DPRL_SEED") {
        cfg.master_seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("DPRL_SEED: not an unsigned integer: {seed:?}")))?;
    }
    if let Some(m) = mode {
        cfg.inversion_mode = m;
    }
    if let Some(f) = fraction {
        cfg.fraction = f;
    }
    cfg.validate()?;
    let dir = out
        .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let output = run_experiment(&cfg, jobs)?;
    output
        .write(&dir)
        .with_context(|| format!("writing results to {}", dir.display()))?;
    println!("median plateau episode (fraction {})", cfg.fraction);
    for cell in &output.summary.aggregate.cells {
        println!(
            "  {:<6} {:<24} {:>8}   median final regret {:.3}",
            cell.env, cell.method, cell.median_plateau, cell.median_final_cum_regret
        );
    }
    println!("wrote {}", dir.display());
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn cmd_tune(
    env: InstanceName,
    episodes: usize,
    epsilon: f64,
    delta: Option<f64>,
    alpha: f64,
    mode: InversionMode,
    class_sensitivity: bool,
) -> Result<bool> {
    let delta = delta.unwrap_or(1.0 / (episodes as f64 * episodes as f64));
    let choice = if class_sensitivity {
        SensitivityChoice::Class
    } else {
        SensitivityChoice::WorstCase
    };
    let info = environment_info(&build_instance(env), choice, AutoOr::Auto)?;
    let inputs = |mode| TuningInputs {
        setting: Setting::Deterministic,
        episodes,
        class_size: info.class_size,
        horizon: HORIZON,
        alpha,
        epsilon,
        delta,
        coverability: info.averaged_coverability,
        sensitivity: Some(info.sensitivity),
        mode,
    };
    let tuned = tune_parameters(&inputs(mode), &TuningConstants::default())?;
    let exact = tune_parameters(&inputs(InversionMode::Exact), &TuningConstants::default())?;
    let simplified = tune_parameters(&inputs(InversionMode::Simplified), &TuningConstants::default())?;
    println!("env            {env}");
    println!("K              {episodes}");
    println!("epsilon        {epsilon}");
    println!("delta          {delta:e}");
    println!("C_cov          {}", info.coverability);
    println!("C'_cov         {}", info.averaged_coverability);
    println!("sensitivity    {}", info.sensitivity);
    println!("mode           {mode:?}");
    println!("eta            {}", tuned.eta);
    println!("B              {} (formula {})", tuned.batch_size, tuned.batch_size_raw);
    println!("M              {}", tuned.num_updates);
    println!("eps0           {}", tuned.eps0);
    println!("beta           {}", tuned.beta);
    println!("eps0 (exact)      {}", exact.eps0);
    println!("eps0 (simplified) {}", simplified.eps0);
    Ok(true)
}

fn cmd_validate(seed: u64, trials: usize, inject: Option<f64>) -> Result<bool> {
    let opts = ValidateOptions {
        seed,
        audit_trials: trials,
        injected_sensitivity: inject,
    };
    let results = run_checks(&opts)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            mode,
            fraction,
        } => cmd_run(config, out, jobs, mode, fraction),
        Command::Tune {
            env,
            episodes,
            epsilon,
            delta,
            alpha,
            mode,
            class_sensitivity,
        } => cmd_tune(env, episodes, epsilon, delta, alpha, mode, class_sensitivity),
        Command::Validate {
            seed,
            trials,
            inject_sensitivity,
        } => cmd_validate(seed, trials, inject_sensitivity),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 2 } else { 1 })
        }
    }
}
