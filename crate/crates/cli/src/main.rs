//! One binary wiring the whole pipeline: plant simulation, surrogate
//! training, open-loop self-loop prediction, closed-loop tracking control and
//! the execution-time benchmark. Every command is deterministic under a fixed
//! seed (timing columns excepted) and writes plot-ready CSV plus the merged
//! effective configuration next to its outputs.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector4;

use config::RunConfig;
use pinnmpc::bench::{euler_instability_experiment, run_benchmark, BenchMethod};
use pinnmpc::dynamics::{ControlInput, StateVec};
use pinnmpc::integrators::{fmt_f64, simulate_zoh, IntegratorSpec};
use pinnmpc::mpc::{closed_loop, reference_generator, ReferenceKind, SurrogatePredictor};
use pinnmpc::net::{Checkpoint, NetworkModel};
use pinnmpc::pinn::{self_loop_predict, train, write_loss_history};
use pinnmpc::Error;

/// Published baseline figures, printed for context next to achieved values
/// (never asserted: absolute numbers are machine- and model-specific).
const BASELINE_MAE_ALPHA: f64 = 7.53e-3;
const BASELINE_MAE_BETA: f64 = 2.56e-2;
const BASELINE_MEAN_SOLVE: f64 = 3.65e-2;
const BASELINE_PINN_MEAN: f64 = 4.14e-4;
const BASELINE_RK45_MEAN: f64 = 8.62e-3;

#[derive(Parser)]
#[command(
    name = "pinnmpc",
    about = "Flow-map surrogate training and receding-horizon control for a two-link manipulator",
    version
)]
struct Cli {
    /// JSON run configuration; omitted sections use built-in defaults
    /// (controller and sampling defaults follow the reference experiment
    /// setup, training counts are desk-scale).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory [default: out; env PINNMPC_OUT_DIR overrides].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the plant under a zero-order-hold control file and write the
    /// trajectory CSV.
    Simulate(SimulateArgs),
    /// Train the flow-map surrogate and write checkpoint + loss history.
    Train(TrainArgs),
    /// Run the trained surrogate in self-loop prediction against the
    /// integrated reference on the same inputs.
    Predict(PredictArgs),
    /// Closed-loop tracking: surrogate-based controller against the
    /// integrated plant.
    Control(ControlArgs),
    /// One-step execution-time comparison and the fixed-step instability
    /// experiment.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Initial state "alpha,beta,dalpha,dbeta" [default: 0,0,0,0].
    #[arg(long)]
    x0: Option<String>,
    /// CSV of held controls, one `u1,u2` row per sampling interval.
    #[arg(long)]
    controls: PathBuf,
    /// Sampling period in seconds [default: 0.2, reference setup].
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Train with the large-budget reference preset (800000 epochs,
    /// resample at 400000, 100 data anchors, 20000 collocation points)
    /// instead of the desk-scale defaults.
    #[arg(long)]
    reference_preset: bool,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch budget.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the resample epoch (0 disables resampling).
    #[arg(long)]
    resample_at: Option<usize>,
    /// Override the collocation point count.
    #[arg(long)]
    n_phys: Option<usize>,
    /// Override the data anchor count.
    #[arg(long)]
    n_data: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Initial state "alpha,beta,dalpha,dbeta" [default: 0,0,0,0].
    #[arg(long)]
    x0: Option<String>,
    /// CSV of held controls, one `u1,u2` row per sampling interval.
    #[arg(long)]
    controls: PathBuf,
    /// Prediction interval in seconds [default: 0.2, reference setup].
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct ControlArgs {
    /// Trained checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reference profile: `reversal` or `equilibrium` [default: reversal,
    /// motion reversals in both joints per the reference experiment].
    #[arg(long, default_value = "reversal")]
    reference: String,
    /// Closed-loop horizon in seconds [default: 16, reference setup].
    #[arg(long, default_value_t = 16.0)]
    t_end: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained checkpoint JSON.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Timed repetitions per method [default: from config, 1000].
    #[arg(long)]
    reps: Option<usize>,
    /// Exit nonzero unless the surrogate's mean one-step time beats the
    /// adaptive integrator's.
    #[arg(long)]
    assert_ordering: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 = usage/configuration problem, 3 = numerical failure.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::SingularMassMatrix { .. }
        | Error::StepSizeUnderflow { .. }
        | Error::NonFiniteState { .. }
        | Error::NonFiniteGradient
        | Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // Precedence: explicit flag, then environment, then the config file.
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    } else if let Ok(dir) = std::env::var("PINNMPC_OUT_DIR") {
        if !dir.is_empty() {
            cfg.output.dir = dir;
        }
    }

    match cli.command {
        Command::Simulate(args) => cmd_simulate(cfg, args),
        Command::Train(args) => cmd_train(cfg, args),
        Command::Predict(args) => cmd_predict(cfg, args),
        Command::Control(args) => cmd_control(cfg, args),
        Command::Bench(args) => cmd_bench(cfg, args),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Error> {
    let dir = PathBuf::from(&cfg.output.dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_effective_config(cfg: &RunConfig, dir: &Path) -> Result<(), Error> {
    std::fs::write(dir.join("effective_config.json"), cfg.to_json() + "\n")?;
    Ok(())
}

fn parse_x0(arg: &Option<String>) -> Result<StateVec, Error> {
    match arg {
        None => Ok(Vector4::zeros()),
        Some(s) => {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            if parts.len() != 4 {
                return Err(Error::InvalidConfig(format!(
                    "--x0 needs 4 comma-separated values, got {}",
                    parts.len()
                )));
            }
            let mut x = Vector4::zeros();
            for (i, p) in parts.iter().enumerate() {
                x[i] = p
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("--x0 component `{p}` is not a number")))?;
            }
            Ok(x)
        }
    }
}

/// Control file: one `u1,u2` row per zero-order-hold interval; a leading
/// header row is allowed.
fn load_controls(path: &Path) -> Result<Vec<ControlInput>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read control file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(vals) if vals.len() == 2 => out.push(ControlInput::new(vals[0], vals[1])),
            _ if ln == 0 => continue, // header row
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "{}:{}: expected `u1,u2`, got `{line}`",
                    path.display(),
                    ln + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig(format!("{}: no control rows", path.display())));
    }
    Ok(out)
}

fn load_checkpoint(path: &Path) -> Result<NetworkModel, Error> {
    Checkpoint::load(path)?.into_model()
}

fn cmd_simulate(cfg: RunConfig, args: SimulateArgs) -> Result<(), Error> {
    let dir = out_dir(&cfg)?;
    let model = cfg.model.build()?;
    let x0 = parse_x0(&args.x0)?;
    let controls = load_controls(&args.controls)?;
    let tau = args.tau.unwrap_or(cfg.mpc.tau);

    let tr = simulate_zoh(model.as_ref(), &x0, &controls, tau, &IntegratorSpec::oracle())?;
    std::fs::write(dir.join("trajectory.csv"), tr.to_csv())?;
    write_effective_config(&cfg, &dir)?;
    println!(
        "simulated {} intervals at tau = {} s -> {}",
        controls.len(),
        tau,
        dir.join("trajectory.csv").display()
    );
    if tr.diverged {
        return Err(Error::NonFiniteState { step: tr.len().saturating_sub(1) });
    }
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, args: TrainArgs) -> Result<(), Error> {
    if args.reference_preset {
        cfg.training = pinnmpc::pinn::TrainingConfig::reference_preset();
    }
    if let Some(seed) = args.seed {
        cfg.training.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.training.epochs = epochs;
    }
    if let Some(resample) = args.resample_at {
        cfg.training.resample_at = if resample == 0 { None } else { Some(resample) };
    }
    if let Some(n) = args.n_phys {
        cfg.training.n_phys = n;
    }
    if let Some(n) = args.n_data {
        cfg.training.n_data = n;
    }
    cfg.validate()?;

    let dir = out_dir(&cfg)?;
    let model = cfg.model.build()?;
    let started = std::time::Instant::now();
    let outcome = train(model.as_ref(), &cfg.domain, &cfg.training)?;
    let elapsed = started.elapsed();

    let ckpt = Checkpoint::from_model(&outcome.model, outcome.metadata.clone());
    ckpt.save(&dir.join("checkpoint.json"))?;
    std::fs::write(dir.join("loss_history.csv"), write_loss_history(&outcome.history))?;
    write_effective_config(&cfg, &dir)?;

    println!(
        "trained {} epochs in {:.1} s (stop: {:?})",
        outcome.history.last().map(|r| r.epoch).unwrap_or(0),
        elapsed.as_secs_f64(),
        outcome.stop_reason
    );
    println!(
        "final losses: L = {:.6e}, L_data = {:.6e}, L_phys = {:.6e}",
        outcome.metadata.final_loss, outcome.metadata.final_l_data, outcome.metadata.final_l_phys
    );
    println!("checkpoint -> {}", dir.join("checkpoint.json").display());
    Ok(())
}

fn cmd_predict(cfg: RunConfig, args: PredictArgs) -> Result<(), Error> {
    let dir = out_dir(&cfg)?;
    let net = load_checkpoint(&args.checkpoint)?;
    let model = cfg.model.build()?;
    let x0 = parse_x0(&args.x0)?;
    let controls = load_controls(&args.controls)?;
    let tau = args.tau.unwrap_or(cfg.mpc.tau);

    let surrogate = self_loop_predict(&net, &x0, &controls, tau)?;
    let plant = simulate_zoh(model.as_ref(), &x0, &controls, tau, &IntegratorSpec::oracle())?;

    std::fs::write(dir.join("surrogate.csv"), surrogate.to_csv())?;
    std::fs::write(dir.join("plant.csv"), plant.to_csv())?;

    // Per-step error table plus the running maximum of the error norm.
    let n = surrogate.len().min(plant.len());
    let mut errors = String::from("k,t,err_alpha,err_beta,err_dalpha,err_dbeta,err_norm,running_max\n");
    let mut running_max = 0.0f64;
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let d = surrogate.states[k] - plant.states[k];
        let norm = d.norm();
        running_max = running_max.max(norm);
        rows.push(running_max);
        errors.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            k,
            fmt_f64(surrogate.times[k]),
            fmt_f64(d[0].abs()),
            fmt_f64(d[1].abs()),
            fmt_f64(d[2].abs()),
            fmt_f64(d[3].abs()),
            fmt_f64(norm),
            fmt_f64(running_max),
        ));
    }
    std::fs::write(dir.join("errors.csv"), errors)?;
    write_effective_config(&cfg, &dir)?;

    if surrogate.out_of_domain {
        eprintln!("warning: self-loop iterates left the training domain (extrapolation)");
    }
    println!(
        "self-loop prediction over {} iterations at tau = {} s; final error norm {:.4e}, max {:.4e}",
        controls.len(),
        tau,
        (surrogate.states[n - 1] - plant.states[n - 1]).norm(),
        running_max
    );
    println!("wrote {}, {}, {}", dir.join("surrogate.csv").display(), dir.join("plant.csv").display(), dir.join("errors.csv").display());
    if surrogate.diverged || plant.diverged {
        return Err(Error::NonFiniteState { step: n.saturating_sub(1) });
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ControlMetrics {
    mae_alpha_rad: f64,
    mae_beta_rad: f64,
    mean_solve_time_s: f64,
    max_solve_time_s: f64,
    steps: usize,
    status: String,
    h: usize,
    tau: f64,
}

fn cmd_control(cfg: RunConfig, args: ControlArgs) -> Result<(), Error> {
    let dir = out_dir(&cfg)?;
    let net = load_checkpoint(&args.checkpoint)?;
    let plant = cfg.model.build()?;
    let kind: ReferenceKind = args.reference.parse()?;
    let refs = reference_generator(kind, args.t_end, cfg.mpc.tau)?;
    let predictor = SurrogatePredictor::new(&net, cfg.mpc.tau)?;

    let result = closed_loop(plant.as_ref(), &predictor, &refs, &cfg.mpc, args.t_end)?;

    std::fs::write(dir.join("closed_loop.csv"), result.to_csv())?;
    let status = if result.diverged { "diverged" } else { "ok" };
    let metrics = ControlMetrics {
        mae_alpha_rad: result.mae_alpha,
        mae_beta_rad: result.mae_beta,
        mean_solve_time_s: result.mean_solve_time(),
        max_solve_time_s: result.max_solve_time(),
        steps: result.solve_times.len(),
        status: status.to_string(),
        h: cfg.mpc.horizon,
        tau: cfg.mpc.tau,
    };
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).expect("metrics serialize") + "\n",
    )?;
    write_effective_config(&cfg, &dir)?;

    println!(
        "closed loop: {} steps, H = {}, tau = {} s, status = {status}",
        metrics.steps, cfg.mpc.horizon, cfg.mpc.tau
    );
    println!(
        "achieved:  mae_alpha = {:.4e} rad, mae_beta = {:.4e} rad, mean solve = {:.4e} s",
        result.mae_alpha,
        result.mae_beta,
        result.mean_solve_time()
    );
    println!(
        "baseline:  mae_alpha = {BASELINE_MAE_ALPHA:.4e} rad, mae_beta = {BASELINE_MAE_BETA:.4e} rad, mean solve = {BASELINE_MEAN_SOLVE:.4e} s (reference figures, context only)"
    );
    println!("wrote {}, {}", dir.join("closed_loop.csv").display(), dir.join("metrics.json").display());
    if result.diverged {
        return Err(Error::NonFiniteState { step: metrics.steps });
    }
    Ok(())
}

fn cmd_bench(cfg: RunConfig, args: BenchArgs) -> Result<(), Error> {
    let dir = out_dir(&cfg)?;
    let net = load_checkpoint(&args.checkpoint)?;
    let model = cfg.model.build()?;
    let reps = args.reps.unwrap_or(cfg.bench.reps);

    let report = run_benchmark(
        &net,
        model.as_ref(),
        &cfg.domain,
        cfg.mpc.tau,
        cfg.bench.fixed_step,
        reps,
        cfg.bench.seed,
    )?;
    print!("{}", report.to_table());
    println!(
        "baseline means: pinn {BASELINE_PINN_MEAN:.2e} s, rk45 {BASELINE_RK45_MEAN:.2e} s (reference figures, context only)"
    );

    let seeds: Vec<u64> = (0..cfg.bench.instability_seeds as u64).collect();
    let instability = euler_instability_experiment(model.as_ref(), &cfg.domain, cfg.mpc.tau, &seeds)?;
    let diverged_seeds: Vec<u64> =
        instability.runs.iter().filter(|r| r.diverged_at.is_some()).map(|r| r.seed).collect();
    println!(
        "fixed-step instability at h = tau = {} s: {}/{} seeds diverged within 50 steps {:?}; h = {} stayed bounded: {}",
        instability.coarse_step,
        diverged_seeds.len(),
        instability.runs.len(),
        diverged_seeds,
        instability.fine_step,
        instability.all_fine_bounded(),
    );

    std::fs::write(dir.join("bench.csv"), report.to_csv())?;
    std::fs::write(
        dir.join("instability.json"),
        serde_json::to_string_pretty(&instability).expect("report serialize") + "\n",
    )?;
    write_effective_config(&cfg, &dir)?;
    println!("wrote {}, {}", dir.join("bench.csv").display(), dir.join("instability.json").display());

    if args.assert_ordering {
        let pinn = report.row(BenchMethod::Pinn).expect("pinn row").mean_s;
        let rkf45 = report.row(BenchMethod::Rkf45).expect("rkf45 row").mean_s;
        if pinn >= rkf45 {
            return Err(Error::InvalidConfig(format!(
                "ordering violated: mean pinn {pinn:.3e} s >= mean rkf45 {rkf45:.3e} s"
            )));
        }
        println!("ordering holds: mean pinn {pinn:.3e} s < mean rkf45 {rkf45:.3e} s");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_parsing() {
        assert_eq!(parse_x0(&None).unwrap(), Vector4::zeros());
        let x = parse_x0(&Some("0.1, -0.2, 0.3, 0".into())).unwrap();
        assert_eq!(x, Vector4::new(0.1, -0.2, 0.3, 0.0));
        assert!(parse_x0(&Some("1,2,3".into())).is_err());
        assert!(parse_x0(&Some("1,2,3,x".into())).is_err());
    }

    #[test]
    fn exit_codes_split_numeric_from_usage() {
        assert_eq!(exit_code_for(&Error::NonFiniteState { step: 3 }), 3);
        assert_eq!(exit_code_for(&Error::InvalidConfig("x".into())), 2);
        assert_eq!(exit_code_for(&Error::UnknownKind("x".into())), 2);
    }
}
