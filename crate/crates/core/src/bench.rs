//! One-step execution-time comparison and the fixed-step instability
//! experiment.
//!
//! Timing is strictly single-threaded: the harness refuses to run when the
//! parallel batch mode is requested, and every timed call is a single-point
//! evaluation around a monotonic clock.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, DynamicsModel, StateVec};
use crate::integrators::{flow, simulate_zoh, IntegratorSpec};
use crate::net::{BatchMode, NetworkModel, Scratch};
use crate::pinn::SamplingDomain;
use crate::{Error, Result};

/// Methods compared in the one-step benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Pinn,
    Euler,
    Rk4,
    Rkf45,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 4] =
        [BenchMethod::Pinn, BenchMethod::Euler, BenchMethod::Rk4, BenchMethod::Rkf45];

    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Pinn => "pinn",
            BenchMethod::Euler => "euler",
            BenchMethod::Rk4 => "rk4",
            BenchMethod::Rkf45 => "rkf45",
        }
    }
}

/// One row of the benchmark report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub mean_s: f64,
    pub median_s: f64,
    pub reps: usize,
    pub diverged: bool,
}

/// Full benchmark report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub tau: f64,
    pub fixed_step: f64,
    pub machine_note: String,
}

impl BenchReport {
    pub fn row(&self, method: BenchMethod) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method.name())
    }

    /// Aligned-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>12} {:>12} {:>8} {:>9}", "method", "mean_s", "median_s", "reps", "diverged");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>12.4e} {:>12.4e} {:>8} {:>9}",
                r.method, r.mean_s, r.median_s, r.reps, r.diverged
            );
        }
        out
    }

    /// CSV with header `method,mean_s,median_s,reps,diverged`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean_s,median_s,reps,diverged\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.method,
                crate::integrators::fmt_f64(r.mean_s),
                crate::integrators::fmt_f64(r.median_s),
                r.reps,
                r.diverged
            );
        }
        out
    }
}

const WARMUP: usize = 100;

fn summarize(samples: &mut [f64]) -> (f64, f64) {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    let median = if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    };
    (mean, median)
}

fn sample_state(rng: &mut ChaCha8Rng, domain: &SamplingDomain) -> (StateVec, Vector2<f64>) {
    let xb = &domain.state_box;
    let ub = &domain.control_box;
    (
        Vector4::new(
            rng.random_range(xb.lo[0]..xb.hi[0]),
            rng.random_range(xb.lo[1]..xb.hi[1]),
            rng.random_range(xb.lo[2]..xb.hi[2]),
            rng.random_range(xb.lo[3]..xb.hi[3]),
        ),
        Vector2::new(rng.random_range(ub.lo[0]..ub.hi[0]), rng.random_range(ub.lo[1]..ub.hi[1])),
    )
}

/// Times one zero-order-hold step `x_{k+1}` from seeded random in-domain
/// `(x_k, u_k)` pairs. Warmup iterations are discarded; inputs are
/// deterministic under the seed even though wall times are not.
///
/// `batch_mode` must be [`BatchMode::Sequential`]; the measurement is
/// single-threaded by contract.
pub fn time_one_step(
    method: BenchMethod,
    net: &NetworkModel,
    model: &dyn DynamicsModel,
    domain: &SamplingDomain,
    tau: f64,
    fixed_step: f64,
    reps: usize,
    seed: u64,
    batch_mode: BatchMode,
) -> Result<BenchRow> {
    if batch_mode != BatchMode::Sequential {
        return Err(Error::InvalidConfig(
            "benchmark timing requires the sequential batch mode".into(),
        ));
    }
    if reps < 100 {
        return Err(Error::InvalidConfig(format!("need reps >= 100, got {reps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(StateVec, Vector2<f64>)> =
        (0..WARMUP + reps).map(|_| sample_state(&mut rng, domain)).collect();

    let spec = match method {
        BenchMethod::Euler => Some(IntegratorSpec::euler(fixed_step)),
        BenchMethod::Rk4 => Some(IntegratorSpec::rk4(fixed_step)),
        BenchMethod::Rkf45 => Some(IntegratorSpec::rkf45(1e-8, 1e-8)),
        BenchMethod::Pinn => None,
    };

    let mut scratch = Scratch::new(net.topology());
    let mut samples = Vec::with_capacity(reps);
    let mut diverged = false;
    let mut sink = 0.0f64;
    for (i, (x, u)) in inputs.iter().enumerate() {
        let started = Instant::now();
        let result: Result<StateVec> = match method {
            BenchMethod::Pinn => Ok(net.forward_scratch(&mut scratch, tau, x, u)),
            _ => flow(model, tau, &ControlInput(*u), x, spec.as_ref().unwrap()),
        };
        let elapsed = started.elapsed().as_secs_f64();
        match result {
            Ok(next) => sink += next[0],
            Err(_) => diverged = true,
        }
        if i >= WARMUP {
            samples.push(elapsed);
        }
    }
    std::hint::black_box(sink);

    let (mean_s, median_s) = summarize(&mut samples);
    Ok(BenchRow { method: method.name().to_string(), mean_s, median_s, reps, diverged })
}

/// Runs all four methods with shared settings.
pub fn run_benchmark(
    net: &NetworkModel,
    model: &dyn DynamicsModel,
    domain: &SamplingDomain,
    tau: f64,
    fixed_step: f64,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    let mut rows = Vec::with_capacity(4);
    for method in BenchMethod::ALL {
        rows.push(time_one_step(
            method,
            net,
            model,
            domain,
            tau,
            fixed_step,
            reps,
            seed,
            BatchMode::Sequential,
        )?);
    }
    Ok(BenchReport {
        rows,
        tau,
        fixed_step,
        machine_note: format!("single-threaded, {} logical cpus available", num_cpus_estimate()),
    })
}

fn num_cpus_estimate() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Outcome of the fixed-step instability experiment for one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstabilityRun {
    pub seed: u64,
    /// First step index where the coarse fixed-step trajectory exceeded the
    /// divergence threshold (or went non-finite), if any.
    pub diverged_at: Option<usize>,
    /// Whether the fine fixed-step trajectory stayed close to the adaptive
    /// reference (a held input can legitimately wind the arm up, so
    /// boundedness is judged against the true flow, not an absolute norm).
    pub fine_bounded: bool,
    /// Whether the adaptive reference stayed finite.
    pub adaptive_bounded: bool,
    pub fine_max_norm: f64,
    pub adaptive_max_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub runs: Vec<InstabilityRun>,
    pub coarse_step: f64,
    pub fine_step: f64,
    pub divergence_norm: f64,
}

impl InstabilityReport {
    pub fn any_coarse_divergence(&self) -> bool {
        self.runs.iter().any(|r| r.diverged_at.is_some())
    }

    pub fn all_fine_bounded(&self) -> bool {
        self.runs.iter().all(|r| r.fine_bounded)
    }

    pub fn all_adaptive_bounded(&self) -> bool {
        self.runs.iter().all(|r| r.adaptive_bounded)
    }
}

/// Explicit Euler at the full sampling period versus a fine step and the
/// adaptive reference, from randomized in-domain starts under random held
/// inputs.
pub fn euler_instability_experiment(
    model: &dyn DynamicsModel,
    domain: &SamplingDomain,
    tau: f64,
    seeds: &[u64],
) -> Result<InstabilityReport> {
    let divergence_norm = 1e3;
    let coarse_steps = 50;
    // The fine run covers the horizon of the open-loop experiments (4 s).
    let fine_horizon_steps = (4.0 / tau).round() as usize;

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, u) = sample_state(&mut rng, domain);
        let u = ControlInput(u);
        let controls_coarse = vec![u; coarse_steps];
        let coarse = simulate_zoh(model, &x0, &controls_coarse, tau, &IntegratorSpec::euler(tau))?;
        let diverged_at = if coarse.diverged {
            Some(coarse.states.len().saturating_sub(1))
        } else {
            coarse.states.iter().position(|x| x.norm() > divergence_norm)
        };

        let controls_fine = vec![u; fine_horizon_steps];
        let fine = simulate_zoh(model, &x0, &controls_fine, tau, &IntegratorSpec::euler(0.02))?;
        let adaptive = simulate_zoh(model, &x0, &controls_fine, tau, &IntegratorSpec::oracle())?;
        let fine_max_norm = fine.states.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        let adaptive_max_norm = adaptive.states.iter().fold(0.0f64, |m, x| m.max(x.norm()));
        let adaptive_bounded = !adaptive.diverged && adaptive_max_norm.is_finite();
        let fine_bounded =
            !fine.diverged && fine_max_norm <= 3.0 * adaptive_max_norm.max(1.0) + 10.0;

        runs.push(InstabilityRun {
            seed,
            diverged_at,
            fine_bounded,
            adaptive_bounded,
            fine_max_norm,
            adaptive_max_norm,
        });
    }
    Ok(InstabilityReport { runs, coarse_step: tau, fine_step: 0.02, divergence_norm })
}
