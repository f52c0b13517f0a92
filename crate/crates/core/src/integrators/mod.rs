//! Explicit time integration and zero-order-hold simulation.
//!
//! [`flow`] with the tight-tolerance adaptive spec is the project-wide ground
//! truth: it plays the plant in closed-loop control, generates reference
//! trajectories for surrogate evaluation, and anchors every integrator test.

mod trajectory;

pub use trajectory::{fmt_f64, Source, Trajectory};

use serde::{Deserialize, Serialize};

use crate::dynamics::{rhs, ControlInput, DynamicsModel, StateVec};
use crate::{Error, Result};

/// Integration method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    Euler,
    Rk4,
    Rkf45,
}

/// Step-size / tolerance configuration for one integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub kind: IntegratorKind,
    /// Fixed step size in seconds (euler, rk4).
    pub step_size: f64,
    /// Absolute tolerance (rkf45).
    pub abs_tol: f64,
    /// Relative tolerance (rkf45).
    pub rel_tol: f64,
    /// Smallest admissible adaptive substep (rkf45).
    pub min_step: f64,
    /// Largest admissible adaptive substep (rkf45).
    pub max_step: f64,
}

impl IntegratorSpec {
    pub fn euler(step_size: f64) -> Self {
        Self { kind: IntegratorKind::Euler, step_size, ..Self::oracle() }
    }

    pub fn rk4(step_size: f64) -> Self {
        Self { kind: IntegratorKind::Rk4, step_size, ..Self::oracle() }
    }

    pub fn rkf45(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            kind: IntegratorKind::Rkf45,
            step_size: 0.02,
            abs_tol,
            rel_tol,
            min_step: 1e-12,
            max_step: 1.0,
        }
    }

    /// The project-wide ground-truth oracle: adaptive stepping at 1e-10.
    pub fn oracle() -> Self {
        Self {
            kind: IntegratorKind::Rkf45,
            step_size: 0.02,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            min_step: 1e-12,
            max_step: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!("step_size must be > 0, got {}", self.step_size)));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be > 0".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= self.max_step) {
            return Err(Error::InvalidConfig("need 0 < min_step <= max_step".into()));
        }
        Ok(())
    }
}

fn check_finite(x: &StateVec, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

fn euler_step(model: &dyn DynamicsModel, x: &StateVec, u: &ControlInput, dt: f64) -> Result<StateVec> {
    Ok(x + dt * rhs(x, u, model)?)
}

fn rk4_step(model: &dyn DynamicsModel, x: &StateVec, u: &ControlInput, dt: f64) -> Result<StateVec> {
    let k1 = rhs(x, u, model)?;
    let k2 = rhs(&(x + 0.5 * dt * k1), u, model)?;
    let k3 = rhs(&(x + 0.5 * dt * k2), u, model)?;
    let k4 = rhs(&(x + dt * k3), u, model)?;
    Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// One Fehlberg 4(5) stage evaluation: returns the fifth-order candidate and
/// the embedded error estimate.
fn rkf45_stage(
    model: &dyn DynamicsModel,
    x: &StateVec,
    u: &ControlInput,
    h: f64,
) -> Result<(StateVec, f64)> {
    let k1 = rhs(x, u, model)?;
    let k2 = rhs(&(x + h * (0.25 * k1)), u, model)?;
    let k3 = rhs(&(x + h * (3.0 / 32.0 * k1 + 9.0 / 32.0 * k2)), u, model)?;
    let k4 = rhs(
        &(x + h * (1932.0 / 2197.0 * k1 - 7200.0 / 2197.0 * k2 + 7296.0 / 2197.0 * k3)),
        u,
        model,
    )?;
    let k5 = rhs(
        &(x + h * (439.0 / 216.0 * k1 - 8.0 * k2 + 3680.0 / 513.0 * k3 - 845.0 / 4104.0 * k4)),
        u,
        model,
    )?;
    let k6 = rhs(
        &(x + h
            * (-8.0 / 27.0 * k1 + 2.0 * k2 - 3544.0 / 2565.0 * k3 + 1859.0 / 4104.0 * k4
                - 11.0 / 40.0 * k5)),
        u,
        model,
    )?;
    let x5 = x + h
        * (16.0 / 135.0 * k1 + 6656.0 / 12825.0 * k3 + 28561.0 / 56430.0 * k4 - 9.0 / 50.0 * k5
            + 2.0 / 55.0 * k6);
    let err_vec = h
        * (1.0 / 360.0 * k1 - 128.0 / 4275.0 * k3 - 2197.0 / 75240.0 * k4 + 1.0 / 50.0 * k5
            + 2.0 / 55.0 * k6);
    Ok((x5, err_vec.norm()))
}

/// Adaptive Fehlberg stepping over an interval of length `dt`.
fn rkf45_span(
    model: &dyn DynamicsModel,
    x0: &StateVec,
    u: &ControlInput,
    dt: f64,
    spec: &IntegratorSpec,
) -> Result<StateVec> {
    let mut x = *x0;
    let mut t = 0.0;
    let mut h = (spec.step_size.min(dt)).min(spec.max_step);
    while t < dt {
        h = h.min(dt - t).min(spec.max_step);
        if h < spec.min_step && dt - t > spec.min_step {
            return Err(Error::StepSizeUnderflow { t, step: h, min_step: spec.min_step });
        }
        let (candidate, err) = rkf45_stage(model, &x, u, h)?;
        let tol = spec.abs_tol + spec.rel_tol * x.norm().max(candidate.norm());
        if err <= tol {
            t += h;
            x = candidate;
            check_finite(&x, 0)?;
            // Safety factor 0.9, order-5 exponent, growth clipped to [0.2, 5].
            let factor = if err == 0.0 { 5.0 } else { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) };
            h *= factor;
        } else {
            let factor = (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0);
            h *= factor.min(0.9);
            if h < spec.min_step {
                return Err(Error::StepSizeUnderflow { t, step: h, min_step: spec.min_step });
            }
        }
    }
    Ok(x)
}

/// One integrator step of length `dt` under a held control.
///
/// For the fixed-step kinds this is a single method step of size `dt`; the
/// adaptive kind substeps internally until `dt` is covered.
pub fn step(
    model: &dyn DynamicsModel,
    x: &StateVec,
    u: &ControlInput,
    dt: f64,
    spec: &IntegratorSpec,
) -> Result<StateVec> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("step length must be > 0, got {dt}")));
    }
    let next = match spec.kind {
        IntegratorKind::Euler => euler_step(model, x, u, dt)?,
        IntegratorKind::Rk4 => rk4_step(model, x, u, dt)?,
        IntegratorKind::Rkf45 => rkf45_span(model, x, u, dt, spec)?,
    };
    check_finite(&next, 0)?;
    Ok(next)
}

/// The zero-order-hold flow `phi(tau, u, x0)`.
///
/// Fixed-step kinds subdivide `tau` into equal substeps no longer than the
/// spec's `step_size`; the adaptive kind covers `tau` directly.
pub fn flow(
    model: &dyn DynamicsModel,
    tau: f64,
    u: &ControlInput,
    x0: &StateVec,
    spec: &IntegratorSpec,
) -> Result<StateVec> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    match spec.kind {
        IntegratorKind::Rkf45 => step(model, x0, u, tau, spec),
        _ => {
            let n = (tau / spec.step_size - 1e-9).ceil().max(1.0) as usize;
            let dt = tau / n as f64;
            let mut x = *x0;
            for i in 0..n {
                x = match spec.kind {
                    IntegratorKind::Euler => euler_step(model, &x, u, dt)?,
                    IntegratorKind::Rk4 => rk4_step(model, &x, u, dt)?,
                    IntegratorKind::Rkf45 => unreachable!(),
                };
                check_finite(&x, i)?;
            }
            Ok(x)
        }
    }
}

/// Iterates `x_{k+1} = phi(tau, u_k, x_k)` over a control sequence.
///
/// On a non-finite state (or adaptive underflow) the partial trajectory is
/// returned with the divergence flag set instead of an error, so unstable
/// integrator configurations can be observed rather than aborted.
pub fn simulate_zoh(
    model: &dyn DynamicsModel,
    x0: &StateVec,
    controls: &[ControlInput],
    tau: f64,
    spec: &IntegratorSpec,
) -> Result<Trajectory> {
    if controls.is_empty() {
        return Err(Error::InvalidConfig("control sequence must be nonempty".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")));
    }
    let mut tr = Trajectory::new(Source::Plant);
    tr.times.push(0.0);
    tr.states.push(*x0);
    let mut x = *x0;
    for (k, u) in controls.iter().enumerate() {
        match flow(model, tau, u, &x, spec) {
            Ok(next) => {
                x = next;
                tr.controls.push(u.0);
                tr.times.push((k + 1) as f64 * tau);
                tr.states.push(x);
            }
            Err(Error::NonFiniteState { .. }) | Err(Error::StepSizeUnderflow { .. }) => {
                tr.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(tr)
}

/// Least-squares slope of `log(error)` against `log(dt)` for a fixed-step
/// method, measured against an exact reference state at `t_end`.
pub fn convergence_order(
    model: &dyn DynamicsModel,
    kind: IntegratorKind,
    x0: &StateVec,
    u: &ControlInput,
    t_end: f64,
    step_sizes: &[f64],
    reference: &StateVec,
) -> Result<f64> {
    if step_sizes.len() < 3 {
        return Err(Error::InvalidConfig("need at least 3 step sizes".into()));
    }
    let mut logs = Vec::with_capacity(step_sizes.len());
    for &dt in step_sizes {
        let spec = match kind {
            IntegratorKind::Euler => IntegratorSpec::euler(dt),
            IntegratorKind::Rk4 => IntegratorSpec::rk4(dt),
            IntegratorKind::Rkf45 => {
                return Err(Error::InvalidConfig(
                    "convergence order is defined for fixed-step kinds".into(),
                ))
            }
        };
        let x = flow(model, t_end, u, x0, &spec)?;
        let err = (x - reference).norm();
        logs.push((dt.ln(), err.max(1e-300).ln()));
    }
    // Least-squares fit of log err = a + slope * log dt.
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|(x, _)| x).sum();
    let sy: f64 = logs.iter().map(|(_, y)| y).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = logs.iter().map(|(x, y)| x * y).sum();
    Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
}
