//! Receding-horizon tracking control with surrogate rollouts.
//!
//! At every sampling instant the controller measures the plant state, solves
//! a finite-horizon optimal control problem by projected gradient descent on
//! the control sequence (the gradient flows backward through the rollout via
//! exact vector-Jacobian products), applies the first input, and shifts the
//! solution as the next warm start.

mod reference;

pub use reference::{reference_generator, ReferenceKind, ReferenceTrajectory};

use std::time::Instant;

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::boxes::AxisBox;
use crate::dynamics::{ControlInput, DynamicsModel, StateVec};
use crate::integrators::{flow, IntegratorSpec, Source, Trajectory};
use crate::net::{NetworkModel, Scratch};
use crate::{Error, Result};

/// Controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Sampling period (s).
    pub tau: f64,
    /// Horizon length in sampling periods.
    pub horizon: usize,
    /// Diagonal of the state tracking weight (positions only by default).
    pub q_diag: [f64; 4],
    /// Diagonal of the control penalty.
    pub r_diag: [f64; 2],
    /// Admissible control box.
    pub u_box: AxisBox<2>,
    /// Inner-solver iteration cap per sampling instant.
    pub max_iterations: usize,
    /// Projected-gradient-norm stopping tolerance.
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            tau: 0.2,
            horizon: 5,
            q_diag: [1.0, 1.0, 0.0, 0.0],
            r_diag: [1e-6, 1e-6],
            u_box: AxisBox::symmetric([0.5, 0.5]),
            max_iterations: 50,
            grad_tol: 1e-6,
            armijo_c: 1e-4,
            backtrack: 0.5,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.q_diag.iter().any(|&q| !(q.is_finite() && q >= 0.0)) {
            return Err(Error::InvalidConfig("Q must be positive semidefinite".into()));
        }
        if self.r_diag.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return Err(Error::InvalidConfig("R must be positive definite".into()));
        }
        if !(0.0 < self.backtrack && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtrack factor must lie in (0, 1)".into()));
        }
        self.u_box.validate()
    }
}

/// One-interval prediction model used inside the controller: the surrogate
/// in production, the integrated plant as the oracle baseline, linear stubs
/// in tests.
pub trait Predictor {
    fn predict(&self, x: &StateVec, u: &Vector2<f64>) -> Result<StateVec>;

    /// Vector-Jacobian product: for a covector `v` on the predicted state,
    /// returns `(v' dpredict/dx, v' dpredict/du)`.
    fn predict_vjp(
        &self,
        x: &StateVec,
        u: &Vector2<f64>,
        v: &StateVec,
    ) -> Result<(StateVec, Vector2<f64>)>;
}

/// Surrogate-backed predictor at a fixed prediction interval.
pub struct SurrogatePredictor<'a> {
    net: &'a NetworkModel,
    tau: f64,
    scratch: std::cell::RefCell<Scratch>,
}

impl<'a> SurrogatePredictor<'a> {
    pub fn new(net: &'a NetworkModel, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= net.t_max()) {
            return Err(Error::InvalidConfig(format!(
                "tau = {tau} outside the surrogate's trained range (0, {}]",
                net.t_max()
            )));
        }
        Ok(Self { net, tau, scratch: std::cell::RefCell::new(Scratch::new(net.topology())) })
    }
}

impl Predictor for SurrogatePredictor<'_> {
    fn predict(&self, x: &StateVec, u: &Vector2<f64>) -> Result<StateVec> {
        Ok(self.net.forward_scratch(&mut self.scratch.borrow_mut(), self.tau, x, u))
    }

    fn predict_vjp(
        &self,
        x: &StateVec,
        u: &Vector2<f64>,
        v: &StateVec,
    ) -> Result<(StateVec, Vector2<f64>)> {
        Ok(self.net.input_gradient_scratch(&mut self.scratch.borrow_mut(), self.tau, x, u, v))
    }
}

/// Exact-flow predictor: the tightly integrated plant model plays the role of
/// the prediction model (the oracle the surrogate is judged against).
/// Sensitivities come from central finite differences of the flow.
pub struct ExactFlowPredictor<'a> {
    model: &'a dyn DynamicsModel,
    tau: f64,
    spec: IntegratorSpec,
    fd_eps: f64,
}

impl<'a> ExactFlowPredictor<'a> {
    pub fn new(model: &'a dyn DynamicsModel, tau: f64) -> Self {
        Self { model, tau, spec: IntegratorSpec::rkf45(1e-8, 1e-8), fd_eps: 1e-6 }
    }
}

impl Predictor for ExactFlowPredictor<'_> {
    fn predict(&self, x: &StateVec, u: &Vector2<f64>) -> Result<StateVec> {
        flow(self.model, self.tau, &ControlInput(*u), x, &self.spec)
    }

    fn predict_vjp(
        &self,
        x: &StateVec,
        u: &Vector2<f64>,
        v: &StateVec,
    ) -> Result<(StateVec, Vector2<f64>)> {
        let mut gx = Vector4::zeros();
        for c in 0..4 {
            let mut xp = *x;
            let mut xm = *x;
            xp[c] += self.fd_eps;
            xm[c] -= self.fd_eps;
            let col = (self.predict(&xp, u)? - self.predict(&xm, u)?) / (2.0 * self.fd_eps);
            gx[c] = v.dot(&col);
        }
        let mut gu = Vector2::zeros();
        for c in 0..2 {
            let mut up = *u;
            let mut um = *u;
            up[c] += self.fd_eps;
            um[c] -= self.fd_eps;
            let col = (self.predict(x, &up)? - self.predict(x, &um)?) / (2.0 * self.fd_eps);
            gu[c] = v.dot(&col);
        }
        Ok((gx, gu))
    }
}

/// Quadratic stage cost `||x_ref - x||_Q^2 + ||u||_R^2` with diagonal
/// weights.
pub fn stage_cost(
    x_ref: &StateVec,
    x: &StateVec,
    u: &Vector2<f64>,
    q_diag: &[f64; 4],
    r_diag: &[f64; 2],
) -> f64 {
    let mut cost = 0.0;
    for i in 0..4 {
        let e = x_ref[i] - x[i];
        cost += q_diag[i] * e * e;
    }
    for i in 0..2 {
        cost += r_diag[i] * u[i] * u[i];
    }
    cost
}

/// Finite-horizon objective: rolls the predictor out from the measured state
/// and sums stage costs. The sum starts at the measured state itself.
pub fn ocp_objective(
    u_seq: &[Vector2<f64>],
    x_rho: &StateVec,
    refs: &ReferenceTrajectory,
    rho: usize,
    predictor: &dyn Predictor,
    config: &MpcConfig,
) -> Result<f64> {
    if u_seq.len() != config.horizon {
        return Err(Error::DimensionMismatch { expected: config.horizon, got: u_seq.len() });
    }
    let mut x = *x_rho;
    let mut cost = 0.0;
    for (k, u) in u_seq.iter().enumerate() {
        cost += stage_cost(&refs.get(rho + k), &x, u, &config.q_diag, &config.r_diag);
        if k + 1 < u_seq.len() {
            x = predictor.predict(&x, u)?;
        }
    }
    Ok(cost)
}

/// Exact gradient of [`ocp_objective`] with respect to the control sequence,
/// by reverse accumulation through the rollout chain.
pub fn ocp_gradient(
    u_seq: &[Vector2<f64>],
    x_rho: &StateVec,
    refs: &ReferenceTrajectory,
    rho: usize,
    predictor: &dyn Predictor,
    config: &MpcConfig,
) -> Result<Vec<Vector2<f64>>> {
    let h = config.horizon;
    if u_seq.len() != h {
        return Err(Error::DimensionMismatch { expected: h, got: u_seq.len() });
    }
    // Forward rollout, storing the states.
    let mut states = Vec::with_capacity(h);
    states.push(*x_rho);
    for k in 0..h - 1 {
        let next = predictor.predict(&states[k], &u_seq[k])?;
        states.push(next);
    }

    let mut grad = vec![Vector2::zeros(); h];
    // Adjoint of the state after the horizon is zero.
    let mut lambda = Vector4::zeros();
    for k in (0..h).rev() {
        // Direct control term of the stage cost.
        let mut gu = Vector2::new(
            2.0 * config.r_diag[0] * u_seq[k][0],
            2.0 * config.r_diag[1] * u_seq[k][1],
        );
        // Transported sensitivity through x_{k+1} = predict(x_k, u_k).
        let mut dl_dx = Vector4::zeros();
        for i in 0..4 {
            dl_dx[i] = -2.0 * config.q_diag[i] * (refs.get(rho + k)[i] - states[k][i]);
        }
        if lambda != Vector4::zeros() {
            let (vx, vu) = predictor.predict_vjp(&states[k], &u_seq[k], &lambda)?;
            gu += vu;
            dl_dx += vx;
        }
        grad[k] = gu;
        lambda = dl_dx;
    }
    if grad.iter().any(|g| !(g[0].is_finite() && g[1].is_finite())) {
        return Err(Error::NonFiniteGradient);
    }
    Ok(grad)
}

/// Solver status for one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    StepCollapse,
}

#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub u_seq: Vec<Vector2<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Projected gradient descent with Armijo backtracking on the box-constrained
/// control sequence. Never aborts: the best iterate found is returned with a
/// status flag.
pub fn solve_ocp(
    x_rho: &StateVec,
    refs: &ReferenceTrajectory,
    rho: usize,
    predictor: &dyn Predictor,
    config: &MpcConfig,
    warm_start: Option<&[Vector2<f64>]>,
) -> Result<OcpSolution> {
    config.validate()?;
    let h = config.horizon;
    let project = |u: &Vector2<f64>| -> Vector2<f64> {
        Vector2::new(
            u[0].clamp(config.u_box.lo[0], config.u_box.hi[0]),
            u[1].clamp(config.u_box.lo[1], config.u_box.hi[1]),
        )
    };

    let mut u: Vec<Vector2<f64>> = match warm_start {
        Some(w) => {
            if w.len() != h {
                return Err(Error::DimensionMismatch { expected: h, got: w.len() });
            }
            w.iter().map(project).collect()
        }
        None => vec![Vector2::zeros(); h],
    };

    let mut f = ocp_objective(&u, x_rho, refs, rho, predictor, config)?;
    let mut best = OcpSolution {
        u_seq: u.clone(),
        objective: f,
        iterations: 0,
        status: SolveStatus::MaxIterations,
    };
    let mut alpha = 1.0f64;

    for iter in 1..=config.max_iterations {
        let grad = ocp_gradient(&u, x_rho, refs, rho, predictor, config)?;

        // Projected-gradient stationarity measure at unit step.
        let pg_norm: f64 = u
            .iter()
            .zip(&grad)
            .map(|(ui, gi)| {
                let p = project(&(ui - gi));
                (p - ui).norm_squared()
            })
            .sum::<f64>()
            .sqrt();
        if pg_norm <= config.grad_tol {
            best.status = SolveStatus::Converged;
            best.iterations = iter - 1;
            return Ok(best);
        }

        // Backtracking along the projection arc.
        let mut accepted = false;
        let mut trial_alpha = alpha;
        for _ in 0..60 {
            let cand: Vec<Vector2<f64>> = u
                .iter()
                .zip(&grad)
                .map(|(ui, gi)| project(&(ui - trial_alpha * gi)))
                .collect();
            let decrease: f64 = cand
                .iter()
                .zip(&u)
                .zip(&grad)
                .map(|((ci, ui), gi)| gi.dot(&(ci - ui)))
                .sum();
            if decrease >= 0.0 {
                // The arc made no progress in the descent direction.
                trial_alpha *= config.backtrack;
                continue;
            }
            let f_cand = ocp_objective(&cand, x_rho, refs, rho, predictor, config)?;
            if f_cand <= f + config.armijo_c * decrease {
                u = cand;
                f = f_cand;
                accepted = true;
                break;
            }
            trial_alpha *= config.backtrack;
            if trial_alpha < 1e-14 {
                break;
            }
        }

        if !accepted {
            best.status = SolveStatus::StepCollapse;
            best.iterations = iter;
            if f < best.objective {
                best.u_seq = u;
                best.objective = f;
            }
            return Ok(best);
        }

        // Grow the step again after an accepted iterate.
        alpha = (trial_alpha * 2.0).clamp(1e-12, 1e6);

        if f < best.objective {
            best.u_seq = u.clone();
            best.objective = f;
        }
        best.iterations = iter;
    }

    Ok(best)
}

/// Per-run closed-loop record.
#[derive(Debug, Clone)]
pub struct ClosedLoopResult {
    pub trajectory: Trajectory,
    pub applied_controls: Vec<Vector2<f64>>,
    pub solve_times: Vec<f64>,
    pub solve_statuses: Vec<SolveStatus>,
    /// One-step prediction error of the controller model against the plant,
    /// per step.
    pub prediction_errors: Vec<f64>,
    pub mae_alpha: f64,
    pub mae_beta: f64,
    pub references: ReferenceTrajectory,
    pub diverged: bool,
}

impl ClosedLoopResult {
    pub fn mean_solve_time(&self) -> f64 {
        if self.solve_times.is_empty() {
            0.0
        } else {
            self.solve_times.iter().sum::<f64>() / self.solve_times.len() as f64
        }
    }

    pub fn max_solve_time(&self) -> f64 {
        self.solve_times.iter().fold(0.0f64, |m, &t| m.max(t))
    }

    /// Closed-loop CSV: plant trajectory columns plus command, solve time and
    /// reference columns.
    pub fn to_csv(&self) -> String {
        use crate::integrators::fmt_f64 as f;
        let mut out = String::from(
            "t,alpha,beta,dalpha,dbeta,u1,u2,u1_cmd,u2_cmd,solve_time_s,ref_alpha,ref_beta\n",
        );
        for (i, (t, x)) in self.trajectory.times.iter().zip(&self.trajectory.states).enumerate() {
            let k = i.min(self.applied_controls.len().saturating_sub(1));
            let u = self.applied_controls.get(k).copied().unwrap_or_default();
            let st = self.solve_times.get(k).copied().unwrap_or(0.0);
            let r = self.references.get(i);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                f(*t),
                f(x[0]),
                f(x[1]),
                f(x[2]),
                f(x[3]),
                f(u[0]),
                f(u[1]),
                f(u[0]),
                f(u[1]),
                f(st),
                f(r[0]),
                f(r[1]),
            ));
        }
        out
    }
}

/// Runs the receding-horizon loop against the integrated plant.
///
/// At each instant: measure the plant state, solve the horizon problem
/// (warm-started by the shifted previous solution), apply the first input
/// over one sampling period of the tightly integrated plant, repeat.
pub fn closed_loop(
    plant: &dyn DynamicsModel,
    predictor: &dyn Predictor,
    refs: &ReferenceTrajectory,
    config: &MpcConfig,
    t_end: f64,
) -> Result<ClosedLoopResult> {
    config.validate()?;
    let steps = (t_end / config.tau).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidConfig("t_end shorter than one sampling period".into()));
    }
    if refs.len() < steps + 1 {
        return Err(Error::InvalidConfig(format!(
            "reference covers {} grid points, need {}",
            refs.len(),
            steps + 1
        )));
    }
    let plant_spec = IntegratorSpec::oracle();

    let mut result = ClosedLoopResult {
        trajectory: Trajectory::new(Source::Plant),
        applied_controls: Vec::with_capacity(steps),
        solve_times: Vec::with_capacity(steps),
        solve_statuses: Vec::with_capacity(steps),
        prediction_errors: Vec::with_capacity(steps),
        mae_alpha: 0.0,
        mae_beta: 0.0,
        references: refs.clone(),
        diverged: false,
    };

    let mut x = refs.initial_state();
    result.trajectory.times.push(0.0);
    result.trajectory.states.push(x);

    let mut warm: Option<Vec<Vector2<f64>>> = None;
    for rho in 0..steps {
        let started = Instant::now();
        let solution = solve_ocp(&x, refs, rho, predictor, config, warm.as_deref())?;
        result.solve_times.push(started.elapsed().as_secs_f64());
        result.solve_statuses.push(solution.status);

        let u_apply = solution.u_seq[0];
        let predicted = predictor.predict(&x, &u_apply)?;

        match flow(plant, config.tau, &ControlInput(u_apply), &x, &plant_spec) {
            Ok(next) => x = next,
            Err(Error::NonFiniteState { .. }) | Err(Error::StepSizeUnderflow { .. }) => {
                result.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }

        result.prediction_errors.push((predicted - x).norm());
        result.applied_controls.push(u_apply);
        result.trajectory.controls.push(u_apply);
        result.trajectory.times.push((rho + 1) as f64 * config.tau);
        result.trajectory.states.push(x);

        // Shift the solution one stage for the next warm start.
        let mut shifted = solution.u_seq;
        shifted.rotate_left(1);
        let last = *shifted.last().expect("horizon >= 1");
        *shifted.last_mut().expect("horizon >= 1") = last;
        warm = Some(shifted);
    }

    // Mean absolute tracking error per angle on the controller grid.
    let n = result.trajectory.states.len();
    let (mut sa, mut sb) = (0.0, 0.0);
    for (k, xk) in result.trajectory.states.iter().enumerate() {
        let r = refs.get(k);
        sa += (r[0] - xk[0]).abs();
        sb += (r[1] - xk[1]).abs();
    }
    result.mae_alpha = sa / n as f64;
    result.mae_beta = sb / n as f64;
    Ok(result)
}
