//! Physics-informed training of the one-interval flow map, and self-loop
//! prediction with the trained surrogate.
//!
//! The data loss anchors initial conditions (no solved trajectories are
//! needed); the physics loss penalizes the mass-matrix-form residual of the
//! dynamics evaluated at the network and its exact time derivative on
//! Latin-hypercube collocation points.

mod lbfgs;
mod sampling;
mod train;

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsOutcome, StopReason};
pub use sampling::{latin_hypercube, latin_hypercube_unit, random_controls};
pub use train::{train, write_loss_history, EpochRecord, TrainOutcome, TrainingConfig};

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::boxes::AxisBox;
use crate::dynamics::{residual, residual_jacobian_x, residual_jacobian_xdot, ControlInput, DynamicsModel};
use crate::integrators::{Source, Trajectory};
use crate::net::{BatchMode, BatchPoint, NetworkModel, Normalizer, PointAdjoint};
use crate::{Error, Result};

/// The sampled training domain `[0, t_max] x X x U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingDomain {
    /// Largest prediction time the surrogate is trained for (s). Kept
    /// slightly larger than the controller sampling period.
    pub t_max: f64,
    pub state_box: AxisBox<4>,
    pub control_box: AxisBox<2>,
}

impl Default for SamplingDomain {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            t_max: 0.25,
            state_box: AxisBox::new([-PI, -PI, -2.5, -2.5], [PI, PI, 2.5, 2.5]),
            control_box: AxisBox::new([-0.5, -0.5], [0.5, 0.5]),
        }
    }
}

impl SamplingDomain {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::InvalidConfig(format!("t_max must be > 0, got {}", self.t_max)));
        }
        self.state_box.validate()?;
        self.control_box.validate()
    }

    /// Bounds of the full 7-dimensional sampling box `(t, x0, u)`.
    pub fn full_bounds(&self) -> ([f64; 7], [f64; 7]) {
        let xb = &self.state_box;
        let ub = &self.control_box;
        (
            [0.0, xb.lo[0], xb.lo[1], xb.lo[2], xb.lo[3], ub.lo[0], ub.lo[1]],
            [self.t_max, xb.hi[0], xb.hi[1], xb.hi[2], xb.hi[3], ub.hi[0], ub.hi[1]],
        )
    }

    /// Input normalizer mapping each coordinate of the sampling box to [-1, 1].
    pub fn input_normalizer(&self) -> Normalizer {
        let (lo, hi) = self.full_bounds();
        let center = (0..7).map(|i| 0.5 * (lo[i] + hi[i])).collect();
        let half = (0..7).map(|i| 0.5 * (hi[i] - lo[i])).collect();
        Normalizer::new(center, half).expect("valid domain")
    }

    /// Output map from normalized network outputs to state coordinates.
    pub fn state_normalizer(&self) -> Normalizer {
        let c = self.state_box.center();
        let h = self.state_box.half_width();
        Normalizer::new(c.to_vec(), h.to_vec()).expect("valid domain")
    }
}

/// Collocation points for the physics loss.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    pub points: Vec<BatchPoint>,
    pub seed: u64,
}

/// One supervised tuple `(t, x0, u) -> target`.
#[derive(Debug, Clone, Copy)]
pub struct DataPoint {
    pub t: f64,
    pub x0: Vector4<f64>,
    pub u: Vector2<f64>,
    pub target: Vector4<f64>,
}

/// Supervised data for the data loss. The default construction uses pure
/// initial-condition anchors: `t = 0` with target `x0`, so no solution of the
/// dynamics is required.
#[derive(Debug, Clone)]
pub struct DataSet {
    pub points: Vec<DataPoint>,
    pub seed: u64,
}

impl DataSet {
    /// Initial-condition anchors on a 6-dimensional Latin hypercube over
    /// `X x U`.
    pub fn ic_anchors(n: usize, domain: &SamplingDomain, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let unit = sampling::latin_hypercube_unit(n, 6, &mut rng);
        let xb = &domain.state_box;
        let ub = &domain.control_box;
        let points = unit
            .into_iter()
            .map(|s| {
                let x0 = Vector4::new(
                    xb.lo[0] + s[0] * (xb.hi[0] - xb.lo[0]),
                    xb.lo[1] + s[1] * (xb.hi[1] - xb.lo[1]),
                    xb.lo[2] + s[2] * (xb.hi[2] - xb.lo[2]),
                    xb.lo[3] + s[3] * (xb.hi[3] - xb.lo[3]),
                );
                let u = Vector2::new(
                    ub.lo[0] + s[4] * (ub.hi[0] - ub.lo[0]),
                    ub.lo[1] + s[5] * (ub.hi[1] - ub.lo[1]),
                );
                DataPoint { t: 0.0, x0, u, target: x0 }
            })
            .collect();
        Self { points, seed }
    }

    fn batch_points(&self) -> Vec<BatchPoint> {
        self.points
            .iter()
            .map(|p| BatchPoint { t: p.t, x0: p.x0, u: p.u })
            .collect()
    }
}

/// Fixed diagonal scaling applied to the residual inside the physics loss,
/// balancing the kinematic rows (rate units) against the force rows (torque
/// units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualWeights(pub [f64; 4]);

impl ResidualWeights {
    /// Default: kinematic rows scaled by the inverse half-width of the
    /// matching state coordinate, force rows left in physical units.
    pub fn from_domain(domain: &SamplingDomain) -> Self {
        let hw = domain.state_box.half_width();
        Self([1.0 / hw[0], 1.0 / hw[1], 1.0, 1.0])
    }
}

struct DataAdjoint<'a> {
    targets: &'a [DataPoint],
    inv_hw: [f64; 4],
}

impl PointAdjoint for DataAdjoint<'_> {
    fn needs_tangent(&self) -> bool {
        false
    }

    fn eval(
        &self,
        idx: usize,
        out: &Vector4<f64>,
        _out_dot: Option<&Vector4<f64>>,
    ) -> (f64, Vector4<f64>, Option<Vector4<f64>>) {
        let e = out - self.targets[idx].target;
        let mut loss = 0.0;
        let mut v = Vector4::zeros();
        for i in 0..4 {
            let en = e[i] * self.inv_hw[i];
            loss += en * en;
            v[i] = 2.0 * en * self.inv_hw[i];
        }
        (loss, v, None)
    }
}

struct PhysicsAdjoint<'a> {
    points: &'a [BatchPoint],
    model: &'a dyn DynamicsModel,
    weights: ResidualWeights,
}

impl PointAdjoint for PhysicsAdjoint<'_> {
    fn needs_tangent(&self) -> bool {
        true
    }

    fn eval(
        &self,
        idx: usize,
        out: &Vector4<f64>,
        out_dot: Option<&Vector4<f64>>,
    ) -> (f64, Vector4<f64>, Option<Vector4<f64>>) {
        let xdot = out_dot.expect("physics loss needs the tangent output");
        let u = ControlInput(self.points[idx].u);
        let res = residual(out, xdot, &u, self.model);
        let w = &self.weights.0;
        let mut loss = 0.0;
        let mut w2f = Vector4::zeros();
        for i in 0..4 {
            let wf = w[i] * res[i];
            loss += wf * wf;
            w2f[i] = 2.0 * w[i] * wf;
        }
        let jx = residual_jacobian_x(out, xdot, self.model);
        let jxd = residual_jacobian_xdot(out, self.model);
        (loss, jx.transpose() * w2f, Some(jxd.transpose() * w2f))
    }
}

/// Mean squared data misfit in normalized state coordinates.
pub fn data_loss(net: &NetworkModel, dataset: &DataSet) -> Result<f64> {
    data_loss_grad(net, dataset, BatchMode::Sequential).map(|(l, _)| l)
}

/// Data loss with its exact weight gradient.
pub fn data_loss_grad(
    net: &NetworkModel,
    dataset: &DataSet,
    mode: BatchMode,
) -> Result<(f64, Vec<f64>)> {
    if dataset.points.is_empty() {
        return Err(Error::InvalidConfig("dataset must be nonempty".into()));
    }
    let points = dataset.batch_points();
    let hw = &net.output_map().half_width;
    let adjoint = DataAdjoint {
        targets: &dataset.points,
        inv_hw: [1.0 / hw[0], 1.0 / hw[1], 1.0 / hw[2], 1.0 / hw[3]],
    };
    let (sum, mut grad) = crate::net::batch_loss_gradient(net, &points, &adjoint, mode)?;
    let n = dataset.points.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((sum / n, grad))
}

/// Mean squared weighted dynamics residual at the collocation points, with
/// the network and its exact time derivative substituted into the equations.
pub fn physics_loss(
    net: &NetworkModel,
    collocation: &CollocationSet,
    model: &dyn DynamicsModel,
    weights: ResidualWeights,
) -> Result<f64> {
    physics_loss_grad(net, collocation, model, weights, BatchMode::Sequential).map(|(l, _)| l)
}

/// Physics loss with its exact weight gradient (the reverse pass runs over
/// the tangent-augmented forward computation).
pub fn physics_loss_grad(
    net: &NetworkModel,
    collocation: &CollocationSet,
    model: &dyn DynamicsModel,
    weights: ResidualWeights,
    mode: BatchMode,
) -> Result<(f64, Vec<f64>)> {
    if collocation.points.is_empty() {
        return Err(Error::InvalidConfig("collocation set must be nonempty".into()));
    }
    let adjoint = PhysicsAdjoint { points: &collocation.points, model, weights };
    let (sum, mut grad) = crate::net::batch_loss_gradient(net, &collocation.points, &adjoint, mode)?;
    let n = collocation.points.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((sum / n, grad))
}

/// Mean weighted residual norm over explicit `(state, state rate, control)`
/// triples. This is the same scaling and summation the physics loss uses;
/// substituting the right-hand side for the rate must give exactly zero.
pub fn weighted_residual_msq(
    triples: &[(Vector4<f64>, Vector4<f64>, ControlInput)],
    model: &dyn DynamicsModel,
    weights: ResidualWeights,
) -> f64 {
    let mut sum = 0.0;
    for (x, xdot, u) in triples {
        let res = residual(x, xdot, u, model);
        for i in 0..4 {
            let wf = weights.0[i] * res[i];
            sum += wf * wf;
        }
    }
    sum / triples.len().max(1) as f64
}

/// Combined loss `L = L_data + lambda_phys * L_phys`.
pub fn total_loss(
    net: &NetworkModel,
    dataset: &DataSet,
    collocation: &CollocationSet,
    model: &dyn DynamicsModel,
    weights: ResidualWeights,
    lambda_phys: f64,
) -> Result<f64> {
    Ok(data_loss(net, dataset)? + lambda_phys * physics_loss(net, collocation, model, weights)?)
}

/// Combined loss with gradient; returns `(l, l_data, l_phys, grad)`.
pub fn total_loss_grad(
    net: &NetworkModel,
    dataset: &DataSet,
    collocation: &CollocationSet,
    model: &dyn DynamicsModel,
    weights: ResidualWeights,
    lambda_phys: f64,
    mode: BatchMode,
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let (l_data, g_data) = data_loss_grad(net, dataset, mode)?;
    let (l_phys, g_phys) = physics_loss_grad(net, collocation, model, weights, mode)?;
    let mut grad = g_data;
    for (g, p) in grad.iter_mut().zip(&g_phys) {
        *g += lambda_phys * p;
    }
    Ok((l_data + lambda_phys * l_phys, l_data, l_phys, grad))
}

/// Chains one-interval surrogate predictions, feeding each output back as the
/// next initial state.
///
/// Out-of-domain iterates (state outside the training box, or controls
/// outside the control box) set a warning flag on the trajectory; nothing is
/// clamped.
pub fn self_loop_predict(
    net: &NetworkModel,
    x0: &Vector4<f64>,
    controls: &[ControlInput],
    tau: f64,
) -> Result<Trajectory> {
    if !(tau > 0.0 && tau <= net.t_max()) {
        return Err(Error::InvalidConfig(format!(
            "tau = {tau} must lie in (0, t_max = {}]",
            net.t_max()
        )));
    }
    if controls.is_empty() {
        return Err(Error::InvalidConfig("control sequence must be nonempty".into()));
    }
    // The training boxes are recoverable from the normalizer constants.
    let inorm = net.input_norm();
    let state_in = |x: &Vector4<f64>| {
        (0..4).all(|i| {
            let c = inorm.center[i + 1];
            let h = inorm.half_width[i + 1];
            x[i] >= c - h && x[i] <= c + h
        })
    };
    let control_in = |u: &ControlInput| {
        (0..2).all(|i| {
            let c = inorm.center[i + 5];
            let h = inorm.half_width[i + 5];
            u.0[i] >= c - h && u.0[i] <= c + h
        })
    };

    let mut tr = Trajectory::new(Source::Surrogate);
    tr.times.push(0.0);
    tr.states.push(*x0);
    if !state_in(x0) {
        tr.out_of_domain = true;
    }
    let mut scratch = crate::net::Scratch::new(net.topology());
    let mut x = *x0;
    for (k, u) in controls.iter().enumerate() {
        if !control_in(u) {
            tr.out_of_domain = true;
        }
        x = net.forward_scratch(&mut scratch, tau, &x, &u.0);
        if !x.iter().all(|v| v.is_finite()) {
            tr.diverged = true;
            break;
        }
        if !state_in(&x) {
            tr.out_of_domain = true;
        }
        tr.controls.push(u.0);
        tr.times.push((k + 1) as f64 * tau);
        tr.states.push(x);
    }
    Ok(tr)
}
