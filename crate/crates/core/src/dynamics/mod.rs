//! Continuous-time rigid-body control systems in mass-matrix form.
//!
//! Models provide the pieces `M(q)`, `k(q, qdot)`, `h(q, qdot)` and `B` of
//!
//! ```text
//! M(q) qddot + k(q, qdot) = h(q, qdot) + B u
//! ```
//!
//! together with the stacked first-order state `x = [q, qdot]`. The
//! right-hand side [`rhs`] solves the 2x2 mass-matrix system; [`residual`]
//! evaluates the same equations without ever inverting `M`, which is the form
//! used inside the physics loss.

mod linear;
mod manipulator;

pub use linear::LinearTestModel;
pub use manipulator::{CoulombFriction, Manipulator, ManipulatorParams};

use nalgebra::{Matrix2, SMatrix, Vector2, Vector4};

use crate::boxes::AxisBox;
use crate::{Error, Result};

/// Stacked state `x = [alpha, beta, dalpha, dbeta]`.
pub type StateVec = Vector4<f64>;
/// Control vector `u = [u1, u2]` (motor currents, A).
pub type ControlVec = Vector2<f64>;

/// Joint angles and angular velocities of a 2-DOF system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedState {
    /// Angles `(alpha, beta)` in radians.
    pub q: Vector2<f64>,
    /// Angular velocities in rad/s.
    pub qdot: Vector2<f64>,
}

impl GeneralizedState {
    pub fn new(q: Vector2<f64>, qdot: Vector2<f64>) -> Self {
        Self { q, qdot }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite())
    }

    pub fn to_state_vec(&self) -> StateVec {
        Vector4::new(self.q.x, self.q.y, self.qdot.x, self.qdot.y)
    }

    pub fn from_state_vec(x: &StateVec) -> Self {
        Self {
            q: Vector2::new(x[0], x[1]),
            qdot: Vector2::new(x[2], x[3]),
        }
    }
}

impl From<StateVec> for GeneralizedState {
    fn from(x: StateVec) -> Self {
        Self::from_state_vec(&x)
    }
}

impl From<GeneralizedState> for StateVec {
    fn from(s: GeneralizedState) -> Self {
        s.to_state_vec()
    }
}

/// Motor-current input with a box-membership test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput(pub ControlVec);

impl ControlInput {
    pub fn new(u1: f64, u2: f64) -> Self {
        Self(Vector2::new(u1, u2))
    }

    pub fn zero() -> Self {
        Self(Vector2::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn in_box(&self, u_box: &AxisBox<2>) -> bool {
        u_box.contains(&[self.0.x, self.0.y])
    }

    pub fn as_vector(&self) -> &ControlVec {
        &self.0
    }
}

impl From<ControlVec> for ControlInput {
    fn from(u: ControlVec) -> Self {
        Self(u)
    }
}

/// The callable pieces of a 2-DOF mass-matrix-form control system.
///
/// `mass_matrix` must be symmetric positive definite everywhere the model is
/// evaluated, so the acceleration solve in [`rhs`] is well posed.
pub trait DynamicsModel: Sync {
    fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64>;

    /// Centrifugal/Coriolis/gyroscopic forces `k(q, qdot)`.
    fn bias_forces(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Vector2<f64>;

    /// Applied forces `h(q, qdot)` (gravity, friction).
    fn applied_forces(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Vector2<f64>;

    fn input_matrix(&self) -> Matrix2<f64>;

    /// Jacobian with respect to `x` of the force balance
    /// `M(q) a + k(q, qdot) - h(q, qdot)` at fixed acceleration `a`.
    ///
    /// This is the state sensitivity of the force rows of [`residual`]; it is
    /// what makes loss gradients through the residual exact rather than
    /// finite-differenced.
    fn force_balance_jacobian(&self, x: &StateVec, accel: &Vector2<f64>) -> SMatrix<f64, 2, 4>;

    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }
}

/// First-order right-hand side `f(x, u) = [qdot; M(q)^{-1} (h - k + B u)]`.
///
/// The 2x2 system is solved directly (Cramer), no explicit inverse.
pub fn rhs(x: &StateVec, u: &ControlInput, model: &dyn DynamicsModel) -> Result<StateVec> {
    let s = GeneralizedState::from_state_vec(x);
    let m = model.mass_matrix(&s.q);
    let force = model.applied_forces(&s.q, &s.qdot) - model.bias_forces(&s.q, &s.qdot)
        + model.input_matrix() * u.0;
    let accel = solve_2x2(&m, &force).ok_or(Error::SingularMassMatrix { q0: s.q.x, q1: s.q.y })?;
    Ok(Vector4::new(s.qdot.x, s.qdot.y, accel.x, accel.y))
}

/// Mass-matrix-form residual
/// `F(x, xdot, u) = blkdiag(I, M(q)) xdot - [qdot; h - k + B u]`.
///
/// Zero exactly when `(x, xdot, u)` satisfies the dynamics; contains no
/// inverse of `M`.
pub fn residual(x: &StateVec, xdot: &StateVec, u: &ControlInput, model: &dyn DynamicsModel) -> StateVec {
    let s = GeneralizedState::from_state_vec(x);
    let m = model.mass_matrix(&s.q);
    let force = model.applied_forces(&s.q, &s.qdot) - model.bias_forces(&s.q, &s.qdot)
        + model.input_matrix() * u.0;
    let qddot = Vector2::new(xdot[2], xdot[3]);
    let force_rows = m * qddot - force;
    Vector4::new(
        xdot[0] - s.qdot.x,
        xdot[1] - s.qdot.y,
        force_rows.x,
        force_rows.y,
    )
}

/// Jacobian of [`residual`] with respect to `x` (4x4).
pub fn residual_jacobian_x(x: &StateVec, xdot: &StateVec, model: &dyn DynamicsModel) -> SMatrix<f64, 4, 4> {
    let accel = Vector2::new(xdot[2], xdot[3]);
    let force_jac = model.force_balance_jacobian(x, &accel);
    let mut jac = SMatrix::<f64, 4, 4>::zeros();
    // Kinematic rows: d/dx (xdot_q - qdot) = [0, -I].
    jac[(0, 2)] = -1.0;
    jac[(1, 3)] = -1.0;
    for r in 0..2 {
        for c in 0..4 {
            jac[(r + 2, c)] = force_jac[(r, c)];
        }
    }
    jac
}

/// Jacobian of [`residual`] with respect to `xdot` (4x4): `blkdiag(I, M(q))`.
pub fn residual_jacobian_xdot(x: &StateVec, model: &dyn DynamicsModel) -> SMatrix<f64, 4, 4> {
    let q = Vector2::new(x[0], x[1]);
    let m = model.mass_matrix(&q);
    let mut jac = SMatrix::<f64, 4, 4>::identity();
    for r in 0..2 {
        for c in 0..2 {
            jac[(r + 2, c + 2)] = m[(r, c)];
        }
    }
    jac
}

/// Analytic-solution fixture: two decoupled damped harmonic oscillators with
/// `M = I`, `k = 0`, `h = -omega0^2 q - damping qdot` and `B = gain I`.
pub fn linear_test_model(omega0: f64, damping: f64, gain: f64) -> LinearTestModel {
    LinearTestModel::new(omega0, damping, gain)
}

fn solve_2x2(m: &Matrix2<f64>, b: &Vector2<f64>) -> Option<Vector2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let scale = m.abs().max().max(1.0);
    if !det.is_finite() || det.abs() <= 1e-14 * scale * scale {
        return None;
    }
    Some(Vector2::new(
        (b.x * m[(1, 1)] - b.y * m[(0, 1)]) / det,
        (m[(0, 0)] * b.y - m[(1, 0)] * b.x) / det,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn default_model() -> Manipulator {
        Manipulator::new(ManipulatorParams::default()).unwrap()
    }

    fn random_state(rng: &mut ChaCha8Rng) -> StateVec {
        Vector4::new(
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.random_range(-2.5..2.5),
            rng.random_range(-2.5..2.5),
        )
    }

    #[test]
    fn state_roundtrip_is_lossless() {
        let x = Vector4::new(0.1, -0.2, 0.3, -0.4);
        let s = GeneralizedState::from_state_vec(&x);
        assert_eq!(s.to_state_vec(), x);
    }

    #[test]
    fn mass_matrix_matches_closed_form_at_beta_zero() {
        let m = default_model().mass_matrix(&Vector2::new(0.7, 0.0));
        assert_abs_diff_eq!(m[(0, 0)], 0.14, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.075, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 0)], 0.075, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 0.0725, epsilon = 1e-15);
    }

    #[test]
    fn mass_matrix_matches_closed_form_at_beta_half_pi() {
        let m = default_model().mass_matrix(&Vector2::new(-1.0, std::f64::consts::FRAC_PI_2));
        assert_abs_diff_eq!(m[(0, 0)], 0.2125, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(m[(1, 0)], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(m[(1, 1)], 0.0725, epsilon = 1e-15);
    }

    #[test]
    fn mass_matrix_is_symmetric_and_spd_over_lhs_grid() {
        // 1e4 Latin-hypercube angle samples: every M(q) must stay SPD.
        let model = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut perm2: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        perm2.shuffle(&mut rng);
        for i in 0..n {
            let a = -std::f64::consts::PI
                + 2.0 * std::f64::consts::PI * ((perm[i] as f64 + rng.random::<f64>()) / n as f64);
            let b = -std::f64::consts::PI
                + 2.0 * std::f64::consts::PI * ((perm2[i] as f64 + rng.random::<f64>()) / n as f64);
            let m = model.mass_matrix(&Vector2::new(a, b));
            assert_abs_diff_eq!(m[(0, 1)], m[(1, 0)], epsilon = 1e-16);
            // Smallest eigenvalue of a symmetric 2x2.
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let lam_min = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
            assert!(lam_min > 1e-6, "lambda_min = {lam_min} at q = ({a}, {b})");
        }
    }

    #[test]
    fn bias_forces_vanish_at_zero_velocity() {
        let model = default_model();
        let k = model.bias_forces(&Vector2::new(1.0, -0.5), &Vector2::zeros());
        assert_eq!(k, Vector2::zeros());
    }

    #[test]
    fn bias_first_component_vanishes_at_beta_zero_without_beta_rate() {
        let model = default_model();
        let k = model.bias_forces(&Vector2::new(0.3, 0.0), &Vector2::new(2.0, 0.0));
        assert_abs_diff_eq!(k.x, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn passivity_mdot_minus_2c_is_skew() {
        // qdot' (Mdot - 2C) qdot = 0 with Mdot from a central finite
        // difference along the velocity direction. The identity is cubically
        // homogeneous in qdot, so unit directions cover the whole box while
        // keeping the finite-difference noise below the tolerance.
        let model = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x = random_state(&mut rng);
            let s = GeneralizedState::from_state_vec(&x);
            let dir = s.qdot / s.qdot.norm().max(1e-9);
            let eps = 1e-5;
            let q_plus = s.q + eps * dir;
            let q_minus = s.q - eps * dir;
            let mdot = (model.mass_matrix(&q_plus) - model.mass_matrix(&q_minus)) / (2.0 * eps);
            // k = C qdot, so qdot' (Mdot qdot - 2 k) must vanish.
            let k = model.bias_forces(&s.q, &dir);
            let val = dir.dot(&(mdot * dir - 2.0 * k));
            assert!(val.abs() < 1e-10, "passivity residual {val}");
        }
    }

    #[test]
    fn applied_forces_examples() {
        let model = default_model();
        let h0 = model.applied_forces(&Vector2::new(0.4, 0.0), &Vector2::zeros());
        assert_eq!(h0, Vector2::zeros());

        let h1 = model.applied_forces(&Vector2::new(0.0, std::f64::consts::FRAC_PI_2), &Vector2::zeros());
        assert_abs_diff_eq!(h1.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(h1.y, -2.4525, epsilon = 1e-12);

        let h2 = model.applied_forces(&Vector2::new(0.0, 0.0), &Vector2::new(1.0, 0.0));
        assert_abs_diff_eq!(h2.x, -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(h2.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rhs_is_zero_at_hanging_equilibrium() {
        let model = default_model();
        let f = rhs(&Vector4::zeros(), &ControlInput::zero(), &model).unwrap();
        assert_eq!(f, Vector4::zeros());
    }

    #[test]
    fn rhs_velocity_part_solves_mass_system() {
        let model = default_model();
        let u = ControlInput::new(0.5, 0.0);
        let f = rhs(&Vector4::zeros(), &u, &model).unwrap();
        // Independent hand solve of M(0) a = (5, 0).
        let (m11, m12, m22) = (0.14, 0.075, 0.0725);
        let det = m11 * m22 - m12 * m12;
        let a0 = 5.0 * m22 / det;
        let a1 = -5.0 * m12 / det;
        assert_abs_diff_eq!(f[2], a0, epsilon = 1e-10);
        assert_abs_diff_eq!(f[3], a1, epsilon = 1e-10);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn rhs_kinematic_identity() {
        let model = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let u = ControlInput::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let f = rhs(&x, &u, &model).unwrap();
            assert_eq!(f[0], x[2]);
            assert_eq!(f[1], x[3]);
        }
    }

    #[test]
    fn residual_of_rhs_is_zero() {
        let model = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = random_state(&mut rng);
            let u = ControlInput::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let xdot = rhs(&x, &u, &model).unwrap();
            let r = residual(&x, &xdot, &u, &model);
            assert!(r.amax() < 1e-12, "residual {r:?}");
        }
    }

    #[test]
    fn residual_fixed_values() {
        let model = default_model();
        let r0 = residual(&Vector4::zeros(), &Vector4::zeros(), &ControlInput::zero(), &model);
        assert_eq!(r0, Vector4::zeros());

        let r1 = residual(&Vector4::zeros(), &Vector4::zeros(), &ControlInput::new(0.5, 0.0), &model);
        assert_abs_diff_eq!(r1[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(r1[1], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(r1[2], -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r1[3], 0.0, epsilon = 1e-16);
    }

    #[test]
    fn residual_jacobians_match_finite_differences() {
        let model = default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let x = random_state(&mut rng);
            let xdot = random_state(&mut rng) * 4.0;
            let u = ControlInput::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));

            let jx = residual_jacobian_x(&x, &xdot, &model);
            let jxd = residual_jacobian_xdot(&x, &model);
            let eps = 1e-6;
            for c in 0..4 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += eps;
                xm[c] -= eps;
                let col = (residual(&xp, &xdot, &u, &model) - residual(&xm, &xdot, &u, &model))
                    / (2.0 * eps);
                for r in 0..4 {
                    assert_abs_diff_eq!(jx[(r, c)], col[r], epsilon = 1e-5);
                }
                let mut dp = xdot;
                let mut dm = xdot;
                dp[c] += eps;
                dm[c] -= eps;
                let col = (residual(&x, &dp, &u, &model) - residual(&x, &dm, &u, &model))
                    / (2.0 * eps);
                for r in 0..4 {
                    assert_abs_diff_eq!(jxd[(r, c)], col[r], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_model_closed_form_examples() {
        let model = linear_test_model(2.0, 0.0, 1.0);
        let x0 = Vector4::new(1.0, 0.0, 0.0, 0.0);

        // One full period returns to the start.
        let period = std::f64::consts::PI; // 2 pi / omega0
        let x_t = model.exact_flow(period, &ControlInput::zero(), &x0);
        assert_abs_diff_eq!(x_t[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x_t[2], 0.0, epsilon = 1e-12);

        // Quarter period of the cosine: alpha(pi/4) = cos(pi/2) = 0.
        let x_q = model.exact_flow(std::f64::consts::FRAC_PI_4, &ControlInput::zero(), &x0);
        assert_abs_diff_eq!(x_q[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn linear_model_damped_energy_decreases() {
        let model = linear_test_model(2.0, 0.4, 1.0);
        let x0 = Vector4::new(0.7, -0.3, 0.5, 0.2);
        let energy = |x: &StateVec| {
            0.5 * (x[2] * x[2] + x[3] * x[3]) + 0.5 * 4.0 * (x[0] * x[0] + x[1] * x[1])
        };
        let mut prev = energy(&x0);
        for i in 1..=20 {
            let x = model.exact_flow(0.1 * i as f64, &ControlInput::zero(), &x0);
            let e = energy(&x);
            assert!(e < prev, "energy must strictly decrease under damping");
            prev = e;
        }
    }

    #[test]
    fn linear_model_rhs_matches_exact_flow_derivative() {
        let model = linear_test_model(1.7, 0.3, 2.0);
        let u = ControlInput::new(0.2, -0.4);
        let x0 = Vector4::new(0.3, -0.6, 1.1, 0.4);
        let eps = 1e-6;
        let xp = model.exact_flow(1.0 + eps, &u, &x0);
        let xm = model.exact_flow(1.0 - eps, &u, &x0);
        let fd = (xp - xm) / (2.0 * eps);
        let x1 = model.exact_flow(1.0, &u, &x0);
        let f = rhs(&x1, &u, &model).unwrap();
        assert!((fd - f).amax() < 1e-7);
    }
}
