//! Decoupled damped harmonic oscillators with a closed-form flow.
//!
//! Used as the analytic ground truth for integrator-order tests and for the
//! small-scale training sanity checks.

use nalgebra::{Matrix2, SMatrix, Vector2, Vector4};

use super::{ControlInput, DynamicsModel, StateVec};

/// Two identical decoupled oscillators: `qddot = -omega0^2 q - damping qdot + gain u`.
#[derive(Debug, Clone, Copy)]
pub struct LinearTestModel {
    omega0: f64,
    damping: f64,
    gain: f64,
}

impl LinearTestModel {
    pub fn new(omega0: f64, damping: f64, gain: f64) -> Self {
        assert!(omega0 > 0.0, "omega0 must be positive");
        assert!(
            damping >= 0.0 && damping < 2.0 * omega0,
            "only the underdamped regime has the closed form used here"
        );
        Self { omega0, damping, gain }
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    /// Closed-form flow under a constant (zero-order-hold) input.
    pub fn exact_flow(&self, t: f64, u: &ControlInput, x0: &StateVec) -> StateVec {
        let w2 = self.omega0 * self.omega0;
        let lam = 0.5 * self.damping;
        let wd = (w2 - lam * lam).sqrt();
        let decay = (-lam * t).exp();
        let (sn, cs) = (wd * t).sin_cos();

        let mut out = Vector4::zeros();
        for i in 0..2 {
            let q_eq = self.gain * u.0[i] / w2;
            let xi0 = x0[i] - q_eq;
            let v0 = x0[i + 2];
            let b = (v0 + lam * xi0) / wd;
            let xi = decay * (xi0 * cs + b * sn);
            let vi = decay * (v0 * cs - (w2 * xi0 + lam * v0) / wd * sn);
            out[i] = q_eq + xi;
            out[i + 2] = vi;
        }
        out
    }
}

impl DynamicsModel for LinearTestModel {
    fn mass_matrix(&self, _q: &Vector2<f64>) -> Matrix2<f64> {
        Matrix2::identity()
    }

    fn bias_forces(&self, _q: &Vector2<f64>, _qdot: &Vector2<f64>) -> Vector2<f64> {
        Vector2::zeros()
    }

    fn applied_forces(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Vector2<f64> {
        -self.omega0 * self.omega0 * q - self.damping * qdot
    }

    fn input_matrix(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.gain
    }

    fn force_balance_jacobian(&self, _x: &StateVec, _accel: &Vector2<f64>) -> SMatrix<f64, 2, 4> {
        // M a + k - h = a + omega0^2 q + damping qdot - gain u.
        let w2 = self.omega0 * self.omega0;
        SMatrix::<f64, 2, 4>::new(w2, 0.0, self.damping, 0.0, 0.0, w2, 0.0, self.damping)
    }
}
