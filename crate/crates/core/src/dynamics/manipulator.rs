//! Rotary-arm + hanging-pendulum manipulator.
//!
//! Joint A rotates the arm about the vertical axis (angle `alpha`), joint B
//! swings the pendulum link about the arm's horizontal axis (angle `beta`,
//! measured from the hanging position). The bias forces come from the
//! Christoffel symbols of `M(q)`, which guarantees the skew-symmetry of
//! `Mdot - 2C` checked by the passivity tests.

use nalgebra::{Matrix2, SMatrix, Vector2};
use serde::{Deserialize, Serialize};

use super::{DynamicsModel, StateVec};
use crate::{Error, Result};

/// Optional smooth Coulomb friction `mu * tanh(qdot / eps)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoulombFriction {
    /// Friction magnitudes per joint (N m).
    pub mu: [f64; 2],
    /// Velocity smoothing scale (rad/s).
    pub eps: f64,
}

impl Default for CoulombFriction {
    fn default() -> Self {
        Self { mu: [0.05, 0.05], eps: 1e-2 }
    }
}

/// Physical parameters of the manipulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManipulatorParams {
    /// Arm inertia about the vertical axis (kg m^2).
    pub j_a: f64,
    /// Pendulum link mass (kg).
    pub m_b: f64,
    /// Arm length from joint A axis to joint B (m).
    pub r_a: f64,
    /// Distance from joint B axis to the link center of mass (m).
    pub l_b: f64,
    /// Pendulum link inertia about its center of mass (kg m^2).
    pub j_b: f64,
    /// Viscous friction per joint (N m s/rad).
    pub d: [f64; 2],
    /// Motor constants per joint (N m/A); the input matrix is `diag(k_m)`.
    pub k_m: [f64; 2],
    /// Gravity (m/s^2).
    pub g: f64,
    /// Smooth Coulomb friction, disabled by default.
    pub coulomb: Option<CoulombFriction>,
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            j_a: 0.05,
            m_b: 1.0,
            r_a: 0.3,
            l_b: 0.25,
            j_b: 0.01,
            d: [0.05, 0.05],
            k_m: [10.0, 10.0],
            g: 9.81,
            coulomb: None,
        }
    }
}

impl ManipulatorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("j_a", self.j_a),
            ("m_b", self.m_b),
            ("r_a", self.r_a),
            ("l_b", self.l_b),
            ("j_b", self.j_b),
            ("k_m[0]", self.k_m[0]),
            ("k_m[1]", self.k_m[1]),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (i, v) in self.d.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidConfig(format!("d[{i}] must be >= 0, got {v}")));
            }
        }
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(Error::InvalidConfig(format!("g must be >= 0, got {}", self.g)));
        }
        if let Some(c) = &self.coulomb {
            if !(c.eps.is_finite() && c.eps > 0.0) {
                return Err(Error::InvalidConfig(format!("coulomb eps must be > 0, got {}", c.eps)));
            }
            for (i, mu) in c.mu.iter().enumerate() {
                if !(mu.is_finite() && *mu >= 0.0) {
                    return Err(Error::InvalidConfig(format!("coulomb mu[{i}] must be >= 0, got {mu}")));
                }
            }
        }
        Ok(())
    }
}

/// PowerCube-like two-link manipulator model.
#[derive(Debug, Clone)]
pub struct Manipulator {
    params: ManipulatorParams,
    /// `J1 = J_A + m_B r_A^2`.
    j1: f64,
    /// `J2 = J_B + m_B l_B^2`.
    j2: f64,
    /// Coupling `gamma = m_B r_A l_B`.
    gamma: f64,
}

impl Manipulator {
    pub fn new(params: ManipulatorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            j1: params.j_a + params.m_b * params.r_a * params.r_a,
            j2: params.j_b + params.m_b * params.l_b * params.l_b,
            gamma: params.m_b * params.r_a * params.l_b,
            params,
        })
    }

    pub fn params(&self) -> &ManipulatorParams {
        &self.params
    }

    /// `dM/dbeta` (the only nonzero coordinate partial of `M`).
    fn mass_matrix_dbeta(&self, beta: f64) -> Matrix2<f64> {
        let (s, c) = beta.sin_cos();
        Matrix2::new(2.0 * self.j2 * s * c, -self.gamma * s, -self.gamma * s, 0.0)
    }

    /// Coriolis matrix from the Christoffel symbols of `M(q)`,
    /// `C_ij = sum_k 0.5 (dM_ij/dq_k + dM_ik/dq_j - dM_jk/dq_i) qdot_k`.
    fn coriolis_matrix(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Matrix2<f64> {
        // dm[k][(i, j)] = dM_ij/dq_k; everything is independent of alpha.
        let dm = [Matrix2::zeros(), self.mass_matrix_dbeta(q.y)];
        let mut c = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += 0.5 * (dm[k][(i, j)] + dm[j][(i, k)] - dm[i][(j, k)]) * qdot[k];
                }
                c[(i, j)] = acc;
            }
        }
        c
    }

    /// Total mechanical energy, with potential measured from the hanging
    /// position: `E = 0.5 qdot' M qdot + m_B g l_B (1 - cos beta)`.
    pub fn energy(&self, x: &StateVec) -> f64 {
        let q = Vector2::new(x[0], x[1]);
        let qdot = Vector2::new(x[2], x[3]);
        let m = self.mass_matrix(&q);
        0.5 * qdot.dot(&(m * qdot)) + self.params.m_b * self.params.g * self.params.l_b * (1.0 - x[1].cos())
    }
}

impl DynamicsModel for Manipulator {
    fn mass_matrix(&self, q: &Vector2<f64>) -> Matrix2<f64> {
        let (s, c) = q.y.sin_cos();
        let off = self.gamma * c;
        Matrix2::new(self.j1 + self.j2 * s * s, off, off, self.j2)
    }

    fn bias_forces(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Vector2<f64> {
        self.coriolis_matrix(q, qdot) * qdot
    }

    fn applied_forces(&self, q: &Vector2<f64>, qdot: &Vector2<f64>) -> Vector2<f64> {
        let p = &self.params;
        let mut h = Vector2::new(0.0, -p.m_b * p.g * p.l_b * q.y.sin());
        h.x -= p.d[0] * qdot.x;
        h.y -= p.d[1] * qdot.y;
        if let Some(cf) = &p.coulomb {
            h.x -= cf.mu[0] * (qdot.x / cf.eps).tanh();
            h.y -= cf.mu[1] * (qdot.y / cf.eps).tanh();
        }
        h
    }

    fn input_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.params.k_m[0], 0.0, 0.0, self.params.k_m[1])
    }

    fn force_balance_jacobian(&self, x: &StateVec, accel: &Vector2<f64>) -> SMatrix<f64, 2, 4> {
        let p = &self.params;
        let beta = x[1];
        let (s, c) = beta.sin_cos();
        let cos2b = (2.0 * beta).cos();
        let (ad, bd) = (x[2], x[3]);

        // d/dbeta of M(q) accel.
        let dm_accel = self.mass_matrix_dbeta(beta) * accel;

        // k = [2 J2 s c ad bd - gamma s bd^2, -J2 s c ad^2].
        let dk_dbeta = Vector2::new(
            2.0 * self.j2 * cos2b * ad * bd - self.gamma * c * bd * bd,
            -self.j2 * cos2b * ad * ad,
        );
        let dk_dad = Vector2::new(2.0 * self.j2 * s * c * bd, -2.0 * self.j2 * s * c * ad);
        let dk_dbd = Vector2::new(2.0 * self.j2 * s * c * ad - 2.0 * self.gamma * s * bd, 0.0);

        // h = [0, -m g l sin(beta)] - diag(d) qdot (- coulomb).
        let dh_dbeta = Vector2::new(0.0, -p.m_b * p.g * p.l_b * c);
        let mut dh_dad = Vector2::new(-p.d[0], 0.0);
        let mut dh_dbd = Vector2::new(0.0, -p.d[1]);
        if let Some(cf) = &p.coulomb {
            let sech2 = |v: f64| {
                let t = (v / cf.eps).tanh();
                (1.0 - t * t) / cf.eps
            };
            dh_dad.x -= cf.mu[0] * sech2(ad);
            dh_dbd.y -= cf.mu[1] * sech2(bd);
        }

        let col_beta = dm_accel + dk_dbeta - dh_dbeta;
        let col_ad = dk_dad - dh_dad;
        let col_bd = dk_dbd - dh_dbd;
        SMatrix::<f64, 2, 4>::from_columns(&[Vector2::zeros(), col_beta, col_ad, col_bd])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rhs, ControlInput};
    use approx::assert_abs_diff_eq;

    #[test]
    fn params_validation_rejects_nonpositive_inertia() {
        let p = ManipulatorParams { j_a: 0.0, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ManipulatorParams { d: [-0.1, 0.0], ..Default::default() };
        assert!(p.validate().is_err());
        assert!(ManipulatorParams::default().validate().is_ok());
    }

    #[test]
    fn coriolis_closed_form_cross_check() {
        // Independent trigonometric expansion of k for spot values.
        let m = Manipulator::new(ManipulatorParams::default()).unwrap();
        let (j2, gamma) = (m.j2, m.gamma);
        let q = Vector2::<f64>::new(0.4, 0.9);
        let qdot = Vector2::<f64>::new(1.3, -0.7);
        let (s, c) = q.y.sin_cos();
        let expect = Vector2::new(
            2.0 * j2 * s * c * qdot.x * qdot.y - gamma * s * qdot.y * qdot.y,
            -j2 * s * c * qdot.x * qdot.x,
        );
        let k = m.bias_forces(&q, &qdot);
        assert_abs_diff_eq!(k.x, expect.x, epsilon = 1e-14);
        assert_abs_diff_eq!(k.y, expect.y, epsilon = 1e-14);
    }

    #[test]
    fn coulomb_term_changes_applied_forces_only_when_enabled() {
        let base = Manipulator::new(ManipulatorParams::default()).unwrap();
        let with = Manipulator::new(ManipulatorParams {
            coulomb: Some(CoulombFriction::default()),
            ..Default::default()
        })
        .unwrap();
        let q = Vector2::new(0.0, 0.0);
        let qdot = Vector2::new(1.0, 0.0);
        let h0 = base.applied_forces(&q, &qdot);
        let h1 = with.applied_forces(&q, &qdot);
        assert_abs_diff_eq!(h1.x, h0.x - 0.05 * (100.0f64).tanh(), epsilon = 1e-15);
        assert_eq!(h1.y, h0.y);
    }

    #[test]
    fn energy_is_conserved_without_friction() {
        // Frictionless, unforced: E along the flow must stay flat. A coarse
        // RK4 with tiny steps is enough for a drift spot check here; the
        // tight-tolerance version lives in the integrator tests.
        let params = ManipulatorParams { d: [0.0, 0.0], ..Default::default() };
        let model = Manipulator::new(params).unwrap();
        let mut x = nalgebra::Vector4::new(0.3, 1.2, 0.8, -0.5);
        let e0 = model.energy(&x);
        let dt = 1e-4;
        let u = ControlInput::zero();
        for _ in 0..10_000 {
            let k1 = rhs(&x, &u, &model).unwrap();
            let k2 = rhs(&(x + 0.5 * dt * k1), &u, &model).unwrap();
            let k3 = rhs(&(x + 0.5 * dt * k2), &u, &model).unwrap();
            let k4 = rhs(&(x + dt * k3), &u, &model).unwrap();
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let drift = (model.energy(&x) - e0).abs() / e0.abs();
        assert!(drift < 1e-8, "energy drift {drift}");
    }
}
