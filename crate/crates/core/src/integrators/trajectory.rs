//! Time-stamped state/control records and their CSV form.

use std::fmt::Write as _;

use crate::dynamics::{ControlVec, StateVec};
use crate::{Error, Result};

/// Who produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Reference integration of the true dynamics.
    Plant,
    /// Self-loop rollout of the learned flow map.
    Surrogate,
}

/// A grid trajectory: `states.len() == times.len() == controls.len() + 1`,
/// with `controls[k]` held on `[times[k], times[k+1])`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    pub controls: Vec<ControlVec>,
    pub source: Source,
    /// Set when integration stopped early on a non-finite state.
    pub diverged: bool,
    /// Set when a surrogate rollout left the training state box.
    pub out_of_domain: bool,
}

impl Trajectory {
    pub fn new(source: Source) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            controls: Vec::new(),
            source,
            diverged: false,
            out_of_domain: false,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.times.len(),
                got: self.states.len(),
            });
        }
        if !self.states.is_empty() && self.controls.len() + 1 != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.states.len() - 1,
                got: self.controls.len(),
            });
        }
        if !self.times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("times must be strictly increasing".into()));
        }
        Ok(())
    }

    /// CSV with header `t,alpha,beta,dalpha,dbeta,u1,u2`, one row per grid
    /// point. The control columns repeat the value held on the interval that
    /// starts at the row's time; the final row repeats the last value.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.len() + 1));
        out.push_str("t,alpha,beta,dalpha,dbeta,u1,u2\n");
        for (i, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let u = if self.controls.is_empty() {
                ControlVec::zeros()
            } else {
                self.controls[i.min(self.controls.len() - 1)]
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(x[2]),
                fmt_f64(x[3]),
                fmt_f64(u[0]),
                fmt_f64(u[1]),
            );
        }
        out
    }
}

/// 17 significant digits: enough to reproduce any f64 bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector4};

    fn sample() -> Trajectory {
        let mut tr = Trajectory::new(Source::Plant);
        tr.times = vec![0.0, 0.2, 0.4];
        tr.states = vec![Vector4::zeros(), Vector4::new(0.1, 0.0, 0.5, 0.0), Vector4::new(0.2, 0.0, 0.4, 0.0)];
        tr.controls = vec![Vector2::new(0.5, 0.0), Vector2::new(-0.5, 0.0)];
        tr
    }

    #[test]
    fn shape_check_accepts_consistent_lengths() {
        assert!(sample().check_shape().is_ok());
        let mut bad = sample();
        bad.controls.pop();
        assert!(bad.check_shape().is_err());
    }

    #[test]
    fn csv_has_header_and_repeats_last_control() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,alpha,beta,dalpha,dbeta,u1,u2");
        assert_eq!(lines.len(), 4);
        // Row 1 holds u_0, the final row repeats u_1.
        assert!(lines[1].contains(&fmt_f64(0.5)));
        assert!(lines[3].contains(&fmt_f64(-0.5)));
    }

    #[test]
    fn fmt_f64_roundtrips_exactly() {
        for &v in &[0.0, -1.5, std::f64::consts::PI, 1.0 / 3.0, 1e-17, -2.5e8] {
            let parsed: f64 = fmt_f64(v).parse().unwrap();
            assert_eq!(parsed.to_bits(), v.to_bits());
        }
    }
}
