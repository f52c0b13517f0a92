//! Grid-aligned reference trajectories for the tracking controller.

use std::str::FromStr;

use nalgebra::Vector4;

use crate::dynamics::StateVec;
use crate::{Error, Result};

/// Built-in reference profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Smooth point-to-point segments with at least one motion reversal per
    /// joint; the default tracking task.
    Reversal,
    /// Constant hanging equilibrium (a sanity task).
    Equilibrium,
}

impl FromStr for ReferenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reversal" => Ok(Self::Reversal),
            "equilibrium" => Ok(Self::Equilibrium),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Reference states on the controller grid. The last value is held for any
/// index beyond the end, so a receding horizon never runs off the data.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    states: Vec<StateVec>,
}

impl ReferenceTrajectory {
    pub fn new(states: Vec<StateVec>) -> Self {
        assert!(!states.is_empty(), "reference must contain at least one state");
        Self { states }
    }

    /// Constant reference of `n` samples.
    pub fn hold(state: StateVec, n: usize) -> Self {
        Self::new(vec![state; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, k: usize) -> StateVec {
        self.states[k.min(self.states.len() - 1)]
    }

    pub fn initial_state(&self) -> StateVec {
        self.states[0]
    }

    pub fn states(&self) -> &[StateVec] {
        &self.states
    }
}

/// Quintic smoothstep: 0 -> 1 on [0, 1] with zero first and second
/// derivatives at both ends.
fn smoothstep5(s: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let v = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
    let d = 30.0 * s * s * (1.0 - s) * (1.0 - s);
    (v, d)
}

/// Piecewise quintic point-to-point profile through `(time, value)` waypoints.
fn profile(waypoints: &[(f64, f64)], t: f64) -> (f64, f64) {
    debug_assert!(waypoints.len() >= 2);
    if t <= waypoints[0].0 {
        return (waypoints[0].1, 0.0);
    }
    for w in waypoints.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if t <= t1 {
            let span = t1 - t0;
            let (s, ds) = smoothstep5((t - t0) / span);
            return (v0 + (v1 - v0) * s, (v1 - v0) * ds / span);
        }
    }
    (waypoints.last().unwrap().1, 0.0)
}

/// Builds a grid-aligned reference with consistent velocities.
///
/// The reversal profile moves both joints through point-to-point segments
/// with a sign change of the commanded rate in each joint; it begins and ends
/// at rest.
pub fn reference_generator(kind: ReferenceKind, t_end: f64, tau: f64) -> Result<ReferenceTrajectory> {
    if !(tau > 0.0 && t_end > 0.0) {
        return Err(Error::InvalidConfig("t_end and tau must be positive".into()));
    }
    let steps = (t_end / tau).round() as usize;
    if ((steps as f64 * tau) - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "t_end = {t_end} is not a multiple of tau = {tau}"
        )));
    }

    let states = match kind {
        ReferenceKind::Equilibrium => vec![Vector4::zeros(); steps + 1],
        ReferenceKind::Reversal => {
            // Waypoint times scale with t_end; shapes chosen to stay well
            // inside the training box while exercising both joints.
            let scale = t_end / 16.0;
            let alpha_wp = [
                (0.0, 0.0),
                (4.0 * scale, 1.2),
                (10.0 * scale, -0.8),
                (16.0 * scale, 0.4),
            ];
            let beta_wp = [
                (0.0, 0.0),
                (5.0 * scale, -1.0),
                (12.0 * scale, 0.6),
                (16.0 * scale, -0.2),
            ];
            (0..=steps)
                .map(|k| {
                    let t = k as f64 * tau;
                    let (a, da) = profile(&alpha_wp, t);
                    let (b, db) = profile(&beta_wp, t);
                    Vector4::new(a, b, da, db)
                })
                .collect()
        }
    };
    Ok(ReferenceTrajectory::new(states))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_alignment_and_endpoints() {
        let refs = reference_generator(ReferenceKind::Reversal, 16.0, 0.2).unwrap();
        assert_eq!(refs.len(), 81);
        // Starts and ends at rest.
        let first = refs.get(0);
        let last = refs.get(80);
        assert_eq!(first[2], 0.0);
        assert_eq!(first[3], 0.0);
        assert!(last[2].abs() < 1e-12);
        assert!(last[3].abs() < 1e-12);
        // Held beyond the end.
        assert_eq!(refs.get(10_000), last);
    }

    #[test]
    fn both_joints_reverse_direction() {
        let refs = reference_generator(ReferenceKind::Reversal, 16.0, 0.2).unwrap();
        let sign_changes = |idx: usize| {
            let mut changes = 0;
            let mut prev = 0.0f64;
            for k in 0..refs.len() {
                let v = refs.get(k)[idx];
                if v.abs() > 1e-9 {
                    if prev != 0.0 && v.signum() != prev.signum() {
                        changes += 1;
                    }
                    prev = v.signum();
                }
            }
            changes
        };
        assert!(sign_changes(2) >= 1, "alpha rate never reverses");
        assert!(sign_changes(3) >= 1, "beta rate never reverses");
    }

    #[test]
    fn velocities_are_consistent_with_positions() {
        let refs = reference_generator(ReferenceKind::Reversal, 16.0, 0.1).unwrap();
        for k in 1..refs.len() - 1 {
            let fd = (refs.get(k + 1)[0] - refs.get(k - 1)[0]) / 0.2;
            assert!((fd - refs.get(k)[2]).abs() < 0.05, "velocity mismatch at {k}");
        }
    }

    #[test]
    fn positions_stay_inside_the_default_state_box() {
        let refs = reference_generator(ReferenceKind::Reversal, 16.0, 0.2).unwrap();
        for k in 0..refs.len() {
            let x = refs.get(k);
            assert!(x[0].abs() < std::f64::consts::PI);
            assert!(x[1].abs() < std::f64::consts::PI);
            assert!(x[2].abs() < 2.5);
            assert!(x[3].abs() < 2.5);
        }
    }

    #[test]
    fn off_grid_t_end_is_rejected_and_kinds_parse() {
        assert!(reference_generator(ReferenceKind::Reversal, 16.1, 0.2).is_err());
        assert_eq!("reversal".parse::<ReferenceKind>().unwrap(), ReferenceKind::Reversal);
        assert_eq!("equilibrium".parse::<ReferenceKind>().unwrap(), ReferenceKind::Equilibrium);
        assert!("wiggle".parse::<ReferenceKind>().is_err());
    }
}
