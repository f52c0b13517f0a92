//! Flow-map surrogate modeling and receding-horizon control for a two-link
//! manipulator.
//!
//! The crate is organized around a simple pipeline:
//!
//! * [`dynamics`] — continuous-time rigid-body models in mass-matrix form,
//!   including a rotary-arm/pendulum manipulator and an analytic linear
//!   oscillator used as a test fixture.
//! * [`integrators`] — explicit Euler, classical RK4 and adaptive
//!   Runge-Kutta-Fehlberg stepping, zero-order-hold simulation and the
//!   [`integrators::Trajectory`] record type shared by all experiments.
//! * [`net`] — a small feed-forward network with a bespoke differentiation
//!   engine: exact time derivatives, input gradients and weight gradients of
//!   losses that themselves contain the time derivative.
//! * [`pinn`] — physics-informed training of the one-interval flow map on a
//!   sampled box domain, plus self-loop prediction.
//! * [`mpc`] — a receding-horizon tracking controller that rolls the
//!   surrogate out over the horizon and descends the exact rollout gradient.
//! * [`bench`] — one-step execution-time comparison between the surrogate and
//!   classical integrators, and the fixed-step instability experiment.

pub mod bench;
pub mod boxes;
pub mod dynamics;
pub mod error;
pub mod integrators;
pub mod mpc;
pub mod net;
pub mod pinn;

pub use error::{Error, Result};
