//! Simulation and verification toolkit for the gradient-descent active-flux
//! position observer of interior permanent-magnet synchronous motors.
//!
//! The crate is organised bottom-up:
//!
//! * [`motor`] - IPMSM/SPMSM plant model and fixed-step RK4 integration.
//! * [`filters`] - first-order filter bank and the filtered linear regression
//!   `y = Φᵀx + d` built from voltage and current measurements.
//! * [`observer`] - the projected gradient observer, the SPMSM baseline and
//!   the Λ-gain gradient variant.
//! * [`excitation`] - persistency-of-excitation analysis and the rotating
//!   high-frequency injection used at standstill.
//! * [`control`] - decoupling field-oriented speed controller that drives the
//!   scenarios (the observer never feeds back).
//! * [`analysis`] - numerical instrumentation of the error-system objects
//!   (the `w` factorisation, the `d̃` realisation and the χ system).
//! * [`scenario`] - configuration, scenario runner, CSV export and summaries.
//! * [`plot`] - static SVG figures for a completed run.
//! * [`verify`] - the acceptance checks, shared by the test suite and the CLI.

pub mod analysis;
pub mod control;
pub mod error;
pub mod excitation;
pub mod filters;
pub mod motor;
pub mod ode;
pub mod observer;
pub mod plot;
pub mod scenario;
pub mod verify;

pub use error::{Error, Result};

/// Two-component real vector (αβ or dq quantities).
pub type Vec2 = nalgebra::Vector2<f64>;
/// 2×2 real matrix.
pub type Mat2 = nalgebra::Matrix2<f64>;

/// Wraps an angle to (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    if a <= -PI {
        a += TAU;
    }
    a
}

/// Wrapped difference `a − b` in (−π, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((angle_diff(PI - 0.1, -PI + 0.1) + 0.2).abs() < 1e-12);
    }
}
