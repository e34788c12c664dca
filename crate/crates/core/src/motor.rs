//! IPMSM plant model in the stationary αβ frame.
//!
//! Electrical side: `λ̇ = v − R i` with the constitutive relation
//! `λ = ℒ(θ) i + ψ_m c(θ)`, `ℒ(θ) = L_s I₂ + (L₀/2) Q(2θ)`. Mechanical side
//! (electrical speed): `θ̇ = ω`, `ω̇ = (n_p/J)(T_e − T_L)` with the standard
//! reluctance-plus-magnet torque law. The SPMSM is the special case
//! `L_d = L_q`.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::{ode::rk4, wrap_angle, Error, Mat2, Result, Vec2};

/// Electrical and mechanical motor constants.
///
/// The derived quantities `L₀`, `L_s` and `ℓ` are always recomputed from the
/// axis inductances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorParams {
    /// Stator resistance (Ω).
    pub r: f64,
    /// d-axis inductance (H).
    pub l_d: f64,
    /// q-axis inductance (H).
    pub l_q: f64,
    /// Permanent-magnet flux linkage (Wb).
    pub psi_m: f64,
    /// Number of pole pairs.
    pub pole_pairs: u32,
    /// Drive inertia (kg·m²).
    pub inertia: f64,
}

impl Default for MotorParams {
    fn default() -> Self {
        Self::table1_sim()
    }
}

impl MotorParams {
    /// Simulation motor: 6 pole pairs, ψ_m = 0.11 Wb, L_d = 5.74 mH,
    /// L_q = 8.68 mH, R = 0.43 Ω, J = 0.01 kg·m².
    pub fn table1_sim() -> Self {
        Self {
            r: 0.43,
            l_d: 5.74e-3,
            l_q: 8.68e-3,
            psi_m: 0.11,
            pole_pairs: 6,
            inertia: 0.01,
        }
    }

    /// Surface-mount variant with both inductances equal to `l`.
    pub fn spmsm(r: f64, l: f64, psi_m: f64, pole_pairs: u32, inertia: f64) -> Self {
        Self {
            r,
            l_d: l,
            l_q: l,
            psi_m,
            pole_pairs,
            inertia,
        }
    }

    /// Inductance difference `L_d − L_q`.
    pub fn l0(&self) -> f64 {
        self.l_d - self.l_q
    }

    /// Averaged inductance `(L_d + L_q)/2`.
    pub fn ls(&self) -> f64 {
        0.5 * (self.l_d + self.l_q)
    }

    /// `ψ_m · L₀`.
    pub fn ell(&self) -> f64 {
        self.psi_m * self.l0()
    }

    pub fn is_spmsm(&self) -> bool {
        self.l0() == 0.0
    }

    /// Largest current magnitude compatible with `|L₀ i| < ψ_m`.
    pub fn current_margin(&self) -> f64 {
        if self.l0() == 0.0 {
            f64::INFINITY
        } else {
            self.psi_m / self.l0().abs()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("motor.r", self.r),
            ("motor.l_d", self.l_d),
            ("motor.l_q", self.l_q),
            ("motor.psi_m", self.psi_m),
            ("motor.inertia", self.inertia),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        if self.pole_pairs < 1 {
            return Err(Error::config("motor.pole_pairs", "must be ≥ 1"));
        }
        Ok(())
    }
}

/// `c(θ) = (cos θ, sin θ)`.
pub fn rotor_unit(theta: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c, s)
}

fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Generalised inductance matrix `L_s I₂ + (L₀/2) Q(2θ)`.
pub fn inductance_matrix(theta: f64, p: &MotorParams) -> Mat2 {
    let (s2, c2) = (2.0 * theta).sin_cos();
    let q = Mat2::new(c2, s2, s2, -c2);
    Mat2::identity() * p.ls() + q * (0.5 * p.l0())
}

/// Stator flux from current: `ℒ(θ) i + ψ_m c(θ)`.
pub fn flux_from_current(i: &Vec2, theta: f64, p: &MotorParams) -> Vec2 {
    inductance_matrix(theta, p) * i + rotor_unit(theta) * p.psi_m
}

/// Stator current from flux: `ℒ(θ)⁻¹ (λ − ψ_m c(θ))`.
///
/// Inverts through the dq frame, `ℒ(θ) = R(θ) diag(L_d, L_q) R(θ)ᵀ`.
pub fn current_from_flux(lambda: &Vec2, theta: f64, p: &MotorParams) -> Vec2 {
    let e = lambda - rotor_unit(theta) * p.psi_m;
    let dq = dq_transform(&e, theta);
    inverse_dq_transform(&Vec2::new(dq.x / p.l_d, dq.y / p.l_q), theta)
}

/// Active flux `x = λ − L_q i`.
pub fn active_flux(lambda: &Vec2, i: &Vec2, p: &MotorParams) -> Vec2 {
    lambda - i * p.l_q
}

/// αβ → dq: rotation by −θ.
pub fn dq_transform(v_ab: &Vec2, theta: f64) -> Vec2 {
    rotation(-theta) * v_ab
}

/// dq → αβ: rotation by θ.
pub fn inverse_dq_transform(v_dq: &Vec2, theta: f64) -> Vec2 {
    rotation(theta) * v_dq
}

/// `T_e = (3/2) n_p [ψ_m i_q + L₀ i_d i_q]`.
pub fn electromagnetic_torque(i: &Vec2, theta: f64, p: &MotorParams) -> f64 {
    let dq = dq_transform(i, theta);
    1.5 * p.pole_pairs as f64 * (p.psi_m * dq.y + p.l0() * dq.x * dq.y)
}

/// True plant state. `theta` is kept wrapped to (−π, π]; `omega` is the
/// electrical speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub lambda: Vec2,
    pub theta: f64,
    pub omega: f64,
    pub t: f64,
}

impl PlantState {
    /// State with flux consistent with the stator current `i` at angle `theta`.
    pub fn from_current(i: &Vec2, theta: f64, omega: f64, p: &MotorParams) -> Self {
        Self {
            lambda: flux_from_current(i, theta, p),
            theta: wrap_angle(theta),
            omega,
            t: 0.0,
        }
    }

    pub fn current(&self, p: &MotorParams) -> Vec2 {
        current_from_flux(&self.lambda, self.theta, p)
    }

    pub fn active_flux(&self, p: &MotorParams) -> Vec2 {
        active_flux(&self.lambda, &self.current(p), p)
    }
}

/// How the mechanical coordinates evolve during a step.
#[derive(Clone, Copy)]
pub enum Drive<'a> {
    /// Rigid-body dynamics against a load torque (N·m).
    Dynamic { load_torque: f64 },
    /// Kinematic drive: the electrical speed is the prescribed function of time.
    Prescribed(&'a dyn Fn(f64) -> f64),
}

/// One RK4 step with the voltage held constant over the step.
pub fn step_plant(
    s: &PlantState,
    v: &Vec2,
    drive: Drive<'_>,
    dt: f64,
    p: &MotorParams,
) -> Result<PlantState> {
    let v = *v;
    step_plant_with(s, |_| v, drive, dt, p)
}

/// One RK4 step with a time-varying voltage `v(t)`, evaluated at the RK4 stages.
pub fn step_plant_with<V>(
    s: &PlantState,
    v: V,
    drive: Drive<'_>,
    dt: f64,
    p: &MotorParams,
) -> Result<PlantState>
where
    V: Fn(f64) -> Vec2,
{
    debug_assert!(dt > 0.0);
    let n_over_j = p.pole_pairs as f64 / p.inertia;
    let rhs = |t: f64, x: Vector4<f64>| {
        let lambda = Vec2::new(x[0], x[1]);
        let theta = x[2];
        let i = current_from_flux(&lambda, theta, p);
        let dl = v(t) - i * p.r;
        match drive {
            Drive::Dynamic { load_torque } => {
                let te = electromagnetic_torque(&i, theta, p);
                Vector4::new(dl.x, dl.y, x[3], n_over_j * (te - load_torque))
            }
            Drive::Prescribed(speed) => Vector4::new(dl.x, dl.y, speed(t), 0.0),
        }
    };
    let x0 = Vector4::new(s.lambda.x, s.lambda.y, s.theta, s.omega);
    let x1 = rk4(rhs, s.t, x0, dt);
    let t = s.t + dt;
    let omega = match drive {
        Drive::Dynamic { .. } => x1[3],
        Drive::Prescribed(speed) => speed(t),
    };
    if !x1.iter().all(|c| c.is_finite()) || !omega.is_finite() {
        return Err(Error::NonFinite { what: "plant state", t });
    }
    Ok(PlantState {
        lambda: Vec2::new(x1[0], x1[1]),
        theta: wrap_angle(x1[2]),
        omega,
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI};

    fn p() -> MotorParams {
        MotorParams::table1_sim()
    }

    #[test]
    fn derived_constants() {
        let p = p();
        assert!((p.l0() - (-2.94e-3)).abs() < 1e-15);
        assert!((p.ls() - 7.21e-3).abs() < 1e-15);
        assert!((p.ell() - 0.11 * -2.94e-3).abs() < 1e-18);
        // |i| < 0.11 / 0.00294
        assert!((p.current_margin() - 37.414965986).abs() < 1e-6);
        assert!(MotorParams::spmsm(0.4, 7e-3, 0.1, 4, 0.01).is_spmsm());
    }

    #[test]
    fn validation_names_field() {
        let mut bad = p();
        bad.l_q = 0.0;
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "motor.l_q"),
            other => panic!("unexpected {other:?}"),
        }
        bad = p();
        bad.pole_pairs = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rotor_unit_cardinal() {
        assert_eq!(rotor_unit(0.0), Vec2::new(1.0, 0.0));
        assert!((rotor_unit(FRAC_PI_2) - Vec2::new(0.0, 1.0)).norm() < 1e-16);
        assert!((rotor_unit(PI) - Vec2::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn inductance_matrix_at_zero_and_quarter() {
        let p = p();
        let l = inductance_matrix(0.0, &p);
        assert!((l - Mat2::new(5.74e-3, 0.0, 0.0, 8.68e-3)).norm() < 1e-18);
        let l = inductance_matrix(FRAC_PI_4, &p);
        let expected = Mat2::identity() * p.ls() + Mat2::new(0.0, 1.0, 1.0, 0.0) * (p.l0() / 2.0);
        assert!((l - expected).norm() < 1e-17);
    }

    #[test]
    fn inductance_eigenvalues_over_grid() {
        let p = p();
        for k in 0..=360 {
            let theta = -PI + k as f64 * (2.0 * PI / 360.0);
            let l = inductance_matrix(theta, &p);
            assert_eq!(l, l.transpose());
            let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((ev[0] - p.l_d).abs() < 1e-15, "θ={theta}: {ev:?}");
            assert!((ev[1] - p.l_q).abs() < 1e-15, "θ={theta}: {ev:?}");
        }
    }

    #[test]
    fn flux_examples() {
        let p = p();
        assert_eq!(flux_from_current(&Vec2::zeros(), 0.0, &p), Vec2::new(0.11, 0.0));
        let l = flux_from_current(&Vec2::new(1.0, 0.0), 0.0, &p);
        assert!((l - Vec2::new(0.11574, 0.0)).norm() < 1e-15);
        let i = current_from_flux(&Vec2::new(0.11574, 0.0), 0.0, &p);
        assert!((i - Vec2::new(1.0, 0.0)).norm() < 1e-12);
        let theta = 0.7;
        let i = current_from_flux(&(rotor_unit(theta) * p.psi_m), theta, &p);
        assert!(i.norm() < 1e-15);
    }

    #[test]
    fn active_flux_is_collinear_with_rotor() {
        let p = p();
        let theta = FRAC_PI_3;
        let i = Vec2::new(2.0, -1.0);
        let lambda = flux_from_current(&i, theta, &p);
        let x = active_flux(&lambda, &i, &p);
        let c = rotor_unit(theta);
        let cross = x.x * c.y - x.y * c.x;
        assert!(cross.abs() < 1e-10 * x.norm());
        assert!(x.dot(&c) > 0.0);
        let x0 = active_flux(&lambda, &Vec2::zeros(), &p);
        assert_eq!(x0, lambda);
        assert!((active_flux(&Vec2::new(0.11, 0.0), &Vec2::zeros(), &p).norm() - p.psi_m).abs() < 1e-16);
    }

    #[test]
    fn dq_examples() {
        let v = Vec2::new(0.3, -1.2);
        assert_eq!(dq_transform(&v, 0.0), v);
        assert!((dq_transform(&Vec2::new(0.0, 1.0), FRAC_PI_2) - Vec2::new(1.0, 0.0)).norm() < 1e-16);
    }

    #[test]
    fn torque_examples() {
        let p = p();
        assert_eq!(electromagnetic_torque(&Vec2::zeros(), 0.4, &p), 0.0);
        // i_d = 0, i_q = 1 A at θ = 0 means i_ab = (0, 1).
        let te = electromagnetic_torque(&Vec2::new(0.0, 1.0), 0.0, &p);
        assert!((te - 0.99).abs() < 1e-12, "{te}");
        let theta = 1.1;
        let i = inverse_dq_transform(&Vec2::new(0.0, 2.5), theta);
        let neg = inverse_dq_transform(&Vec2::new(0.0, -2.5), theta);
        let a = electromagnetic_torque(&i, theta, &p);
        let b = electromagnetic_torque(&neg, theta, &p);
        assert!((a + b).abs() < 1e-12 && a > 0.0);
    }

    proptest! {
        #[test]
        fn two_flux_forms_agree(ia in -30.0..30.0f64, ib in -30.0..30.0f64, theta in -PI..PI) {
            let p = p();
            let i = Vec2::new(ia, ib);
            let c = rotor_unit(theta);
            let direct = flux_from_current(&i, theta, &p);
            let alt = i * p.l_q + c * (p.l0() * i.dot(&c) + p.psi_m);
            prop_assert!((direct - alt).norm() <= 1e-12 * direct.norm().max(1e-3));
            // |x|² = (L₀ iᵀc + ψ_m)²
            let x = active_flux(&direct, &i, &p);
            let rhs = (p.l0() * i.dot(&c) + p.psi_m).powi(2);
            prop_assert!((x.norm_squared() - rhs).abs() <= 1e-12 * rhs);
        }

        #[test]
        fn current_flux_round_trip(la in -0.5..0.5f64, lb in -0.5..0.5f64, theta in -PI..PI) {
            let p = p();
            let lambda = Vec2::new(la, lb);
            let i = current_from_flux(&lambda, theta, &p);
            let back = flux_from_current(&i, theta, &p);
            prop_assert!((back - lambda).norm() <= 1e-10 * lambda.norm().max(1e-3));
        }

        #[test]
        fn dq_projection_is_id(ia in -10.0..10.0f64, ib in -10.0..10.0f64, theta in -PI..PI) {
            let i = Vec2::new(ia, ib);
            let dq = dq_transform(&i, theta);
            prop_assert!((i.dot(&rotor_unit(theta)) - dq.x).abs() <= 1e-12 * i.norm().max(1.0));
            prop_assert!((inverse_dq_transform(&dq, theta) - i).norm() <= 1e-12 * i.norm().max(1.0));
        }
    }

    #[test]
    fn balanced_input_is_equilibrium() {
        // Constant rotation is not an equilibrium in αβ; use standstill with a
        // DC current: v = R i, T_L = T_e.
        let p = p();
        let theta = 0.4;
        let i = inverse_dq_transform(&Vec2::new(-1.0, 2.0), theta);
        let s0 = PlantState::from_current(&i, theta, 0.0, &p);
        let v = i * p.r;
        let tl = electromagnetic_torque(&i, theta, &p);
        let mut s = s0;
        for _ in 0..1000 {
            s = step_plant(&s, &v, Drive::Dynamic { load_torque: tl }, 2e-5, &p).unwrap();
        }
        assert!((s.lambda - s0.lambda).norm() < 1e-14);
        assert!(s.omega.abs() < 1e-12);
        assert!((s.theta - theta).abs() < 1e-12);
    }

    /// Locked rotor: in dq the two axes are decoupled first-order RL circuits.
    #[test]
    fn locked_rotor_matches_rl_response() {
        let p = p();
        let theta = 0.9;
        let v_dq = Vec2::new(3.0, -2.0);
        let v = inverse_dq_transform(&v_dq, theta);
        let exact = |t: f64| {
            let id = v_dq.x / p.r * (1.0 - (-p.r * t / p.l_d).exp());
            let iq = v_dq.y / p.r * (1.0 - (-p.r * t / p.l_q).exp());
            flux_from_current(&inverse_dq_transform(&Vec2::new(id, iq), theta), theta, &p)
        };
        let zero = |_: f64| 0.0;
        let run = |dt: f64, t_end: f64| {
            let mut s = PlantState::from_current(&Vec2::zeros(), theta, 0.0, &p);
            let n = (t_end / dt).round() as usize;
            for _ in 0..n {
                s = step_plant(&s, &v, Drive::Prescribed(&zero), dt, &p).unwrap();
            }
            (s.lambda - exact(s.t)).norm()
        };
        let e1 = run(1e-3, 0.05);
        let e2 = run(5e-4, 0.05);
        assert!(e1 < 1e-8, "{e1}");
        assert!(e1 / e2 > 14.0, "global order 4 expected, ratio {}", e1 / e2);
    }

    /// Constant speed and constant dq voltage: dq current settles to the
    /// phasor solution of v_d = R i_d − ω L_q i_q, v_q = R i_q + ω (L_d i_d + ψ_m).
    #[test]
    fn kinematic_drive_reaches_phasor_steady_state() {
        let p = p();
        let w = 100.0;
        let v_dq = Vec2::new(-2.0, 12.0);
        let speed = move |_: f64| w;
        let mut s = PlantState::from_current(&Vec2::zeros(), 0.0, w, &p);
        let dt = 1e-5;
        for _ in 0..30_000 {
            let theta0 = s.theta;
            let t0 = s.t;
            let vf = |t: f64| inverse_dq_transform(&v_dq, theta0 + w * (t - t0));
            s = step_plant_with(&s, vf, Drive::Prescribed(&speed), dt, &p).unwrap();
        }
        let i_dq = dq_transform(&s.current(&p), s.theta);
        // Solve the 2×2 steady-state system.
        let a = Mat2::new(p.r, -w * p.l_q, w * p.l_d, p.r);
        let b = Vec2::new(v_dq.x, v_dq.y - w * p.psi_m);
        let expected = a.lu().solve(&b).unwrap();
        assert!((i_dq - expected).norm() < 1e-6, "{i_dq:?} vs {expected:?}");
    }

    #[test]
    fn rk4_order_on_smooth_dynamic_run() {
        let p = p();
        let amp = 15.0;
        let w = 60.0;
        let v = move |t: f64| rotor_unit(w * t + 0.3 * t * t) * amp;
        let run = |dt: f64| {
            let mut s = PlantState::from_current(&Vec2::new(0.5, -0.2), 0.2, 20.0, &p);
            let n = (0.05 / dt).round() as usize;
            for _ in 0..n {
                s = step_plant_with(&s, v, Drive::Dynamic { load_torque: 0.3 }, dt, &p).unwrap();
            }
            s
        };
        let reference = run(1e-6);
        let err = |s: PlantState| {
            ((s.lambda - reference.lambda).norm() / reference.lambda.norm())
                .max(crate::angle_diff(s.theta, reference.theta).abs())
                .max((s.omega - reference.omega).abs() / reference.omega.abs())
        };
        let e1 = err(run(1.6e-4));
        let e2 = err(run(8e-5));
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn non_finite_voltage_faults() {
        let p = p();
        let s = PlantState::from_current(&Vec2::zeros(), 0.0, 0.0, &p);
        let r = step_plant(&s, &Vec2::new(f64::NAN, 0.0), Drive::Dynamic { load_torque: 0.0 }, 1e-5, &p);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
