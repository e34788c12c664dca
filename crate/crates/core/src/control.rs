//! Decoupling field-oriented speed controller used to drive the scenarios.
//!
//! The controller measures the true angle and speed; the observers never
//! feed back into it.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::{
    motor::{dq_transform, inverse_dq_transform, MotorParams, PlantState},
    Error, Result, Vec2,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocGains {
    /// Speed loop, output in A per electrical rad/s.
    pub kp_w: f64,
    pub ki_w: f64,
    /// d-axis current loop (V/A, V/(A·s)).
    pub kp_d: f64,
    pub ki_d: f64,
    /// q-axis current loop.
    pub kp_q: f64,
    pub ki_q: f64,
    /// d-axis current reference (A).
    #[serde(default)]
    pub id_ref: f64,
    /// Magnitude limit of the q-axis current reference (A).
    pub i_max: f64,
    /// Magnitude limit of the commanded voltage vector (V).
    pub v_max: f64,
}

impl FocGains {
    /// Current loops placed at `current_bw` Hz by pole/zero cancellation,
    /// speed PI with crossover at `speed_bw` Hz and its zero a quarter below.
    pub fn with_bandwidths(p: &MotorParams, current_bw: f64, speed_bw: f64) -> Self {
        let wc = TAU * current_bw;
        let ws = TAU * speed_bw;
        // ω̇ = (n_p / J)(3/2) n_p ψ_m i_q at i_d = 0
        let plant_gain = p.pole_pairs as f64 * 1.5 * p.pole_pairs as f64 * p.psi_m / p.inertia;
        let kp_w = ws / plant_gain;
        Self {
            kp_w,
            ki_w: kp_w * ws / 4.0,
            kp_d: p.l_d * wc,
            ki_d: p.r * wc,
            kp_q: p.l_q * wc,
            ki_q: p.r * wc,
            id_ref: 0.0,
            i_max: 20.0_f64.min(0.5 * p.current_margin()),
            v_max: 100.0,
        }
    }

    /// 1 kHz current loops, 15 Hz speed loop.
    pub fn for_motor(p: &MotorParams) -> Self {
        Self::with_bandwidths(p, 1000.0, 15.0)
    }

    pub fn validate(&self) -> Result<()> {
        let gains = [
            ("controller.kp_w", self.kp_w),
            ("controller.ki_w", self.ki_w),
            ("controller.kp_d", self.kp_d),
            ("controller.ki_d", self.ki_d),
            ("controller.kp_q", self.kp_q),
            ("controller.ki_q", self.ki_q),
        ];
        for (name, g) in gains {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::config(name, "gain must be finite and ≥ 0"));
            }
        }
        if !(self.i_max > 0.0 && self.i_max.is_finite()) {
            return Err(Error::config("controller.i_max", "must be > 0"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::config("controller.v_max", "must be > 0"));
        }
        if !self.id_ref.is_finite() {
            return Err(Error::config("controller.id_ref", "must be finite"));
        }
        Ok(())
    }
}

/// PI integrator states of the speed and current loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocController {
    pub gains: FocGains,
    int_w: f64,
    int_d: f64,
    int_q: f64,
}

impl FocController {
    pub fn new(gains: FocGains) -> Self {
        Self {
            gains,
            int_w: 0.0,
            int_d: 0.0,
            int_q: 0.0,
        }
    }

    /// Presets the integrators (speed loop in A, current loops in V).
    pub fn with_integrators(mut self, speed: f64, d: f64, q: f64) -> Self {
        self.int_w = speed;
        self.int_d = d;
        self.int_q = q;
        self
    }

    /// Presets the integrators for a steady operating point
    /// carrying q-axis current `iq`; the speed term is covered by the
    /// decoupling feedforward.
    pub fn at_operating_point(gains: FocGains, iq: f64, p: &MotorParams) -> Self {
        let id = gains.id_ref;
        Self::new(gains).with_integrators(iq, p.r * id, p.r * iq)
    }

    pub fn integrators(&self) -> (f64, f64, f64) {
        (self.int_w, self.int_d, self.int_q)
    }

    /// Speed loop followed by the current loops.
    pub fn foc_step(&mut self, plant: &PlantState, i: &Vec2, w_ref: f64, dt: f64, p: &MotorParams) -> Vec2 {
        let e = w_ref - plant.omega;
        let raw = self.gains.kp_w * e + self.int_w;
        let lim = self.gains.i_max;
        let iq_ref = raw.clamp(-lim, lim);
        if raw == iq_ref {
            self.int_w += self.gains.ki_w * e * dt;
        }
        self.current_step(plant, i, &Vec2::new(self.gains.id_ref, iq_ref), dt, p)
    }

    /// Current loops only, tracking the dq reference `i_ref`.
    pub fn current_step(&mut self, plant: &PlantState, i: &Vec2, i_ref: &Vec2, dt: f64, p: &MotorParams) -> Vec2 {
        let g = self.gains;
        let i_dq = dq_transform(i, plant.theta);
        let e = i_ref - i_dq;
        let w = plant.omega;
        let v_d = g.kp_d * e.x + self.int_d - w * p.l_q * i_dq.y;
        let v_q = g.kp_q * e.y + self.int_q + w * (p.l_d * i_dq.x + p.psi_m);
        let v_dq = Vec2::new(v_d, v_q);
        let n = v_dq.norm();
        let v_dq = if n > g.v_max {
            v_dq * (g.v_max / n)
        } else {
            self.int_d += g.ki_d * e.x * dt;
            self.int_q += g.ki_q * e.y * dt;
            v_dq
        };
        inverse_dq_transform(&v_dq, plant.theta)
    }
}
