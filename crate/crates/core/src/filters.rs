//! First-order filters and the filtered linear regression of the active flux.
//!
//! With `F = α/(p+α)`, `W = αp/(p+α)` and `G = 1/(p+α)` the measurable
//! signals are
//!
//! ```text
//! Ω₁ = F[v − R i] − L_q W[i]
//! Ω₂ = Ω₁ − L₀ W[i]
//! Φ  = Ω₁ + Ω₂
//! y  = L₀ F[i]ᵀ Ω₁ + |Ω₁|²/α + G[Ω₂ᵀ Ω₁]
//! ```
//!
//! and they satisfy `y = Φᵀ x + d + ε_t` with `d = −ℓ W[iᵀ x/|x|]` and an
//! exponentially decaying `ε_t` set by the filter initial conditions.
//!
//! All three operators share one lag state `ż = α(u − z)`: `F[u] = z`,
//! `W[u] = α(u − z)`, `G[u] = z/α`. The input is never differentiated.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::{motor::MotorParams, Error, Result, Vec2};

/// Values a [`FirstOrderFilter`] can carry.
pub trait Signal: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
}

impl Signal for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Signal for Vec2 {
    fn zero() -> Self {
        Vec2::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    /// `α/(p+α)`
    LowPass,
    /// `αp/(p+α)`
    Washout,
    /// `1/(p+α)`
    PureLag,
}

/// Inter-sample model of the input used by the exact discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hold {
    /// Piecewise-constant input; `step(u, dt)` applies `u` over the step.
    Zero,
    /// Piecewise-linear input; `step(u, dt)` ramps from the previous sample to `u`.
    Linear,
}

/// Exactly discretised first-order lag with a low-pass, washout or pure-lag
/// output map.
#[derive(Debug, Clone, Copy)]
pub struct FirstOrderFilter<T> {
    alpha: f64,
    kind: FilterKind,
    hold: Hold,
    state: T,
    input: T,
}

impl<T: Signal> FirstOrderFilter<T> {
    pub fn new(kind: FilterKind, alpha: f64, hold: Hold) -> Self {
        assert!(alpha > 0.0 && alpha.is_finite(), "filter bandwidth must be > 0");
        Self {
            alpha,
            kind,
            hold,
            state: T::zero(),
            input: T::zero(),
        }
    }

    pub fn low_pass(alpha: f64, hold: Hold) -> Self {
        Self::new(FilterKind::LowPass, alpha, hold)
    }

    pub fn washout(alpha: f64, hold: Hold) -> Self {
        Self::new(FilterKind::Washout, alpha, hold)
    }

    pub fn pure_lag(alpha: f64, hold: Hold) -> Self {
        Self::new(FilterKind::PureLag, alpha, hold)
    }

    /// Overrides the lag state `z` (zero by default).
    pub fn with_lag_state(mut self, z: T) -> Self {
        self.state = z;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn lag_state(&self) -> T {
        self.state
    }

    pub fn input(&self) -> T {
        self.input
    }

    /// Sets the current input sample without advancing time and returns the
    /// output. The lag state is untouched, so a jump in the input at the
    /// initial instant passes straight through the washout.
    pub fn prime(&mut self, u: T) -> T {
        self.input = u;
        self.output()
    }

    pub fn output(&self) -> T {
        match self.kind {
            FilterKind::LowPass => self.state,
            FilterKind::Washout => (self.input - self.state) * self.alpha,
            FilterKind::PureLag => self.state * (1.0 / self.alpha),
        }
    }

    /// Advances the filter by `dt` and returns the output at the end of the step.
    pub fn step(&mut self, u: T, dt: f64) -> T {
        debug_assert!(dt > 0.0);
        let ah = self.alpha * dt;
        // 1 − e^{−αh}, accurate for small αh.
        let one_minus_a = -(-ah).exp_m1();
        let a = 1.0 - one_minus_a;
        self.state = match self.hold {
            Hold::Zero => self.state * a + u * one_minus_a,
            Hold::Linear => {
                let b = ramp_weight(ah, one_minus_a);
                self.state * a + self.input * one_minus_a + (u - self.input) * b
            }
        };
        self.input = u;
        self.output()
    }
}

/// `1 − (1 − e^{−αh})/(αh)`, the response of the lag to a unit ramp over one step.
fn ramp_weight(ah: f64, one_minus_a: f64) -> f64 {
    if ah < 1e-4 {
        // Series: αh/2 − (αh)²/6 + (αh)³/24
        ah * (0.5 - ah * (1.0 / 6.0 - ah / 24.0))
    } else {
        1.0 - one_minus_a / ah
    }
}

/// How the regression filters are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FilterInit {
    /// All filter states start at zero. `ε_t` then decays from the initial
    /// flux mismatch at rate α.
    #[default]
    Zero,
    /// Every lag starts at its steady response to the initial operating
    /// point held for all `t < 0`: `v` and `i` co-rotating at electrical
    /// speed `omega`. Then `ε_t ≡ 0`. Instrumentation only: it needs the
    /// true initial voltage balance.
    Matched { v0: [f64; 2], omega: f64 },
}

impl FilterInit {
    /// Lag state of a first-order filter whose input has been `u0` rotating
    /// at the initial speed forever: `α (α I + ω J)⁻¹ u0`. Zero for
    /// [`FilterInit::Zero`].
    pub fn lag_state(&self, alpha: f64, u0: &Vec2) -> Vec2 {
        match *self {
            FilterInit::Zero => Vec2::zeros(),
            FilterInit::Matched { omega, .. } => {
                let den = alpha * alpha + omega * omega;
                Vec2::new(alpha * u0.x + omega * u0.y, alpha * u0.y - omega * u0.x) * (alpha / den)
            }
        }
    }

    /// Lag state for a scalar input that is constant along the steady orbit.
    pub fn scalar_lag_state(&self, u0: f64) -> f64 {
        match self {
            FilterInit::Zero => 0.0,
            FilterInit::Matched { .. } => u0,
        }
    }
}

/// One time step of the regression signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorSample {
    pub t: f64,
    pub y: f64,
    pub phi: Vec2,
    pub omega1: Vec2,
    pub omega2: Vec2,
    /// True perturbation `d` (test instrumentation, filled by the runner).
    pub d_true: Option<f64>,
}

/// Filter bank producing [`RegressorSample`]s from `(v, i)` samples.
///
/// `v` is zero-order held (it is the inverter command applied over the step);
/// `i` is linearly interpolated between samples.
#[derive(Debug, Clone)]
pub struct RegressionBank {
    params: MotorParams,
    alpha: f64,
    v_lp: FirstOrderFilter<Vec2>,
    i_lp: FirstOrderFilter<Vec2>,
    cross: FirstOrderFilter<f64>,
    t: f64,
}

impl RegressionBank {
    /// Creates the bank at time `t0` with the first current sample `i0` and
    /// returns it together with the regressor at `t0`.
    pub fn start(
        params: MotorParams,
        alpha: f64,
        init: FilterInit,
        t0: f64,
        i0: Vec2,
    ) -> (Self, RegressorSample) {
        let v0 = match init {
            FilterInit::Matched { v0, .. } => Vec2::new(v0[0], v0[1]),
            FilterInit::Zero => Vec2::zeros(),
        };
        let v_lp = FirstOrderFilter::low_pass(alpha, Hold::Zero).with_lag_state(init.lag_state(alpha, &v0));
        let mut i_lp = FirstOrderFilter::low_pass(alpha, Hold::Linear).with_lag_state(init.lag_state(alpha, &i0));
        i_lp.prime(i0);
        let mut bank = Self {
            params,
            alpha,
            v_lp,
            i_lp,
            cross: FirstOrderFilter::pure_lag(alpha, Hold::Linear),
            t: t0,
        };
        let (omega1, omega2) = bank.omegas();
        // Co-rotating Ω₁, Ω₂ have a constant inner product on the steady orbit.
        let c0 = omega2.dot(&omega1);
        bank.cross = bank.cross.with_lag_state(init.scalar_lag_state(c0));
        bank.cross.prime(c0);
        let sample = bank.sample(omega1, omega2);
        (bank, sample)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Advances the bank over `[t, t + dt]` with `v` applied during the step
    /// and `i_next` the current sample at the end of the step.
    pub fn step(&mut self, v: &Vec2, i_next: &Vec2, dt: f64) -> RegressorSample {
        self.v_lp.step(*v, dt);
        self.i_lp.step(*i_next, dt);
        self.t += dt;
        let (omega1, omega2) = self.omegas();
        self.cross.step(omega2.dot(&omega1), dt);
        self.sample(omega1, omega2)
    }

    /// `W[i]` at the current time.
    pub fn washout_current(&self) -> Vec2 {
        (self.i_lp.input() - self.i_lp.lag_state()) * self.alpha
    }

    fn omegas(&self) -> (Vec2, Vec2) {
        let p = &self.params;
        let w_i = self.washout_current();
        let omega1 = self.v_lp.output() - self.i_lp.output() * p.r - w_i * p.l_q;
        let omega2 = omega1 - w_i * p.l0();
        (omega1, omega2)
    }

    fn sample(&self, omega1: Vec2, omega2: Vec2) -> RegressorSample {
        let p = &self.params;
        let y = p.l0() * self.i_lp.output().dot(&omega1)
            + omega1.norm_squared() / self.alpha
            + self.cross.output();
        RegressorSample {
            t: self.t,
            y,
            phi: omega1 + omega2,
            omega1,
            omega2,
            d_true: None,
        }
    }
}

/// Instrumentation computing the true perturbation `d = −ℓ W[iᵀ x/|x|]`
/// from the true active flux.
#[derive(Debug, Clone)]
pub struct DisturbanceProbe {
    ell: f64,
    w: FirstOrderFilter<f64>,
}

impl DisturbanceProbe {
    pub fn start(params: &MotorParams, alpha: f64, init: FilterInit, i0: &Vec2, x0: &Vec2) -> Result<(Self, f64)> {
        let u0 = projected_current(i0, x0)?;
        let mut w = FirstOrderFilter::washout(alpha, Hold::Linear).with_lag_state(init.scalar_lag_state(u0));
        let out = w.prime(u0);
        let ell = params.ell();
        Ok((Self { ell, w }, -ell * out))
    }

    pub fn step(&mut self, i: &Vec2, x: &Vec2, dt: f64) -> Result<f64> {
        let u = projected_current(i, x)?;
        Ok(-self.ell * self.w.step(u, dt))
    }
}

/// Convenience wrapper stepping a probe: returns `d` at the end of the step.
pub fn disturbance_true(probe: &mut DisturbanceProbe, i: &Vec2, x: &Vec2, dt: f64) -> Result<f64> {
    probe.step(i, x, dt)
}

fn projected_current(i: &Vec2, x: &Vec2) -> Result<f64> {
    let n = x.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Domain("active flux has zero norm"));
    }
    Ok(i.dot(x) / n)
}

/// Evaluates both sides of the swapping identity
///
/// `W[uv] = W[u] v + F[u] W[v] − G[W[u] W[v]]`
///
/// on sampled streams with zero initial filter states and returns the largest
/// absolute residual.
pub fn swapping_identity_check(u: &[f64], v: &[f64], alpha: f64, dt: f64) -> f64 {
    assert_eq!(u.len(), v.len());
    if u.is_empty() {
        return 0.0;
    }
    let mut w_uv = FirstOrderFilter::washout(alpha, Hold::Linear);
    let mut lp_u = FirstOrderFilter::low_pass(alpha, Hold::Linear);
    let mut lp_v = FirstOrderFilter::low_pass(alpha, Hold::Linear);
    let mut lag = FirstOrderFilter::pure_lag(alpha, Hold::Linear);
    let washout = |f: &FirstOrderFilter<f64>| alpha * (f.input() - f.lag_state());

    let mut worst = 0.0f64;
    for (k, (&uk, &vk)) in u.iter().zip(v).enumerate() {
        let lhs = if k == 0 {
            lp_u.prime(uk);
            lp_v.prime(vk);
            w_uv.prime(uk * vk)
        } else {
            lp_u.step(uk, dt);
            lp_v.step(vk, dt);
            w_uv.step(uk * vk, dt)
        };
        let wu = washout(&lp_u);
        let wv = washout(&lp_v);
        let g = if k == 0 { lag.prime(wu * wv) } else { lag.step(wu * wv, dt) };
        let rhs = wu * vk + lp_u.output() * wv - g;
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}
