//! Active-flux / position observers.
//!
//! * [`GesObserver`]: the projected gradient observer
//!   `λ̂̇ = v − R i + γ Φ (y − Φᵀ x̂ − d̂)`, `d̂ = −ℓ W[iᵀ σ(x̂)]`,
//!   `x̂ = λ̂ − L_q i`, `θ̂ = atan2(x̂₂, x̂₁)`.
//! * [`ChoNamObserver`]: the same innovation with gain `Φ + Λ`, which makes it
//!   an exact gradient of the squared innovation. No stability claim.
//! * [`SpmsmObserver`]: gradient descent on `(|λ̂ − L_s i|² − ψ_m²)²/4`,
//!   valid for surface-mount machines only.
//!
//! All observers are stepped on the plant's sample grid. Inside a step `v` is
//! held, `i` is interpolated linearly, and the innovation is held at its value
//! at the start of the step.

use serde::{Deserialize, Serialize};

use crate::{
    filters::{FilterInit, FirstOrderFilter, Hold, RegressorSample},
    motor::MotorParams,
    ode::rk4,
    Error, Mat2, Result, Vec2,
};

/// Tuning of the gradient observers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverParams {
    /// Adaptation gain γ.
    pub gamma: f64,
    /// Filter bandwidth α (rad/s), shared with the regression bank.
    pub alpha: f64,
    /// Projection threshold ε (Wb).
    pub eps: f64,
    /// When false, σ(x̂) = x̂/|x̂| without the ε threshold.
    #[serde(default = "default_true")]
    pub projection: bool,
}

fn default_true() -> bool {
    true
}

impl ObserverParams {
    /// γ = 10, α = 20, ε = ψ_m/4.
    pub fn nominal(p: &MotorParams) -> Self {
        Self {
            gamma: 10.0,
            alpha: 20.0,
            eps: 0.25 * p.psi_m,
            projection: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("observer.gamma", self.gamma),
            ("observer.alpha", self.alpha),
            ("observer.eps", self.eps),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        Ok(())
    }
}

/// Projection `σ(x̂) = x̂/|x̂|` if `|x̂| ≥ ε`, else zero.
pub fn sigma(x_hat: &Vec2, eps: f64) -> Vec2 {
    let n = x_hat.norm();
    if n >= eps && n > 0.0 {
        x_hat / n
    } else {
        Vec2::zeros()
    }
}

/// `atan2(x̂₂, x̂₁)` in (−π, π]. A zero vector maps to 0 (see [`is_degenerate`]).
pub fn estimate_angle(x_hat: &Vec2) -> f64 {
    if is_degenerate(x_hat) {
        return 0.0;
    }
    let a = x_hat.y.atan2(x_hat.x);
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

pub fn is_degenerate(x_hat: &Vec2) -> bool {
    x_hat.x == 0.0 && x_hat.y == 0.0
}

/// Snapshot of an observer at the time of its state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub lambda_hat: Vec2,
    pub x_hat: Vec2,
    pub theta_hat: f64,
    pub d_hat: f64,
    pub innovation: f64,
    pub degenerate: bool,
}

/// Common stepping interface of the flux observers.
pub trait FluxObserver: Send {
    fn name(&self) -> &'static str;

    /// Estimate at the current time; `sample` must be the regressor at that time.
    fn estimate(&self, sample: &RegressorSample) -> Estimate;

    /// Advances over one step. `v` is applied during the step, `i_next` is the
    /// current at its end and `sample` is the regressor at its start.
    fn step(&mut self, v: &Vec2, i_next: &Vec2, sample: &RegressorSample, dt: f64) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverKind {
    Proposed,
    Chonam,
    SpmsmBaseline,
}

impl ObserverKind {
    pub fn label(&self) -> &'static str {
        match self {
            ObserverKind::Proposed => "proposed",
            ObserverKind::Chonam => "chonam",
            ObserverKind::SpmsmBaseline => "spmsm-baseline",
        }
    }
}

impl std::str::FromStr for ObserverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proposed" => Ok(ObserverKind::Proposed),
            "chonam" => Ok(ObserverKind::Chonam),
            "spmsm-baseline" | "spmsm" => Ok(ObserverKind::SpmsmBaseline),
            other => Err(Error::config("observers", format!("unknown observer `{other}`"))),
        }
    }
}

/// Integrates `λ̂̇ = v − R i(t) + correction` over one step with `i`
/// interpolated linearly between `i0` and `i1`.
fn integrate_flux(lambda: Vec2, v: Vec2, i0: Vec2, i1: Vec2, r: f64, correction: Vec2, dt: f64) -> Vec2 {
    let rhs = |tau: f64, _: Vec2| {
        let i = i0 + (i1 - i0) * (tau / dt);
        v - i * r + correction
    };
    rk4(rhs, 0.0, lambda, dt)
}

fn check_finite(v: &Vec2, what: &'static str, t: f64) -> Result<()> {
    if v.x.is_finite() && v.y.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { what, t })
    }
}

/// State of the projected gradient observer.
#[derive(Debug, Clone)]
pub struct GesObserver {
    params: MotorParams,
    op: ObserverParams,
    lambda_hat: Vec2,
    i: Vec2,
    dhat_w: FirstOrderFilter<f64>,
    t: f64,
}

impl GesObserver {
    /// Starts the observer at `t0` from `λ̂(0)` with the measured current `i0`.
    /// The compensator washout starts from a zero lag state.
    pub fn new(params: MotorParams, op: ObserverParams, lambda_hat0: Vec2, i0: Vec2, t0: f64) -> Self {
        let mut obs = Self {
            params,
            op,
            lambda_hat: lambda_hat0,
            i: i0,
            dhat_w: FirstOrderFilter::washout(op.alpha, Hold::Linear),
            t: t0,
        };
        let u = obs.projected_current(&obs.x_hat(), &i0);
        obs.dhat_w.prime(u);
        obs
    }

    /// Re-seeds the compensator washout to match `init` (see [`FilterInit`]).
    pub fn with_filter_init(mut self, init: FilterInit) -> Self {
        let u = self.dhat_w.input();
        self.dhat_w = FirstOrderFilter::washout(self.op.alpha, Hold::Linear).with_lag_state(init.scalar_lag_state(u));
        self.dhat_w.prime(u);
        self
    }

    pub fn lambda_hat(&self) -> Vec2 {
        self.lambda_hat
    }

    pub fn x_hat(&self) -> Vec2 {
        self.lambda_hat - self.i * self.params.l_q
    }

    /// `d̂ = −ℓ W[iᵀ σ(x̂)]`.
    pub fn d_hat(&self) -> f64 {
        -self.params.ell() * self.dhat_w.output()
    }

    pub fn innovation(&self, sample: &RegressorSample) -> f64 {
        sample.y - sample.phi.dot(&self.x_hat()) - self.d_hat()
    }

    fn projection(&self, x_hat: &Vec2) -> Vec2 {
        if self.op.projection {
            sigma(x_hat, self.op.eps)
        } else {
            sigma(x_hat, 0.0)
        }
    }

    fn projected_current(&self, x_hat: &Vec2, i: &Vec2) -> f64 {
        i.dot(&self.projection(x_hat))
    }
}

impl FluxObserver for GesObserver {
    fn name(&self) -> &'static str {
        ObserverKind::Proposed.label()
    }

    fn estimate(&self, sample: &RegressorSample) -> Estimate {
        let x_hat = self.x_hat();
        Estimate {
            lambda_hat: self.lambda_hat,
            x_hat,
            theta_hat: estimate_angle(&x_hat),
            d_hat: self.d_hat(),
            innovation: self.innovation(sample),
            degenerate: is_degenerate(&x_hat),
        }
    }

    fn step(&mut self, v: &Vec2, i_next: &Vec2, sample: &RegressorSample, dt: f64) -> Result<()> {
        let correction = sample.phi * (self.op.gamma * self.innovation(sample));
        self.lambda_hat = integrate_flux(self.lambda_hat, *v, self.i, *i_next, self.params.r, correction, dt);
        self.i = *i_next;
        self.t += dt;
        check_finite(&self.lambda_hat, "flux estimate", self.t)?;
        let u = self.projected_current(&self.x_hat(), i_next);
        self.dhat_w.step(u, dt);
        Ok(())
    }
}

/// Advances a [`GesObserver`] one step (free-function form).
pub fn observer_step(
    obs: &mut GesObserver,
    v: &Vec2,
    i_next: &Vec2,
    sample: &RegressorSample,
    dt: f64,
) -> Result<Estimate> {
    obs.step(v, i_next, sample, dt)?;
    Ok(obs.estimate(sample))
}

/// Gradient observer with the extra gain
/// `Λ = −ψ_m L₀ W[(|x̂|² I − x̂ x̂ᵀ) i / |x̂|³]`.
#[derive(Debug, Clone)]
pub struct ChoNamObserver {
    inner: GesObserver,
    lambda_w: FirstOrderFilter<Vec2>,
}

impl ChoNamObserver {
    pub fn new(params: MotorParams, op: ObserverParams, lambda_hat0: Vec2, i0: Vec2, t0: f64) -> Self {
        let inner = GesObserver::new(params, op, lambda_hat0, i0, t0);
        let mut lambda_w = FirstOrderFilter::washout(op.alpha, Hold::Linear);
        lambda_w.prime(lambda_input(&inner.x_hat(), &i0, op.eps));
        Self { inner, lambda_w }
    }

    pub fn with_filter_init(self, init: FilterInit) -> Self {
        let inner = self.inner.with_filter_init(init);
        let u = self.lambda_w.input();
        let mut lambda_w = FirstOrderFilter::washout(inner.op.alpha, Hold::Linear).with_lag_state(init.lag_state(inner.op.alpha, &u));
        lambda_w.prime(u);
        Self { inner, lambda_w }
    }

    /// Current value of Λ.
    pub fn lambda_gain(&self) -> Vec2 {
        self.lambda_w.output() * (-self.inner.params.ell())
    }
}

/// `(|x̂|² I − x̂ x̂ᵀ) i / |x̂|³`, set to zero below the projection threshold.
pub fn lambda_input(x_hat: &Vec2, i: &Vec2, eps: f64) -> Vec2 {
    let n = x_hat.norm();
    if n < eps || n == 0.0 {
        return Vec2::zeros();
    }
    let m = Mat2::identity() * (n * n) - x_hat * x_hat.transpose();
    m * i / (n * n * n)
}

impl FluxObserver for ChoNamObserver {
    fn name(&self) -> &'static str {
        ObserverKind::Chonam.label()
    }

    fn estimate(&self, sample: &RegressorSample) -> Estimate {
        self.inner.estimate(sample)
    }

    fn step(&mut self, v: &Vec2, i_next: &Vec2, sample: &RegressorSample, dt: f64) -> Result<()> {
        let inner = &mut self.inner;
        let gain = sample.phi + self.lambda_w.output() * (-inner.params.ell());
        let correction = gain * (inner.op.gamma * inner.innovation(sample));
        inner.lambda_hat = integrate_flux(inner.lambda_hat, *v, inner.i, *i_next, inner.params.r, correction, dt);
        inner.i = *i_next;
        inner.t += dt;
        check_finite(&inner.lambda_hat, "flux estimate", inner.t)?;
        let x_hat = inner.x_hat();
        let u = inner.projected_current(&x_hat, i_next);
        inner.dhat_w.step(u, dt);
        self.lambda_w.step(lambda_input(&x_hat, i_next, inner.op.eps), dt);
        Ok(())
    }
}

/// Gradient flux observer for surface-mount machines.
#[derive(Debug, Clone)]
pub struct SpmsmObserver {
    params: MotorParams,
    gamma: f64,
    clipped: bool,
    lambda_hat: Vec2,
    i: Vec2,
    t: f64,
}

impl SpmsmObserver {
    pub fn new(params: MotorParams, gamma: f64, clipped: bool, lambda_hat0: Vec2, i0: Vec2, t0: f64) -> Result<Self> {
        if !params.is_spmsm() {
            return Err(Error::Misuse("SPMSM observer requires L_d = L_q"));
        }
        Ok(Self {
            params,
            gamma,
            clipped,
            lambda_hat: lambda_hat0,
            i: i0,
            t: t0,
        })
    }

    pub fn lambda_hat(&self) -> Vec2 {
        self.lambda_hat
    }

    fn x_hat(&self) -> Vec2 {
        self.lambda_hat - self.i * self.params.ls()
    }
}

/// Gradient correction `−γ g (λ̂ − L_s i)` with `g = |λ̂ − L_s i|² − ψ_m²`,
/// or `max{0, g}` for the clipped variant.
pub fn spmsm_correction(lambda_hat: &Vec2, i: &Vec2, p: &MotorParams, gamma: f64, clipped: bool) -> Vec2 {
    let e = lambda_hat - i * p.ls();
    let mut g = e.norm_squared() - p.psi_m * p.psi_m;
    if clipped {
        g = g.max(0.0);
    }
    -e * (gamma * g)
}

/// One RK4 step of the SPMSM observer with `v` held and `i` interpolated.
#[allow(clippy::too_many_arguments)]
pub fn spmsm_observer_step(
    lambda_hat: &Vec2,
    v: &Vec2,
    i0: &Vec2,
    i1: &Vec2,
    dt: f64,
    p: &MotorParams,
    gamma: f64,
    clipped: bool,
) -> Result<Vec2> {
    if !p.is_spmsm() {
        return Err(Error::Misuse("SPMSM observer requires L_d = L_q"));
    }
    let rhs = |tau: f64, l: Vec2| {
        let i = i0 + (i1 - i0) * (tau / dt);
        v - i * p.r + spmsm_correction(&l, &i, p, gamma, clipped)
    };
    Ok(rk4(rhs, 0.0, *lambda_hat, dt))
}

impl FluxObserver for SpmsmObserver {
    fn name(&self) -> &'static str {
        ObserverKind::SpmsmBaseline.label()
    }

    fn estimate(&self, _sample: &RegressorSample) -> Estimate {
        let x_hat = self.x_hat();
        Estimate {
            lambda_hat: self.lambda_hat,
            x_hat,
            theta_hat: estimate_angle(&x_hat),
            d_hat: 0.0,
            innovation: x_hat.norm_squared() - self.params.psi_m * self.params.psi_m,
            degenerate: is_degenerate(&x_hat),
        }
    }

    fn step(&mut self, v: &Vec2, i_next: &Vec2, _sample: &RegressorSample, dt: f64) -> Result<()> {
        self.lambda_hat =
            spmsm_observer_step(&self.lambda_hat, v, &self.i, i_next, dt, &self.params, self.gamma, self.clipped)?;
        self.i = *i_next;
        self.t += dt;
        check_finite(&self.lambda_hat, "flux estimate", self.t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motor::{rotor_unit, step_plant_with, Drive, PlantState};
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn sigma_examples() {
        let s = sigma(&(Vec2::new(3.0, 4.0) * 1e-2), 1e-3);
        assert!((s - Vec2::new(0.6, 0.8)).norm() < 1e-15);
        assert_eq!(sigma(&Vec2::zeros(), 1e-3), Vec2::zeros());
        let x = Vec2::new(1e-3, 0.0);
        assert_eq!(sigma(&x, 1e-3), Vec2::new(1.0, 0.0));
        assert_eq!(sigma(&Vec2::new(0.9e-3, 0.0), 1e-3), Vec2::zeros());
    }

    #[test]
    fn angle_examples() {
        assert!((estimate_angle(&Vec2::new(0.0, 0.1)) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(estimate_angle(&Vec2::new(-0.1, 0.0)), PI);
        assert_eq!(estimate_angle(&Vec2::new(-0.1, -0.0)), PI);
        assert_eq!(estimate_angle(&Vec2::zeros()), 0.0);
        assert!(is_degenerate(&Vec2::zeros()));
        for k in 0..100 {
            let theta = -PI + 0.0628 * k as f64 + 1e-3;
            let est = estimate_angle(&(rotor_unit(theta) * 0.37));
            assert!(crate::angle_diff(est, theta).abs() < 1e-14);
        }
    }

    #[test]
    fn lambda_input_annihilates_parallel_current() {
        let x = Vec2::new(0.06, 0.08);
        let i = x * 25.0;
        assert!(lambda_input(&x, &i, 1e-3).norm() < 1e-12);
        let perp = Vec2::new(-0.08, 0.06);
        let out = lambda_input(&x, &perp, 1e-3);
        // (|x|² I − x xᵀ) i⊥ / |x|³ = i⊥ / |x|
        assert!((out - perp / 0.1).norm() < 1e-12);
        assert_eq!(lambda_input(&Vec2::new(1e-4, 0.0), &perp, 1e-3), Vec2::zeros());
    }

    #[test]
    fn spmsm_correction_vanishes_on_constraint() {
        let p = MotorParams::spmsm(0.43, 7.21e-3, 0.11, 6, 0.01);
        let i = Vec2::new(0.3, -2.0);
        let lambda_hat = i * p.ls() + rotor_unit(1.3) * p.psi_m;
        assert!(spmsm_correction(&lambda_hat, &i, &p, 50.0, false).norm() < 1e-15);
        let inside = i * p.ls() + rotor_unit(1.3) * (0.5 * p.psi_m);
        assert_eq!(spmsm_correction(&inside, &i, &p, 50.0, true), Vec2::zeros());
        assert!(spmsm_correction(&inside, &i, &p, 50.0, false).norm() > 0.0);
    }

    #[test]
    fn spmsm_observer_rejects_salient_motor() {
        let p = MotorParams::table1_sim();
        assert!(matches!(
            SpmsmObserver::new(p, 1.0, false, Vec2::zeros(), Vec2::zeros(), 0.0),
            Err(Error::Misuse(_))
        ));
        let r = spmsm_observer_step(&Vec2::zeros(), &Vec2::zeros(), &Vec2::zeros(), &Vec2::zeros(), 1e-5, &p, 1.0, true);
        assert!(matches!(r, Err(Error::Misuse(_))));
    }

    /// SPMSM at constant speed driven by a rotating voltage: the baseline
    /// observer converges from λ̂(0) = (0.5, 2).
    #[test]
    fn spmsm_observer_converges_at_constant_speed() {
        let p = MotorParams::spmsm(0.43, 7.21e-3, 0.11, 6, 0.01);
        let w = 100.0;
        let speed = move |_: f64| w;
        let mut plant = PlantState::from_current(&Vec2::zeros(), 0.0, w, &p);
        for clipped in [false, true] {
            let i0 = plant.current(&p);
            let mut obs = SpmsmObserver::new(p, 5000.0, clipped, Vec2::new(0.5, 2.0), i0, 0.0).unwrap();
            let dummy = RegressorSample {
                t: 0.0,
                y: 0.0,
                phi: Vec2::zeros(),
                omega1: Vec2::zeros(),
                omega2: Vec2::zeros(),
                d_true: None,
            };
            let dt = 2e-5;
            let mut s = plant;
            for _ in 0..50_000 {
                let v = rotor_unit(w * s.t + 1.4) * 12.0;
                s = step_plant_with(&s, |_| v, Drive::Prescribed(&speed), dt, &p).unwrap();
                obs.step(&v, &s.current(&p), &dummy, dt).unwrap();
            }
            let err = (obs.lambda_hat() - s.lambda).norm();
            assert!(err < 1e-4, "clipped={clipped}: {err}");
            plant = s;
        }
    }
}
