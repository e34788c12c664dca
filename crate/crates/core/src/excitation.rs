//! Persistency-of-excitation analysis and high-frequency probing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    filters::{FilterInit, FirstOrderFilter, Hold},
    motor::{rotor_unit, MotorParams},
    Error, Mat2, Result, Vec2,
};

/// Sliding-window settings for the PE metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeConfig {
    /// Window length T (s).
    pub window: f64,
    /// Hop between window starts (s).
    pub stride: f64,
}

impl PeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(Error::config("pe.window", "must be > 0"));
        }
        if !(self.stride > 0.0 && self.stride.is_finite()) {
            return Err(Error::config("pe.stride", "must be > 0"));
        }
        Ok(())
    }
}

/// Rotating voltage injection `A (cos ω_h t, sin ω_h t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    /// Amplitude A (V).
    pub amplitude: f64,
    /// Frequency ω_h (rad/s).
    pub omega_h: f64,
    #[serde(default)]
    pub enabled: bool,
    /// Injection is zero before this time (s).
    #[serde(default)]
    pub start_time: f64,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            amplitude: 4.0,
            omega_h: 2.0 * std::f64::consts::PI * 400.0,
            enabled: false,
            start_time: 0.0,
        }
    }
}

impl InjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config("injection.amplitude", "must be ≥ 0"));
        }
        if !(self.omega_h > 0.0 && self.omega_h.is_finite()) {
            return Err(Error::config("injection.omega_h", "must be > 0"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega_h
    }
}

/// Injected voltage at time `t`.
///
/// The rotation generator is the skew matrix `[[0, −1], [1, 0]]`, so
/// `A e^{𝒥 ω_h t} (1, 0)ᵀ = A c(ω_h t)`.
pub fn hf_injection(t: f64, cfg: &InjectionConfig) -> Vec2 {
    if !cfg.enabled || t < cfg.start_time {
        return Vec2::zeros();
    }
    rotor_unit(cfg.omega_h * t) * cfg.amplitude
}

/// `−I₂/2 + c(θ) c(θ)ᵀ`; its determinant is −1/4 for every θ.
pub fn standstill_gain_matrix(theta: f64) -> Mat2 {
    let c = rotor_unit(theta);
    c * c.transpose() - Mat2::identity() * 0.5
}

fn outer(v: &Vec2) -> Mat2 {
    v * v.transpose()
}

fn lerp(a: &Vec2, b: &Vec2, s: f64) -> Vec2 {
    a + (b - a) * s
}

/// Trapezoidal approximation of `∫_{t0}^{t0+T} Φ Φᵀ dt` on the sample grid,
/// with linear interpolation of Φ at window ends that fall between samples.
pub fn pe_gramian(times: &[f64], phi: &[Vec2], t0: f64, window: f64) -> Result<Mat2> {
    assert_eq!(times.len(), phi.len());
    let t1 = t0 + window;
    let slack = 1e-9 * window.max(1e-12);
    if times.len() < 2 || times[0] > t0 + slack || *times.last().unwrap() < t1 - slack {
        return Err(Error::InsufficientData(format!(
            "series does not cover [{t0}, {t1}]"
        )));
    }
    let mut g = Mat2::zeros();
    for k in 0..times.len() - 1 {
        let (ta, tb) = (times[k], times[k + 1]);
        let a = ta.max(t0);
        let b = tb.min(t1);
        if b <= a {
            continue;
        }
        let h = tb - ta;
        let pa = lerp(&phi[k], &phi[k + 1], (a - ta) / h);
        let pb = lerp(&phi[k], &phi[k + 1], (b - ta) / h);
        g += (outer(&pa) + outer(&pb)) * (0.5 * (b - a));
    }
    Ok(g)
}

/// Eigenvalues (min, max) of a symmetric 2×2 matrix.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)];
    let c = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// One sliding window of the PE metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeWindow {
    pub t_start: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeReport {
    /// Window length actually used (a whole number of samples).
    pub window: f64,
    pub windows: Vec<PeWindow>,
}

impl PeReport {
    /// Smallest `delta_min` over all windows, `None` for an empty report.
    pub fn delta_min(&self) -> Option<f64> {
        self.windows.iter().map(|w| w.delta_min).reduce(f64::min)
    }

    /// Smallest `delta_min` over windows starting in `[from, to)`.
    pub fn delta_min_between(&self, from: f64, to: f64) -> Option<f64> {
        self.windows
            .iter()
            .filter(|w| w.t_start >= from && w.t_start < to)
            .map(|w| w.delta_min)
            .reduce(f64::min)
    }

    /// Largest `delta_min` over windows lying entirely before `until`.
    pub fn max_delta_min_until(&self, until: f64) -> Option<f64> {
        self.windows
            .iter()
            .filter(|w| w.t_start + self.window <= until + 1e-12)
            .map(|w| w.delta_min)
            .reduce(f64::max)
    }

    /// The run is PE with level δ iff every window has `delta_min ≥ δ > 0`.
    pub fn is_pe(&self, delta: f64) -> bool {
        delta > 0.0 && self.delta_min().is_some_and(|d| d >= delta)
    }
}

/// Sliding-window PE metric over a uniformly sampled regressor series.
///
/// Window length and stride are rounded to whole samples; the cumulative
/// trapezoid sums make each window O(1).
pub fn pe_metric(times: &[f64], phi: &[Vec2], cfg: &PeConfig) -> Result<PeReport> {
    assert_eq!(times.len(), phi.len());
    cfg.validate()?;
    if times.len() < 2 {
        return Err(Error::InsufficientData("need at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let win = ((cfg.window / dt).round() as usize).max(1);
    let hop = ((cfg.stride / dt).round() as usize).max(1);
    if win >= times.len() {
        return Err(Error::InsufficientData(format!(
            "series of {} samples shorter than the PE window ({win} samples)",
            times.len()
        )));
    }
    // Cumulative trapezoid integrals of (φ₁², φ₁φ₂, φ₂²).
    let mut cum = vec![[0.0f64; 3]; times.len()];
    for k in 1..times.len() {
        let h = 0.5 * (times[k] - times[k - 1]);
        let (a, b) = (&phi[k - 1], &phi[k]);
        cum[k] = [
            cum[k - 1][0] + h * (a.x * a.x + b.x * b.x),
            cum[k - 1][1] + h * (a.x * a.y + b.x * b.y),
            cum[k - 1][2] + h * (a.y * a.y + b.y * b.y),
        ];
    }
    let starts: Vec<usize> = (0..times.len() - win).step_by(hop).collect();
    let windows = starts
        .par_iter()
        .map(|&k| {
            let e = k + win;
            let g = Mat2::new(
                cum[e][0] - cum[k][0],
                cum[e][1] - cum[k][1],
                cum[e][1] - cum[k][1],
                cum[e][2] - cum[k][2],
            );
            let (lo, hi) = sym_eigenvalues(&g);
            PeWindow {
                t_start: times[k],
                delta_min: lo,
                delta_max: hi,
            }
        })
        .collect();
    Ok(PeReport {
        window: win as f64 * dt,
        windows,
    })
}

/// Independent route to the regressor: `Φ = 2 F[v − R i] − 2 L_s W[i]`.
#[derive(Debug, Clone)]
pub struct PhiShortcut {
    params: MotorParams,
    v_lp: FirstOrderFilter<Vec2>,
    i_lp: FirstOrderFilter<Vec2>,
}

impl PhiShortcut {
    pub fn start(params: MotorParams, alpha: f64, init: FilterInit, i0: Vec2) -> (Self, Vec2) {
        let v0 = match init {
            FilterInit::Matched { v0, .. } => Vec2::new(v0[0], v0[1]),
            FilterInit::Zero => Vec2::zeros(),
        };
        let v_lp = FirstOrderFilter::low_pass(alpha, Hold::Zero).with_lag_state(init.lag_state(alpha, &v0));
        let mut i_lp = FirstOrderFilter::low_pass(alpha, Hold::Linear).with_lag_state(init.lag_state(alpha, &i0));
        i_lp.prime(i0);
        let s = Self { params, v_lp, i_lp };
        let phi = s.output();
        (s, phi)
    }

    pub fn step(&mut self, v: &Vec2, i_next: &Vec2, dt: f64) -> Vec2 {
        self.v_lp.step(*v, dt);
        self.i_lp.step(*i_next, dt);
        self.output()
    }

    fn output(&self) -> Vec2 {
        let p = &self.params;
        let alpha = self.i_lp.alpha();
        let washout_i = (self.i_lp.input() - self.i_lp.lag_state()) * alpha;
        (self.v_lp.output() - self.i_lp.output() * p.r - washout_i * p.ls()) * 2.0
    }
}

/// Advances a [`PhiShortcut`] (free-function form).
pub fn phi_shortcut(s: &mut PhiShortcut, v: &Vec2, i_next: &Vec2, dt: f64) -> Vec2 {
    s.step(v, i_next, dt)
}
