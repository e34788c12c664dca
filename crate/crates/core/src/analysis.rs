//! Numerical instrumentation of the observer error system: the `w`
//! factorisation of the compensation mismatch, the state-space realisation of
//! `d̃`, and the χ error system driven by recorded traces.

use nalgebra::Vector3;

use crate::{motor::MotorParams, ode::rk4, Error, Mat2, Result, Vec2};

/// Returns `w` with `wᵀ x̃ = ℓ iᵀ(σ(x̂) − x/|x|)` where `x̃ = x̂ − x`.
///
/// Uses the first form when `|x̂| ≥ eps` and the second otherwise; the second
/// form needs `x̃ ≠ 0`.
pub fn w_factor(i: &Vec2, x: &Vec2, x_hat: &Vec2, eps: f64, p: &MotorParams) -> Result<Vec2> {
    let nx = x.norm();
    if nx == 0.0 || !nx.is_finite() {
        return Err(Error::Domain("w factor: |x| must be positive"));
    }
    let ell = p.ell();
    let nxh = x_hat.norm();
    if nxh >= eps && nxh > 0.0 {
        let m = Mat2::identity() - (x + x_hat) * x.transpose() / (nx * (nx + nxh));
        Ok(m * i * (ell / nxh))
    } else {
        let xt = x_hat - x;
        let n2 = xt.norm_squared();
        if n2 == 0.0 {
            return Err(Error::Domain("w factor: x̃ = 0 below the projection threshold"));
        }
        Ok(xt * (-ell * i.dot(x) / (nx * n2)))
    }
}

/// Right-hand side of the factorisation identity, `ℓ iᵀ(σ(x̂) − x/|x|)`.
pub fn factorization_target(i: &Vec2, x: &Vec2, x_hat: &Vec2, eps: f64, p: &MotorParams) -> f64 {
    let s = crate::observer::sigma(x_hat, eps);
    p.ell() * i.dot(&(s - x / x.norm()))
}

/// Bound on `|w|` for the first form when `|x̂| ≥ x_min/2`.
pub fn w_bound_case1(i: &Vec2, x_min: f64, p: &MotorParams) -> f64 {
    4.0 * p.ell().abs() / x_min * i.norm()
}

/// Bound on `|w|` for the second form.
pub fn w_bound_case2(i: &Vec2, x_min: f64, p: &MotorParams) -> f64 {
    2.0 * p.ell().abs() / x_min * i.norm()
}

/// One RK4 step of `ż = −αz + α²u`, `d̃ = z − αu`, with `u = wᵀx̃`
/// interpolated linearly from `u0` to `u1`. Returns `(z, d̃)` at the end of
/// the step.
pub fn dtilde_realization_step(z: f64, u0: f64, u1: f64, alpha: f64, dt: f64) -> (f64, f64) {
    let rhs = |tau: f64, z: f64| {
        let u = u0 + (u1 - u0) * (tau / dt);
        -alpha * z + alpha * alpha * u
    };
    let z1 = rk4(rhs, 0.0, z, dt);
    (z1, z1 - alpha * u1)
}

/// State of the χ error system, `χ = (x̃, z)`, with `c₀ = α/γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSystemState {
    pub chi: Vector3<f64>,
    pub c0: f64,
}

impl ErrorSystemState {
    pub fn new(x_tilde: Vec2, z: f64, c0: f64) -> Self {
        Self {
            chi: Vector3::new(x_tilde.x, x_tilde.y, z),
            c0,
        }
    }

    pub fn x_tilde(&self) -> Vec2 {
        Vec2::new(self.chi[0], self.chi[1])
    }

    pub fn z(&self) -> f64 {
        self.chi[2]
    }

    pub fn norm(&self) -> f64 {
        self.chi.norm()
    }
}

/// `A₀(Φ) = [[−ΦΦᵀ, −Φ], [0, −c₀]]`.
pub fn a0_matrix(phi: &Vec2, c0: f64) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(
        -phi.x * phi.x, -phi.x * phi.y, -phi.x,
        -phi.y * phi.x, -phi.y * phi.y, -phi.y,
        0.0, 0.0, -c0,
    )
}

/// One RK4 step of `χ̇ = γA₀χ` (or, when `perturbed`, of
/// `χ̇ = γA₀χ + γ²[c₀Φwᵀ; c₀²wᵀ] x̃`) with `Φ` and `w` held over the step.
pub fn chi_system_step(
    s: &ErrorSystemState,
    phi: &Vec2,
    w: &Vec2,
    gamma: f64,
    dt: f64,
    perturbed: bool,
) -> ErrorSystemState {
    let c0 = s.c0;
    let mut m = a0_matrix(phi, c0) * gamma;
    if perturbed {
        let g2 = gamma * gamma;
        for col in 0..2 {
            m[(0, col)] += g2 * c0 * phi.x * w[col];
            m[(1, col)] += g2 * c0 * phi.y * w[col];
            m[(2, col)] += g2 * c0 * c0 * w[col];
        }
    }
    let chi = rk4(|_, x: Vector3<f64>| m * x, 0.0, s.chi, dt);
    ErrorSystemState { chi, c0 }
}

/// Exponential rate `r` of a least-squares fit `log v ≈ a − r t`.
///
/// The first `skip_fraction` of the samples is discarded; the fit stops at the
/// first sample that drops below 1e−12 of the largest value (numerical floor).
pub fn fit_decay_rate(times: &[f64], values: &[f64], skip_fraction: f64) -> Result<f64> {
    assert_eq!(times.len(), values.len());
    let start = ((times.len() as f64) * skip_fraction.clamp(0.0, 1.0)) as usize;
    let peak = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let floor = peak * 1e-12;
    let mut n = 0.0;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &v) in times.iter().zip(values).skip(start) {
        if !(v > floor) || !v.is_finite() {
            break;
        }
        let y = v.ln();
        n += 1.0;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let den = n * stt - st * st;
    if n < 3.0 || den <= 0.0 {
        return Err(Error::InsufficientData("too few points above the noise floor for a decay fit".into()));
    }
    Ok(-(n * sty - st * sy) / den)
}

/// Replays a recorded `Φ` trace (uniform step `dt`) through the unperturbed
/// χ system from `chi0` and returns `|χ|` at each sample.
pub fn replay_chi(phi: &[Vec2], chi0: ErrorSystemState, gamma: f64, dt: f64) -> Vec<f64> {
    let mut s = chi0;
    let mut out = Vec::with_capacity(phi.len());
    out.push(s.norm());
    for ph in &phi[..phi.len().saturating_sub(1)] {
        s = chi_system_step(&s, ph, &Vec2::zeros(), gamma, dt, false);
        out.push(s.norm());
    }
    out
}
