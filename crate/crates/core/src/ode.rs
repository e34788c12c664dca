//! Classical fixed-step Runge-Kutta integration.

use std::ops::{Add, Mul};

/// One classical RK4 step of `ẋ = f(t, x)` from `(t, x)` over `h`.
pub fn rk4<S, F>(f: F, t: f64, x: S, h: f64) -> S
where
    S: Copy + Add<Output = S> + Mul<f64, Output = S>,
    F: Fn(f64, S) -> S,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * h, x + k1 * (0.5 * h));
    let k3 = f(t + 0.5 * h, x + k2 * (0.5 * h));
    let k4 = f(t + h, x + k3 * h);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_fourth_order() {
        let exact = (-1.0f64).exp();
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut x = 1.0;
            for k in 0..n {
                x = rk4(|_, x: f64| -x, k as f64 * h, x, h);
            }
            (x - exact).abs()
        };
        let ratio = run(10) / run(20);
        assert!(ratio > 15.0 && ratio < 17.0, "ratio {ratio}");
    }
}
