use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{
    control::FocGains,
    excitation::{InjectionConfig, PeConfig},
    motor::{inverse_dq_transform, rotor_unit, MotorParams},
    observer::{ObserverKind, ObserverParams},
    Error, Result, Vec2,
};

fn default_dt() -> f64 {
    2e-5
}

fn default_stride() -> f64 {
    1e-3
}

fn default_settle() -> f64 {
    0.3
}

fn default_observers() -> Vec<ObserverKind> {
    vec![ObserverKind::Proposed]
}

fn default_true() -> bool {
    true
}

fn default_pe_stride() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    /// Rigid-body mechanics; the speed controller tracks the speed profile.
    #[default]
    Dynamic,
    /// The speed follows the profile exactly; the controller only regulates
    /// current, with `i_q` set from the load torque.
    Kinematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    #[default]
    Foc,
    /// No control voltage; only the injection (if enabled) is applied.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterInitMode {
    #[default]
    Zero,
    /// Regression filters seeded from the true initial flux.
    Matched,
}

/// Piecewise-linear speed reference, `(t, ω)` pairs in s and electrical rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedProfile {
    pub points: Vec<[f64; 2]>,
}

impl SpeedProfile {
    pub fn constant(w: f64) -> Self {
        Self { points: vec![[0.0, w]] }
    }

    pub fn at(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0][0] {
            return pts[0][1];
        }
        for win in pts.windows(2) {
            let ([t0, w0], [t1, w1]) = (win[0], win[1]);
            if t <= t1 {
                if t1 == t0 {
                    return w1;
                }
                return w0 + (w1 - w0) * (t - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1][1]
    }
}

/// Piecewise-constant load torque, `(t, T_L)` pairs: `T_L` applies from `t` on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    #[serde(default)]
    pub steps: Vec<[f64; 2]>,
}

impl LoadProfile {
    pub fn at(&self, t: f64) -> f64 {
        self.steps
            .iter()
            .take_while(|s| s[0] <= t)
            .last()
            .map_or(0.0, |s| s[1])
    }
}

/// Initial flux estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObserverStart {
    /// A fixed `λ̂(0)` in Wb.
    Fixed { lambda: [f64; 2] },
    /// `x̂(0) = |x(0)| c(θ(0) + offset)`: an estimate with the right magnitude
    /// and a known angle error.
    AngleOffset { offset: f64 },
    /// `λ̂(0) = λ(0)`.
    True,
}

impl Default for ObserverStart {
    fn default() -> Self {
        ObserverStart::Fixed { lambda: [0.5, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    pub gamma: f64,
    pub alpha: f64,
    /// Projection threshold (Wb); defaults to ψ_m/4.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_true")]
    pub projection: bool,
    #[serde(default)]
    pub start: ObserverStart,
    /// Gain of the SPMSM baseline; defaults to `gamma`.
    #[serde(default)]
    pub spmsm_gamma: Option<f64>,
    #[serde(default)]
    pub spmsm_clipped: bool,
}

impl ObserverSection {
    pub fn params(&self, p: &MotorParams) -> ObserverParams {
        ObserverParams {
            gamma: self.gamma,
            alpha: self.alpha,
            eps: self.eps.unwrap_or(0.25 * p.psi_m),
            projection: self.projection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeSection {
    /// Window length (s); defaults to one period of the dominant frequency.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default = "default_pe_stride")]
    pub stride: f64,
}

impl Default for PeSection {
    fn default() -> Self {
        Self {
            window: None,
            stride: default_pe_stride(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default)]
    pub theta: f64,
    /// Electrical speed; defaults to the speed profile at t = 0.
    #[serde(default)]
    pub omega: Option<f64>,
    /// Stator current in the dq frame (A).
    #[serde(default)]
    pub current_dq: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Max wrapped |θ̃| over the interval (rad).
    MaxThetaErr,
    /// Wrapped |θ̃| at the last sample of the interval (rad).
    FinalThetaErr,
    /// Max |λ̃| over the interval (Wb).
    MaxLambdaErr,
    /// Fitted exponential decay rate of |λ̃| (1/s).
    DecayRate,
    /// Max |x̂(t) − x̂(from)| over the interval (Wb).
    XHatDrift,
    /// Smallest PE eigenvalue over windows inside the interval.
    PeDeltaMin,
    /// Max |y − Φᵀx − d| over the interval relative to max |y| over the run.
    RegressionResidual,
    /// Max |Φ − Φ_shortcut| over the interval.
    PhiGap,
    /// Smallest |x| over the interval (Wb).
    XMin,
    /// Number of samples violating |L₀||i| < ψ_m.
    A1Violations,
    /// Max |ω − ω_ref| over the interval (rad/s).
    MaxSpeedErr,
}

/// A summary assertion checked after the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub metric: Metric,
    #[serde(default)]
    pub observer: Option<ObserverKind>,
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
    #[serde(default)]
    pub lt: Option<f64>,
    #[serde(default)]
    pub gt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub motor: MotorParams,
    #[serde(default)]
    pub mode: DriveMode,
    #[serde(default)]
    pub controller: ControllerMode,
    /// Controller gains; defaults derived from the motor.
    #[serde(default)]
    pub foc: Option<FocGains>,
    pub speed_profile: SpeedProfile,
    #[serde(default)]
    pub load_profile: LoadProfile,
    pub observer: ObserverSection,
    #[serde(default)]
    pub injection: InjectionConfig,
    #[serde(default)]
    pub pe: PeSection,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    #[serde(default = "default_stride")]
    pub report_stride: f64,
    #[serde(default = "default_observers")]
    pub observers: Vec<ObserverKind>,
    #[serde(default)]
    pub filter_init: FilterInitMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    /// Start of the post-transient interval used in the summary (s).
    #[serde(default = "default_settle")]
    pub settle_time: f64,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.motor.validate()?;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, "must be finite and > 0"))
            }
        };
        positive("duration", self.duration)?;
        positive("dt", self.dt)?;
        positive("report_stride", self.report_stride)?;
        positive("observer.gamma", self.observer.gamma)?;
        positive("observer.alpha", self.observer.alpha)?;
        if let Some(eps) = self.observer.eps {
            positive("observer.eps", eps)?;
        }
        if let Some(g) = self.observer.spmsm_gamma {
            positive("observer.spmsm_gamma", g)?;
        }
        let ratio = self.report_stride / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::config("report_stride", "must be a whole multiple of dt"));
        }
        if self.speed_profile.points.is_empty() {
            return Err(Error::config("speed_profile.points", "needs at least one point"));
        }
        if !monotone(&self.speed_profile.points) {
            return Err(Error::config("speed_profile.points", "times must be non-decreasing"));
        }
        if !monotone(&self.load_profile.steps) {
            return Err(Error::config("load_profile.steps", "times must be non-decreasing"));
        }
        if self.observers.is_empty() {
            return Err(Error::config("observers", "at least one observer is required"));
        }
        self.injection.validate()?;
        if let Some(w) = self.pe.window {
            positive("pe.window", w)?;
        }
        positive("pe.stride", self.pe.stride)?;
        if let Some(f) = self.foc {
            f.validate()?;
        }
        if !self.settle_time.is_finite() || self.settle_time < 0.0 {
            return Err(Error::config("settle_time", "must be ≥ 0"));
        }
        for (k, e) in self.expect.iter().enumerate() {
            if e.lt.is_none() && e.gt.is_none() {
                return Err(Error::config(format!("expect[{k}]"), "needs `lt` or `gt`"));
            }
        }
        let dq = Vec2::new(self.initial.current_dq[0], self.initial.current_dq[1]);
        if !(dq.norm() * self.motor.l0().abs() < self.motor.psi_m) {
            return Err(Error::config(
                "initial.current_dq",
                "initial current violates |L0||i| < psi_m",
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.duration / self.dt).round() as usize).max(1)
    }

    pub fn stride_steps(&self) -> usize {
        ((self.report_stride / self.dt).round() as usize).max(1)
    }

    pub fn observer_params(&self) -> ObserverParams {
        self.observer.params(&self.motor)
    }

    pub fn initial_omega(&self) -> f64 {
        self.initial.omega.unwrap_or_else(|| self.speed_profile.at(0.0))
    }

    pub fn initial_current(&self) -> Vec2 {
        let dq = Vec2::new(self.initial.current_dq[0], self.initial.current_dq[1]);
        inverse_dq_transform(&dq, self.initial.theta)
    }

    pub fn foc_gains(&self) -> FocGains {
        self.foc.unwrap_or_else(|| FocGains::for_motor(&self.motor))
    }

    /// Initial flux estimate given the true initial flux and current.
    pub fn lambda_hat0(&self, lambda0: &Vec2, i0: &Vec2, x0: &Vec2) -> Vec2 {
        match self.observer.start {
            ObserverStart::Fixed { lambda } => Vec2::new(lambda[0], lambda[1]),
            ObserverStart::True => *lambda0,
            ObserverStart::AngleOffset { offset } => {
                let theta = x0.y.atan2(x0.x);
                rotor_unit(theta + offset) * x0.norm() + i0 * self.motor.l_q
            }
        }
    }

    /// PE window: configured value, else one period of the injection (when
    /// enabled) or of the final reference speed.
    pub fn pe_config(&self) -> PeConfig {
        let window = self.pe.window.unwrap_or_else(|| {
            if self.injection.enabled {
                self.injection.period()
            } else {
                let w = self.speed_profile.points.last().map_or(0.0, |p| p[1]).abs();
                if w > 0.0 {
                    std::f64::consts::TAU / w
                } else {
                    0.1
                }
            }
        });
        PeConfig {
            window,
            stride: self.pe.stride,
        }
    }

    /// Same scenario with the regression filters and the estimate initialised
    /// on the true state.
    pub fn matched(&self) -> Self {
        let mut c = self.clone();
        c.filter_init = FilterInitMode::Matched;
        c.observer.start = ObserverStart::True;
        c.expect.clear();
        c
    }
}

fn monotone(pts: &[[f64; 2]]) -> bool {
    pts.iter().all(|p| p[0].is_finite() && p[1].is_finite()) && pts.windows(2).all(|w| w[0][0] <= w[1][0])
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
duration = 0.1
speed_profile = { points = [[0.0, 10.0], [1.0, 100.0]] }
[observer]
gamma = 10.0
alpha = 20.0
"#;

    fn parse(s: &str) -> Result<ScenarioConfig> {
        ScenarioConfig::from_toml_str(s, Path::new("inline.toml"))
    }

    #[test]
    fn minimal_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.dt, 2e-5);
        assert_eq!(c.stride_steps(), 50);
        assert_eq!(c.steps(), 5000);
        assert_eq!(c.motor, MotorParams::table1_sim());
        assert_eq!(c.observers, vec![ObserverKind::Proposed]);
        assert!((c.observer_params().eps - 0.0275).abs() < 1e-15);
        assert_eq!(c.observer.start, ObserverStart::Fixed { lambda: [0.5, 2.0] });
        assert!((c.speed_profile.at(0.5) - 55.0).abs() < 1e-12);
        assert_eq!(c.speed_profile.at(3.0), 100.0);
        assert_eq!(c.initial_omega(), 10.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = parse(MINIMAL).unwrap();
        let again = parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("duration = 0.1", "duration = -1.0");
        assert!(matches!(parse(&bad), Err(Error::Config { field, .. }) if field == "duration"));
        let bad = format!("{MINIMAL}\n[motor]\nr = 0.43\nl_d = 5.74e-3\nl_q = -1.0\npsi_m = 0.11\npole_pairs = 6\ninertia = 0.01\n");
        assert!(matches!(parse(&bad), Err(Error::Config { field, .. }) if field == "motor.l_q"));
        let bad = MINIMAL.replace("duration = 0.1", "duration = 0.1\nreport_stride = 3e-5");
        assert!(matches!(parse(&bad), Err(Error::Config { field, .. }) if field == "report_stride"));
        let bad = MINIMAL.replace("[[0.0, 10.0], [1.0, 100.0]]", "[[1.0, 10.0], [0.0, 100.0]]");
        assert!(matches!(parse(&bad), Err(Error::Config { field, .. }) if field == "speed_profile.points"));
        assert!(matches!(parse("name = 1"), Err(Error::Parse { .. })));
        let bad = MINIMAL.replace("name = \"t\"", "name = \"t\"\nbogus = 1");
        assert!(matches!(parse(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn load_profile_is_piecewise_constant() {
        let l = LoadProfile { steps: vec![[0.0, 0.5], [0.5, 3.0]] };
        assert_eq!(l.at(0.0), 0.5);
        assert_eq!(l.at(0.4999), 0.5);
        assert_eq!(l.at(0.5), 3.0);
        assert_eq!(LoadProfile::default().at(1.0), 0.0);
    }

    #[test]
    fn angle_offset_start() {
        let mut c = parse(MINIMAL).unwrap();
        c.observer.start = ObserverStart::AngleOffset { offset: std::f64::consts::FRAC_PI_2 };
        let x0 = Vec2::new(0.11, 0.0);
        let lh = c.lambda_hat0(&x0, &Vec2::zeros(), &x0);
        assert!((lh - Vec2::new(0.0, 0.11)).norm() < 1e-15);
    }
}
