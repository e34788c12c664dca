use serde::{Deserialize, Serialize};

use super::config::{ControllerMode, DriveMode, Expectation, FilterInitMode, Metric, ScenarioConfig};
use crate::{
    analysis::fit_decay_rate,
    angle_diff,
    control::FocController,
    excitation::{hf_injection, pe_metric, PeReport, PhiShortcut},
    filters::{DisturbanceProbe, FilterInit, RegressionBank},
    motor::{electromagnetic_torque, step_plant, Drive, PlantState},
    observer::{ChoNamObserver, FluxObserver, GesObserver, ObserverKind, SpmsmObserver},
    Error, Result, Vec2,
};

/// Plant-side quantities at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantRecord {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub omega_ref: f64,
    pub lambda: Vec2,
    pub x: Vec2,
    pub i: Vec2,
    /// Voltage applied over the step starting at `t`.
    pub v: Vec2,
    pub y: f64,
    pub phi: Vec2,
    pub phi_shortcut: Vec2,
    pub d_true: f64,
    /// `y − Φᵀx − d`.
    pub residual: f64,
    /// `|L₀||i| < ψ_m`.
    pub a1_ok: bool,
    /// `|x| ≥ ε`.
    pub a2_ok: bool,
}

/// Observer-side quantities at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverRecord {
    pub theta_hat: f64,
    /// Wrapped `θ̂ − θ`.
    pub theta_err: f64,
    pub x_hat: Vec2,
    pub lambda_hat: Vec2,
    pub lambda_err: f64,
    pub d_hat: f64,
    pub innovation: f64,
    pub degenerate: bool,
}

/// Full-rate record of a run: one entry per step, taken at the start of the step.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub dt: f64,
    pub observers: Vec<ObserverKind>,
    pub plant: Vec<PlantRecord>,
    /// Indexed `[observer][step]`.
    pub estimates: Vec<Vec<ObserverRecord>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.plant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plant.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.plant.iter().map(|r| r.t).collect()
    }

    pub fn phi(&self) -> Vec<Vec2> {
        self.plant.iter().map(|r| r.phi).collect()
    }

    pub fn observer_index(&self, kind: ObserverKind) -> Option<usize> {
        self.observers.iter().position(|&k| k == kind)
    }

    /// Index range of samples with `from ≤ t ≤ to`.
    pub fn range(&self, from: f64, to: f64) -> std::ops::Range<usize> {
        let tol = 1e-9 * self.dt;
        let a = self.plant.partition_point(|r| r.t < from - tol);
        let b = self.plant.partition_point(|r| r.t <= to + tol);
        a..b.max(a)
    }

    /// Max wrapped |θ̃| of observer `k` over `[from, to]`.
    pub fn max_theta_err(&self, k: usize, from: f64, to: f64) -> f64 {
        self.estimates[k][self.range(from, to)]
            .iter()
            .map(|e| e.theta_err.abs())
            .fold(0.0, f64::max)
    }

    pub fn max_lambda_err(&self, k: usize, from: f64, to: f64) -> f64 {
        self.estimates[k][self.range(from, to)]
            .iter()
            .map(|e| e.lambda_err)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSummary {
    pub observer: ObserverKind,
    /// Fitted decay rate of |λ̃| over the transient (1/s).
    pub decay_rate: Option<f64>,
    pub max_theta_err_after_settle: f64,
    pub final_theta_err: f64,
    pub final_lambda_err: f64,
    pub degenerate_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub description: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub steps: usize,
    pub dt: f64,
    pub settle_time: f64,
    pub x_min: f64,
    pub max_current: f64,
    pub a1_violations: usize,
    pub a2_violations: usize,
    pub pe_window: f64,
    pub pe_delta_min: Option<f64>,
    /// Max |y − Φᵀx − d| / max|y| after 8/α.
    pub regression_residual: f64,
    /// Max |Φ − Φ_shortcut| after 8/α.
    pub phi_gap: f64,
    pub observers: Vec<ObserverSummary>,
    pub assertions: Vec<AssertionResult>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub trace: Trace,
    pub pe: PeReport,
    pub summary: Summary,
}

fn make_observer(
    kind: ObserverKind,
    cfg: &ScenarioConfig,
    init: FilterInit,
    lambda_hat0: Vec2,
    i0: Vec2,
) -> Result<Box<dyn FluxObserver>> {
    let p = cfg.motor;
    let op = cfg.observer_params();
    Ok(match kind {
        ObserverKind::Proposed => Box::new(GesObserver::new(p, op, lambda_hat0, i0, 0.0).with_filter_init(init)),
        ObserverKind::Chonam => Box::new(ChoNamObserver::new(p, op, lambda_hat0, i0, 0.0).with_filter_init(init)),
        ObserverKind::SpmsmBaseline => Box::new(SpmsmObserver::new(
            p,
            cfg.observer.spmsm_gamma.unwrap_or(op.gamma),
            cfg.observer.spmsm_clipped,
            lambda_hat0,
            i0,
            0.0,
        )?),
    })
}

/// Simulates the scenario and returns the full-rate trace; no summary.
pub fn simulate(cfg: &ScenarioConfig) -> Result<Trace> {
    cfg.validate()?;
    let p = cfg.motor;
    let op = cfg.observer_params();
    let dt = cfg.dt;
    let n = cfg.steps();

    let i0 = cfg.initial_current();
    let mut s = PlantState::from_current(&i0, cfg.initial.theta, cfg.initial_omega(), &p);
    let x0 = s.active_flux(&p);
    let init = match cfg.filter_init {
        FilterInitMode::Zero => FilterInit::Zero,
        FilterInitMode::Matched => {
            // Steady voltage balance v = R i + ω J λ on the initial orbit.
            let v0 = i0 * p.r + Vec2::new(-s.lambda.y, s.lambda.x) * s.omega;
            FilterInit::Matched {
                v0: [v0.x, v0.y],
                omega: s.omega,
            }
        }
    };
    let (mut bank, mut sample) = RegressionBank::start(p, op.alpha, init, 0.0, i0);
    let (mut shortcut, mut phi_s) = PhiShortcut::start(p, op.alpha, init, i0);
    let (mut probe, mut d_true) = DisturbanceProbe::start(&p, op.alpha, init, &i0, &x0)?;

    let lambda_hat0 = cfg.lambda_hat0(&s.lambda, &i0, &x0);
    let mut observers = cfg
        .observers
        .iter()
        .map(|&k| make_observer(k, cfg, init, lambda_hat0, i0))
        .collect::<Result<Vec<_>>>()?;

    let gains = cfg.foc_gains();
    let kt = electromagnetic_torque(&Vec2::new(0.0, 1.0), 0.0, &p);
    let iq0 = cfg.initial.current_dq[1];
    let mut controller = FocController::at_operating_point(gains, iq0, &p);
    let speed = |t: f64| cfg.speed_profile.at(t);

    let mut trace = Trace {
        dt,
        observers: cfg.observers.clone(),
        plant: Vec::with_capacity(n),
        estimates: vec![Vec::with_capacity(n); observers.len()],
    };

    let abort = |k: usize, e: Error| Error::Aborted {
        last_valid: k.saturating_sub(1),
        source: Box::new(e),
    };

    let mut i = i0;
    for k in 0..n {
        let t = k as f64 * dt;
        s.t = t;
        let x = s.active_flux(&p);
        sample.d_true = Some(d_true);
        let w_ref = match cfg.mode {
            DriveMode::Dynamic => speed(t),
            DriveMode::Kinematic => s.omega,
        };
        let mut v = match cfg.controller {
            ControllerMode::None => Vec2::zeros(),
            ControllerMode::Foc => match cfg.mode {
                DriveMode::Dynamic => controller.foc_step(&s, &i, w_ref, dt, &p),
                DriveMode::Kinematic => {
                    let i_ref = Vec2::new(gains.id_ref, cfg.load_profile.at(t) / kt);
                    controller.current_step(&s, &i, &i_ref, dt, &p)
                }
            },
        };
        v += hf_injection(t, &cfg.injection);

        trace.plant.push(PlantRecord {
            t,
            theta: s.theta,
            omega: s.omega,
            omega_ref: speed(t),
            lambda: s.lambda,
            x,
            i,
            v,
            y: sample.y,
            phi: sample.phi,
            phi_shortcut: phi_s,
            d_true,
            residual: sample.y - sample.phi.dot(&x) - d_true,
            a1_ok: p.l0().abs() * i.norm() < p.psi_m,
            a2_ok: x.norm() >= op.eps,
        });
        for (obs, rec) in observers.iter().zip(trace.estimates.iter_mut()) {
            let e = obs.estimate(&sample);
            rec.push(ObserverRecord {
                theta_hat: e.theta_hat,
                theta_err: angle_diff(e.theta_hat, s.theta),
                x_hat: e.x_hat,
                lambda_hat: e.lambda_hat,
                lambda_err: (e.lambda_hat - s.lambda).norm(),
                d_hat: e.d_hat,
                innovation: e.innovation,
                degenerate: e.degenerate,
            });
        }
        if k + 1 == n {
            break;
        }

        let drive = match cfg.mode {
            DriveMode::Dynamic => Drive::Dynamic {
                load_torque: cfg.load_profile.at(t),
            },
            DriveMode::Kinematic => Drive::Prescribed(&speed),
        };
        s = step_plant(&s, &v, drive, dt, &p).map_err(|e| abort(k + 1, e))?;
        let i_next = s.current(&p);
        for obs in observers.iter_mut() {
            obs.step(&v, &i_next, &sample, dt).map_err(|e| abort(k + 1, e))?;
        }
        sample = bank.step(&v, &i_next, dt);
        phi_s = shortcut.step(&v, &i_next, dt);
        d_true = probe
            .step(&i_next, &s.active_flux(&p), dt)
            .map_err(|e| abort(k + 1, e))?;
        i = i_next;
    }
    Ok(trace)
}

/// Simulates the scenario, analyses excitation and evaluates the summary.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let trace = simulate(cfg)?;
    let pe_cfg = cfg.pe_config();
    let pe = if trace.len() > 1 {
        pe_metric(&trace.times(), &trace.phi(), &pe_cfg).unwrap_or_else(|_| PeReport {
            window: pe_cfg.window,
            windows: Vec::new(),
        })
    } else {
        PeReport {
            window: pe_cfg.window,
            windows: Vec::new(),
        }
    };
    let summary = summarize(cfg, &trace, &pe);
    Ok(RunOutput {
        config: cfg.clone(),
        trace,
        pe,
        summary,
    })
}

/// Fitted decay rate of |λ̃| for observer `k` over its transient: samples
/// until |λ̃| first falls below 1e−4 of its initial value.
pub fn lambda_decay_rate(trace: &Trace, k: usize) -> Option<f64> {
    let errs: Vec<f64> = trace.estimates[k].iter().map(|e| e.lambda_err).collect();
    let e0 = *errs.first()?;
    if e0 <= 0.0 {
        return None;
    }
    let end = errs.iter().position(|&e| e < 1e-4 * e0).unwrap_or(errs.len());
    let times = trace.times();
    fit_decay_rate(&times[..end], &errs[..end], 0.1).ok()
}

fn summarize(cfg: &ScenarioConfig, trace: &Trace, pe: &PeReport) -> Summary {
    let alpha = cfg.observer.alpha;
    let end = cfg.duration;
    let after = 8.0 / alpha;
    let y_max = trace.plant.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
    let late = trace.range(after, end);
    let regression_residual = trace.plant[late.clone()]
        .iter()
        .map(|r| r.residual.abs())
        .fold(0.0, f64::max)
        / y_max.max(f64::MIN_POSITIVE);
    let phi_gap = trace.plant[late]
        .iter()
        .map(|r| (r.phi - r.phi_shortcut).norm())
        .fold(0.0, f64::max);

    let observers = trace
        .observers
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let last = trace.estimates[k].last();
            ObserverSummary {
                observer: kind,
                decay_rate: lambda_decay_rate(trace, k),
                max_theta_err_after_settle: trace.max_theta_err(k, cfg.settle_time, end),
                final_theta_err: last.map_or(0.0, |e| e.theta_err.abs()),
                final_lambda_err: last.map_or(0.0, |e| e.lambda_err),
                degenerate_samples: trace.estimates[k].iter().filter(|e| e.degenerate).count(),
            }
        })
        .collect();

    // A single step carries no assertions.
    let assertions: Vec<AssertionResult> = if trace.len() > 1 {
        cfg.expect.iter().map(|e| evaluate(cfg, trace, pe, e)).collect()
    } else {
        Vec::new()
    };
    let passed = assertions.iter().all(|a| a.passed);
    Summary {
        scenario: cfg.name.clone(),
        steps: trace.len(),
        dt: cfg.dt,
        settle_time: cfg.settle_time,
        x_min: trace.plant.iter().map(|r| r.x.norm()).fold(f64::INFINITY, f64::min),
        max_current: trace.plant.iter().map(|r| r.i.norm()).fold(0.0, f64::max),
        a1_violations: trace.plant.iter().filter(|r| !r.a1_ok).count(),
        a2_violations: trace.plant.iter().filter(|r| !r.a2_ok).count(),
        pe_window: pe.window,
        pe_delta_min: pe.delta_min(),
        regression_residual,
        phi_gap,
        observers,
        assertions,
        passed,
    }
}

/// Value of `metric` over `[from, to]` (observer-specific metrics use
/// observer `k`).
pub fn metric_value(
    trace: &Trace,
    pe: &PeReport,
    metric: Metric,
    k: usize,
    from: f64,
    to: f64,
) -> f64 {
    let plant = &trace.plant[trace.range(from, to)];
    let est = || &trace.estimates[k][trace.range(from, to)];
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    match metric {
        Metric::MaxThetaErr => trace.max_theta_err(k, from, to),
        Metric::FinalThetaErr => est().last().map_or(f64::NAN, |e| e.theta_err.abs()),
        Metric::MaxLambdaErr => trace.max_lambda_err(k, from, to),
        Metric::DecayRate => lambda_decay_rate(trace, k).unwrap_or(f64::NAN),
        Metric::XHatDrift => {
            let e = est();
            match e.first() {
                Some(first) => max(&mut e.iter().map(|r| (r.x_hat - first.x_hat).norm())),
                None => f64::NAN,
            }
        }
        Metric::PeDeltaMin => pe
            .windows
            .iter()
            .filter(|w| w.t_start >= from - 1e-12 && w.t_start + pe.window <= to + 1e-9)
            .map(|w| w.delta_min)
            .reduce(f64::min)
            .unwrap_or(f64::NAN),
        Metric::RegressionResidual => {
            let y_max = trace.plant.iter().map(|r| r.y.abs()).fold(0.0, f64::max);
            max(&mut plant.iter().map(|r| r.residual.abs())) / y_max.max(f64::MIN_POSITIVE)
        }
        Metric::PhiGap => max(&mut plant.iter().map(|r| (r.phi - r.phi_shortcut).norm())),
        Metric::XMin => plant.iter().map(|r| r.x.norm()).fold(f64::INFINITY, f64::min),
        Metric::A1Violations => plant.iter().filter(|r| !r.a1_ok).count() as f64,
        Metric::MaxSpeedErr => max(&mut plant.iter().map(|r| (r.omega - r.omega_ref).abs())),
    }
}

fn evaluate(cfg: &ScenarioConfig, trace: &Trace, pe: &PeReport, e: &Expectation) -> AssertionResult {
    let from = e.from.unwrap_or(match e.metric {
        Metric::RegressionResidual | Metric::PhiGap => 8.0 / cfg.observer.alpha,
        _ => 0.0,
    });
    let to = e.to.unwrap_or(cfg.duration);
    let kind = e.observer.unwrap_or(trace.observers[0]);
    let mut description = format!("{:?}", e.metric);
    let (value, mut passed) = match trace.observer_index(kind) {
        Some(k) => {
            let v = metric_value(trace, pe, e.metric, k, from, to);
            (v, v.is_finite())
        }
        None => (f64::NAN, false),
    };
    description = format!("{description}[{}] on [{from}, {to}]", kind.label());
    if let Some(lt) = e.lt {
        passed &= value < lt;
        description.push_str(&format!(" < {lt:e}"));
    }
    if let Some(gt) = e.gt {
        passed &= value > gt;
        description.push_str(&format!(" > {gt:e}"));
    }
    AssertionResult {
        description,
        value,
        passed,
    }
}
