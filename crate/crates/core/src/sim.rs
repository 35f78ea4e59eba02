//! Closed-loop simulation: reference trajectories, the fixed-step RK4 loop
//! and the tracking-error metrics.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::decoupler::{
    lateral_equilibrium_forces, reference_attitude_conventional, reference_attitude_modified,
    AttitudeReference, DecouplerKind,
};
use crate::error::{Error, Result};
use crate::flc::{
    attitude_altitude_command, decoupling_matrix, drift_term, invert_control, measured_outputs,
    position_command, AttitudeGains, ControlCommand, OutputReference, PositionGains,
};
use crate::gait::{gait_rho, tilt_angles_from_rho, GaitPlan};
use crate::model::{state_derivative, StateDerivative, TiltAngles, VehicleParams, VehicleState};

/// Position magnitude (m) beyond which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Hold the origin.
    Setpoint,
    /// `X = Y = 1.5 t`.
    Rectilinear,
    /// Radius 5 m, angular rate 0.1 rad/s, no acceleration feedforward.
    Circular,
}

impl ReferenceKind {
    pub fn default_duration(&self) -> f64 {
        match self {
            ReferenceKind::Setpoint | ReferenceKind::Rectilinear => 60.0,
            ReferenceKind::Circular => 40.0 * std::f64::consts::PI,
        }
    }
}

/// Reference at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Acceleration feedforward handed to the position loop.
    pub accel: Vector3<f64>,
    pub yaw: f64,
    /// Altitude reference and its first three derivatives.
    pub altitude: [f64; 4],
}

pub fn reference_sample(kind: ReferenceKind, t: f64) -> RefSample {
    match kind {
        ReferenceKind::Setpoint => RefSample::default(),
        ReferenceKind::Rectilinear => RefSample {
            position: Vector3::new(1.5 * t, 1.5 * t, 0.0),
            velocity: Vector3::new(1.5, 1.5, 0.0),
            ..Default::default()
        },
        ReferenceKind::Circular => {
            let (s, c) = (0.1 * t).sin_cos();
            RefSample {
                position: Vector3::new(5.0 * c, 5.0 * s, 0.0),
                velocity: Vector3::new(-0.1 * 5.0 * s, 0.1 * 5.0 * c, 0.0),
                ..Default::default()
            }
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub reference: ReferenceKind,
    pub gait: GaitPlan,
    pub decoupler: DecouplerKind,
    pub attitude_gains: AttitudeGains,
    pub position_gains: PositionGains,
    /// Integration and control step (s).
    pub dt: f64,
    /// Simulated time (s).
    pub duration: f64,
    /// Start-up interval excluded from every metric window (s).
    pub transient: f64,
    /// Tail window for the steady-state mean (s).
    pub steady_state_window: f64,
    /// Tail window for the error supremum (s).
    pub sup_window: f64,
    /// Initial |rotor speed| (rad/s).
    pub initial_rotor_speed: f64,
    /// Symmetric bound on rotor acceleration (rad/s^2); `None` disables it.
    pub saturation: Option<f64>,
    /// Integration steps per controller update; the command is held in
    /// between.
    pub control_every: usize,
    /// Keep every n-th step in the trajectory.
    pub record_every: usize,
    pub params: VehicleParams,
}

impl ExperimentConfig {
    /// Config with every optional field at its default.
    pub fn new(reference: ReferenceKind, gait: GaitPlan, decoupler: DecouplerKind) -> Self {
        let duration = reference.default_duration();
        Self {
            reference,
            gait,
            decoupler,
            attitude_gains: AttitudeGains::default(),
            position_gains: PositionGains::default(),
            dt: 1e-3,
            duration,
            transient: 10.0,
            steady_state_window: 10.0,
            sup_window: default_sup_window(duration, &gait),
            initial_rotor_speed: 300.0,
            saturation: None,
            control_every: 1,
            record_every: 1,
            params: VehicleParams::default(),
        }
    }

    /// Number of integration steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gait.validate()?;
        self.attitude_gains.validate()?;
        self.position_gains.validate()?;
        let positive = [
            ("dt", self.dt),
            ("duration", self.duration),
            ("steady_state_window", self.steady_state_window),
            ("sup_window", self.sup_window),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    key,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        if !(self.transient.is_finite() && self.transient >= 0.0) {
            return Err(Error::invalid("transient", "must be >= 0"));
        }
        if self.duration < 10.0 * self.dt {
            return Err(Error::invalid("duration", "must be at least 10 * dt"));
        }
        for (key, w) in [
            ("steady_state_window", self.steady_state_window),
            ("sup_window", self.sup_window),
        ] {
            if w + self.transient > self.duration + 1e-9 {
                return Err(Error::invalid(
                    key,
                    format!(
                        "window {w} s plus transient {} s exceeds duration {} s",
                        self.transient, self.duration
                    ),
                ));
            }
        }
        if self.control_every == 0 {
            return Err(Error::invalid("control_every", "must be >= 1"));
        }
        if let GaitPlan::TrotInstant { period, .. } = self.gait {
            let ratio = 0.5 * period / (self.dt * self.control_every as f64);
            if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
                return Err(Error::invalid(
                    "gait.period",
                    format!(
                        "instant switch needs (T/2)/(dt * control_every) to be an integer, got {ratio}"
                    ),
                ));
            }
        }
        if !(self.initial_rotor_speed.is_finite() && self.initial_rotor_speed > 1.0) {
            return Err(Error::invalid("initial_rotor_speed", "must be > 1 rad/s"));
        }
        if let Some(limit) = self.saturation {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(Error::invalid("saturation", "must be > 0 when set"));
            }
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }
}

/// Final 20% of the run, stretched to cover at least ten gait periods.
pub fn default_sup_window(duration: f64, gait: &GaitPlan) -> f64 {
    let periods = gait.period().map_or(0.0, |t| 10.0 * t);
    (0.2 * duration).max(periods)
}

/// Everything the controller decided at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub rho: f64,
    pub alpha: TiltAngles,
    pub reference: RefSample,
    pub attitude_ref: AttitudeReference,
    pub command: ControlCommand,
    pub saturated: bool,
}

/// Gait, position loop, decoupler and feedback linearization at time `t`.
pub fn compute_control(
    state: &VehicleState,
    t: f64,
    cfg: &ExperimentConfig,
) -> Result<ControlOutput> {
    let params = &cfg.params;
    let rho = gait_rho(&cfg.gait, t);
    let alpha = tilt_angles_from_rho(rho)?;
    let reference = reference_sample(cfg.reference, t);

    let (ax, ay) = position_command(
        &reference.position,
        &reference.velocity,
        &reference.accel,
        state,
        &cfg.position_gains,
    );
    let attitude_ref = match cfg.decoupler {
        DecouplerKind::Conventional => {
            reference_attitude_conventional(ax, ay, reference.yaw, params)
        }
        DecouplerKind::Modified => {
            let forces = lateral_equilibrium_forces(&alpha, params)?;
            reference_attitude_modified(ax, ay, reference.yaw, &forces, params)
        }
    };

    let meas = measured_outputs(state, &alpha, params)?;
    let [z, dz, ddz, dddz] = reference.altitude;
    let out_ref = OutputReference {
        y: Vector4::new(attitude_ref.roll, attitude_ref.pitch, attitude_ref.yaw, z),
        dy: Vector4::new(0.0, 0.0, 0.0, dz),
        ddy: Vector4::new(0.0, 0.0, 0.0, ddz),
        dddy: Vector4::new(0.0, 0.0, 0.0, dddz),
    };
    let jerk = attitude_altitude_command(&out_ref, &meas, &cfg.attitude_gains);
    let d = decoupling_matrix(state, &alpha, params)?;
    let ma = drift_term(state, &alpha, params);
    let mut command = invert_control(&jerk, &d, &ma)?;
    let saturated = match cfg.saturation {
        Some(limit) => command.saturate(limit),
        None => false,
    };
    Ok(ControlOutput {
        rho,
        alpha,
        reference,
        attitude_ref,
        command,
        saturated,
    })
}

/// One classical RK4 step with tilt and rotor acceleration held, followed by
/// re-orthonormalization of the attitude.
pub fn rk4_step(
    state: &VehicleState,
    alpha: &TiltAngles,
    u: &Vector4<f64>,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    let f = |s: &VehicleState| state_derivative(s, alpha, u, params);
    let k1 = f(state);
    let k2 = f(&state.advanced(&k1, 0.5 * dt));
    let k3 = f(&state.advanced(&k2, 0.5 * dt));
    let k4 = f(&state.advanced(&k3, dt));
    let mut next = state.advanced(&StateDerivative::rk4_combine(&k1, &k2, &k3, &k4), dt);
    next.reorthonormalize();
    next
}

fn check_divergence(state: &VehicleState, t: f64) -> Result<()> {
    if !state.is_finite() {
        return Err(Error::Diverged {
            t,
            reason: "non-finite state".into(),
        });
    }
    if state.position.norm() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged {
            t,
            reason: format!("|P| = {:e} m", state.position.norm()),
        });
    }
    Ok(())
}

/// Advance the closed loop from `t` to `t + dt`.
pub fn step(
    state: &VehicleState,
    t: f64,
    cfg: &ExperimentConfig,
) -> Result<(VehicleState, ControlOutput)> {
    check_divergence(state, t)?;
    let ctl = compute_control(state, t, cfg)?;
    let next = hold_step(state, t, &ctl, cfg)?;
    Ok((next, ctl))
}

/// One integration step under a command computed earlier.
fn hold_step(
    state: &VehicleState,
    t: f64,
    ctl: &ControlOutput,
    cfg: &ExperimentConfig,
) -> Result<VehicleState> {
    let next = rk4_step(state, &ctl.alpha, &ctl.command.0, cfg.dt, &cfg.params);
    check_divergence(&next, t + cfg.dt)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub state: VehicleState,
    pub rho: f64,
    pub alpha: TiltAngles,
    /// Command applied over the step starting at `t` (zero on the last sample).
    pub command: Vector4<f64>,
    pub reference: Vector3<f64>,
    /// `state - reference` position error.
    pub error: Vector3<f64>,
    /// Roll, pitch, yaw of `state.attitude`.
    pub euler: Vector3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    /// Samples with `t >= end - window`.
    pub fn tail(&self, window: f64) -> &[Sample] {
        let cutoff = self.end_time() - window - 1e-9;
        let start = self.samples.partition_point(|s| s.t < cutoff);
        &self.samples[start..]
    }

    /// Largest `|R^T R - I|` entry over the run.
    pub fn max_orthogonality_error(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.state.orthogonality_error())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadyStateError {
    pub x: f64,
    pub y: f64,
    /// False when the error still fluctuates within the window.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupError {
    pub x: f64,
    pub y: f64,
    pub norm: f64,
}

fn check_window(traj: &Trajectory, window: f64) -> Result<()> {
    let span = traj.end_time() - traj.start_time();
    if traj.is_empty() || !(window > 0.0) || window > span + 1e-9 {
        return Err(Error::invalid(
            "window",
            format!("window {window} s must lie within the recorded span {span} s"),
        ));
    }
    Ok(())
}

/// Mean horizontal error over the final `window` seconds.
pub fn steady_state_error(traj: &Trajectory, window: f64) -> Result<SteadyStateError> {
    check_window(traj, window)?;
    let tail = traj.tail(window);
    let n = tail.len() as f64;
    let mean = |f: fn(&Sample) -> f64| tail.iter().map(f).sum::<f64>() / n;
    let mx = mean(|s| s.error.x);
    let my = mean(|s| s.error.y);
    let std = |f: fn(&Sample) -> f64, m: f64| {
        (tail.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / n).sqrt()
    };
    let sx = std(|s| s.error.x, mx);
    let sy = std(|s| s.error.y, my);
    let converged = sx <= 0.1 * mx.abs() + 1e-3 && sy <= 0.1 * my.abs() + 1e-3;
    Ok(SteadyStateError {
        x: mx,
        y: my,
        converged,
    })
}

/// Per-axis and Euclidean suprema of the horizontal error over the final
/// `window` seconds.
pub fn sup_dynamic_error(traj: &Trajectory, window: f64) -> Result<SupError> {
    check_window(traj, window)?;
    let mut sup = SupError {
        x: 0.0,
        y: 0.0,
        norm: 0.0,
    };
    for s in traj.tail(window) {
        sup.x = sup.x.max(s.error.x.abs());
        sup.y = sup.y.max(s.error.y.abs());
        sup.norm = sup.norm.max(s.error.x.hypot(s.error.y));
    }
    Ok(sup)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// `None` when the run diverged.
    pub steady_state: Option<SteadyStateError>,
    pub sup: Option<SupError>,
    pub diverged: bool,
    pub saturation_count: u64,
    /// Why the run stopped early, if it did.
    pub failure: Option<String>,
}

/// Result of a complete run. A run that diverges still returns its partial
/// trajectory, with `metrics.diverged` set.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: Metrics,
}

/// Initial condition: at the reference position, level, motionless, rotors at
/// `initial_rotor_speed` in their nominal directions.
pub fn initial_state(cfg: &ExperimentConfig) -> VehicleState {
    let r = reference_sample(cfg.reference, 0.0);
    VehicleState::at_rest(r.position, cfg.initial_rotor_speed)
}

fn make_sample(
    t: f64,
    state: &VehicleState,
    ctl: Option<&ControlOutput>,
    cfg: &ExperimentConfig,
) -> Sample {
    let reference = ctl.map_or_else(|| reference_sample(cfg.reference, t), |c| c.reference);
    let rho = ctl.map_or_else(|| gait_rho(&cfg.gait, t), |c| c.rho);
    let r: &Matrix3<f64> = &state.attitude;
    let euler = Vector3::new(
        r[(2, 1)].atan2(r[(2, 2)]),
        (-r[(2, 0)]).clamp(-1.0, 1.0).asin(),
        r[(1, 0)].atan2(r[(0, 0)]),
    );
    Sample {
        t,
        state: *state,
        rho,
        alpha: TiltAngles([-rho, -rho, rho, rho]),
        command: ctl.map_or_else(Vector4::zeros, |c| c.command.0),
        reference: reference.position,
        error: state.position - reference.position,
        euler,
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let steps = cfg.steps();
    let mut state = initial_state(cfg);
    let mut samples = Vec::with_capacity(steps / cfg.record_every + 2);
    let mut saturation_count = 0u64;
    let mut failure = None;
    let mut held: Option<ControlOutput> = None;

    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let advanced = if k % cfg.control_every == 0 {
            step(&state, t, cfg).map(|(next, ctl)| {
                saturation_count += u64::from(ctl.saturated);
                held = Some(ctl);
                next
            })
        } else {
            let ctl = held.as_ref().expect("controller ran on step 0");
            hold_step(&state, t, ctl, cfg)
        };
        match advanced {
            Ok(next) => {
                if k % cfg.record_every == 0 {
                    samples.push(make_sample(t, &state, held.as_ref(), cfg));
                }
                state = next;
            }
            Err(e) if e.is_runtime() => {
                samples.push(make_sample(t, &state, None, cfg));
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if failure.is_none() {
        samples.push(make_sample(steps as f64 * cfg.dt, &state, None, cfg));
    }
    let trajectory = Trajectory { samples };

    let metrics = match failure {
        Some(e) => Metrics {
            steady_state: None,
            sup: None,
            diverged: true,
            saturation_count,
            failure: Some(e.to_string()),
        },
        None => Metrics {
            steady_state: Some(steady_state_error(&trajectory, cfg.steady_state_window)?),
            sup: Some(sup_dynamic_error(&trajectory, cfg.sup_window)?),
            diverged: false,
            saturation_count,
            failure: None,
        },
    };
    Ok(RunOutput {
        trajectory,
        metrics,
    })
}

/// One of the ten fixed-tilt setpoint runs, with the expected steady-state
/// error `(e_x, e_y)` in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetpointCase {
    pub label: &'static str,
    pub decoupler: DecouplerKind,
    pub rho: f64,
    pub expected: (f64, f64),
}

impl SetpointCase {
    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig::new(
            ReferenceKind::Setpoint,
            GaitPlan::fixed(self.rho),
            self.decoupler,
        )
    }
}

pub const SETPOINT_CASES: [SetpointCase; 10] = {
    use DecouplerKind::{Conventional as C, Modified as M};
    const fn case(
        label: &'static str,
        decoupler: DecouplerKind,
        rho: f64,
        x: f64,
        y: f64,
    ) -> SetpointCase {
        SetpointCase {
            label,
            decoupler,
            rho,
            expected: (x, y),
        }
    }
    [
        case("A1", C, 0.65, 3.35, -3.56),
        case("A2", C, 0.325, 1.61, -1.64),
        case("A3", C, 0.0, 0.0, 0.0),
        case("A4", C, -0.325, -1.61, 1.64),
        case("A5", C, -0.65, -3.35, 3.56),
        case("B1", M, 0.65, -0.38, 0.17),
        case("B2", M, 0.325, -0.04, 0.02),
        case("B3", M, 0.0, 0.0, 0.0),
        case("B4", M, -0.325, 0.04, -0.02),
        case("B5", M, -0.65, 0.38, -0.17),
    ]
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoupler::hover_rotor_loading;

    fn setpoint(rho: f64) -> ExperimentConfig {
        ExperimentConfig::new(
            ReferenceKind::Setpoint,
            GaitPlan::fixed(rho),
            DecouplerKind::Modified,
        )
    }

    #[test]
    fn reference_examples() {
        let r = reference_sample(ReferenceKind::Setpoint, 12.3);
        assert_eq!(r, RefSample::default());
        let r = reference_sample(ReferenceKind::Rectilinear, 2.0);
        assert_eq!(r.position, Vector3::new(3.0, 3.0, 0.0));
        assert_eq!(r.velocity, Vector3::new(1.5, 1.5, 0.0));
        let r = reference_sample(ReferenceKind::Circular, 0.0);
        assert_eq!(r.position, Vector3::new(5.0, 0.0, 0.0));
        assert!((r.velocity - Vector3::new(0.0, 0.5, 0.0)).amax() < 1e-15);
        assert_eq!(r.accel, Vector3::zeros());
        assert_eq!(r.yaw, 0.0);
    }

    fn hover_state(cfg: &ExperimentConfig) -> VehicleState {
        let w = hover_rotor_loading(&TiltAngles::ZERO, &cfg.params).unwrap();
        let mut s = VehicleState::at_rest(Vector3::zeros(), 1.0);
        s.rotor_speeds = w.to_speeds();
        s
    }

    #[test]
    fn hover_is_a_fixed_point() {
        let cfg = setpoint(0.0);
        let mut s = hover_state(&cfg);
        for k in 0..10_000 {
            let (next, _) = step(&s, k as f64 * cfg.dt, &cfg).unwrap();
            assert!((next.position - s.position).amax() < 1e-9);
            assert!((next.velocity - s.velocity).amax() < 1e-9);
            assert!((next.attitude - s.attitude).amax() < 1e-9);
            assert!((next.body_rates - s.body_rates).amax() < 1e-9);
            assert!((next.rotor_speeds - s.rotor_speeds).amax() < 1e-9);
            s = next;
        }
    }

    #[test]
    fn free_fall_is_exact() {
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0);
        for _ in 0..1000 {
            s = rk4_step(&s, &TiltAngles::ZERO, &Vector4::zeros(), 1e-3, &p);
        }
        assert!((s.position.z - (10.0 - 0.5 * p.gravity)).abs() < 1e-6);
    }

    #[test]
    fn non_finite_state_diverges() {
        let cfg = setpoint(0.0);
        let mut s = hover_state(&cfg);
        s.velocity.x = f64::NAN;
        assert!(matches!(step(&s, 0.0, &cfg), Err(Error::Diverged { .. })));
        let mut s = hover_state(&cfg);
        s.position.x = 2e6;
        assert!(matches!(step(&s, 0.0, &cfg), Err(Error::Diverged { .. })));
    }

    fn synthetic(f: impl Fn(f64) -> (f64, f64), duration: f64, dt: f64) -> Trajectory {
        let n = (duration / dt).round() as usize;
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                let (ex, ey) = f(t);
                Sample {
                    t,
                    state: VehicleState::at_rest(Vector3::zeros(), 300.0),
                    rho: 0.0,
                    alpha: TiltAngles::ZERO,
                    command: Vector4::zeros(),
                    reference: Vector3::zeros(),
                    error: Vector3::new(ex, ey, 0.0),
                    euler: Vector3::zeros(),
                }
            })
            .collect();
        Trajectory { samples }
    }

    #[test]
    fn steady_state_examples() {
        let tr = synthetic(|_| (0.4, -0.2), 20.0, 0.01);
        let ss = steady_state_error(&tr, 10.0).unwrap();
        assert!((ss.x - 0.4).abs() < 1e-12 && (ss.y + 0.2).abs() < 1e-12 && ss.converged);

        let tr = synthetic(|t| ((-t).exp(), -(-t).exp()), 30.0, 0.01);
        let ss = steady_state_error(&tr, 10.0).unwrap();
        assert!(ss.x.abs() < 1e-4 && ss.y.abs() < 1e-4);

        // two full periods of a 2 s sinusoid, sampled without the endpoint bias
        let tr = synthetic(|t| ((std::f64::consts::PI * t).sin(), 0.0), 4.0, 0.001);
        let mut tail = tr.clone();
        tail.samples.pop();
        let ss = steady_state_error(&tail, 3.999).unwrap();
        assert!(ss.x.abs() < 1e-9, "{}", ss.x);
        assert!(!ss.converged);

        assert!(steady_state_error(&tr, 100.0).is_err());
    }

    #[test]
    fn sup_examples() {
        let tr = synthetic(|_| (-0.3, 0.0), 10.0, 0.01);
        let s = sup_dynamic_error(&tr, 5.0).unwrap();
        assert!((s.x - 0.3).abs() < 1e-15 && s.y == 0.0);

        let tr = synthetic(
            |t| (0.7 * (2.0 * std::f64::consts::PI * t / 0.8).sin(), 0.0),
            10.0,
            0.001,
        );
        let s = sup_dynamic_error(&tr, 2.0).unwrap();
        assert!((s.x - 0.7).abs() < 1e-6);

        let tr = synthetic(|t| (0.1 * t, 0.0), 10.0, 0.01);
        let s = sup_dynamic_error(&tr, 3.0).unwrap();
        assert!((s.x - 1.0).abs() < 1e-12);
        assert!(s.norm >= s.x.max(s.y));
    }

    #[test]
    fn validation_rejects_misaligned_switch() {
        let mut cfg = ExperimentConfig::new(
            ReferenceKind::Rectilinear,
            GaitPlan::trot_instant(0.0015),
            DecouplerKind::Modified,
        );
        cfg.sup_window = 10.0;
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("gait.period"), "{err}");
    }

    #[test]
    fn held_control_repeats_the_command() {
        let mut cfg = ExperimentConfig::new(
            ReferenceKind::Rectilinear,
            GaitPlan::trot_instant(0.5),
            DecouplerKind::Modified,
        );
        cfg.duration = 0.2;
        cfg.transient = 0.0;
        cfg.steady_state_window = 0.1;
        cfg.sup_window = 0.1;
        cfg.control_every = 5;
        let run = run_experiment(&cfg).unwrap();
        let s = &run.trajectory.samples;
        assert_eq!(s[0].command, s[4].command);
        assert_ne!(s[4].command, s[5].command);
        assert_eq!(s[5].command, s[9].command);

        cfg.control_every = 0;
        assert!(cfg.validate().is_err());
        cfg.control_every = 3;
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .contains("gait.period"));
    }
}

#[cfg(test)]
mod closed_loop_tests {
    use super::*;
    use crate::io::{config_echo, parse_config, write_trajectory_csv};

    fn short(reference: ReferenceKind, gait: GaitPlan, dec: DecouplerKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(reference, gait, dec);
        cfg.duration = 8.0;
        cfg.transient = 2.0;
        cfg.steady_state_window = 2.0;
        cfg.sup_window = 4.0;
        cfg
    }

    #[test]
    fn identical_configs_give_bit_identical_runs() {
        let cfg = short(
            ReferenceKind::Circular,
            GaitPlan::trot_instant(0.5),
            DecouplerKind::Modified,
        );
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&parse_config(&config_echo(&cfg)).unwrap()).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.metrics, b.metrics);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        write_trajectory_csv(&a.trajectory, &mut ca).unwrap();
        write_trajectory_csv(&b.trajectory, &mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn trajectory_time_grid_is_uniform() {
        let mut cfg = short(
            ReferenceKind::Rectilinear,
            GaitPlan::trot_continuous(1.0),
            DecouplerKind::Conventional,
        );
        cfg.record_every = 7;
        let run = run_experiment(&cfg).unwrap();
        let s = &run.trajectory.samples;
        for w in s[..s.len() - 1].windows(2) {
            assert!((w[1].t - w[0].t - 7.0 * cfg.dt).abs() < 1e-12);
        }
        assert!((run.trajectory.end_time() - cfg.duration).abs() < 1e-9);
        assert!(s
            .iter()
            .all(|x| x.state.is_finite() && x.state.has_nominal_rotor_signs()));
    }

    #[test]
    fn sup_norm_dominates_axes() {
        for dec in [DecouplerKind::Conventional, DecouplerKind::Modified] {
            let cfg = short(ReferenceKind::Rectilinear, GaitPlan::trot_instant(1.0), dec);
            let sup = run_experiment(&cfg).unwrap().metrics.sup.unwrap();
            assert!(sup.norm >= sup.x.max(sup.y));
            assert!(sup.norm <= sup.x.hypot(sup.y) + 1e-15);
        }
    }

    #[test]
    fn setpoint_errors_are_odd_in_tilt() {
        for dec in [DecouplerKind::Conventional, DecouplerKind::Modified] {
            let mut e = Vec::new();
            for rho in [0.3, -0.3] {
                let mut cfg =
                    ExperimentConfig::new(ReferenceKind::Setpoint, GaitPlan::fixed(rho), dec);
                cfg.duration = 30.0;
                e.push(run_experiment(&cfg).unwrap().metrics.steady_state.unwrap());
            }
            assert!((e[0].x + e[1].x).abs() < 1e-2 && (e[0].y + e[1].y).abs() < 1e-2);
            assert!(e[0].x.abs() > 1e-3);
        }
    }

    #[test]
    fn level_setpoint_only_moves_vertically() {
        // Rotors start below hover speed, so the vehicle sags and climbs back.
        let mut cfg = short(
            ReferenceKind::Setpoint,
            GaitPlan::fixed(0.0),
            DecouplerKind::Conventional,
        );
        cfg.duration = 40.0;
        let run = run_experiment(&cfg).unwrap();
        let s = &run.trajectory.samples;
        assert!(s
            .iter()
            .all(|x| x.state.position.x.abs() < 1e-12 && x.state.position.y.abs() < 1e-12));
        let sag = s.iter().map(|x| x.state.position.z).fold(0.0, f64::min);
        let last = s.last().unwrap().state.position.z;
        assert!(
            sag < -0.01 && last.abs() < 0.05 * sag.abs(),
            "sag {sag}, final {last}"
        );
        assert_eq!(run.metrics.saturation_count, 0);
    }

    #[test]
    fn tight_saturation_is_counted() {
        let mut cfg = short(
            ReferenceKind::Rectilinear,
            GaitPlan::trot_instant(1.0),
            DecouplerKind::Modified,
        );
        cfg.saturation = Some(50.0);
        let run = run_experiment(&cfg).unwrap();
        assert!(run.metrics.saturation_count > 0);
        assert!(run
            .trajectory
            .samples
            .iter()
            .all(|s| s.command.amax() <= 50.0));
    }
}
