//! Feedback-linearization controller.
//!
//! Outputs are `y = (roll, pitch, yaw, Z)`. Their third derivatives are affine
//! in the rotor accelerations `U`, `y''' = D U + Ma`, so choosing
//! `U = D^-1 (v - Ma)` leaves four decoupled triple integrators driven by the
//! third-order PD laws `v`.

use nalgebra::{Matrix4, RowVector4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve4;
use crate::model::{
    euler_from_rotation, force_map, hat, torque_map, TiltAngles, VehicleParams, VehicleState,
};

/// Rotor speeds at or below this magnitude (rad/s) make `D` degenerate.
pub const MIN_ROTOR_SPEED: f64 = 1.0;

/// Outputs and their first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputVector {
    pub y: Vector4<f64>,
    pub dy: Vector4<f64>,
    pub ddy: Vector4<f64>,
}

/// Output references up to third order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputReference {
    pub y: Vector4<f64>,
    pub dy: Vector4<f64>,
    pub ddy: Vector4<f64>,
    pub dddy: Vector4<f64>,
}

/// How the three attitude gain matrices map onto the error derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainOrdering {
    /// `K_P1` on the second-derivative error, `K_P2` on the rate error,
    /// `K_P3` on the angle error.
    Literal,
    /// `K_P3`, `K_P2`, `K_P1` on the second-derivative, rate and angle errors.
    Swapped,
}

/// Gains of the third-order attitude and altitude laws.
///
/// Each array holds the (roll, pitch, yaw) diagonal; `k_pz` holds the altitude
/// gains `(K_PZ1, K_PZ2, K_PZ3)`, which always act on the
/// (second-derivative, rate, position) errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttitudeGains {
    pub k_p1: [f64; 3],
    pub k_p2: [f64; 3],
    pub k_p3: [f64; 3],
    pub k_pz: [f64; 3],
    pub ordering: GainOrdering,
}

impl AttitudeGains {
    /// Nominal gains read in literal ordering (Routh-unstable on roll and pitch).
    pub fn nominal_literal() -> Self {
        Self {
            k_p1: [1.0, 1.0, 1.0],
            k_p2: [10.0, 10.0, 1.0],
            k_p3: [50.0, 50.0, 1.0],
            k_pz: [10.0, 5.0, 10.0],
            ordering: GainOrdering::Literal,
        }
    }

    /// Nominal gains with the attitude ordering reversed, so roll and
    /// pitch see `(50, 10, 1)`, plus a yaw channel of `(3, 3, 1)`.
    pub fn nominal_swapped() -> Self {
        Self {
            k_p1: [1.0, 1.0, 1.0],
            k_p2: [10.0, 10.0, 3.0],
            k_p3: [50.0, 50.0, 3.0],
            k_pz: [10.0, 5.0, 10.0],
            ordering: GainOrdering::Swapped,
        }
    }

    /// Default gains: roll and pitch have a triple pole at -20 rad/s, yaw at
    /// -10 rad/s, altitude keeps the nominal gains.
    pub fn fast() -> Self {
        Self {
            k_p1: [60.0, 60.0, 30.0],
            k_p2: [1200.0, 1200.0, 300.0],
            k_p3: [8000.0, 8000.0, 1000.0],
            k_pz: [10.0, 5.0, 10.0],
            ordering: GainOrdering::Literal,
        }
    }

    /// Effective `(k_acc, k_rate, k_pos)` for channel 0..=3 (3 = altitude).
    pub fn channel(&self, ch: usize) -> (f64, f64, f64) {
        if ch == 3 {
            return (self.k_pz[0], self.k_pz[1], self.k_pz[2]);
        }
        match self.ordering {
            GainOrdering::Literal => (self.k_p1[ch], self.k_p2[ch], self.k_p3[ch]),
            GainOrdering::Swapped => (self.k_p3[ch], self.k_p2[ch], self.k_p1[ch]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let groups = [
            ("k_p1", &self.k_p1),
            ("k_p2", &self.k_p2),
            ("k_p3", &self.k_p3),
            ("k_pz", &self.k_pz),
        ];
        for (name, g) in groups {
            if let Some(v) = g.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::invalid(
                    format!("attitude_gains.{name}"),
                    format!("all gains must be > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

impl Default for AttitudeGains {
    fn default() -> Self {
        Self::fast()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionGains {
    /// Velocity gains.
    pub k_x1: f64,
    pub k_y1: f64,
    /// Position gains.
    pub k_x2: f64,
    pub k_y2: f64,
}

impl Default for PositionGains {
    fn default() -> Self {
        Self {
            k_x1: 1.0,
            k_y1: 1.0,
            k_x2: 1.0,
            k_y2: 1.0,
        }
    }
}

impl PositionGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_x1", self.k_x1),
            ("k_y1", self.k_y1),
            ("k_x2", self.k_x2),
            ("k_y2", self.k_y2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    format!("position_gains.{name}"),
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// Rotor angular accelerations (rad/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlCommand(pub Vector4<f64>);

impl ControlCommand {
    /// Clamp every component to `[-limit, limit]`; returns whether any
    /// component was clipped.
    pub fn saturate(&mut self, limit: f64) -> bool {
        let mut hit = false;
        for u in self.0.iter_mut() {
            if u.abs() > limit {
                *u = u.signum() * limit;
                hit = true;
            }
        }
        hit
    }
}

/// Outputs under the small-angle identification: body rates stand in for
/// Euler rates, angular acceleration for their second derivative.
pub fn measured_outputs(
    state: &VehicleState,
    alpha: &TiltAngles,
    params: &VehicleParams,
) -> Result<OutputVector> {
    let (roll, pitch, yaw) = euler_from_rotation(&state.attitude)?;
    let w = state.loading().0;
    let ang_acc = (torque_map(alpha, params) * w).component_mul(&params.inertia_inv());
    let thrust_world = state.attitude * force_map(alpha, params) * w;
    let z_acc = thrust_world.z / params.mass - params.gravity;
    let om = state.body_rates;
    Ok(OutputVector {
        y: Vector4::new(roll, pitch, yaw, state.position.z),
        dy: Vector4::new(om.x, om.y, om.z, state.velocity.z),
        ddy: Vector4::new(ang_acc.x, ang_acc.y, ang_acc.z, z_acc),
    })
}

/// Decoupling matrix `D` with `y''' = D U + Ma`.
pub fn decoupling_matrix(
    state: &VehicleState,
    alpha: &TiltAngles,
    params: &VehicleParams,
) -> Result<Matrix4<f64>> {
    if let Some((index, &speed)) = state
        .rotor_speeds
        .iter()
        .enumerate()
        .find(|(_, s)| s.abs() <= MIN_ROTOR_SPEED)
    {
        return Err(Error::NearZeroRotorSpeed { index, speed });
    }
    let tau = torque_map(alpha, params);
    let inv_i = params.inertia_inv();
    let vertical = (state.attitude * force_map(alpha, params)).row(2) / params.mass;
    let mut d = Matrix4::zeros();
    for r in 0..3 {
        d.set_row(r, &(tau.row(r) * inv_i[r]));
    }
    d.set_row(3, &RowVector4::from(vertical));
    let scale = state.rotor_speeds.map(|s| 2.0 * s.abs());
    for c in 0..4 {
        d.column_mut(c).scale_mut(scale[c]);
    }
    Ok(d)
}

/// Input-independent part of the output jerk. Only the altitude row is
/// non-zero: rotating the thrust vector changes its vertical component.
pub fn drift_term(
    state: &VehicleState,
    alpha: &TiltAngles,
    params: &VehicleParams,
) -> Vector4<f64> {
    let w = state.loading().0;
    let rotated: Vector3<f64> =
        state.attitude * hat(&state.body_rates) * force_map(alpha, params) * w;
    Vector4::new(0.0, 0.0, 0.0, rotated.z / params.mass)
}

/// Desired output jerk from the third-order PD laws.
pub fn attitude_altitude_command(
    reference: &OutputReference,
    meas: &OutputVector,
    gains: &AttitudeGains,
) -> Vector4<f64> {
    Vector4::from_fn(|ch, _| {
        let (ka, kv, kp) = gains.channel(ch);
        reference.dddy[ch]
            + ka * (reference.ddy[ch] - meas.ddy[ch])
            + kv * (reference.dy[ch] - meas.dy[ch])
            + kp * (reference.y[ch] - meas.y[ch])
    })
}

/// Desired horizontal acceleration `(X'', Y'')` from the position PD law.
pub fn position_command(
    pos_ref: &Vector3<f64>,
    vel_ref: &Vector3<f64>,
    acc_ref: &Vector3<f64>,
    state: &VehicleState,
    gains: &PositionGains,
) -> (f64, f64) {
    let p = &state.position;
    let v = &state.velocity;
    (
        acc_ref.x + gains.k_x1 * (vel_ref.x - v.x) + gains.k_x2 * (pos_ref.x - p.x),
        acc_ref.y + gains.k_y1 * (vel_ref.y - v.y) + gains.k_y2 * (pos_ref.y - p.y),
    )
}

/// `U = D^-1 (v - Ma)`.
pub fn invert_control(
    jerk_des: &Vector4<f64>,
    decoupling: &Matrix4<f64>,
    drift: &Vector4<f64>,
) -> Result<ControlCommand> {
    solve4(decoupling, &(jerk_des - drift))
        .map(ControlCommand)
        .map_err(|cond| Error::SingularDecoupling { cond })
}

/// Routh-Hurwitz verdict for one channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelStability {
    pub channel: &'static str,
    /// Characteristic-polynomial coefficients below the leading one.
    pub coeffs: Vec<f64>,
    /// `k1 k2 - k3` for third-order channels, `min(k1, k2)` for position.
    pub margin: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub channels: Vec<ChannelStability>,
}

impl StabilityReport {
    pub fn all_stable(&self) -> bool {
        self.channels.iter().all(|c| c.stable)
    }

    pub fn channel(&self, name: &str) -> Option<&ChannelStability> {
        self.channels.iter().find(|c| c.channel == name)
    }
}

/// Routh test for `s^3 + k1 s^2 + k2 s + k3`.
pub fn third_order_stability(k1: f64, k2: f64, k3: f64) -> (bool, f64) {
    let margin = k1 * k2 - k3;
    (k1 > 0.0 && k2 > 0.0 && k3 > 0.0 && margin > 0.0, margin)
}

pub fn check_gain_stability(att: &AttitudeGains, pos: &PositionGains) -> StabilityReport {
    let mut channels = Vec::with_capacity(6);
    for (ch, name) in ["roll", "pitch", "yaw", "altitude"].into_iter().enumerate() {
        let (k1, k2, k3) = att.channel(ch);
        let (stable, margin) = third_order_stability(k1, k2, k3);
        channels.push(ChannelStability {
            channel: name,
            coeffs: vec![k1, k2, k3],
            margin,
            stable,
        });
    }
    for (name, kv, kp) in [("x", pos.k_x1, pos.k_x2), ("y", pos.k_y1, pos.k_y2)] {
        channels.push(ChannelStability {
            channel: name,
            coeffs: vec![kv, kp],
            margin: kv.min(kp),
            stable: kv > 0.0 && kp > 0.0,
        });
    }
    StabilityReport { channels }
}
