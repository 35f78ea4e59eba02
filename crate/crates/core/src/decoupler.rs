//! Attitude-position decouplers.
//!
//! The position loop asks for horizontal accelerations; the decoupler turns
//! them into roll/pitch references. For a tilted airframe the level hover
//! produces a lateral force, which the modified decoupler cancels by offsetting
//! the attitude reference.

use nalgebra::{Matrix4, RowVector4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve4;
use crate::model::{force_map, torque_map, RotorLoading, TiltAngles, VehicleParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecouplerKind {
    Conventional,
    Modified,
}

/// Lateral thrust components (N) at the level hover loading.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LateralForces {
    pub fx: f64,
    pub fy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AttitudeReference {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// The 4x4 map from loading `w` to (angular acceleration, vertical
/// acceleration at level attitude).
pub fn hover_system(alpha: &TiltAngles, params: &VehicleParams) -> Matrix4<f64> {
    let tau = torque_map(alpha, params);
    let f = force_map(alpha, params);
    let inv_i = params.inertia_inv();
    let mut a = Matrix4::zeros();
    for r in 0..3 {
        a.set_row(r, &(tau.row(r) * inv_i[r]));
    }
    a.set_row(3, &RowVector4::from(f.row(2) / params.mass));
    a
}

/// Loading that holds a level attitude with zero angular acceleration and
/// zero vertical acceleration.
pub fn hover_rotor_loading(alpha: &TiltAngles, params: &VehicleParams) -> Result<RotorLoading> {
    let a = hover_system(alpha, params);
    let rhs = Vector4::new(0.0, 0.0, 0.0, params.gravity);
    solve4(&a, &rhs)
        .map(RotorLoading)
        .map_err(|cond| Error::SingularAllocation { cond })
}

pub fn lateral_equilibrium_forces(
    alpha: &TiltAngles,
    params: &VehicleParams,
) -> Result<LateralForces> {
    let w = hover_rotor_loading(alpha, params)?.0;
    let f = force_map(alpha, params);
    Ok(LateralForces {
        fx: f.row(0).dot(&w.transpose()),
        fy: f.row(1).dot(&w.transpose()),
    })
}

/// Small-angle quadrotor decoupler.
pub fn reference_attitude_conventional(
    accel_x: f64,
    accel_y: f64,
    yaw_ref: f64,
    params: &VehicleParams,
) -> AttitudeReference {
    let (s, c) = yaw_ref.sin_cos();
    let g = params.gravity;
    AttitudeReference {
        roll: (accel_x * s - accel_y * c) / g,
        pitch: (accel_x * c + accel_y * s) / g,
        yaw: yaw_ref,
    }
}

/// Conventional decoupler plus the lateral-force offsets
/// `(F_Y / mg, -F_X / mg)`.
pub fn reference_attitude_modified(
    accel_x: f64,
    accel_y: f64,
    yaw_ref: f64,
    forces: &LateralForces,
    params: &VehicleParams,
) -> AttitudeReference {
    let mg = params.mass * params.gravity;
    let base = reference_attitude_conventional(accel_x, accel_y, yaw_ref, params);
    AttitudeReference {
        roll: base.roll + forces.fy / mg,
        pitch: base.pitch - forces.fx / mg,
        yaw: yaw_ref,
    }
}
