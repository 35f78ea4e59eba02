//! Rigid-body model of the tilt-rotor.
//!
//! Frames: world is z-up, `attitude` maps body to world. Rotors 1 and 3 spin
//! with negative signed speed, rotors 2 and 4 with positive signed speed.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold on |R31| beyond which roll and yaw are no longer separable.
pub const GIMBAL_LOCK_THRESHOLD: f64 = 1.0 - 1e-9;

/// Physical constants of the airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Total mass (kg).
    pub mass: f64,
    /// Arm length from centre to rotor hub (m).
    pub arm_length: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Principal moments of inertia (kg m^2).
    pub inertia: [f64; 3],
    /// Thrust coefficient K_f (N s^2 / rad^2).
    pub thrust_coeff: f64,
    /// Drag-moment coefficient K_m (N m s^2 / rad^2).
    pub drag_coeff: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.429,
            arm_length: 0.1785,
            gravity: 9.8,
            inertia: [2.24e-3, 2.99e-3, 4.80e-3],
            thrust_coeff: 8.048e-6,
            drag_coeff: 2.423e-7,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("params.mass", self.mass),
            ("params.arm_length", self.arm_length),
            ("params.gravity", self.gravity),
            ("params.inertia[0]", self.inertia[0]),
            ("params.inertia[1]", self.inertia[1]),
            ("params.inertia[2]", self.inertia[2]),
            ("params.thrust_coeff", self.thrust_coeff),
            ("params.drag_coeff", self.drag_coeff),
        ];
        for (key, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    key,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    pub fn inertia_inv(&self) -> Vector3<f64> {
        Vector3::new(
            1.0 / self.inertia[0],
            1.0 / self.inertia[1],
            1.0 / self.inertia[2],
        )
    }

    /// Per-rotor |w| at level hover with all tilts zero: m g / (4 K_f).
    pub fn hover_loading_magnitude(&self) -> f64 {
        self.mass * self.gravity / (4.0 * self.thrust_coeff)
    }
}

/// Tilt angle of each arm (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TiltAngles(pub [f64; 4]);

impl TiltAngles {
    pub const ZERO: TiltAngles = TiltAngles([0.0; 4]);

    pub fn is_valid(&self) -> bool {
        self.0
            .iter()
            .all(|a| a.is_finite() && a.abs() <= std::f64::consts::FRAC_PI_2)
    }

    fn sin_cos(&self) -> ([f64; 4], [f64; 4]) {
        let mut s = [0.0; 4];
        let mut c = [0.0; 4];
        for (i, a) in self.0.iter().enumerate() {
            (s[i], c[i]) = a.sin_cos();
        }
        (s, c)
    }
}

impl std::ops::Neg for TiltAngles {
    type Output = TiltAngles;
    fn neg(self) -> TiltAngles {
        TiltAngles(self.0.map(|a| -a))
    }
}

/// Signed squared rotor speeds w_i = s_i |s_i| (rad^2/s^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorLoading(pub Vector4<f64>);

impl RotorLoading {
    pub fn from_speeds(speeds: &Vector4<f64>) -> Self {
        RotorLoading(speeds.map(|s| s * s.abs()))
    }

    /// Signed rotor speeds that produce this loading.
    pub fn to_speeds(&self) -> Vector4<f64> {
        self.0.map(|w| w.signum() * w.abs().sqrt())
    }
}

/// Expected sign of each rotor speed.
pub const ROTOR_SIGNS: [f64; 4] = [-1.0, 1.0, -1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// World-frame position (m).
    pub position: Vector3<f64>,
    /// World-frame velocity (m/s).
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation.
    pub attitude: Matrix3<f64>,
    /// Body angular rate (p, q, r) in rad/s.
    pub body_rates: Vector3<f64>,
    /// Signed rotor speeds (rad/s).
    pub rotor_speeds: Vector4<f64>,
}

impl VehicleState {
    /// Level, motionless state at `position` with every rotor at `speed` rad/s
    /// in its nominal direction.
    pub fn at_rest(position: Vector3<f64>, speed: f64) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            attitude: Matrix3::identity(),
            body_rates: Vector3::zeros(),
            rotor_speeds: Vector4::from(ROTOR_SIGNS) * speed,
        }
    }

    pub fn loading(&self) -> RotorLoading {
        RotorLoading::from_speeds(&self.rotor_speeds)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.iter().all(|v| v.is_finite())
            && self.body_rates.iter().all(|v| v.is_finite())
            && self.rotor_speeds.iter().all(|v| v.is_finite())
    }

    /// True when every rotor spins in its nominal direction.
    pub fn has_nominal_rotor_signs(&self) -> bool {
        self.rotor_speeds
            .iter()
            .zip(ROTOR_SIGNS)
            .all(|(s, sign)| s * sign > 0.0)
    }

    /// Largest entry of |R^T R - I|.
    pub fn orthogonality_error(&self) -> f64 {
        (self.attitude.transpose() * self.attitude - Matrix3::identity()).amax()
    }

    /// `self + h * d`, componentwise.
    pub fn advanced(&self, d: &StateDerivative, h: f64) -> Self {
        Self {
            position: self.position + d.position * h,
            velocity: self.velocity + d.velocity * h,
            attitude: self.attitude + d.attitude * h,
            body_rates: self.body_rates + d.body_rates * h,
            rotor_speeds: self.rotor_speeds + d.rotor_speeds * h,
        }
    }

    /// Project the attitude back onto SO(3) (closest rotation in Frobenius norm).
    pub fn reorthonormalize(&mut self) {
        let svd = self.attitude.svd(true, true);
        if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
            let mut r = u * v_t;
            if r.determinant() < 0.0 {
                let mut u = u;
                u.column_mut(2).neg_mut();
                r = u * v_t;
            }
            self.attitude = r;
        }
    }
}

/// Time derivative of [`VehicleState`], field for field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Matrix3<f64>,
    pub body_rates: Vector3<f64>,
    pub rotor_speeds: Vector4<f64>,
}

impl StateDerivative {
    /// Classical RK4 weighting (k1 + 2 k2 + 2 k3 + k4) / 6.
    pub fn rk4_combine(k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
        let w = |a, b, c, d| (a + (b + c) * 2.0 + d) / 6.0;
        Self {
            position: w(k1.position, k2.position, k3.position, k4.position),
            velocity: w(k1.velocity, k2.velocity, k3.velocity, k4.velocity),
            attitude: (k1.attitude + (k2.attitude + k3.attitude) * 2.0 + k4.attitude) / 6.0,
            body_rates: w(k1.body_rates, k2.body_rates, k3.body_rates, k4.body_rates),
            rotor_speeds: (k1.rotor_speeds
                + (k2.rotor_speeds + k3.rotor_speeds) * 2.0
                + k4.rotor_speeds)
                / 6.0,
        }
    }
}

/// Thrust allocation F(alpha): body-frame force per unit signed squared speed.
pub fn force_map(alpha: &TiltAngles, params: &VehicleParams) -> Matrix3x4<f64> {
    let (s, c) = alpha.sin_cos();
    let kf = params.thrust_coeff;
    Matrix3x4::new(
        0.0,
        kf * s[1],
        0.0,
        -kf * s[3],
        kf * s[0],
        0.0,
        -kf * s[2],
        0.0,
        -kf * c[0],
        kf * c[1],
        -kf * c[2],
        kf * c[3],
    )
}

/// Torque allocation tau(alpha): body torque per unit signed squared speed.
pub fn torque_map(alpha: &TiltAngles, params: &VehicleParams) -> Matrix3x4<f64> {
    let (s, c) = alpha.sin_cos();
    let lk = params.arm_length * params.thrust_coeff;
    let km = params.drag_coeff;
    Matrix3x4::new(
        0.0,
        lk * c[1] - km * s[1],
        0.0,
        -lk * c[3] + km * s[3],
        lk * c[0] + km * s[0],
        0.0,
        -lk * c[2] - km * s[2],
        0.0,
        lk * s[0] - km * c[0],
        -lk * s[1] - km * c[1],
        lk * s[2] - km * c[2],
        -lk * s[3] - km * c[3],
    )
}

/// Body-to-world rotation for Z-Y-X Euler angles (roll, pitch, yaw).
pub fn rotation_from_euler(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sp, cp) = roll.sin_cos();
    let (st, ct) = pitch.sin_cos();
    let (ss, cs) = yaw.sin_cos();
    Matrix3::new(
        ct * cs,
        sp * st * cs - cp * ss,
        cp * st * cs + sp * ss,
        ct * ss,
        sp * st * ss + cp * cs,
        cp * st * ss - sp * cs,
        -st,
        sp * ct,
        cp * ct,
    )
}

/// Inverse of [`rotation_from_euler`] with pitch in (-pi/2, pi/2).
pub fn euler_from_rotation(r: &Matrix3<f64>) -> Result<(f64, f64, f64)> {
    let r31 = r[(2, 0)];
    if !(r31.abs() < GIMBAL_LOCK_THRESHOLD) {
        return Err(Error::GimbalLock { r31 });
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let pitch = (-r31).asin();
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Ok((roll, pitch, yaw))
}

/// Skew-symmetric matrix with `hat(v) * u == v x u`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Plant dynamics with tilt `alpha` held and rotor accelerations `rotor_accel`.
pub fn state_derivative(
    state: &VehicleState,
    alpha: &TiltAngles,
    rotor_accel: &Vector4<f64>,
    params: &VehicleParams,
) -> StateDerivative {
    let w = state.loading().0;
    let thrust_body = force_map(alpha, params) * w;
    let accel = state.attitude * thrust_body / params.mass - Vector3::new(0.0, 0.0, params.gravity);
    let torque = torque_map(alpha, params) * w;
    StateDerivative {
        position: state.velocity,
        velocity: accel,
        attitude: state.attitude * hat(&state.body_rates),
        body_rates: torque.component_mul(&params.inertia_inv()),
        rotor_speeds: *rotor_accel,
    }
}
