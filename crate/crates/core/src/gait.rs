//! Tilt schedules and the decoupling-matrix invertibility margin.
//!
//! Every gait here is one scalar signal `rho(t)` mapped onto the four arms
//! as `(-rho, -rho, rho, rho)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TiltAngles, VehicleParams};

/// Largest tilt magnitude any gait may command (rad).
pub const RHO_LIMIT: f64 = 0.65;

const PERIOD_SNAP: f64 = 1e-12;

fn default_rho_max() -> f64 {
    RHO_LIMIT
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaitPlan {
    /// Constant tilt for the whole flight.
    Fixed { rho: f64 },
    /// Square wave: `+rho_max` on `[0, T/2]`, `-rho_max` on `(T/2, T)`.
    TrotInstant {
        period: f64,
        #[serde(default = "default_rho_max")]
        rho_max: f64,
    },
    /// Triangle wave from `+rho_max` down to `-rho_max` and back each period.
    TrotContinuous {
        period: f64,
        #[serde(default = "default_rho_max")]
        rho_max: f64,
    },
}

impl GaitPlan {
    pub fn fixed(rho: f64) -> Self {
        GaitPlan::Fixed { rho }
    }

    pub fn trot_instant(period: f64) -> Self {
        GaitPlan::TrotInstant {
            period,
            rho_max: RHO_LIMIT,
        }
    }

    pub fn trot_continuous(period: f64) -> Self {
        GaitPlan::TrotContinuous {
            period,
            rho_max: RHO_LIMIT,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            GaitPlan::Fixed { .. } => None,
            GaitPlan::TrotInstant { period, .. } | GaitPlan::TrotContinuous { period, .. } => {
                Some(period)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GaitPlan::Fixed { rho } => {
                if !(rho.is_finite() && rho.abs() <= RHO_LIMIT) {
                    return Err(Error::invalid(
                        "gait.rho",
                        format!("|rho| <= {RHO_LIMIT} required, got {rho}"),
                    ));
                }
            }
            GaitPlan::TrotInstant { period, rho_max }
            | GaitPlan::TrotContinuous { period, rho_max } => {
                if !(period.is_finite() && period > 0.0) {
                    return Err(Error::invalid(
                        "gait.period",
                        format!("T > 0 required, got {period}"),
                    ));
                }
                if !(rho_max > 0.0 && rho_max <= RHO_LIMIT) {
                    return Err(Error::invalid(
                        "gait.rho_max",
                        format!("0 < rho_max <= {RHO_LIMIT} required, got {rho_max}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Phase `t - nT` with `n = floor(t / T)`, snapping `t / T` onto an integer
/// when it lies within 1e-12 of one.
fn phase(t: f64, period: f64) -> f64 {
    let q = t / period;
    let nearest = q.round();
    let n = if (q - nearest).abs() < PERIOD_SNAP {
        nearest
    } else {
        q.floor()
    };
    (t - n * period).max(0.0)
}

/// Gait signal `rho` at time `t >= 0`.
pub fn gait_rho(plan: &GaitPlan, t: f64) -> f64 {
    match *plan {
        GaitPlan::Fixed { rho } => rho,
        GaitPlan::TrotInstant { period, rho_max } => {
            let tau = phase(t, period);
            if tau <= 0.5 * period * (1.0 + PERIOD_SNAP) {
                rho_max
            } else {
                -rho_max
            }
        }
        GaitPlan::TrotContinuous { period, rho_max } => {
            let tau = phase(t, period);
            let slope = 2.0 * rho_max * 2.0 / period;
            if tau <= 0.5 * period {
                rho_max - slope * tau
            } else {
                -rho_max + slope * (tau - 0.5 * period)
            }
        }
    }
}

/// Cat-trot assignment `(-rho, -rho, rho, rho)`.
pub fn tilt_angles_from_rho(rho: f64) -> Result<TiltAngles> {
    if !(rho.abs() <= RHO_LIMIT) {
        return Err(Error::TiltOutOfRange { rho });
    }
    Ok(TiltAngles([-rho, -rho, rho, rho]))
}

/// Coefficients of the invertibility-margin polynomial, grouped by the
/// number of sine factors in each monomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginCoefficients {
    pub c4: f64,
    pub c3s1: f64,
    pub c2s2_adjacent: f64,
    pub c2s2_opposite: f64,
    pub c1s3: f64,
}

impl MarginCoefficients {
    /// The four-significant-digit values quoted for the reference airframe.
    pub const PRINTED: MarginCoefficients = MarginCoefficients {
        c4: 4.000,
        c3s1: 5.592,
        c2s2_adjacent: 0.9716,
        c2s2_opposite: 2.000,
        c1s3: 0.1687,
    };

    /// Exact coefficients for an airframe, normalised so that `c4 == 4`.
    ///
    /// With `k = K_m / (K_f L)` they are `4, 1/k - 2k, 1 - k^2, 2, k`.
    pub fn from_params(params: &VehicleParams) -> Self {
        let k = params.drag_coeff / (params.thrust_coeff * params.arm_length);
        MarginCoefficients {
            c4: 4.0,
            c3s1: 1.0 / k - 2.0 * k,
            c2s2_adjacent: 1.0 - k * k,
            c2s2_opposite: 2.0,
            c1s3: k,
        }
    }

    /// Scale between the normalised margin and
    /// `det [I_B^-1 tau(alpha); e3^T F(alpha) / m]`.
    pub fn determinant_scale(params: &VehicleParams) -> f64 {
        let kf = params.thrust_coeff;
        let [ix, iy, iz] = params.inertia;
        2.0 * kf.powi(3) * params.drag_coeff * params.arm_length.powi(2)
            / (params.mass * ix * iy * iz)
    }
}

/// Invertibility margin with explicit coefficients. Non-zero iff the
/// decoupling matrix is invertible near level attitude.
pub fn invertibility_margin_with(alpha: &TiltAngles, k: &MarginCoefficients) -> f64 {
    let [a1, a2, a3, a4] = alpha.0;
    let (s1, c1) = a1.sin_cos();
    let (s2, c2) = a2.sin_cos();
    let (s3, c3) = a3.sin_cos();
    let (s4, c4) = a4.sin_cos();
    k.c4 * c1 * c2 * c3 * c4
        + k.c3s1 * (c1 * c2 * c3 * s4 - c1 * c2 * s3 * c4 + c1 * s2 * c3 * c4 - s1 * c2 * c3 * c4)
        + k.c2s2_adjacent
            * (c1 * c2 * s3 * s4 + c1 * s2 * s3 * c4 + s1 * c2 * c3 * s4 + s1 * s2 * c3 * c4)
        + k.c2s2_opposite * (-c1 * s2 * c3 * s4 - s1 * c2 * s3 * c4)
        + k.c1s3 * (-c1 * s2 * s3 * s4 + s1 * c2 * s3 * s4 - s1 * s2 * c3 * s4 + s1 * s2 * s3 * c4)
}

/// Invertibility margin using the printed coefficients.
pub fn invertibility_margin(alpha: &TiltAngles) -> f64 {
    invertibility_margin_with(alpha, &MarginCoefficients::PRINTED)
}

/// Closed form of the margin along the cat-trot family: `4 cos^2(rho)`.
pub fn trot_margin_closed_form(rho: f64) -> f64 {
    4.0 * rho.cos().powi(2)
}

/// Smallest margin reached along a gait, sampled every `step` seconds over one
/// period (or once for a fixed gait).
pub fn min_margin_along(plan: &GaitPlan, step: f64) -> Result<(f64, f64)> {
    let horizon = plan.period().unwrap_or(0.0);
    let n = (horizon / step).ceil() as usize;
    let mut worst = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let t = (i as f64 * step).min(horizon);
        let m = invertibility_margin(&tilt_angles_from_rho(gait_rho(plan, t))?);
        if m < worst.0 {
            worst = (m, t);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn instant_switch_samples() {
        let g = GaitPlan::trot_instant(2.0);
        assert_eq!(gait_rho(&g, 0.5), 0.65);
        assert_eq!(gait_rho(&g, 1.0), 0.65);
        assert_eq!(gait_rho(&g, 1.5), -0.65);
        assert_eq!(gait_rho(&g, 0.0), 0.65);
        assert_eq!(gait_rho(&g, 2.0), 0.65);
    }

    #[test]
    fn continuous_switch_samples() {
        let g = GaitPlan::trot_continuous(2.0);
        assert_eq!(gait_rho(&g, 0.0), 0.65);
        assert!((gait_rho(&g, 1.0) + 0.65).abs() < 1e-15);
        assert!((gait_rho(&g, 2.0) - 0.65).abs() < 1e-15);
        assert!(gait_rho(&g, 0.5).abs() < 1e-15);
    }

    #[test]
    fn period_boundary_does_not_flicker() {
        // 0.1 * 30 is 3.0000000000000004 in binary
        let g = GaitPlan::trot_instant(0.1);
        let t = 0.1 * 30.0;
        assert_eq!(gait_rho(&g, t), 0.65);
        let c = GaitPlan::trot_continuous(0.1);
        assert!((gait_rho(&c, t) - 0.65).abs() < 1e-9);
    }

    #[test]
    fn tilt_mapping() {
        assert_eq!(
            tilt_angles_from_rho(0.65).unwrap(),
            TiltAngles([-0.65, -0.65, 0.65, 0.65])
        );
        assert_eq!(
            tilt_angles_from_rho(0.0).unwrap(),
            TiltAngles([-0.0, -0.0, 0.0, 0.0])
        );
        assert!(matches!(
            tilt_angles_from_rho(0.66),
            Err(Error::TiltOutOfRange { .. })
        ));
        assert!(tilt_angles_from_rho(f64::NAN).is_err());
    }

    #[test]
    fn margin_examples() {
        assert_eq!(invertibility_margin(&TiltAngles::ZERO), 4.0);
        let a = tilt_angles_from_rho(0.65).unwrap();
        let oracle = 4.0 * 0.65f64.cos() * 0.65f64.cos();
        assert!((invertibility_margin(&a) - oracle).abs() < 1e-12);
        assert!((oracle - 2.535).abs() < 1e-3);
        assert!((trot_margin_closed_form(0.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn exact_coefficients_round_to_printed() {
        let k = MarginCoefficients::from_params(&VehicleParams::default());
        let p = MarginCoefficients::PRINTED;
        assert!((k.c3s1 - p.c3s1).abs() < 5e-4);
        assert!((k.c2s2_adjacent - p.c2s2_adjacent).abs() < 5e-5);
        assert!((k.c1s3 - p.c1s3).abs() < 5e-5);
    }

    #[test]
    fn min_margin_along_trot() {
        let (m, _) = min_margin_along(&GaitPlan::trot_continuous(1.0), 1e-3).unwrap();
        assert!((m - trot_margin_closed_form(0.65)).abs() < 1e-9);
        let (m, _) = min_margin_along(&GaitPlan::fixed(0.0), 1e-3).unwrap();
        assert_eq!(m, 4.0);
    }

    #[test]
    fn validation_messages() {
        let err = GaitPlan::trot_instant(0.0)
            .validate()
            .unwrap_err()
            .to_string();
        assert!(err.contains("T > 0"), "{err}");
        assert!(GaitPlan::fixed(0.7).validate().is_err());
        let g = GaitPlan::TrotContinuous {
            period: 1.0,
            rho_max: 0.8,
        };
        assert!(g.validate().is_err());
    }

    proptest! {
        #[test]
        fn trot_gaits_are_periodic(t in 0.0f64..100.0, period in 0.1f64..5.0) {
            let tau = t % period;
            let near_edge = [0.0, 0.5 * period, period].iter().any(|e| (tau - e).abs() < 1e-9);
            prop_assume!(!near_edge);
            let g = GaitPlan::trot_instant(period);
            prop_assert_eq!(gait_rho(&g, t), gait_rho(&g, t + period));
            let g = GaitPlan::trot_continuous(period);
            prop_assert!((gait_rho(&g, t) - gait_rho(&g, t + period)).abs() < 1e-9);
        }

        #[test]
        fn continuous_gait_is_lipschitz(t in 0.0f64..50.0, eps in 0.0f64..1e-3, period in 0.2f64..5.0) {
            let g = GaitPlan::trot_continuous(period);
            let d = (gait_rho(&g, t + eps) - gait_rho(&g, t)).abs();
            prop_assert!(d <= 4.0 * 0.65 / period * eps + 1e-9);
        }

        #[test]
        fn rho_is_bounded(t in 0.0f64..100.0, period in 0.05f64..10.0) {
            for g in [GaitPlan::trot_instant(period), GaitPlan::trot_continuous(period)] {
                prop_assert!(gait_rho(&g, t).abs() <= 0.65 + 1e-12);
            }
        }

        #[test]
        fn tilt_mapping_is_odd(rho in -0.65f64..0.65) {
            let a = tilt_angles_from_rho(rho).unwrap();
            let b = tilt_angles_from_rho(-rho).unwrap();
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn trot_margin_matches_closed_form_and_is_even(rho in -0.65f64..0.65) {
            let m = invertibility_margin(&tilt_angles_from_rho(rho).unwrap());
            prop_assert!((m - trot_margin_closed_form(rho)).abs() < 1e-9);
            let m_neg = invertibility_margin(&tilt_angles_from_rho(-rho).unwrap());
            prop_assert!((m - m_neg).abs() < 1e-12);
            prop_assert!(m >= trot_margin_closed_form(0.65) - 1e-12);
            prop_assert!(m > 2.5);
        }
    }
}
