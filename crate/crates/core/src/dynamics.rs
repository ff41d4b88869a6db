//! Discrete double-integrator plant with kinematic yaw, plus IMU synthesis.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FalconError, Result};
use crate::geometry::{wrap_angle, Pose6};

/// Translational state of the vehicle plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl QuadState {
    pub fn at_rest(pose: &Pose6) -> Self {
        Self {
            position: pose.position(),
            velocity: Vector3::zeros(),
            yaw: pose.yaw,
            yaw_rate: 0.0,
        }
    }

    /// Camera pose; the vehicle is treated as level.
    pub fn pose(&self) -> Pose6 {
        Pose6::level(self.position, self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
    }
}

/// Commanded world-frame acceleration and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    pub accel: Vector3<f64>,
    pub yaw_rate_cmd: f64,
}

impl ControlInput {
    pub fn new(accel: Vector3<f64>, yaw_rate_cmd: f64) -> Self {
        Self {
            accel,
            yaw_rate_cmd,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.accel.iter().all(|v| v.is_finite()) && self.yaw_rate_cmd.is_finite()
    }
}

/// Scales `v` down so that its norm does not exceed `max`.
pub fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Linear acceleration and body rates as an IMU would report them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuSample {
    pub lin_accel: Vector3<f64>,
    pub ang_rate: Vector3<f64>,
}

impl ImuSample {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.lin_accel.x,
            self.lin_accel.y,
            self.lin_accel.z,
            self.ang_rate.x,
            self.ang_rate.y,
            self.ang_rate.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            lin_accel: Vector3::new(a[0], a[1], a[2]),
            ang_rate: Vector3::new(a[3], a[4], a[5]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoiseConfig {
    pub sigma_a: f64,
    pub sigma_w: f64,
    pub bias: [f64; 3],
}

impl Default for ImuNoiseConfig {
    fn default() -> Self {
        Self {
            sigma_a: 0.05,
            sigma_w: 0.01,
            bias: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub dt: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub imu: ImuNoiseConfig,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            v_max: 3.0,
            a_max: 4.0,
            imu: ImuNoiseConfig::default(),
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(FalconError::Config(
                "dt, v_max and a_max must be positive".into(),
            ));
        }
        if !(self.imu.sigma_a >= 0.0 && self.imu.sigma_w >= 0.0) {
            return Err(FalconError::Config("imu noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Advances the plant by `dt` under piecewise-constant input.
///
/// Acceleration is clamped to `a_max` and the resulting velocity to `v_max`.
/// Position uses the exact update `p + v dt + a dt^2 / 2`.
pub fn step(
    state: &QuadState,
    u: &ControlInput,
    dt: f64,
    cfg: &DynamicsConfig,
) -> Result<QuadState> {
    if !state.is_finite() {
        return Err(FalconError::Domain(format!("non-finite state {state:?}")));
    }
    if !(dt > 0.0) {
        return Err(FalconError::Domain(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let a = clamp_norm(u.accel, cfg.a_max);
    let position = state.position + state.velocity * dt + 0.5 * a * dt * dt;
    let velocity = clamp_norm(state.velocity + a * dt, cfg.v_max);
    Ok(QuadState {
        position,
        velocity,
        yaw: wrap_angle(state.yaw + u.yaw_rate_cmd * dt),
        yaw_rate: u.yaw_rate_cmd,
    })
}

/// Synthesizes an IMU reading for the control that was applied.
pub fn synthesize_imu<R: Rng + ?Sized>(
    u_applied: &ControlInput,
    noise: &ImuNoiseConfig,
    rng: &mut R,
) -> ImuSample {
    let mut gauss = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let lin_accel = Vector3::new(
        u_applied.accel.x + gauss(noise.sigma_a) + noise.bias[0],
        u_applied.accel.y + gauss(noise.sigma_a) + noise.bias[1],
        u_applied.accel.z + gauss(noise.sigma_a) + noise.bias[2],
    );
    let ang_rate = Vector3::new(
        gauss(noise.sigma_w),
        gauss(noise.sigma_w),
        u_applied.yaw_rate_cmd + gauss(noise.sigma_w),
    );
    ImuSample {
        lin_accel,
        ang_rate,
    }
}
