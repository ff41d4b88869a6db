use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::PoseEstimate;
use crate::dynamics::ImuSample;
use crate::error::{FalconError, Result};
use crate::geometry::{wrap_angle, Pose6};

/// Smallest eigenvalue tolerated before the covariance is repaired.
const MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanConfig {
    /// Acceleration noise density for the piecewise-white-accel model, m/s^2.
    pub accel_noise: f64,
    /// Yaw-rate noise, rad/s.
    pub yaw_rate_noise: f64,
    /// Mahalanobis distance above which a measurement is rejected.
    pub gate_threshold: f64,
    /// Velocity std assumed when the filter starts.
    pub init_velocity_std: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            accel_noise: 0.3,
            yaw_rate_noise: 0.05,
            gate_threshold: 5.0,
            init_velocity_std: 0.5,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accel_noise > 0.0
            && self.yaw_rate_noise > 0.0
            && self.gate_threshold > 0.0
            && self.init_velocity_std > 0.0
        {
            Ok(())
        } else {
            Err(FalconError::Config(format!(
                "invalid Kalman config {self:?}"
            )))
        }
    }
}

/// Measurement covariance: full 3x3 on position, scalar on yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise {
    pub position: Matrix3<f64>,
    pub yaw: f64,
}

impl MeasurementNoise {
    pub fn isotropic(position_var: f64, yaw_var: f64) -> Self {
        Self {
            position: Matrix3::identity() * position_var,
            yaw: yaw_var,
        }
    }
}

/// Gaussian belief over position/velocity plus a decoupled yaw estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanBelief {
    pub mean: Vector6<f64>,
    pub cov: Matrix6<f64>,
    pub yaw_mean: f64,
    pub yaw_var: f64,
}

/// Which parts of a measurement were applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UpdateOutcome {
    pub position: bool,
    pub yaw: bool,
}

impl KalmanBelief {
    /// Starts at a measurement with zero velocity.
    pub fn from_measurement(meas: &PoseEstimate, r: &MeasurementNoise, cfg: &KalmanConfig) -> Self {
        let p = meas.pose.position();
        let mut cov = Matrix6::zeros();
        cov.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.position);
        cov.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * cfg.init_velocity_std.powi(2)));
        Self {
            mean: Vector6::new(p.x, p.y, p.z, 0.0, 0.0, 0.0),
            cov,
            yaw_mean: meas.pose.yaw,
            yaw_var: r.yaw,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(0).into()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(3).into()
    }

    pub fn pose(&self) -> Pose6 {
        Pose6::level(self.position(), self.yaw_mean)
    }

    pub fn estimate(&self) -> PoseEstimate {
        PoseEstimate {
            pose: self.pose(),
            valid: true,
        }
    }

    /// Checks symmetry, positive definiteness and finiteness.
    pub fn validate(&self) -> Result<()> {
        let asym = (self.cov - self.cov.transpose()).abs().max();
        let min_eig = SymmetricEigen::new(self.cov).eigenvalues.min();
        if self.mean.iter().all(|v| v.is_finite())
            && self.yaw_mean.is_finite()
            && asym < 1e-9
            && min_eig > 0.0
            && self.yaw_var > 0.0
        {
            Ok(())
        } else {
            Err(FalconError::Domain(format!(
                "belief invariants violated (asymmetry {asym:.2e}, min eigenvalue {min_eig:.2e}, yaw var {})",
                self.yaw_var
            )))
        }
    }
}

/// Symmetrizes and, when needed, lifts the spectrum back above zero.
fn repair(cov: Matrix6<f64>) -> Matrix6<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let min = SymmetricEigen::new(sym).eigenvalues.min();
    if min > MIN_EIGENVALUE {
        return sym;
    }
    log::warn!("covariance lost definiteness (min eigenvalue {min:.3e}); adding jitter");
    sym + Matrix6::identity() * (MIN_EIGENVALUE - min + 1e-9)
}

/// Propagates the belief through the double integrator using the IMU as input.
pub fn kalman_predict(
    belief: &KalmanBelief,
    imu: &ImuSample,
    dt: f64,
    cfg: &KalmanConfig,
) -> KalmanBelief {
    let mut f = Matrix6::identity();
    f.fixed_view_mut::<3, 3>(0, 3).fill_diagonal(dt);
    let a = imu.lin_accel;
    let h = 0.5 * dt * dt;
    let mut mean = f * belief.mean;
    for i in 0..3 {
        mean[i] += h * a[i];
        mean[i + 3] += dt * a[i];
    }

    // Q = s^2 G G^T with G = [dt^2/2 I; dt I]
    let s2 = cfg.accel_noise.powi(2);
    let mut q = Matrix6::zeros();
    for i in 0..3 {
        q[(i, i)] = s2 * h * h;
        q[(i, i + 3)] = s2 * h * dt;
        q[(i + 3, i)] = s2 * h * dt;
        q[(i + 3, i + 3)] = s2 * dt * dt;
    }
    // A small floor keeps Q strictly positive definite.
    q += Matrix6::identity() * 1e-10;

    KalmanBelief {
        mean,
        cov: repair(f * belief.cov * f.transpose() + q),
        yaw_mean: wrap_angle(belief.yaw_mean + imu.ang_rate.z * dt),
        yaw_var: belief.yaw_var + (cfg.yaw_rate_noise * dt).powi(2),
    }
}

/// Applies a pose measurement. Invalid measurements leave the belief untouched;
/// measurements beyond the Mahalanobis gate are rejected per block.
pub fn kalman_update(
    belief: &KalmanBelief,
    meas: &PoseEstimate,
    r: &MeasurementNoise,
    cfg: &KalmanConfig,
) -> (KalmanBelief, UpdateOutcome) {
    let mut out = *belief;
    let mut outcome = UpdateOutcome::default();
    if !meas.valid || !meas.pose.is_finite() {
        return (out, outcome);
    }

    let p_xx: Matrix3<f64> = belief.cov.fixed_view::<3, 3>(0, 0).into();
    let s = p_xx + r.position;
    let innov = meas.pose.position() - belief.position();
    if let Some(s_inv) = s.try_inverse() {
        let d2 = (innov.transpose() * s_inv * innov)[(0, 0)];
        if d2.sqrt() <= cfg.gate_threshold {
            // K = P H^T S^-1 with H = [I 0]
            let pht = belief.cov.fixed_view::<6, 3>(0, 0).into_owned();
            let k = pht * s_inv;
            out.mean = belief.mean + k * innov;
            let mut kh = Matrix6::zeros();
            kh.fixed_view_mut::<6, 3>(0, 0).copy_from(&k);
            let ikh = Matrix6::identity() - kh;
            // Joseph form
            let cov = ikh * belief.cov * ikh.transpose() + k * r.position * k.transpose();
            out.cov = repair(cov);
            outcome.position = true;
        } else {
            log::debug!("position measurement gated (distance {:.2})", d2.sqrt());
        }
    }

    let sy = belief.yaw_var + r.yaw;
    let yi = wrap_angle(meas.pose.yaw - belief.yaw_mean);
    if sy > 0.0 && yi.abs() / sy.sqrt() <= cfg.gate_threshold {
        let k = belief.yaw_var / sy;
        out.yaw_mean = wrap_angle(belief.yaw_mean + k * yi);
        out.yaw_var = ((1.0 - k) * belief.yaw_var).max(1e-12);
        outcome.yaw = true;
    }
    (out, outcome)
}
