use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PoseEstimate;
use crate::error::{FalconError, Result};
use crate::geometry::{wrap_angle, Pose6};

/// Error statistics of the calibrated-noise pose estimator.
///
/// `position_std` is the target 3-D position RMSE and `yaw_std` the yaw RMSE.
/// A share `correlated_fraction` of the variance is a slowly drifting
/// first-order Gauss-Markov term with time constant `correlation_time`; the
/// rest is white. With probability `outlier_prob` a frame's white term is
/// scaled by `outlier_scale`. The white part is shrunk so that the total RMSE
/// still equals the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseOracleConfig {
    pub position_std: f64,
    pub yaw_std: f64,
    pub outlier_prob: f64,
    pub outlier_scale: f64,
    pub correlated_fraction: f64,
    pub correlation_time: f64,
}

impl NoiseOracleConfig {
    /// Error-free estimator.
    pub fn exact() -> Self {
        Self {
            position_std: 0.0,
            yaw_std: 0.0,
            outlier_prob: 0.0,
            outlier_scale: 1.0,
            correlated_fraction: 0.0,
            correlation_time: 1.0,
        }
    }

    /// Raw-estimator calibration per builtin track (position RMSE in meters,
    /// yaw RMSE in radians). Unknown names get the circle values.
    pub fn for_track(name: &str) -> Self {
        let (pos, yaw_deg) = match name {
            "uturn" => (0.555, 11.0),
            "figure8" => (0.424, 7.7),
            _ => (0.339, 4.7),
        };
        Self {
            position_std: pos,
            yaw_std: yaw_deg * PI / 180.0,
            outlier_prob: 0.03,
            outlier_scale: 3.0,
            correlated_fraction: 0.3,
            correlation_time: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.position_std >= 0.0
            && self.yaw_std >= 0.0
            && (0.0..1.0).contains(&self.outlier_prob)
            && self.outlier_scale >= 0.0
            && (0.0..=1.0).contains(&self.correlated_fraction)
            && self.correlation_time > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FalconError::Config(format!(
                "invalid oracle noise config {self:?}"
            )))
        }
    }

    /// Per-axis standard deviations (correlated, white) for a total std `total`.
    fn split(&self, total: f64) -> (f64, f64) {
        let rho = self.correlated_fraction;
        let tail = 1.0 - self.outlier_prob + self.outlier_prob * self.outlier_scale.powi(2);
        (
            (rho * total * total).sqrt(),
            ((1.0 - rho) * total * total / tail).sqrt(),
        )
    }

    /// Per-axis position variance the filter should assume.
    pub fn position_variance(&self) -> f64 {
        self.position_std.powi(2) / 3.0
    }

    pub fn yaw_variance(&self) -> f64 {
        self.yaw_std.powi(2)
    }
}

/// Stateful calibrated-noise estimator; one instance per episode.
#[derive(Debug, Clone)]
pub struct NpeOracle {
    cfg: NoiseOracleConfig,
    dt: f64,
    drift: Option<(Vector3<f64>, f64)>,
}

impl NpeOracle {
    pub fn new(cfg: NoiseOracleConfig, dt: f64) -> Self {
        Self {
            cfg,
            dt,
            drift: None,
        }
    }

    pub fn config(&self) -> &NoiseOracleConfig {
        &self.cfg
    }

    pub fn estimate<R: Rng + ?Sized>(&mut self, true_pose: &Pose6, rng: &mut R) -> PoseEstimate {
        let cfg = self.cfg;
        let (pc, pw) = cfg.split(cfg.position_std / 3f64.sqrt());
        let (yc, yw) = cfg.split(cfg.yaw_std);
        let mut n = || rng.sample::<f64, _>(StandardNormal);

        // Gauss-Markov drift, started from its stationary distribution.
        let drift = match self.drift {
            None => (Vector3::new(pc * n(), pc * n(), pc * n()), yc * n()),
            Some((p, y)) => {
                let a = (-self.dt / cfg.correlation_time).exp();
                let q = (1.0 - a * a).sqrt();
                (
                    Vector3::new(
                        a * p.x + q * pc * n(),
                        a * p.y + q * pc * n(),
                        a * p.z + q * pc * n(),
                    ),
                    a * y + q * yc * n(),
                )
            }
        };
        self.drift = Some(drift);

        let white = Vector3::new(n(), n(), n()) * pw;
        let white_yaw = yw * n();
        let scale = if cfg.outlier_prob > 0.0 && rng.random::<f64>() < cfg.outlier_prob {
            cfg.outlier_scale
        } else {
            1.0
        };
        let p = true_pose.position() + drift.0 + white * scale;
        PoseEstimate {
            pose: Pose6::level(p, wrap_angle(true_pose.yaw + drift.1 + white_yaw * scale)),
            valid: true,
        }
    }
}

/// One draw from a freshly started oracle.
pub fn npe_oracle<R: Rng + ?Sized>(
    true_pose: &Pose6,
    cfg: &NoiseOracleConfig,
    dt: f64,
    rng: &mut R,
) -> PoseEstimate {
    NpeOracle::new(*cfg, dt).estimate(true_pose, rng)
}
