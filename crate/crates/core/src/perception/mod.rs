//! Pose estimation: a calibrated-noise oracle or a keypoint regressor, fused
//! with IMU readings in a Kalman filter.

mod kalman;
mod oracle;
mod regressor;

use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use kalman::{
    kalman_predict, kalman_update, KalmanBelief, KalmanConfig, MeasurementNoise, UpdateOutcome,
};
pub use oracle::{npe_oracle, NoiseOracleConfig, NpeOracle};
pub use regressor::{
    generate_npe_dataset, keypoint_features, load_npe_dataset, save_npe_dataset,
    train_npe_regressor, NpeRegressor, NpeTrainConfig, NpeTrainReport, MIN_VISIBLE_KEYPOINTS,
};

use crate::dynamics::ImuSample;
use crate::error::{FalconError, Result};
use crate::geometry::{Pose6, SceneObservation};

/// Output of a pose estimator. Roll and pitch are always zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose6,
    pub valid: bool,
}

/// One predict/update cycle: propagate with the IMU, then fuse the
/// measurement if it is valid.
pub fn perceive(
    meas: &PoseEstimate,
    imu: &ImuSample,
    belief: &KalmanBelief,
    dt: f64,
    r: &MeasurementNoise,
    cfg: &KalmanConfig,
) -> (PoseEstimate, KalmanBelief) {
    let predicted = kalman_predict(belief, imu, dt, cfg);
    let (post, _) = kalman_update(&predicted, meas, r, cfg);
    (post.estimate(), post)
}

/// Source of raw pose measurements.
#[derive(Debug, Clone)]
pub enum Backend {
    Oracle(NpeOracle),
    Regressor(Arc<NpeRegressor>),
}

impl Backend {
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        true_pose: &Pose6,
        scene: &SceneObservation,
        rng: &mut R,
    ) -> Result<PoseEstimate> {
        match self {
            Backend::Oracle(o) => Ok(o.estimate(true_pose, rng)),
            Backend::Regressor(r) => r.predict(scene),
        }
    }

    /// Measurement covariance the filter should assume for this backend.
    pub fn measurement_noise(&self) -> MeasurementNoise {
        match self {
            Backend::Oracle(o) => {
                let c = o.config();
                MeasurementNoise::isotropic(
                    c.position_variance().max(1e-8),
                    c.yaw_variance().max(1e-8),
                )
            }
            Backend::Regressor(r) => {
                let v = r.residual_var;
                MeasurementNoise {
                    position: nalgebra::Matrix3::from_diagonal(&Vector3::new(v[0], v[1], v[2])),
                    yaw: v[3],
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionConfig {
    pub kalman: KalmanConfig,
    /// A camera frame arrives every this many control steps.
    pub camera_every: usize,
    /// Probability that a frame is dropped.
    pub dropout: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            kalman: KalmanConfig::default(),
            camera_every: 1,
            dropout: 0.0,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self) -> Result<()> {
        self.kalman.validate()?;
        if self.camera_every == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(FalconError::Config(format!(
                "invalid perception config {self:?}"
            )));
        }
        Ok(())
    }
}

/// What the estimator produced at one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionOutput {
    /// The raw measurement, invalid when no frame arrived.
    pub raw: PoseEstimate,
    pub filtered: PoseEstimate,
    pub velocity: Vector3<f64>,
}

/// Stateful estimator for one episode.
#[derive(Debug, Clone)]
pub struct PerceptionPipeline {
    backend: Backend,
    cfg: PerceptionConfig,
    noise: MeasurementNoise,
    belief: Option<KalmanBelief>,
    steps: usize,
}

impl PerceptionPipeline {
    pub fn new(backend: Backend, cfg: PerceptionConfig) -> Self {
        let noise = backend.measurement_noise();
        Self {
            backend,
            cfg,
            noise,
            belief: None,
            steps: 0,
        }
    }

    pub fn belief(&self) -> Option<&KalmanBelief> {
        self.belief.as_ref()
    }

    /// Discards the belief, e.g. when the vehicle is re-launched.
    pub fn reset(&mut self) {
        self.belief = None;
        self.steps = 0;
    }

    /// Advances the filter by one control step.
    ///
    /// `imu` is the reading for the control applied over the previous step; it
    /// is ignored until the filter has been initialized. `fallback` seeds the
    /// belief (with wide covariance) when the first frame carries no valid
    /// measurement.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        true_pose: &Pose6,
        scene: &SceneObservation,
        imu: &ImuSample,
        dt: f64,
        fallback: &Pose6,
        rng: &mut R,
    ) -> Result<PerceptionOutput> {
        let frame = self.steps.is_multiple_of(self.cfg.camera_every);
        self.steps += 1;
        let mut raw = PoseEstimate {
            pose: *true_pose,
            valid: false,
        };
        if frame {
            raw = self.backend.measure(true_pose, scene, rng)?;
            if self.cfg.dropout > 0.0 && rng.random::<f64>() < self.cfg.dropout {
                raw.valid = false;
            }
        }
        let belief = match self.belief {
            None => {
                if raw.valid {
                    KalmanBelief::from_measurement(&raw, &self.noise, &self.cfg.kalman)
                } else {
                    let wide = MeasurementNoise::isotropic(1.0, 1.0);
                    let seed = PoseEstimate {
                        pose: *fallback,
                        valid: true,
                    };
                    KalmanBelief::from_measurement(&seed, &wide, &self.cfg.kalman)
                }
            }
            Some(b) => perceive(&raw, imu, &b, dt, &self.noise, &self.cfg.kalman).1,
        };
        self.belief = Some(belief);
        Ok(PerceptionOutput {
            raw,
            filtered: belief.estimate(),
            velocity: belief.velocity(),
        })
    }
}
