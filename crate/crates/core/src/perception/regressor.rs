use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PoseEstimate;
use crate::error::{FalconError, Result};
use crate::geometry::{
    wrap_angle, CameraModel, GateObservation, KeypointRenderer, Pose6, SceneObservation,
    SceneRenderer, Track, KEYPOINTS_PER_GATE,
};
use crate::nn::{Activation, Adam, Mlp, Module, Tensor2};
use crate::seeding::rng_from_seed;

/// Fewer visible keypoints than this make an estimate invalid.
pub const MIN_VISIBLE_KEYPOINTS: usize = 4;

/// Flattens a scene into `[u, v, visible]` triples per keypoint, with pixel
/// coordinates mapped to [-1, 1] and hidden keypoints zeroed.
pub fn keypoint_features(scene: &SceneObservation, camera: &CameraModel, out: &mut Vec<f64>) {
    let (w, h) = (camera.width as f64, camera.height as f64);
    for g in &scene.gates {
        for (uv, vis) in g.keypoints.iter().zip(&g.visible) {
            if *vis {
                out.extend_from_slice(&[uv[0] / w * 2.0 - 1.0, uv[1] / h * 2.0 - 1.0, 1.0]);
            } else {
                out.extend_from_slice(&[0.0, 0.0, 0.0]);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpeTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for NpeTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            epochs: 40,
            batch_size: 64,
            learning_rate: 2e-3,
            lr_decay: 0.93,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

impl NpeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || !(self.learning_rate > 0.0)
            || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0)
            || !(0.0..1.0).contains(&self.holdout_fraction)
            || self.hidden.contains(&0)
        {
            return Err(FalconError::Config(format!(
                "invalid NPE training config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Keypoint-to-pose regressor standing in for the learned pose estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpeRegressor {
    pub camera: CameraModel,
    pub n_gates: usize,
    pub net: Mlp,
    /// Position normalization: target = (p - offset) / scale.
    pub offset: [f64; 3],
    pub scale: [f64; 3],
    /// Held-out residual variances (x, y, z, yaw) used as measurement noise.
    pub residual_var: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpeTrainReport {
    pub epoch_losses: Vec<f64>,
    pub holdout_samples: usize,
    pub holdout_valid: usize,
    pub holdout_position_rmse: f64,
    pub holdout_yaw_rmse: f64,
}

impl NpeRegressor {
    pub fn input_size(&self) -> usize {
        self.n_gates * KEYPOINTS_PER_GATE * 3
    }

    fn decode(&self, out: &[f64]) -> Pose6 {
        let p = Vector3::new(
            self.offset[0] + self.scale[0] * out[0],
            self.offset[1] + self.scale[1] * out[1],
            self.offset[2] + self.scale[2] * out[2],
        );
        Pose6::level(p, out[3].atan2(out[4]))
    }

    pub fn predict_batch(&self, scenes: &[&SceneObservation]) -> Result<Vec<PoseEstimate>> {
        let mut feats = Vec::with_capacity(scenes.len() * self.input_size());
        for s in scenes {
            if s.gates.len() != self.n_gates {
                return Err(FalconError::Domain(format!(
                    "regressor expects {} gates, scene has {}",
                    self.n_gates,
                    s.gates.len()
                )));
            }
            keypoint_features(s, &self.camera, &mut feats);
        }
        let out = self
            .net
            .forward(&Tensor2::from_vec(scenes.len(), self.input_size(), feats));
        if !out.is_finite() {
            return Err(FalconError::Inference {
                layer: "npe-regressor".into(),
            });
        }
        Ok(scenes
            .iter()
            .enumerate()
            .map(|(i, s)| PoseEstimate {
                pose: self.decode(out.row(i)),
                valid: s.visible_count() >= MIN_VISIBLE_KEYPOINTS,
            })
            .collect())
    }

    pub fn predict(&self, scene: &SceneObservation) -> Result<PoseEstimate> {
        Ok(self.predict_batch(&[scene])?.remove(0))
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.net.input_size() != self.input_size() || self.net.output_size() != 5 {
            return Err(FalconError::Format(
                "regressor input/output sizes do not match".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        r.validate()?;
        Ok(r)
    }
}

/// Renders `n` observations from poses drawn uniformly over the workspace
/// (0.3 m margin, altitude 0.3-2.5 m, any heading).
pub fn generate_npe_dataset<R: Rng + ?Sized>(
    track: &Track,
    camera: &CameraModel,
    n: usize,
    rng: &mut R,
) -> Vec<(SceneObservation, Pose6)> {
    let renderer = KeypointRenderer::new(*camera, track);
    let ws = &track.workspace;
    (0..n)
        .map(|_| {
            let pose = Pose6::new(
                rng.random_range(ws.min[0] + 0.3..ws.max[0] - 0.3),
                rng.random_range(ws.min[1] + 0.3..ws.max[1] - 0.3),
                rng.random_range(0.3..2.5),
                0.0,
                0.0,
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            (renderer.render(&pose), pose)
        })
        .collect()
}

fn targets(poses: &[&Pose6], offset: &[f64; 3], scale: &[f64; 3]) -> Vec<f64> {
    poses
        .iter()
        .flat_map(|p| {
            [
                (p.x - offset[0]) / scale[0],
                (p.y - offset[1]) / scale[1],
                (p.z - offset[2]) / scale[2],
                p.yaw.sin(),
                p.yaw.cos(),
            ]
        })
        .collect()
}

/// Fits the regressor with minibatch Adam on squared error over normalized
/// position and (sin, cos) yaw. A held-out split measures residuals, which
/// become the measurement noise of the filter.
pub fn train_npe_regressor(
    dataset: &[(SceneObservation, Pose6)],
    camera: &CameraModel,
    hyper: &NpeTrainConfig,
) -> Result<(NpeRegressor, NpeTrainReport)> {
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(FalconError::Domain("empty NPE dataset".into()));
    }
    let n_gates = dataset[0].0.gates.len();
    if dataset.iter().any(|(s, _)| s.gates.len() != n_gates) {
        return Err(FalconError::Domain(
            "inconsistent gate count across dataset".into(),
        ));
    }
    let camera = *camera;
    let mut rng = rng_from_seed(hyper.seed);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((dataset.len() as f64) * hyper.holdout_fraction).round() as usize;
    let n_hold = n_hold.min(dataset.len() - 1);
    let (hold_idx, train_idx) = order.split_at(n_hold);

    let mut offset = [0.0; 3];
    let mut scale = [0.0; 3];
    for k in 0..3 {
        let vals: Vec<f64> = train_idx
            .iter()
            .map(|&i| dataset[i].1.position()[k])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        offset[k] = mean;
        scale[k] = var.sqrt().max(1e-3);
    }

    let input = n_gates * KEYPOINTS_PER_GATE * 3;
    let mut sizes = vec![input];
    sizes.extend(&hyper.hidden);
    sizes.push(5);
    let mut reg = NpeRegressor {
        camera,
        n_gates,
        net: Mlp::new(&sizes, Activation::Linear, &mut rng),
        offset,
        scale,
        residual_var: [1.0; 4],
    };

    let mut feats_all = Vec::with_capacity(dataset.len() * input);
    for (s, _) in dataset {
        keypoint_features(s, &camera, &mut feats_all);
    }
    let mut adam = Adam::new(hyper.learning_rate);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut shuffled = train_idx.to_vec();

    for epoch in 0..hyper.epochs {
        shuffled.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in shuffled.chunks(hyper.batch_size) {
            let mut x = Vec::with_capacity(batch.len() * input);
            for &i in batch {
                x.extend_from_slice(&feats_all[i * input..(i + 1) * input]);
            }
            let x = Tensor2::from_vec(batch.len(), input, x);
            let poses: Vec<&Pose6> = batch.iter().map(|&i| &dataset[i].1).collect();
            let y = targets(&poses, &offset, &scale);
            let cache = reg.net.forward_cached(&x);
            let out = cache.output();
            let mut d = Tensor2::zeros(out.rows, out.cols);
            let norm = 1.0 / (batch.len() * 5) as f64;
            let mut loss = 0.0;
            for (k, (o, t)) in out.data.iter().zip(&y).enumerate() {
                let e = o - t;
                loss += e * e;
                d.data[k] = 2.0 * e * norm;
            }
            if !loss.is_finite() {
                return Err(FalconError::Divergence {
                    epoch,
                    detail: format!(
                        "non-finite batch loss after {} optimizer steps",
                        adam.steps_taken()
                    ),
                });
            }
            total += loss;
            let mut grads = reg.net.zero_grads();
            reg.net.backward(&cache, &d, &mut grads);
            adam.step(reg.net.params_mut(), &grads);
        }
        let epoch_loss = total / (shuffled.len() * 5) as f64;
        log::debug!("npe epoch {epoch}: loss {epoch_loss:.5}");
        epoch_losses.push(epoch_loss);
        adam.learning_rate *= hyper.lr_decay;
    }
    if !reg.net.params_finite() {
        return Err(FalconError::Divergence {
            epoch: hyper.epochs,
            detail: "non-finite weights".into(),
        });
    }

    // Held-out residuals over valid estimates only.
    let scenes: Vec<&SceneObservation> = hold_idx.iter().map(|&i| &dataset[i].0).collect();
    let preds = reg.predict_batch(&scenes)?;
    let mut sq = [0.0; 4];
    let mut valid = 0;
    for (&i, e) in hold_idx.iter().zip(&preds) {
        if !e.valid {
            continue;
        }
        valid += 1;
        let t = &dataset[i].1;
        let dp = e.pose.position() - t.position();
        for k in 0..3 {
            sq[k] += dp[k] * dp[k];
        }
        sq[3] += wrap_angle(e.pose.yaw - t.yaw).powi(2);
    }
    let (pos_rmse, yaw_rmse) = if valid > 0 {
        let n = valid as f64;
        for v in sq.iter_mut() {
            *v /= n;
        }
        reg.residual_var = sq.map(|v| v.max(1e-6));
        ((sq[0] + sq[1] + sq[2]).sqrt(), sq[3].sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };

    let report = NpeTrainReport {
        epoch_losses,
        holdout_samples: hold_idx.len(),
        holdout_valid: valid,
        holdout_position_rmse: pos_rmse,
        holdout_yaw_rmse: yaw_rmse,
    };
    Ok((reg, report))
}

/// Writes rendered observations as CSV: the pose followed by `u, v, visible`
/// for every keypoint of every gate.
pub fn save_npe_dataset(dataset: &[(SceneObservation, Pose6)], path: &Path) -> Result<()> {
    let n_gates = dataset.first().map_or(0, |(s, _)| s.gates.len());
    let mut header: Vec<String> = ["x", "y", "z", "roll", "pitch", "yaw"]
        .map(String::from)
        .to_vec();
    for g in 0..n_gates {
        for k in 0..KEYPOINTS_PER_GATE {
            for c in ["u", "v", "visible"] {
                header.push(format!("g{g}_k{k}_{c}"));
            }
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for (scene, p) in dataset {
        if scene.gates.len() != n_gates {
            return Err(FalconError::Domain(
                "inconsistent gate count across dataset".into(),
            ));
        }
        let mut row = vec![p.x, p.y, p.z, p.roll, p.pitch, p.yaw];
        for g in &scene.gates {
            for (uv, vis) in g.keypoints.iter().zip(&g.visible) {
                row.extend_from_slice(&[uv[0], uv[1], if *vis { 1.0 } else { 0.0 }]);
            }
        }
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_npe_dataset(path: &Path) -> Result<Vec<(SceneObservation, Pose6)>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let per_gate = 3 * KEYPOINTS_PER_GATE;
    if cols < 6 || (cols - 6) % per_gate != 0 {
        return Err(FalconError::Format(format!(
            "{}: unexpected column count {cols}",
            path.display()
        )));
    }
    let n_gates = (cols - 6) / per_gate;
    let mut out = Vec::new();
    for rec in r.deserialize::<Vec<f64>>() {
        let v = rec?;
        let pose = Pose6 {
            x: v[0],
            y: v[1],
            z: v[2],
            roll: v[3],
            pitch: v[4],
            yaw: v[5],
        };
        let gates = (0..n_gates)
            .map(|g| {
                let b = &v[6 + g * per_gate..6 + (g + 1) * per_gate];
                GateObservation {
                    gate_index: g,
                    keypoints: b.chunks(3).map(|c| [c[0], c[1]]).collect(),
                    visible: b.chunks(3).map(|c| c[2] != 0.0).collect(),
                }
            })
            .collect();
        out.push((SceneObservation { gates }, pose));
    }
    Ok(out)
}
