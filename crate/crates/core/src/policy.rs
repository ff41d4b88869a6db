//! Multi-modal policy: a vision embedding and a state embedding exchange
//! information through residual multi-head self-attention, then a head
//! regresses the acceleration command from the two concatenated tokens.
//!
//! Inputs are expressed in the frame of the next gate (origin at its center,
//! x along its normal), which the policy receives as ground truth. The output
//! is likewise a gate-frame acceleration rotated back to the world frame.

use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_norm, ImuSample};
use crate::error::{FalconError, Result};
use crate::geometry::{wrap_angle, CameraModel, Gate, GateObservation, Pose6, KEYPOINTS_PER_GATE};
use crate::nn::{Activation, AttentionCache, Mlp, MlpCache, Module, MultiHeadAttention, Tensor2};

pub const VISION_FEATURES: usize = KEYPOINTS_PER_GATE * 3;
/// Pose (3 + sin/cos), velocity (3), IMU (6), gate (3 + sin/cos).
pub const STATE_FEATURES: usize = 5 + 3 + 6 + 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            heads: 4,
            hidden: 256,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.heads == 0
            || self.hidden == 0
            || !self.d_model.is_multiple_of(self.heads)
        {
            return Err(FalconError::Config(format!(
                "invalid policy config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Encoded network inputs for one decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyFeatures {
    pub vision: [f64; VISION_FEATURES],
    pub state: [f64; STATE_FEATURES],
}

fn gate_frame(gate: &Pose6) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), gate.yaw)
}

/// Builds the network inputs.
///
/// `obs` is the next gate's keypoints, `estimate` the believed pose, `velocity`
/// the believed velocity, `imu` the latest reading and `gate` the next gate.
pub fn encode_features(
    obs: &GateObservation,
    estimate: &Pose6,
    velocity: &Vector3<f64>,
    imu: &ImuSample,
    gate: &Pose6,
    camera: &CameraModel,
    a_max: f64,
) -> PolicyFeatures {
    let mut vision = [0.0; VISION_FEATURES];
    let (w, h) = (camera.width as f64, camera.height as f64);
    for (k, (uv, vis)) in obs
        .keypoints
        .iter()
        .zip(&obs.visible)
        .take(KEYPOINTS_PER_GATE)
        .enumerate()
    {
        if *vis {
            vision[3 * k] = uv[0] / w * 2.0 - 1.0;
            vision[3 * k + 1] = uv[1] / h * 2.0 - 1.0;
            vision[3 * k + 2] = 1.0;
        }
    }

    let rg = gate_frame(gate).inverse();
    let rel = rg * (estimate.position() - gate.position()) / 2.0;
    let psi = wrap_angle(estimate.yaw - gate.yaw);
    let v = rg * velocity;
    let a = rg * imu.lin_accel / a_max;
    let w_rate = imu.ang_rate / 2.0;
    let state = [
        rel.x,
        rel.y,
        rel.z,
        psi.sin(),
        psi.cos(),
        v.x,
        v.y,
        v.z,
        a.x,
        a.y,
        a.z,
        w_rate.x,
        w_rate.y,
        w_rate.z,
        gate.x / 3.0,
        gate.y / 3.0,
        gate.z - 1.2,
        gate.yaw.sin(),
        gate.yaw.cos(),
    ];
    PolicyFeatures { vision, state }
}

/// Maps a world-frame acceleration to the normalized gate-frame training target.
pub fn encode_target(u_world: &Vector3<f64>, gate: &Pose6, a_max: f64) -> [f64; 3] {
    let t = gate_frame(gate).inverse() * u_world / a_max;
    [t.x, t.y, t.z]
}

/// Per-sample attention weights, `weights[h][i][j]` for query token `i`
/// (0 = vision, 1 = state) attending to key token `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDiagnostics {
    pub weights: Vec<[[f64; 2]; 2]>,
}

impl AttentionDiagnostics {
    /// Attention mass placed on the vision token, averaged over heads and queries.
    pub fn vision_mass(&self) -> f64 {
        let total: f64 = self.weights.iter().map(|m| m[0][0] + m[1][0]).sum();
        total / (2 * self.weights.len()) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyNet {
    pub config: PolicyConfig,
    pub a_max: f64,
    pub vision: Mlp,
    pub state: Mlp,
    pub attention: MultiHeadAttention,
    pub head: Mlp,
}

/// Forward-pass intermediates needed by [`PolicyNet::backward`].
#[derive(Debug, Clone)]
pub struct PolicyCache {
    vision: MlpCache,
    state: MlpCache,
    attention: AttentionCache,
    head: MlpCache,
}

impl PolicyCache {
    pub fn output(&self) -> &Tensor2 {
        self.head.output()
    }

    pub fn attention(&self) -> &AttentionCache {
        &self.attention
    }
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, a_max: f64, rng: &mut R) -> Self {
        let d = config.d_model;
        Self {
            config,
            a_max,
            vision: Mlp::new(
                &[VISION_FEATURES, config.hidden, d],
                Activation::Linear,
                rng,
            ),
            state: Mlp::new(&[STATE_FEATURES, config.hidden, d], Activation::Linear, rng),
            attention: MultiHeadAttention::new(d, config.heads, rng),
            head: Mlp::new(&[2 * d, config.hidden, 3], Activation::Linear, rng),
        }
    }

    /// Batched forward pass on encoded features; returns normalized gate-frame
    /// accelerations (`B x 3`).
    pub fn forward(&self, vision: &Tensor2, state: &Tensor2) -> PolicyCache {
        assert_eq!(vision.rows, state.rows, "vision/state batch mismatch");
        let b = vision.rows;
        let d = self.config.d_model;
        let vc = self.vision.forward_cached(vision);
        let sc = self.state.forward_cached(state);
        let mut tokens = Tensor2::zeros(2 * b, d);
        for i in 0..b {
            tokens.row_mut(2 * i).copy_from_slice(vc.output().row(i));
            tokens
                .row_mut(2 * i + 1)
                .copy_from_slice(sc.output().row(i));
        }
        let (mut mixed, ac) = self.attention.forward(&tokens, 2);
        for (m, t) in mixed.data.iter_mut().zip(&tokens.data) {
            *m += t;
        }
        // rows 2i and 2i+1 are contiguous, so this concatenates the two tokens
        let hc = self.head.forward_cached(&mixed.reshape(b, 2 * d));
        PolicyCache {
            vision: vc,
            state: sc,
            attention: ac,
            head: hc,
        }
    }

    /// Accumulates parameter gradients for `dout = dL/d(output)`.
    pub fn backward(&self, cache: &PolicyCache, dout: &Tensor2, grads: &mut [Vec<f64>]) {
        let d = self.config.d_model;
        let b = dout.rows;
        let nv = self.vision.params().len();
        let ns = self.state.params().len();
        let na = self.attention.params().len();
        let (gv, rest) = grads.split_at_mut(nv);
        let (gs, rest) = rest.split_at_mut(ns);
        let (ga, gh) = rest.split_at_mut(na);

        let dh = self.head.backward(&cache.head, dout, gh).reshape(2 * b, d);
        let mut dt = self.attention.backward(&cache.attention, &dh, ga);
        for (g, r) in dt.data.iter_mut().zip(&dh.data) {
            *g += r;
        }
        let mut dv = Tensor2::zeros(b, d);
        let mut ds = Tensor2::zeros(b, d);
        for i in 0..b {
            dv.row_mut(i).copy_from_slice(dt.row(2 * i));
            ds.row_mut(i).copy_from_slice(dt.row(2 * i + 1));
        }
        self.vision.backward(&cache.vision, &dv, gv);
        self.state.backward(&cache.state, &ds, gs);
    }

    /// Single-decision inference: world-frame acceleration (clamped to `a_max`)
    /// plus the attention pattern.
    pub fn act(
        &self,
        f: &PolicyFeatures,
        gate: &Pose6,
    ) -> Result<(Vector3<f64>, AttentionDiagnostics)> {
        let cache = self.forward(
            &Tensor2::from_vec(1, VISION_FEATURES, f.vision.to_vec()),
            &Tensor2::from_vec(1, STATE_FEATURES, f.state.to_vec()),
        );
        let stages = [
            ("vision", cache.vision.output()),
            ("state", cache.state.output()),
            ("head", cache.head.output()),
        ];
        for (name, t) in stages {
            if !t.is_finite() {
                return Err(FalconError::Inference { layer: name.into() });
            }
        }
        let out = cache.output().row(0);
        let u = gate_frame(gate) * Vector3::new(out[0], out[1], out[2]) * self.a_max;
        let heads = self.config.heads;
        let weights = (0..heads)
            .map(|h| {
                let w = |i, j| cache.attention.weight(heads, 0, h, i, j);
                [[w(0, 0), w(0, 1)], [w(1, 0), w(1, 1)]]
            })
            .collect();
        Ok((clamp_norm(u, self.a_max), AttentionDiagnostics { weights }))
    }

    /// Convenience wrapper around [`encode_features`] and [`PolicyNet::act`].
    #[allow(clippy::too_many_arguments)]
    pub fn control(
        &self,
        obs: &GateObservation,
        estimate: &Pose6,
        velocity: &Vector3<f64>,
        imu: &ImuSample,
        gate: &Gate,
        camera: &CameraModel,
    ) -> Result<(Vector3<f64>, AttentionDiagnostics)> {
        let f = encode_features(
            obs,
            estimate,
            velocity,
            imu,
            &gate.center,
            camera,
            self.a_max,
        );
        self.act(&f, &gate.center)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.vision.validate()?;
        self.state.validate()?;
        self.attention.validate()?;
        self.head.validate()?;
        let d = self.config.d_model;
        let ok = self.vision.input_size() == VISION_FEATURES
            && self.vision.output_size() == d
            && self.state.input_size() == STATE_FEATURES
            && self.state.output_size() == d
            && self.attention.d_model == d
            && self.attention.heads == self.config.heads
            && self.head.input_size() == 2 * d
            && self.head.output_size() == 3
            && self.a_max > 0.0;
        if !ok {
            return Err(FalconError::Format(
                "policy component shapes disagree".into(),
            ));
        }
        if !self.params_finite() {
            return Err(FalconError::Format(
                "policy has non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let net: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        net.validate()?;
        Ok(net)
    }
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.vision.params();
        p.extend(self.state.params());
        p.extend(self.attention.params());
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.vision.params_mut();
        p.extend(self.state.params_mut());
        p.extend(self.attention.params_mut());
        p.extend(self.head.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{builtin_track, project_gate};
    use crate::seeding::rng_from_seed;

    fn small() -> PolicyNet {
        let cfg = PolicyConfig {
            d_model: 16,
            heads: 4,
            hidden: 12,
        };
        PolicyNet::new(cfg, 4.0, &mut rng_from_seed(5))
    }

    fn features() -> (PolicyFeatures, Pose6) {
        let track = builtin_track("circle").unwrap();
        let cam = CameraModel::default();
        let start = track.start_pose();
        let gate = track.gates[0];
        let obs = project_gate(&start, &cam, &gate, KEYPOINTS_PER_GATE);
        let imu = ImuSample {
            lin_accel: Vector3::new(0.5, -0.2, 0.1),
            ang_rate: Vector3::new(0.0, 0.0, 0.3),
        };
        let f = encode_features(
            &obs,
            &start,
            &Vector3::new(0.3, 0.8, 0.0),
            &imu,
            &gate.center,
            &cam,
            4.0,
        );
        (f, gate.center)
    }

    #[test]
    fn act_is_pure_and_bounded() {
        let net = PolicyNet::new(PolicyConfig::default(), 4.0, &mut rng_from_seed(1));
        let (f, g) = features();
        let (u1, d1) = net.act(&f, &g).unwrap();
        let (u2, d2) = net.act(&f, &g).unwrap();
        assert_eq!(u1, u2);
        assert_eq!(d1, d2);
        assert!(u1.norm() <= 4.0 + 1e-12);
        assert_eq!(d1.weights.len(), 4);
        for m in &d1.weights {
            for row in m {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
            }
        }
        let vm = d1.vision_mass();
        assert!((0.0..=1.0).contains(&vm));
    }

    #[test]
    fn huge_inputs_are_clamped() {
        let net = small();
        let (mut f, g) = features();
        for v in f.state.iter_mut() {
            *v *= 1e3;
        }
        let (u, _) = net.act(&f, &g).unwrap();
        assert!(u.norm() <= 4.0 + 1e-9);
    }

    #[test]
    fn nan_input_reports_layer() {
        let net = small();
        let (mut f, g) = features();
        f.vision[0] = f64::NAN;
        match net.act(&f, &g) {
            Err(FalconError::Inference { layer }) => assert_eq!(layer, "vision"),
            other => panic!("expected inference error, got {other:?}"),
        }
    }

    #[test]
    fn gate_frame_target_roundtrip() {
        let gate = Pose6::new(1.0, 2.0, 1.2, 0.0, 0.0, 0.7);
        let u = Vector3::new(1.0, -2.0, 0.5);
        let t = encode_target(&u, &gate, 4.0);
        let back = gate_frame(&gate) * Vector3::new(t[0], t[1], t[2]) * 4.0;
        assert!((back - u).norm() < 1e-12);
    }

    #[test]
    fn json_roundtrip_preserves_outputs() {
        let net = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        net.save(&path).unwrap();
        let back = PolicyNet::load(&path).unwrap();
        let (f, g) = features();
        assert_eq!(net.act(&f, &g).unwrap().0, back.act(&f, &g).unwrap().0);
    }
}
