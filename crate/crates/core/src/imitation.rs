//! Imitation learning: expert rollouts with perturbed pose inputs (D_C),
//! supervised policy training and dataset aggregation.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_norm, ControlInput, ImuSample};
use crate::error::{FalconError, Result};
use crate::error_model::{sample_perturbed, QuantileModel};
use crate::eval::{
    parallel_map, run_episode, run_episode_with, PerceptionSource, Pilot, SimSettings,
};
use crate::geometry::{CameraModel, GateObservation, Pose6, Track, KEYPOINTS_PER_GATE};
use crate::nn::{Adam, Module, Tensor2};
use crate::policy::{
    encode_features, encode_target, PolicyConfig, PolicyNet, STATE_FEATURES, VISION_FEATURES,
};
use crate::seeding::{derive_seed, episode_seed, rng_from_seed};

/// Adds isotropic Gaussian noise to the acceleration and re-clamps it.
/// `sigma == 0` returns the command unchanged.
pub fn inject_noise<R: Rng + ?Sized>(
    u: &ControlInput,
    sigma: f64,
    a_max: f64,
    rng: &mut R,
) -> ControlInput {
    if sigma == 0.0 {
        return *u;
    }
    let mut n = || sigma * rng.sample::<f64, _>(StandardNormal);
    let noise = Vector3::new(n(), n(), n());
    ControlInput::new(clamp_norm(u.accel + noise, a_max), u.yaw_rate_cmd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub seed: u64,
    /// Std of the noise injected into the expert's applied acceleration.
    pub noise_sigma: f64,
    pub dagger_iterations: usize,
    /// Probability of flying the expert at each aggregation iteration.
    pub beta_schedule: Vec<f64>,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            seed: 0,
            noise_sigma: 0.5,
            dagger_iterations: 1,
            beta_schedule: vec![1.0],
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        let bad = |m: &str| Err(FalconError::Config(format!("training config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning_rate must be positive and lr_decay in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        if self.dagger_iterations == 0 || self.beta_schedule.len() != self.dagger_iterations {
            return bad("beta_schedule needs one entry per iteration");
        }
        if self.beta_schedule.iter().any(|b| !(0.0..=1.0).contains(b))
            || self.beta_schedule.windows(2).any(|w| w[1] > w[0])
        {
            return bad("beta values must lie in [0, 1] and be non-increasing");
        }
        Ok(())
    }
}

/// One supervised example: what the policy sees and what the expert did.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSample {
    /// Keypoints of the next gate.
    pub obs: GateObservation,
    /// Perturbed pose fed to the state branch.
    pub p_tilde: Pose6,
    /// Filtered velocity estimate.
    pub vel_est: Vector3<f64>,
    pub imu: ImuSample,
    pub gate: Pose6,
    /// Noise-free expert acceleration at the true state.
    pub u_star: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcConfig {
    pub runs: usize,
    pub run_seconds: f64,
    /// Perturbed poses per visited state.
    pub n_perturb: usize,
    /// Visit one state every this many control steps.
    pub record_every: usize,
}

impl Default for DcConfig {
    fn default() -> Self {
        Self {
            runs: 20,
            run_seconds: 20.0,
            n_perturb: 50,
            record_every: 1,
        }
    }
}

impl DcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0
            || !(self.run_seconds > 0.0)
            || self.n_perturb == 0
            || self.record_every == 0
        {
            return Err(FalconError::Config(format!("invalid D_C config {self:?}")));
        }
        Ok(())
    }
}

/// Rolls out `pilot` (normally the expert) with action noise and emits
/// `n_perturb` samples per visited state, each with its own perturbed pose
/// and the shared expert label.
#[allow(clippy::too_many_arguments)]
pub fn collect_dc(
    track: &Track,
    pilot: &Pilot,
    quantiles: &QuantileModel,
    perception: &PerceptionSource,
    settings: &SimSettings,
    cfg: &DcConfig,
    noise_sigma: f64,
    seed: u64,
) -> Result<Vec<ControllerSample>> {
    cfg.validate()?;
    let mut s = *settings;
    s.episode.action_noise = noise_sigma;
    s.episode.max_duration = Some(cfg.run_seconds);
    s.episode.laps = s.episode.laps.max(100);
    let mut rng = rng_from_seed(derive_seed(seed, "perturb"));
    let mut out = Vec::new();
    for run in 0..cfg.runs {
        let mut step = 0usize;
        run_episode_with(
            track,
            pilot,
            perception,
            &s,
            episode_seed(seed, run),
            &mut |ctx| {
                if step.is_multiple_of(cfg.record_every) {
                    let truth = ctx.state.pose();
                    let d = (ctx.gate.position() - ctx.state.position).norm();
                    for p_tilde in sample_perturbed(&truth, d, quantiles, cfg.n_perturb, &mut rng) {
                        out.push(ControllerSample {
                            obs: ctx.scene.gates[ctx.gate_index].clone(),
                            p_tilde,
                            vel_est: ctx.perception.velocity,
                            imu: *ctx.imu,
                            gate: ctx.gate.center,
                            u_star: ctx.expert.accel,
                        });
                    }
                }
                step += 1;
            },
        )?;
    }
    Ok(out)
}

const MAGIC: &[u8; 4] = b"FDC1";

#[derive(Debug, Serialize, Deserialize)]
struct DcHeader {
    count: usize,
    schema: Vec<String>,
    seed: u64,
}

fn dc_schema() -> Vec<String> {
    let mut s = Vec::new();
    for k in 0..KEYPOINTS_PER_GATE {
        s.push(format!("kp{k}_u"));
        s.push(format!("kp{k}_v"));
        s.push(format!("kp{k}_visible"));
    }
    s.push("gate_index".into());
    for p in ["p", "gate"] {
        for c in ["x", "y", "z", "roll", "pitch", "yaw"] {
            s.push(format!("{p}_{c}"));
        }
    }
    for c in [
        "vel_x", "vel_y", "vel_z", "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "u_x",
        "u_y", "u_z",
    ] {
        s.push(c.into());
    }
    s
}

fn sample_row(s: &ControllerSample) -> Vec<f64> {
    let mut r = Vec::with_capacity(dc_schema().len());
    for (uv, vis) in s.obs.keypoints.iter().zip(&s.obs.visible) {
        r.extend_from_slice(&[uv[0], uv[1], if *vis { 1.0 } else { 0.0 }]);
    }
    r.push(s.obs.gate_index as f64);
    for p in [&s.p_tilde, &s.gate] {
        r.extend_from_slice(&[p.x, p.y, p.z, p.roll, p.pitch, p.yaw]);
    }
    r.extend(s.vel_est.iter());
    r.extend(s.imu.to_array());
    r.extend(s.u_star.iter());
    r
}

fn row_sample(r: &[f64]) -> ControllerSample {
    let n = KEYPOINTS_PER_GATE;
    let keypoints = (0..n).map(|k| [r[3 * k], r[3 * k + 1]]).collect();
    let visible = (0..n).map(|k| r[3 * k + 2] != 0.0).collect();
    let o = 3 * n;
    let pose = |i: usize| Pose6 {
        x: r[i],
        y: r[i + 1],
        z: r[i + 2],
        roll: r[i + 3],
        pitch: r[i + 4],
        yaw: r[i + 5],
    };
    let mut imu = [0.0; 6];
    imu.copy_from_slice(&r[o + 16..o + 22]);
    ControllerSample {
        obs: GateObservation {
            gate_index: r[o] as usize,
            keypoints,
            visible,
        },
        p_tilde: pose(o + 1),
        gate: pose(o + 7),
        vel_est: Vector3::new(r[o + 13], r[o + 14], r[o + 15]),
        imu: ImuSample::from_array(imu),
        u_star: Vector3::new(r[o + 22], r[o + 23], r[o + 24]),
    }
}

/// Writes D_C as `magic | u32 header length | JSON header | f64 LE columns`.
pub fn save_dc(samples: &[ControllerSample], seed: u64, path: &Path) -> Result<()> {
    let schema = dc_schema();
    let header = serde_json::to_vec(&DcHeader {
        count: samples.len(),
        schema: schema.clone(),
        seed,
    })?;
    let rows: Vec<Vec<f64>> = samples.iter().map(sample_row).collect();
    let mut buf = Vec::with_capacity(8 + header.len() + 8 * rows.len() * schema.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for c in 0..schema.len() {
        for r in &rows {
            buf.extend_from_slice(&r[c].to_le_bytes());
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&buf)?;
    f.flush()?;
    Ok(())
}

/// Reads a D_C file; returns the samples and the seed recorded in its header.
pub fn load_dc(path: &Path) -> Result<(Vec<ControllerSample>, u64)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| FalconError::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("not a D_C file"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: DcHeader = serde_json::from_slice(
        bytes
            .get(8..8 + hlen)
            .ok_or_else(|| bad("truncated header"))?,
    )?;
    if header.schema != dc_schema() {
        return Err(bad("unexpected column schema"));
    }
    let cols = header.schema.len();
    let body = &bytes[8 + hlen..];
    if body.len() != 8 * cols * header.count {
        return Err(bad("column data length does not match header"));
    }
    let value = |c: usize, i: usize| {
        let o = 8 * (c * header.count + i);
        f64::from_le_bytes(body[o..o + 8].try_into().unwrap())
    };
    let samples = (0..header.count)
        .map(|i| {
            let row: Vec<f64> = (0..cols).map(|c| value(c, i)).collect();
            row_sample(&row)
        })
        .collect();
    Ok((samples, header.seed))
}

/// Encoded training tensors.
struct Encoded {
    vision: Vec<f64>,
    state: Vec<f64>,
    target: Vec<f64>,
}

fn encode_all(samples: &[ControllerSample], camera: &CameraModel, a_max: f64) -> Encoded {
    let mut e = Encoded {
        vision: Vec::with_capacity(samples.len() * VISION_FEATURES),
        state: Vec::with_capacity(samples.len() * STATE_FEATURES),
        target: Vec::with_capacity(samples.len() * 3),
    };
    for s in samples {
        let f = encode_features(
            &s.obs, &s.p_tilde, &s.vel_est, &s.imu, &s.gate, camera, a_max,
        );
        e.vision.extend_from_slice(&f.vision);
        e.state.extend_from_slice(&f.state);
        e.target
            .extend_from_slice(&encode_target(&s.u_star, &s.gate, a_max));
    }
    e
}

/// Result of a training run; `losses[e]` is the mean squared acceleration
/// error (m/s^2)^2 over epoch `e`.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyNet,
    pub losses: Vec<f64>,
}

/// Minimizes the mean squared error between the policy output and the expert
/// label with minibatch Adam. `init` continues from an existing network.
pub fn train_policy(
    dc: &[ControllerSample],
    cfg: &TrainConfig,
    camera: &CameraModel,
    a_max: f64,
    init: Option<PolicyNet>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dc.is_empty() {
        return Err(FalconError::Domain("empty controller dataset".into()));
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "train-policy"));
    let mut net = match init {
        Some(n) => n,
        None => PolicyNet::new(cfg.policy, a_max, &mut rng),
    };
    let data = encode_all(dc, camera, a_max);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..dc.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let scale = a_max * a_max;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut v = Vec::with_capacity(b * VISION_FEATURES);
            let mut s = Vec::with_capacity(b * STATE_FEATURES);
            for &i in batch {
                v.extend_from_slice(&data.vision[i * VISION_FEATURES..(i + 1) * VISION_FEATURES]);
                s.extend_from_slice(&data.state[i * STATE_FEATURES..(i + 1) * STATE_FEATURES]);
            }
            let cache = net.forward(
                &Tensor2::from_vec(b, VISION_FEATURES, v),
                &Tensor2::from_vec(b, STATE_FEATURES, s),
            );
            let out = cache.output();
            let mut d = Tensor2::zeros(b, 3);
            let mut loss = 0.0;
            for (r, &i) in batch.iter().enumerate() {
                for c in 0..3 {
                    let e = out.data[r * 3 + c] - data.target[i * 3 + c];
                    loss += e * e;
                    d.data[r * 3 + c] = 2.0 * e / b as f64;
                }
            }
            if !loss.is_finite() {
                return Err(FalconError::Divergence {
                    epoch,
                    detail: format!(
                        "non-finite loss after {} steps (learning rate {:.2e})",
                        adam.steps_taken(),
                        adam.learning_rate
                    ),
                });
            }
            total += loss;
            let mut grads = net.zero_grads();
            net.backward(&cache, &d, &mut grads);
            adam.step(net.params_mut(), &grads);
        }
        let mse = total / dc.len() as f64 * scale;
        log::info!("policy epoch {epoch}: mse {mse:.5}");
        losses.push(mse);
        adam.learning_rate *= cfg.lr_decay;
    }
    if !net.params_finite() {
        return Err(FalconError::Divergence {
            epoch: cfg.epochs,
            detail: "non-finite weights".into(),
        });
    }
    Ok(TrainOutcome {
        policy: net,
        losses,
    })
}

/// Mean squared acceleration error of `net` over `dc`, in (m/s^2)^2.
pub fn evaluate_mse(net: &PolicyNet, dc: &[ControllerSample], camera: &CameraModel) -> f64 {
    let data = encode_all(dc, camera, net.a_max);
    let mut total = 0.0;
    for start in (0..dc.len()).step_by(1024) {
        let b = (dc.len() - start).min(1024);
        let cache = net.forward(
            &Tensor2::from_vec(
                b,
                VISION_FEATURES,
                data.vision[start * VISION_FEATURES..(start + b) * VISION_FEATURES].to_vec(),
            ),
            &Tensor2::from_vec(
                b,
                STATE_FEATURES,
                data.state[start * STATE_FEATURES..(start + b) * STATE_FEATURES].to_vec(),
            ),
        );
        for (o, t) in cache
            .output()
            .data
            .iter()
            .zip(&data.target[start * 3..(start + b) * 3])
        {
            total += (o - t).powi(2);
        }
    }
    total / dc.len() as f64 * net.a_max * net.a_max
}

pub fn save_losses(losses: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "mse"])?;
    for (e, l) in losses.iter().enumerate() {
        w.write_record([e.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A track together with everything needed to collect data on it.
#[derive(Debug, Clone)]
pub struct TrackSetup {
    pub track: Track,
    pub quantiles: QuantileModel,
    pub perception: PerceptionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaggerIteration {
    pub beta: f64,
    pub dataset_size: usize,
    pub final_loss: f64,
    /// Success rate per track of the policy after this iteration, when evaluated.
    pub success_rates: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct DaggerOutcome {
    pub dataset: Vec<ControllerSample>,
    pub policy: PolicyNet,
    pub losses: Vec<f64>,
    pub iterations: Vec<DaggerIteration>,
}

/// Collects one aggregation iteration on every track: the expert flies with
/// probability `beta` per step, otherwise `policy` (the expert alone when no
/// policy exists yet). Tracks run on up to `jobs` threads.
#[allow(clippy::too_many_arguments)]
pub fn collect_iteration(
    iteration: usize,
    beta: f64,
    policy: Option<&PolicyNet>,
    setups: &[TrackSetup],
    settings: &SimSettings,
    dc_cfg: &DcConfig,
    noise_sigma: f64,
    seed: u64,
    jobs: usize,
) -> Result<Vec<ControllerSample>> {
    let pilot = match policy {
        Some(p) if beta < 1.0 => Pilot::Mixed {
            policy: Arc::new(p.clone()),
            beta,
        },
        _ => Pilot::Expert,
    };
    let parts = parallel_map(setups, jobs, |setup| {
        let s = derive_seed(seed, &format!("dagger/{iteration}/{}", setup.track.name));
        collect_dc(
            &setup.track,
            &pilot,
            &setup.quantiles,
            &setup.perception,
            settings,
            dc_cfg,
            noise_sigma,
            s,
        )
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// Dataset aggregation. Iteration `k` collects with `beta_k` (see
/// [`collect_iteration`]), appends to the dataset and retrains on the union,
/// continuing from the previous iteration's weights. A non-empty
/// `initial_dataset` stands in for iteration 0's collection. When
/// `eval_laps > 0` the policy is flown after each iteration and its success
/// rate logged.
#[allow(clippy::too_many_arguments)]
pub fn dagger_iterate(
    initial_policy: Option<PolicyNet>,
    initial_dataset: Vec<ControllerSample>,
    setups: &[TrackSetup],
    settings: &SimSettings,
    dc_cfg: &DcConfig,
    cfg: &TrainConfig,
    eval_laps: usize,
    seed: u64,
    jobs: usize,
) -> Result<DaggerOutcome> {
    cfg.validate()?;
    let mut policy = initial_policy;
    let mut dataset = initial_dataset;
    let mut iterations = Vec::new();
    let mut losses = Vec::new();
    for (k, &beta) in cfg.beta_schedule.iter().enumerate() {
        if k > 0 || dataset.is_empty() {
            let before = dataset.len();
            dataset.extend(collect_iteration(
                k,
                beta,
                policy.as_ref(),
                setups,
                settings,
                dc_cfg,
                cfg.noise_sigma,
                seed,
                jobs,
            )?);
            if dataset.len() == before {
                return Err(FalconError::Domain(format!(
                    "iteration {k} collected no samples"
                )));
            }
        }
        let mut iter_cfg = cfg.clone();
        iter_cfg.seed = derive_seed(cfg.seed, &format!("iteration/{k}"));
        let out = train_policy(
            &dataset,
            &iter_cfg,
            &settings.camera,
            settings.dynamics.a_max,
            policy.take(),
        )?;
        losses.extend(&out.losses);
        let mut success_rates = Vec::new();
        if eval_laps > 0 {
            let mut s = *settings;
            s.episode.laps = eval_laps;
            let pilot = Pilot::Mm(Arc::new(out.policy.clone()));
            let results = parallel_map(setups, jobs, |setup| {
                run_episode(
                    &setup.track,
                    &pilot,
                    &setup.perception,
                    &s,
                    derive_seed(seed, "dagger-eval"),
                )
            })?;
            for (setup, r) in setups.iter().zip(&results) {
                log::info!(
                    "aggregation iteration {k}: {} SR {:.3}",
                    setup.track.name,
                    r.success_rate()
                );
                success_rates.push((setup.track.name.clone(), r.success_rate()));
            }
        }
        iterations.push(DaggerIteration {
            beta,
            dataset_size: dataset.len(),
            final_loss: *out.losses.last().expect("epochs > 0"),
            success_rates,
        });
        policy = Some(out.policy);
    }
    Ok(DaggerOutcome {
        dataset,
        policy: policy.expect("at least one iteration ran"),
        losses,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_model::LinearQuantile;
    use crate::geometry::builtin_track;
    use crate::perception::NoiseOracleConfig;

    fn zero_model() -> QuantileModel {
        QuantileModel {
            lower: vec![LinearQuantile::constant(0.1, 0.0); 4],
            upper: vec![LinearQuantile::constant(0.9, 0.0); 4],
        }
    }

    fn tiny_dc(n_perturb: usize, model: &QuantileModel) -> Vec<ControllerSample> {
        let track = builtin_track("circle").unwrap();
        let cfg = DcConfig {
            runs: 1,
            run_seconds: 2.0,
            n_perturb,
            record_every: 1,
        };
        collect_dc(
            &track,
            &Pilot::Expert,
            model,
            &PerceptionSource::Oracle(NoiseOracleConfig::for_track("circle")),
            &SimSettings::default(),
            &cfg,
            0.5,
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let u = ControlInput::new(Vector3::new(3.0, 2.0, 1.0), 0.4);
        assert_eq!(inject_noise(&u, 0.0, 4.0, &mut rng_from_seed(1)), u);
        let n = inject_noise(&u, 5.0, 4.0, &mut rng_from_seed(1));
        assert!(n.accel.norm() <= 4.0 + 1e-12);
        assert_eq!(n.yaw_rate_cmd, 0.4);
    }

    #[test]
    fn labels_are_noise_free_expert_actions() {
        let track = builtin_track("circle").unwrap();
        let settings = SimSettings::default();
        let cfg = DcConfig {
            runs: 1,
            run_seconds: 2.0,
            n_perturb: 1,
            record_every: 1,
        };
        let dc = collect_dc(
            &track,
            &Pilot::Expert,
            &zero_model(),
            &PerceptionSource::Oracle(NoiseOracleConfig::exact()),
            &settings,
            &cfg,
            0.8,
            9,
        )
        .unwrap();
        assert!(!dc.is_empty());
        for s in &dc {
            // zero-width intervals leave the true pose unperturbed
            assert!(s.u_star.norm() <= settings.dynamics.a_max + 1e-12);
            let pos = s.p_tilde.position();
            let u =
                crate::control::aim_point(&pos, &track.gates[s.obs.gate_index], &settings.expert);
            assert!(u.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn perturbations_share_labels() {
        let dc = tiny_dc(5, &zero_model());
        assert_eq!(dc.len() % 5, 0);
        for chunk in dc.chunks(5) {
            assert!(chunk
                .iter()
                .all(|s| s.u_star == chunk[0].u_star && s.p_tilde == chunk[0].p_tilde));
        }
    }

    #[test]
    fn binary_roundtrip() {
        let dc = tiny_dc(2, &zero_model());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dc.bin");
        save_dc(&dc, 42, &p).unwrap();
        let (back, seed) = load_dc(&p).unwrap();
        assert_eq!(seed, 42);
        assert_eq!(back, dc);
        std::fs::write(&p, b"junk").unwrap();
        assert!(load_dc(&p).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.dagger_iterations = 3;
        c.beta_schedule = vec![1.0, 0.5, 0.25];
        assert!(c.validate().is_ok());
        c.beta_schedule = vec![1.0, 0.5, 0.75];
        assert!(c.validate().is_err());
        c.beta_schedule = vec![1.0, 0.5];
        assert!(c.validate().is_err());
    }
}
