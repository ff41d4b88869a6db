//! Closed-loop episodes, gate sequencing, success metrics and trajectory logs.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{dp_control, expert_control, yaw_control, ExpertConfig};
use crate::dynamics::{step, synthesize_imu, ControlInput, DynamicsConfig, ImuSample, QuadState};
use crate::error::{FalconError, Result};
use crate::geometry::{
    detect_crossing, CameraModel, Gate, KeypointRenderer, Pose6, SceneObservation, SceneRenderer,
    Track, KEYPOINTS_PER_GATE,
};
use crate::imitation::inject_noise;
use crate::perception::{
    Backend, NoiseOracleConfig, NpeOracle, NpeRegressor, PerceptionConfig, PerceptionOutput,
    PerceptionPipeline,
};
use crate::policy::PolicyNet;
use crate::seeding::{derive_seed, rng_from_seed};

/// Who flies the vehicle.
#[derive(Debug, Clone)]
pub enum Pilot {
    /// Expert law on ground truth.
    Expert,
    /// Expert law on the filtered estimate.
    Dp,
    /// Learned multi-modal policy.
    Mm(Arc<PolicyNet>),
    /// Per step: expert with probability `beta`, otherwise the policy.
    Mixed { policy: Arc<PolicyNet>, beta: f64 },
    /// Commands nothing.
    Hover,
}

impl Pilot {
    pub fn name(&self) -> &'static str {
        match self {
            Pilot::Expert => "expert",
            Pilot::Dp => "dp",
            Pilot::Mm(_) => "mm",
            Pilot::Mixed { .. } => "mixed",
            Pilot::Hover => "hover",
        }
    }
}

/// Where raw pose measurements come from.
#[derive(Debug, Clone)]
pub enum PerceptionSource {
    Oracle(NoiseOracleConfig),
    Regressor(Arc<NpeRegressor>),
}

impl PerceptionSource {
    fn backend(&self, dt: f64) -> Backend {
        match self {
            PerceptionSource::Oracle(c) => Backend::Oracle(NpeOracle::new(*c, dt)),
            PerceptionSource::Regressor(r) => Backend::Regressor(Arc::clone(r)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub laps: usize,
    /// Half-width of the uniform start-position perturbation, meters.
    pub start_jitter: f64,
    /// Time budget per lap, seconds.
    pub lap_timeout: f64,
    /// Std of Gaussian noise added to the applied acceleration.
    pub action_noise: f64,
    /// Hard cap on episode length in seconds, on top of the lap budget.
    #[serde(default)]
    pub max_duration: Option<f64>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            laps: 10,
            start_jitter: 0.2,
            lap_timeout: 60.0,
            action_noise: 0.0,
            max_duration: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.laps == 0
            || !(self.start_jitter >= 0.0)
            || !(self.lap_timeout > 0.0)
            || !(self.action_noise >= 0.0)
            || self.max_duration.is_some_and(|d| !(d > 0.0))
        {
            return Err(FalconError::Config(format!(
                "invalid episode config {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything an episode needs besides the track, pilot and seed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimSettings {
    pub episode: EpisodeConfig,
    pub dynamics: DynamicsConfig,
    pub expert: ExpertConfig,
    pub camera: CameraModel,
    pub perception: PerceptionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Every scheduled gate was attempted and passed.
    Completed,
    /// Every scheduled gate was attempted but at least one was hit.
    Collision,
    OffTrack,
    Timeout,
}

/// One logged time step. Events: `cross:k`, `collide:k`, `reset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub est_z: f64,
    pub est_yaw: f64,
    pub next_gate: usize,
    pub event: String,
}

impl TrajectoryRow {
    fn new(t: f64, s: &QuadState, est: &Pose6, next_gate: usize, event: String) -> Self {
        Self {
            t,
            x: s.position.x,
            y: s.position.y,
            z: s.position.z,
            yaw: s.yaw,
            vx: s.velocity.x,
            vy: s.velocity.y,
            vz: s.velocity.z,
            est_x: est.x,
            est_y: est.y,
            est_z: est.z,
            est_yaw: est.yaw,
            next_gate,
            event,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub lap: usize,
    pub gate: usize,
    pub passed: bool,
    pub error: f64,
}

/// Squared-error sums of raw and filtered position/yaw over steps with a
/// valid raw measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PerceptionStats {
    pub samples: usize,
    pub raw_position_sq: f64,
    pub raw_yaw_sq: f64,
    pub filtered_position_sq: f64,
    pub filtered_yaw_sq: f64,
}

impl PerceptionStats {
    pub fn merge(&mut self, o: &PerceptionStats) {
        self.samples += o.samples;
        self.raw_position_sq += o.raw_position_sq;
        self.raw_yaw_sq += o.raw_yaw_sq;
        self.filtered_position_sq += o.filtered_position_sq;
        self.filtered_yaw_sq += o.filtered_yaw_sq;
    }

    fn rms(sum: f64, n: usize) -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            (sum / n as f64).sqrt()
        }
    }

    pub fn raw_position_rmse(&self) -> f64 {
        Self::rms(self.raw_position_sq, self.samples)
    }

    pub fn filtered_position_rmse(&self) -> f64 {
        Self::rms(self.filtered_position_sq, self.samples)
    }

    pub fn raw_yaw_rmse(&self) -> f64 {
        Self::rms(self.raw_yaw_sq, self.samples)
    }

    pub fn filtered_yaw_rmse(&self) -> f64 {
        Self::rms(self.filtered_yaw_sq, self.samples)
    }
}

/// Visibility of the next gate and the policy's attention on the vision token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionSample {
    pub visible_keypoints: usize,
    pub vision_mass: f64,
}

/// Mean vision-token attention mass split by next-gate visibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionSummary {
    /// Steps with every keypoint of the next gate in view.
    pub visible_steps: usize,
    pub visible_mass: Option<f64>,
    /// Steps with no keypoint in view.
    pub hidden_steps: usize,
    pub hidden_mass: Option<f64>,
}

impl AttentionSummary {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a AttentionSample>) -> Self {
        let (mut visible, mut hidden) = (Vec::new(), Vec::new());
        for a in samples {
            if a.visible_keypoints == KEYPOINTS_PER_GATE {
                visible.push(a.vision_mass);
            } else if a.visible_keypoints == 0 {
                hidden.push(a.vision_mass);
            }
        }
        Self {
            visible_steps: visible.len(),
            visible_mass: mean(&visible),
            hidden_steps: hidden.len(),
            hidden_mass: mean(&hidden),
        }
    }

    /// Whether attention on vision is strictly higher with the gate in view;
    /// `None` when either condition never occurred.
    pub fn vision_preferred(&self) -> Option<bool> {
        Some(self.visible_mass? > self.hidden_mass?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub track: String,
    pub controller: String,
    pub seed: u64,
    pub gates_attempted: usize,
    pub gates_passed: usize,
    /// One entry per passed gate.
    pub crossing_errors: Vec<f64>,
    pub outcomes: Vec<GateOutcome>,
    pub termination: Termination,
    pub trajectory: Vec<TrajectoryRow>,
    pub perception: PerceptionStats,
    pub attention: Vec<AttentionSample>,
}

impl EpisodeResult {
    pub fn success_rate(&self) -> f64 {
        self.gates_passed as f64 / self.gates_attempted as f64
    }

    pub fn mean_gate_error(&self) -> Option<f64> {
        mean(&self.crossing_errors)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// What an observer sees at each decision point.
pub struct StepContext<'a> {
    pub t: f64,
    pub state: &'a QuadState,
    pub scene: &'a SceneObservation,
    /// Reading for the control applied over the previous step.
    pub imu: &'a ImuSample,
    pub perception: &'a PerceptionOutput,
    pub gate_index: usize,
    pub gate: &'a Gate,
    /// Expert command at the true state (the imitation label).
    pub expert: &'a ControlInput,
}

/// Nominal start plus a uniform position perturbation.
pub fn perturbed_start<R: Rng + ?Sized>(track: &Track, jitter: f64, rng: &mut R) -> Pose6 {
    let s = track.start_pose();
    if jitter == 0.0 {
        return s;
    }
    let mut d = || rng.random_range(-jitter..=jitter);
    Pose6::level(s.position() + Vector3::new(d(), d(), d()), s.yaw)
}

pub fn run_episode(
    track: &Track,
    pilot: &Pilot,
    perception: &PerceptionSource,
    settings: &SimSettings,
    seed: u64,
) -> Result<EpisodeResult> {
    run_episode_with(track, pilot, perception, settings, seed, &mut |_| {})
}

/// Runs one multi-lap episode at the dynamics rate, calling `observer` before
/// every control decision.
pub fn run_episode_with(
    track: &Track,
    pilot: &Pilot,
    perception: &PerceptionSource,
    settings: &SimSettings,
    seed: u64,
    observer: &mut dyn FnMut(&StepContext),
) -> Result<EpisodeResult> {
    let ep = &settings.episode;
    ep.validate()?;
    settings.dynamics.validate()?;
    settings.expert.validate()?;
    settings.perception.validate()?;
    track.validate()?;

    let dt = settings.dynamics.dt;
    let n_gates = track.gates.len();
    let scheduled = ep.laps * n_gates;
    let t_max = (ep.laps as f64 * ep.lap_timeout).min(ep.max_duration.unwrap_or(f64::INFINITY));
    let renderer = KeypointRenderer::new(settings.camera, track);

    let mut rng_start = rng_from_seed(derive_seed(seed, "start"));
    let mut rng_sense = rng_from_seed(derive_seed(seed, "perception"));
    let mut rng_imu = rng_from_seed(derive_seed(seed, "imu"));
    let mut rng_act = rng_from_seed(derive_seed(seed, "action"));

    let mut pipeline = PerceptionPipeline::new(perception.backend(dt), settings.perception);
    let mut start = perturbed_start(track, ep.start_jitter, &mut rng_start);
    let mut state = QuadState::at_rest(&start);
    let mut applied = ControlInput::default();

    let mut next = 0usize;
    let mut lap = 0usize;
    let mut resolved = 0usize;
    let mut outcomes = Vec::new();
    let mut crossing_errors = Vec::new();
    let mut rows = Vec::new();
    let mut stats = PerceptionStats::default();
    let mut attention = Vec::new();
    let mut event = String::new();
    let mut k: u64 = 0;

    let termination = loop {
        let t = k as f64 * dt;
        let pose = state.pose();
        let scene = renderer.render(&pose);
        let imu = synthesize_imu(&applied, &settings.dynamics.imu, &mut rng_imu);
        let percept = pipeline.step(&pose, &scene, &imu, dt, &start, &mut rng_sense)?;
        if percept.raw.valid {
            stats.samples += 1;
            stats.raw_position_sq += (percept.raw.pose.position() - state.position).norm_squared();
            stats.raw_yaw_sq +=
                crate::geometry::wrap_angle(percept.raw.pose.yaw - state.yaw).powi(2);
            stats.filtered_position_sq +=
                (percept.filtered.pose.position() - state.position).norm_squared();
            stats.filtered_yaw_sq +=
                crate::geometry::wrap_angle(percept.filtered.pose.yaw - state.yaw).powi(2);
        }
        rows.push(TrajectoryRow::new(
            t,
            &state,
            &percept.filtered.pose,
            next,
            std::mem::take(&mut event),
        ));

        if resolved == scheduled {
            break if crossing_errors.len() == scheduled {
                Termination::Completed
            } else {
                Termination::Collision
            };
        }
        if t >= t_max {
            break Termination::Timeout;
        }

        let gate = &track.gates[next];
        let mut expert = expert_control(&state, gate, &settings.expert);
        expert.yaw_rate_cmd = yaw_control(&state, gate, settings.expert.k_yaw);
        observer(&StepContext {
            t,
            state: &state,
            scene: &scene,
            imu: &imu,
            perception: &percept,
            gate_index: next,
            gate,
            expert: &expert,
        });

        let est = &percept.filtered;
        let believed = QuadState {
            position: est.pose.position(),
            velocity: percept.velocity,
            yaw: est.pose.yaw,
            yaw_rate: 0.0,
        };
        let policy_step =
            |net: &PolicyNet, attention: &mut Vec<AttentionSample>| -> Result<ControlInput> {
                let obs = &scene.gates[next];
                let (a, diag) = net.control(
                    obs,
                    &est.pose,
                    &percept.velocity,
                    &imu,
                    gate,
                    &settings.camera,
                )?;
                attention.push(AttentionSample {
                    visible_keypoints: obs.visible_count(),
                    vision_mass: diag.vision_mass(),
                });
                Ok(ControlInput::new(
                    a,
                    yaw_control(&believed, gate, settings.expert.k_yaw),
                ))
            };
        let command = match pilot {
            Pilot::Expert => Ok(expert),
            Pilot::Dp => Ok(dp_control(est, &percept.velocity, gate, &settings.expert)),
            Pilot::Mm(net) => policy_step(net, &mut attention),
            Pilot::Mixed { policy, beta } => {
                if rng_act.random::<f64>() < *beta {
                    Ok(expert)
                } else {
                    policy_step(policy, &mut attention)
                }
            }
            Pilot::Hover => Ok(ControlInput::default()),
        };
        let command = match command {
            Ok(c) if c.is_finite() => c,
            Ok(c) => {
                log::warn!(
                    "{} produced a non-finite command {c:?} at t={t:.2}",
                    pilot.name()
                );
                break Termination::OffTrack;
            }
            Err(e) => {
                log::warn!("{} failed at t={t:.2}: {e}", pilot.name());
                break Termination::OffTrack;
            }
        };
        applied = inject_noise(
            &command,
            ep.action_noise,
            settings.dynamics.a_max,
            &mut rng_act,
        );

        let prev = state.position;
        state = step(&state, &applied, dt, &settings.dynamics)?;
        k += 1;

        if let Some(c) = detect_crossing(&prev, &state.position, gate) {
            if c.direction_ok {
                let passed = c.center_error <= gate.inner_radius;
                outcomes.push(GateOutcome {
                    lap,
                    gate: next,
                    passed,
                    error: c.center_error,
                });
                if passed {
                    crossing_errors.push(c.center_error);
                }
                event = format!("{}:{next}", if passed { "cross" } else { "collide" });
                resolved += 1;
                match track.successor(next) {
                    Some(n) => {
                        if n == 0 {
                            lap += 1;
                        }
                        next = n;
                    }
                    None => {
                        lap += 1;
                        next = 0;
                        if resolved < scheduled {
                            // open track: log the crossing, then relaunch
                            rows.push(TrajectoryRow::new(
                                k as f64 * dt,
                                &state,
                                &percept.filtered.pose,
                                next,
                                std::mem::take(&mut event),
                            ));
                            start = perturbed_start(track, ep.start_jitter, &mut rng_start);
                            state = QuadState::at_rest(&start);
                            applied = ControlInput::default();
                            pipeline.reset();
                            event = "reset".into();
                        }
                    }
                }
            }
        }

        if !state.is_finite() || !track.workspace.contains(&state.position) {
            rows.push(TrajectoryRow::new(
                k as f64 * dt,
                &state,
                &percept.filtered.pose,
                next,
                std::mem::take(&mut event),
            ));
            break Termination::OffTrack;
        }
    };

    Ok(EpisodeResult {
        track: track.name.clone(),
        controller: pilot.name().into(),
        seed,
        gates_attempted: scheduled,
        gates_passed: crossing_errors.len(),
        crossing_errors,
        outcomes,
        termination,
        trajectory: rows,
        perception: stats,
        attention,
    })
}

/// Success rate and crossing errors recomputed from a trajectory alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PostHocMetrics {
    pub gates_passed: usize,
    pub crossing_errors: Vec<f64>,
    pub collisions: usize,
}

/// Re-detects crossings between consecutive logged positions, using the
/// gate each row was heading for. Segments ending in a relaunch are skipped.
pub fn post_hoc_metrics(track: &Track, rows: &[TrajectoryRow]) -> PostHocMetrics {
    let mut m = PostHocMetrics {
        gates_passed: 0,
        crossing_errors: Vec::new(),
        collisions: 0,
    };
    for w in rows.windows(2) {
        if w[1].event == "reset" {
            continue;
        }
        let gate = &track.gates[w[0].next_gate];
        if let Some(c) = detect_crossing(&w[0].position(), &w[1].position(), gate) {
            if !c.direction_ok {
                continue;
            }
            if c.center_error <= gate.inner_radius {
                m.gates_passed += 1;
                m.crossing_errors.push(c.center_error);
            } else {
                m.collisions += 1;
            }
        }
    }
    m
}

pub fn log_trajectory(result: &EpisodeResult, path: &Path) -> Result<()> {
    if result.trajectory.is_empty() {
        return Err(FalconError::Domain("empty trajectory".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in &result.trajectory {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStat {
    pub gate: usize,
    pub attempted: usize,
    pub passed: usize,
    pub mge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub track: String,
    pub controller: String,
    pub episodes: usize,
    pub gates_attempted: usize,
    pub gates_passed: usize,
    pub sr: f64,
    pub mge: Option<f64>,
    pub per_gate: Vec<GateStat>,
    pub terminations: Vec<Termination>,
    pub raw_position_rmse: Option<f64>,
    pub filtered_position_rmse: Option<f64>,
    pub raw_yaw_rmse: Option<f64>,
    pub filtered_yaw_rmse: Option<f64>,
    /// Present for learned policies.
    pub attention: Option<AttentionSummary>,
}

impl EvalRow {
    pub fn from_episodes(episodes: &[EpisodeResult], n_gates: usize) -> Self {
        let attempted: usize = episodes.iter().map(|e| e.gates_attempted).sum();
        let passed: usize = episodes.iter().map(|e| e.gates_passed).sum();
        let errors: Vec<f64> = episodes
            .iter()
            .flat_map(|e| e.crossing_errors.iter().copied())
            .collect();
        let laps_total: usize = episodes
            .iter()
            .map(|e| e.gates_attempted / n_gates.max(1))
            .sum();
        let mut stats = PerceptionStats::default();
        for e in episodes {
            stats.merge(&e.perception);
        }
        let per_gate = (0..n_gates)
            .map(|g| {
                let errs: Vec<f64> = episodes
                    .iter()
                    .flat_map(|e| &e.outcomes)
                    .filter(|o| o.gate == g && o.passed)
                    .map(|o| o.error)
                    .collect();
                GateStat {
                    gate: g,
                    attempted: laps_total,
                    passed: errs.len(),
                    mge: mean(&errs),
                }
            })
            .collect();
        Self {
            track: episodes
                .first()
                .map(|e| e.track.clone())
                .unwrap_or_default(),
            controller: episodes
                .first()
                .map(|e| e.controller.clone())
                .unwrap_or_default(),
            episodes: episodes.len(),
            gates_attempted: attempted,
            gates_passed: passed,
            sr: if attempted == 0 {
                0.0
            } else {
                passed as f64 / attempted as f64
            },
            mge: mean(&errors),
            per_gate,
            terminations: episodes.iter().map(|e| e.termination).collect(),
            raw_position_rmse: finite(stats.raw_position_rmse()),
            filtered_position_rmse: finite(stats.filtered_position_rmse()),
            raw_yaw_rmse: finite(stats.raw_yaw_rmse()),
            filtered_yaw_rmse: finite(stats.filtered_yaw_rmse()),
            attention: episodes.iter().any(|e| !e.attention.is_empty()).then(|| {
                AttentionSummary::from_samples(episodes.iter().flat_map(|e| &e.attention))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub laps: usize,
    pub seeds: Vec<u64>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, track: &str, controller: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.track == track && r.controller == controller)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if text.trim().is_empty() {
            return Err(FalconError::Format(format!("{} is empty", path.display())));
        }
        let report: Self = serde_json::from_str(&text)?;
        if report.rows.is_empty() {
            return Err(FalconError::Format(format!(
                "{} has no rows",
                path.display()
            )));
        }
        Ok(report)
    }
}

/// Seed of one evaluation episode; independent of the controller so every
/// controller sees the same start perturbations and noise streams.
pub fn evaluation_seed(root: u64, track: &str) -> u64 {
    derive_seed(root, &format!("eval/{track}"))
}

/// Cross product of tracks and pilots, one episode of `settings.episode.laps`
/// laps per seed. Episodes run on up to `jobs` threads; results are assembled
/// in input order and returned alongside the report.
pub fn evaluate_matrix(
    tracks: &[Track],
    pilots: &[Pilot],
    perception: &dyn Fn(&Track) -> PerceptionSource,
    settings: &SimSettings,
    seeds: &[u64],
    jobs: usize,
) -> Result<(EvalReport, Vec<EpisodeResult>)> {
    let mut jobs_list = Vec::new();
    for track in tracks {
        let source = perception(track);
        for pilot in pilots {
            for &s in seeds {
                jobs_list.push((
                    track,
                    pilot,
                    source.clone(),
                    evaluation_seed(s, &track.name),
                ));
            }
        }
    }
    let results = parallel_map(&jobs_list, jobs, |(track, pilot, source, seed)| {
        run_episode(track, pilot, source, settings, *seed)
    })?;

    let per = seeds.len();
    let mut rows = Vec::new();
    let mut i = 0;
    for track in tracks {
        for _ in pilots {
            rows.push(EvalRow::from_episodes(
                &results[i..i + per],
                track.gates.len(),
            ));
            i += per;
        }
    }
    let report = EvalReport {
        laps: settings.episode.laps,
        seeds: seeds.to_vec(),
        rows,
    };
    Ok((report, results))
}

/// Maps `f` over `items` on `jobs` threads, preserving order. The first error wins.
pub fn parallel_map<T: Sync, U: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// A minimum SR and/or maximum MGE for one report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub track: String,
    pub controller: String,
    #[serde(default)]
    pub min_sr: Option<f64>,
    #[serde(default)]
    pub max_mge: Option<f64>,
}

impl Threshold {
    /// `None` when the row is absent.
    pub fn check(&self, report: &EvalReport) -> Option<bool> {
        Some(self.check_row(report.row(&self.track, &self.controller)?))
    }

    pub fn check_row(&self, row: &EvalRow) -> bool {
        let sr_ok = self.min_sr.is_none_or(|m| row.sr >= m);
        let mge_ok = self.max_mge.is_none_or(|m| row.mge.is_some_and(|v| v <= m));
        sr_ok && mge_ok
    }
}

pub fn load_thresholds(path: &Path) -> Result<Vec<Threshold>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
