//! Poses, gates, tracks, pinhole projection and gate-crossing detection.
//!
//! World frame is z-up. A body (camera) frame looks along its local +x axis;
//! the image plane has u pointing right and v pointing down.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FalconError, Result};

/// Default inner radius of a racing gate in meters.
pub const GATE_RADIUS: f64 = 0.38;
/// Keypoints sampled on each gate's inner circle.
pub const KEYPOINTS_PER_GATE: usize = 8;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Position plus roll/pitch/yaw attitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6 {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw: wrap_angle(yaw),
        }
    }

    /// Level pose (zero roll and pitch).
    pub fn level(position: Vector3<f64>, yaw: f64) -> Self {
        Self::new(position.x, position.y, position.z, 0.0, 0.0, yaw)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Body-to-world rotation, R = Rz(yaw) * Ry(pitch) * Rx(roll).
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(FalconError::Domain(format!("non-finite pose {self:?}")));
        }
        if self.yaw <= -PI || self.yaw > PI {
            return Err(FalconError::Domain(format!(
                "yaw {} outside (-pi, pi]",
                self.yaw
            )));
        }
        if self.roll.abs() > FRAC_PI_2 || self.pitch.abs() > FRAC_PI_2 {
            return Err(FalconError::Domain(
                "roll/pitch outside [-pi/2, pi/2]".into(),
            ));
        }
        Ok(())
    }
}

/// Unit-circle encoding of a heading angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YawEncoding {
    pub sin_yaw: f64,
    pub cos_yaw: f64,
}

pub fn yaw_encode(yaw: f64) -> Result<YawEncoding> {
    if !yaw.is_finite() {
        return Err(FalconError::Domain(format!("cannot encode yaw {yaw}")));
    }
    let (sin_yaw, cos_yaw) = yaw.sin_cos();
    Ok(YawEncoding { sin_yaw, cos_yaw })
}

/// Recovers a yaw in (-pi, pi] from a possibly unnormalized encoding.
pub fn yaw_decode(enc: YawEncoding) -> Result<f64> {
    let norm = enc.sin_yaw.hypot(enc.cos_yaw);
    if !(norm > 1e-6) {
        return Err(FalconError::DegenerateEncoding(norm));
    }
    // atan2 returns [-pi, pi]; fold -pi onto pi.
    Ok(wrap_angle(enc.sin_yaw.atan2(enc.cos_yaw)))
}

/// A circular gate; its opening faces along the center pose's body +x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gate {
    pub center: Pose6,
    pub inner_radius: f64,
}

impl Gate {
    pub fn new(center: Pose6, inner_radius: f64) -> Self {
        Self {
            center,
            inner_radius,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        self.center.position()
    }

    /// Unit normal; flying along it counts as a forward crossing.
    pub fn normal(&self) -> Vector3<f64> {
        self.center.rotation() * Vector3::x()
    }

    /// Points on the inner circle, uniformly spaced, starting at the gate's local +y.
    pub fn rim_points(&self, n: usize) -> Vec<Vector3<f64>> {
        let rot = self.center.rotation();
        let ey = rot * Vector3::y();
        let ez = rot * Vector3::z();
        let c = self.position();
        (0..n)
            .map(|i| {
                let th = 2.0 * PI * i as f64 / n as f64;
                c + self.inner_radius * (th.cos() * ey + th.sin() * ez)
            })
            .collect()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    /// 6 x 6 x 3 m flight area centered on the origin in x/y.
    fn default() -> Self {
        Self {
            min: [-3.0, -3.0, 0.0],
            max: [3.0, 3.0, 3.0],
        }
    }
}

impl Workspace {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }
}

/// An ordered gate sequence inside a workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub gates: Vec<Gate>,
    pub workspace: Workspace,
    /// Whether the last gate leads back to the first one.
    pub laps_close_cycle: bool,
}

impl Track {
    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() {
            return Err(FalconError::Domain(format!(
                "track {} has no gates",
                self.name
            )));
        }
        for (i, g) in self.gates.iter().enumerate() {
            g.center.validate()?;
            if !(g.inner_radius > 0.0) {
                return Err(FalconError::Domain(format!(
                    "gate {i} radius must be positive"
                )));
            }
            if !self.workspace.contains(&g.position()) {
                return Err(FalconError::Domain(format!(
                    "gate {i} of {} lies outside the workspace",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Nominal take-off pose: 1.5 m in front of the first gate, facing it.
    pub fn start_pose(&self) -> Pose6 {
        let g = &self.gates[0];
        let p = g.position() - 1.5 * g.normal();
        Pose6::level(p, g.center.yaw)
    }

    /// Index of the gate following `i` in flight order, if any.
    pub fn successor(&self, i: usize) -> Option<usize> {
        if i + 1 < self.gates.len() {
            Some(i + 1)
        } else if self.laps_close_cycle {
            Some(0)
        } else {
            None
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrackFile = serde_json::from_str(text)?;
        let track = Track::from(file);
        track.validate()?;
        Ok(track)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TrackFile::from(self))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// On-disk track layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackFile {
    pub name: String,
    pub workspace: Workspace,
    pub gates: Vec<GateFile>,
    pub closed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateFile {
    pub pos: [f64; 3],
    pub rpy: [f64; 3],
    pub radius: f64,
}

impl From<&Track> for TrackFile {
    fn from(t: &Track) -> Self {
        Self {
            name: t.name.clone(),
            workspace: t.workspace,
            gates: t
                .gates
                .iter()
                .map(|g| GateFile {
                    pos: [g.center.x, g.center.y, g.center.z],
                    rpy: [g.center.roll, g.center.pitch, g.center.yaw],
                    radius: g.inner_radius,
                })
                .collect(),
            closed: t.laps_close_cycle,
        }
    }
}

impl From<TrackFile> for Track {
    fn from(f: TrackFile) -> Self {
        Self {
            name: f.name,
            workspace: f.workspace,
            gates: f
                .gates
                .iter()
                .map(|g| {
                    // Keep the stored yaw verbatim so export/import is bit-exact.
                    let center = Pose6 {
                        x: g.pos[0],
                        y: g.pos[1],
                        z: g.pos[2],
                        roll: g.rpy[0],
                        pitch: g.rpy[1],
                        yaw: g.rpy[2],
                    };
                    Gate::new(center, g.radius)
                })
                .collect(),
            laps_close_cycle: f.closed,
        }
    }
}

fn gate_at(x: f64, y: f64, z: f64, yaw: f64) -> Gate {
    Gate::new(Pose6::new(x, y, z, 0.0, 0.0, yaw), GATE_RADIUS)
}

/// The three evaluation tracks: circle, uturn, figure8.
///
/// Gate poses are fixed constants: spacing of 2-3 m and turns that the expert
/// flies at 1 m/s.
pub fn builtin_tracks() -> Vec<Track> {
    let ws = Workspace::default();

    // Radius-2 m circle at 1.2 m, counter-clockwise, normals tangent.
    let circle = (0..4)
        .map(|k| {
            let th = k as f64 * FRAC_PI_2;
            gate_at(2.0 * th.cos(), 2.0 * th.sin(), 1.2, th + FRAC_PI_2)
        })
        .collect();

    // Open U: out along y = -1.5, round the far end, back along y = +1.5.
    let uturn = vec![
        gate_at(-1.0, -1.5, 1.2, 0.0),
        gate_at(1.6, -1.1, 1.3, FRAC_PI_4),
        gate_at(1.6, 1.1, 1.3, 3.0 * FRAC_PI_4),
        gate_at(-1.0, 1.5, 1.2, PI),
    ];

    // Lissajous figure-eight x = 2.2 sin t, y = 1.4 sin 2t; gates on both lobes
    // and on both diagonals through the crossing point.
    let lissajous = |t: f64| {
        let (x, y) = (2.2 * t.sin(), 1.4 * (2.0 * t).sin());
        let yaw = (2.8 * (2.0 * t).cos()).atan2(2.2 * t.cos());
        gate_at(x, y, 1.2, yaw)
    };
    let figure8 = [FRAC_PI_2, PI + 0.4, 1.5 * PI, 0.4]
        .into_iter()
        .map(lissajous)
        .collect();

    vec![
        Track {
            name: "circle".into(),
            gates: circle,
            workspace: ws,
            laps_close_cycle: true,
        },
        Track {
            name: "uturn".into(),
            gates: uturn,
            workspace: ws,
            laps_close_cycle: false,
        },
        Track {
            name: "figure8".into(),
            gates: figure8,
            workspace: ws,
            laps_close_cycle: true,
        },
    ]
}

pub fn builtin_track(name: &str) -> Option<Track> {
    builtin_tracks().into_iter().find(|t| t.name == name)
}

/// Pinhole intrinsics (no distortion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraModel {
    /// 320 x 240 with a ~106 deg horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 120.0,
            fy: 120.0,
            cx: 160.0,
            cy: 120.0,
            width: 320,
            height: 240,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(FalconError::Domain(format!(
                "invalid camera intrinsics {self:?}"
            )))
        }
    }

    /// Projects a world point seen from `cam_pose`. Returns `None` when the point
    /// is not strictly in front of the camera.
    pub fn project(&self, cam_pose: &Pose6, p_world: &Vector3<f64>) -> Option<[f64; 2]> {
        let p_body = cam_pose.rotation().inverse() * (p_world - cam_pose.position());
        // optical frame: right = -y_body, down = -z_body, forward = x_body
        let (xc, yc, zc) = (-p_body.y, -p_body.z, p_body.x);
        if zc <= 0.0 {
            return None;
        }
        Some([self.fx * xc / zc + self.cx, self.fy * yc / zc + self.cy])
    }

    pub fn in_bounds(&self, uv: &[f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] < self.width as f64 && uv[1] >= 0.0 && uv[1] < self.height as f64
    }
}

/// Projected rim keypoints of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateObservation {
    pub gate_index: usize,
    pub keypoints: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl GateObservation {
    pub const SENTINEL: [f64; 2] = [-1.0, -1.0];

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// An observation with every keypoint hidden.
    pub fn blind(gate_index: usize, n: usize) -> Self {
        Self {
            gate_index,
            keypoints: vec![Self::SENTINEL; n],
            visible: vec![false; n],
        }
    }
}

/// Projects `n_keypoints` rim points of `gate` into the camera at `cam_pose`.
pub fn project_gate(
    cam_pose: &Pose6,
    cam: &CameraModel,
    gate: &Gate,
    n_keypoints: usize,
) -> GateObservation {
    assert!(n_keypoints >= 4, "need at least four keypoints per gate");
    let mut keypoints = Vec::with_capacity(n_keypoints);
    let mut visible = Vec::with_capacity(n_keypoints);
    for p in gate.rim_points(n_keypoints) {
        match cam.project(cam_pose, &p) {
            Some(uv) if cam.in_bounds(&uv) => {
                keypoints.push(uv);
                visible.push(true);
            }
            _ => {
                keypoints.push(GateObservation::SENTINEL);
                visible.push(false);
            }
        }
    }
    GateObservation {
        gate_index: 0,
        keypoints,
        visible,
    }
}

/// Every gate of a track as seen from one camera pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObservation {
    pub gates: Vec<GateObservation>,
}

impl SceneObservation {
    pub fn visible_count(&self) -> usize {
        self.gates.iter().map(|g| g.visible_count()).sum()
    }
}

/// Procedural stand-in for the photorealistic renderer: maps a camera pose to
/// the gate keypoints it would see.
pub trait SceneRenderer {
    fn render(&self, cam_pose: &Pose6) -> SceneObservation;
}

/// Renders gate keypoints with a pinhole camera.
#[derive(Debug, Clone)]
pub struct KeypointRenderer {
    pub camera: CameraModel,
    pub gates: Vec<Gate>,
    pub n_keypoints: usize,
}

impl KeypointRenderer {
    pub fn new(camera: CameraModel, track: &Track) -> Self {
        Self {
            camera,
            gates: track.gates.clone(),
            n_keypoints: KEYPOINTS_PER_GATE,
        }
    }
}

impl SceneRenderer for KeypointRenderer {
    fn render(&self, cam_pose: &Pose6) -> SceneObservation {
        let gates = self
            .gates
            .iter()
            .enumerate()
            .map(|(i, g)| GateObservation {
                gate_index: i,
                ..project_gate(cam_pose, &self.camera, g, self.n_keypoints)
            })
            .collect();
        SceneObservation { gates }
    }
}

/// A segment crossing a gate plane close enough to the center to matter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub point: Vector3<f64>,
    /// In-plane distance from the intersection to the gate center.
    pub center_error: f64,
    /// True when the segment moves along the gate normal.
    pub direction_ok: bool,
}

/// Intersects the segment `prev -> curr` with the gate plane.
///
/// A side change is counted when the signed plane distance goes from negative
/// to non-negative or back. Events farther than twice the inner radius from
/// the center are dropped.
pub fn detect_crossing(
    prev: &Vector3<f64>,
    curr: &Vector3<f64>,
    gate: &Gate,
) -> Option<CrossingEvent> {
    let n = gate.normal();
    let c = gate.position();
    let d0 = n.dot(&(prev - c));
    let d1 = n.dot(&(curr - c));
    if d0.abs() <= 1e-9 && d1.abs() <= 1e-9 {
        return None;
    }
    if (d0 >= 0.0) == (d1 >= 0.0) {
        return None;
    }
    let t = d0 / (d0 - d1);
    let point = prev + t * (curr - prev);
    let center_error = (point - c).norm();
    if center_error > 2.0 * gate.inner_radius {
        return None;
    }
    Some(CrossingEvent {
        point,
        center_error,
        direction_ok: d1 > d0,
    })
}
