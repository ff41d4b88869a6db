//! State-based expert, yaw P-controller and the direct-perception wrapper.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_norm, ControlInput, QuadState};
use crate::error::{FalconError, Result};
use crate::geometry::{wrap_angle, Gate};
use crate::perception::PoseEstimate;

/// Maximum commanded yaw rate in rad/s.
pub const MAX_YAW_RATE: f64 = 2.0;

/// Gains of the through-gate velocity-tracking law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    /// Commanded ground speed, m/s.
    pub cruise_speed: f64,
    /// Velocity error gain, 1/s.
    pub k_v: f64,
    /// Distance of the aim point past the gate center along its normal.
    pub waypoint_offset: f64,
    pub a_max: f64,
    /// How far ahead of the vehicle's projection on the gate axis to aim.
    pub lookahead: f64,
    /// Pulls the aim point back toward (and in front of) the gate as the lateral
    /// offset grows.
    pub funnel_slope: f64,
    /// Lateral offset tolerated before the funnel engages.
    pub funnel_slack: f64,
    /// Yaw P gain, 1/s.
    pub k_yaw: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            cruise_speed: 1.0,
            k_v: 3.0,
            waypoint_offset: 0.5,
            a_max: 4.0,
            lookahead: 0.6,
            funnel_slope: 1.0,
            funnel_slack: 0.1,
            k_yaw: 2.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.cruise_speed,
            self.k_v,
            self.waypoint_offset,
            self.a_max,
            self.lookahead,
            self.funnel_slope,
            self.funnel_slack,
            self.k_yaw,
        ];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(FalconError::Config(format!(
                "expert gains must be positive: {self:?}"
            )))
        }
    }
}

/// Point on the gate axis the expert currently steers toward.
pub fn aim_point(position: &Vector3<f64>, gate: &Gate, cfg: &ExpertConfig) -> Vector3<f64> {
    let c = gate.position();
    let n = gate.normal();
    let rel = position - c;
    let along = n.dot(&rel);
    let lateral = (rel - along * n).norm();
    let funnel = cfg.waypoint_offset - cfg.funnel_slope * (lateral - cfg.funnel_slack).max(0.0);
    let s = (along + cfg.lookahead).min(cfg.waypoint_offset).min(funnel);
    c + s * n
}

/// Expert acceleration command from the true state.
///
/// Tracks `v_des = cruise * unit(aim - p)` with a P law on velocity, where the
/// aim point slides along the gate axis and never passes `waypoint_offset`
/// beyond the center. The yaw channel is left at zero; see [`yaw_control`].
pub fn expert_control(state: &QuadState, gate: &Gate, cfg: &ExpertConfig) -> ControlInput {
    let to_aim = aim_point(&state.position, gate, cfg) - state.position;
    let dist = to_aim.norm();
    if dist < 1e-6 {
        return ControlInput::default();
    }
    let v_des = to_aim * (cfg.cruise_speed / dist);
    let accel = clamp_norm(cfg.k_v * (v_des - state.velocity), cfg.a_max);
    ControlInput::new(accel, 0.0)
}

/// Distance past the gate of the point the camera is turned toward. Leading
/// the gate keeps the bearing well defined while flying through it.
pub const YAW_LEAD: f64 = 1.0;

/// Proportional yaw rate that turns the camera toward a point just beyond the
/// gate center along its normal.
pub fn yaw_control(state: &QuadState, gate: &Gate, k_yaw: f64) -> f64 {
    let d = gate.position() + YAW_LEAD * gate.normal() - state.position;
    let bearing = d.y.atan2(d.x);
    (k_yaw * wrap_angle(bearing - state.yaw)).clamp(-MAX_YAW_RATE, MAX_YAW_RATE)
}

/// Expert law evaluated on the filtered estimate instead of ground truth.
pub fn dp_control(
    estimate: &PoseEstimate,
    velocity: &Vector3<f64>,
    gate: &Gate,
    cfg: &ExpertConfig,
) -> ControlInput {
    let believed = QuadState {
        position: estimate.pose.position(),
        velocity: *velocity,
        yaw: estimate.pose.yaw,
        yaw_rate: 0.0,
    };
    let mut u = expert_control(&believed, gate, cfg);
    u.yaw_rate_cmd = yaw_control(&believed, gate, cfg.k_yaw);
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn facing_gate() -> Gate {
        Gate::new(Pose6::new(2.0, 0.0, 1.0, 0.0, 0.0, 0.0), 0.38)
    }

    fn at(x: f64, y: f64, z: f64) -> QuadState {
        QuadState {
            position: Vector3::new(x, y, z),
            velocity: Vector3::zeros(),
            yaw: 0.0,
            yaw_rate: 0.0,
        }
    }

    #[test]
    fn at_rest_before_gate_accelerates_toward_it() {
        let cfg = ExpertConfig::default();
        let u = expert_control(&at(0.0, 0.0, 1.0), &facing_gate(), &cfg);
        let expect = (cfg.k_v * cfg.cruise_speed).min(cfg.a_max);
        assert_abs_diff_eq!(u.accel.norm(), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(u.accel.normalize().x, 1.0, epsilon = 1e-12);

        let tight = ExpertConfig { a_max: 1.0, ..cfg };
        let u = expert_control(&at(0.0, 0.0, 1.0), &facing_gate(), &tight);
        assert_abs_diff_eq!(u.accel.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equilibrium_gives_zero_accel() {
        let cfg = ExpertConfig::default();
        let mut s = at(0.0, 0.0, 1.0);
        s.velocity = Vector3::new(cfg.cruise_speed, 0.0, 0.0);
        let u = expert_control(&s, &facing_gate(), &cfg);
        assert_abs_diff_eq!(u.accel.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_aim_gives_zero() {
        let cfg = ExpertConfig::default();
        let g = facing_gate();
        // on the axis exactly at the clamped aim point
        let s = at(2.0 + cfg.waypoint_offset, 0.0, 1.0);
        assert_eq!(expert_control(&s, &g, &cfg).accel, Vector3::zeros());
    }

    #[test]
    fn aim_point_stays_on_axis_and_before_offset() {
        let cfg = ExpertConfig::default();
        let g = facing_gate();
        for p in [
            Vector3::new(-1.0, 1.0, 1.2),
            Vector3::new(1.9, -0.5, 0.8),
            Vector3::new(0.0, 2.5, 1.0),
        ] {
            let a = aim_point(&p, &g, &cfg);
            assert_abs_diff_eq!(a.y, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(a.z, 1.0, epsilon = 1e-12);
            assert!(a.x <= 2.0 + cfg.waypoint_offset + 1e-12);
        }
    }

    #[test]
    fn yaw_controller_examples() {
        let g = facing_gate();
        assert_abs_diff_eq!(
            yaw_control(&at(0.0, 0.0, 1.0), &g, 2.0),
            0.0,
            epsilon = 1e-12
        );

        // gate 90 degrees to the left
        let left = Gate::new(Pose6::new(0.0, 3.0, 1.0, 0.0, 0.0, FRAC_PI_2), 0.38);
        let r = yaw_control(&at(0.0, 0.0, 1.0), &left, 0.5);
        assert_abs_diff_eq!(r, 0.5 * FRAC_PI_2, epsilon = 1e-12);
        let r = yaw_control(&at(0.0, 0.0, 1.0), &left, 3.0);
        assert_eq!(r, MAX_YAW_RATE);

        // across the seam: yaw 3.1, bearing -3.1 is a small positive turn
        let behind = Gate::new(Pose6::new(-3.0, -3.0 * 0.0416, 1.0, 0.0, 0.0, 0.0), 0.38);
        let mut s = at(0.0, 0.0, 1.0);
        s.yaw = 3.1;
        let bearing = (-3.0f64 * 0.0416).atan2(-3.0);
        assert!(bearing < -3.0);
        let r = yaw_control(&s, &behind, 1.0);
        assert!(r > 0.0 && r < 0.2, "rate {r}");
    }

    #[test]
    fn dp_matches_expert_on_truth() {
        let cfg = ExpertConfig::default();
        let g = facing_gate();
        let mut s = at(-0.3, 0.4, 1.3);
        s.velocity = Vector3::new(0.8, -0.1, 0.05);
        s.yaw = 0.2;
        let est = PoseEstimate {
            pose: s.pose(),
            valid: true,
        };
        let dp = dp_control(&est, &s.velocity, &g, &cfg);
        let mut ex = expert_control(&s, &g, &cfg);
        ex.yaw_rate_cmd = yaw_control(&s, &g, cfg.k_yaw);
        assert_eq!(dp, ex);
    }
}
