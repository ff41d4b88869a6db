//! Closed-loop evaluation: report structure, reproducibility and perception faults.

use std::sync::Arc;

use falcon_core::control::{dp_control, expert_control, ExpertConfig};
use falcon_core::dynamics::{step, DynamicsConfig, QuadState};
use falcon_core::eval::{evaluate_matrix, run_episode, PerceptionSource, Pilot, SimSettings};
use falcon_core::geometry::{
    builtin_track, builtin_tracks, detect_crossing, Gate, Pose6, GATE_RADIUS,
};
use falcon_core::perception::{NoiseOracleConfig, PoseEstimate};
use falcon_core::policy::{PolicyConfig, PolicyNet};
use falcon_core::seeding::rng_from_seed;
use nalgebra::Vector3;

fn short_settings(laps: usize) -> SimSettings {
    let mut s = SimSettings::default();
    s.episode.laps = laps;
    s
}

fn pilots() -> Vec<Pilot> {
    let cfg = PolicyConfig {
        d_model: 16,
        heads: 4,
        hidden: 16,
    };
    let net = PolicyNet::new(cfg, 4.0, &mut rng_from_seed(1));
    vec![Pilot::Expert, Pilot::Dp, Pilot::Mm(Arc::new(net))]
}

fn oracle(t: &falcon_core::geometry::Track) -> PerceptionSource {
    PerceptionSource::Oracle(NoiseOracleConfig::for_track(&t.name))
}

#[test]
fn matrix_has_one_row_per_track_and_controller() {
    let tracks = builtin_tracks();
    let (report, episodes) =
        evaluate_matrix(&tracks, &pilots(), &oracle, &short_settings(1), &[3], 2).unwrap();
    assert_eq!(report.rows.len(), 9);
    assert_eq!(episodes.len(), 9);
    for t in &tracks {
        for c in ["expert", "dp", "mm"] {
            let row = report.row(&t.name, c).unwrap();
            assert_eq!(row.episodes, 1);
            assert!((0.0..=1.0).contains(&row.sr));
            assert!(row.gates_attempted >= row.gates_passed);
        }
    }
    for c in ["dp", "mm"] {
        let row = report.row("circle", c).unwrap();
        assert!(row.raw_position_rmse.is_some() && row.filtered_position_rmse.is_some());
    }
    assert!(report.row("circle", "mm").unwrap().attention.is_some());
}

#[test]
fn identical_seeds_give_identical_reports() {
    let tracks = vec![builtin_track("uturn").unwrap()];
    let run = |jobs| {
        evaluate_matrix(
            &tracks,
            &pilots(),
            &oracle,
            &short_settings(2),
            &[5, 6],
            jobs,
        )
        .unwrap()
        .0
        .to_json()
        .unwrap()
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3), "thread count changed the result");
    let other = evaluate_matrix(&tracks, &pilots(), &oracle, &short_settings(2), &[7, 8], 1)
        .unwrap()
        .0;
    assert_ne!(a, other.to_json().unwrap());
}

#[test]
fn dp_matches_expert_with_exact_perception() {
    let track = builtin_track("figure8").unwrap();
    let exact = PerceptionSource::Oracle(NoiseOracleConfig::exact());
    let settings = short_settings(3);
    let e = run_episode(&track, &Pilot::Expert, &exact, &settings, 2).unwrap();
    let d = run_episode(&track, &Pilot::Dp, &exact, &settings, 2).unwrap();
    assert_eq!(d.gates_passed, d.gates_attempted);
    assert_eq!(d.gates_attempted, e.gates_attempted);
    let gap = (d.mean_gate_error().unwrap() - e.mean_gate_error().unwrap()).abs();
    assert!(gap < 0.02, "MGE gap {gap}");
}

/// Flies one gate with the expert law fed `truth + bias` and returns the
/// crossing error.
fn biased_crossing(bias: f64) -> f64 {
    let gate = Gate::new(Pose6::new(2.0, 0.5, 1.2, 0.0, 0.0, 0.4), GATE_RADIUS);
    let lateral = Vector3::new(-gate.center.yaw.sin(), gate.center.yaw.cos(), 0.0);
    let dyn_cfg = DynamicsConfig::default();
    let cfg = ExpertConfig::default();
    let mut s = QuadState {
        position: gate.position() - 2.5 * gate.normal(),
        velocity: Vector3::zeros(),
        yaw: gate.center.yaw,
        yaw_rate: 0.0,
    };
    for _ in 0..400 {
        let est = PoseEstimate {
            pose: Pose6::level(s.position + bias * lateral, s.yaw),
            valid: true,
        };
        let u = if bias == 0.0 {
            expert_control(&s, &gate, &cfg)
        } else {
            dp_control(&est, &s.velocity, &gate, &cfg)
        };
        let next = step(&s, &u, dyn_cfg.dt, &dyn_cfg).unwrap();
        if let Some(ev) = detect_crossing(&s.position, &next.position, &gate) {
            return ev.center_error;
        }
        s = next;
    }
    panic!("gate never reached");
}

#[test]
fn lateral_bias_shifts_the_crossing() {
    let clean = biased_crossing(0.0);
    let biased = biased_crossing(0.3);
    assert!(clean < 0.03, "clean error {clean}");
    assert!((biased - 0.3).abs() < 0.05, "biased error {biased}");
}
