//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion fails that is not listed in `KNOWN_FAILURES`.
//! Set `ACCEPTANCE_STRICT=1` to fail on those as well.

mod support;

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use falcon_core::config::RunConfig;
use falcon_core::error_model::{collect_dq, coverage, split_by_run, DqConfig, QuantileModel};
use falcon_core::eval::{
    evaluate_matrix, evaluation_seed, run_episode, AttentionSummary, PerceptionSource, Pilot,
    SimSettings,
};
use falcon_core::geometry::{builtin_track, builtin_tracks, Track};
use falcon_core::imitation::{collect_dc, train_policy, DcConfig, TrackSetup, TrainConfig};
use falcon_core::perception::NoiseOracleConfig;
use falcon_core::pipeline::Pipeline;
use falcon_core::seeding::derive_seed;

/// Criteria that fail for understood reasons; reported but not fatal.
const KNOWN_FAILURES: [u32; 1] = [8];

const SEED: u64 = 0;

struct Verdict {
    id: u32,
    pass: bool,
}

fn report(id: u32, name: &str, pass: bool, detail: String, started: Instant) -> Verdict {
    let tag = match (pass, KNOWN_FAILURES.contains(&id)) {
        (true, _) => "PASS",
        (false, true) => "FAIL (known)",
        (false, false) => "FAIL",
    };
    println!(
        "criterion {id} {tag:<12} {name}: {detail} [{:.1}s]",
        started.elapsed().as_secs_f64()
    );
    Verdict { id, pass }
}

fn calibrated(t: &Track) -> PerceptionSource {
    PerceptionSource::Oracle(NoiseOracleConfig::for_track(&t.name))
}

fn kalman_improvement() -> Verdict {
    let t0 = Instant::now();
    let track = builtin_track("circle").unwrap();
    let r = run_episode(
        &track,
        &Pilot::Expert,
        &calibrated(&track),
        &SimSettings::default(),
        evaluation_seed(SEED, "circle"),
    )
    .unwrap();
    let p = &r.perception;
    let ratio = p.filtered_position_rmse() / p.raw_position_rmse();
    let detail = format!(
        "position RMSE raw {:.1} cm, filtered {:.1} cm, ratio {ratio:.3} (<= 0.75); yaw raw {:.2} deg, filtered {:.2} deg",
        100.0 * p.raw_position_rmse(),
        100.0 * p.filtered_position_rmse(),
        p.raw_yaw_rmse().to_degrees(),
        p.filtered_yaw_rmse().to_degrees()
    );
    let pass = ratio <= 0.75 && r.gates_passed == r.gates_attempted && t0.elapsed().as_secs() <= 60;
    report(1, "Kalman improvement", pass, detail, t0)
}

/// Fits the error model on every builtin track; the models are reused for
/// policy training.
fn quantile_coverage() -> (Verdict, Vec<TrackSetup>) {
    let t0 = Instant::now();
    let settings = SimSettings::default();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut setups = Vec::new();
    for track in builtin_tracks() {
        let perception = calibrated(&track);
        let seed = derive_seed(SEED, &format!("collect-dq/{}", track.name));
        let records =
            collect_dq(&track, &perception, &settings, &DqConfig::default(), seed).unwrap();
        let (train, held) = split_by_run(&records, 3);
        let model = QuantileModel::fit(&train).unwrap();
        let cov = coverage(&model, &held);
        pass &= held.len() >= 5000 && cov.iter().all(|c| (0.75..=0.85).contains(c));
        parts.push(format!("{} {} held-out {cov:.3?}", track.name, held.len()));
        setups.push(TrackSetup {
            track,
            quantiles: model,
            perception,
        });
    }
    pass &= t0.elapsed().as_secs() <= 120;
    (
        report(2, "quantile coverage", pass, parts.join("; "), t0),
        setups,
    )
}

fn expert_closed_loop() -> Verdict {
    let t0 = Instant::now();
    let exact = |_: &Track| PerceptionSource::Oracle(NoiseOracleConfig::exact());
    let (rep, _) = evaluate_matrix(
        &builtin_tracks(),
        &[Pilot::Expert],
        &exact,
        &SimSettings::default(),
        &[SEED],
        1,
    )
    .unwrap();
    let mut pass = t0.elapsed().as_secs() <= 120;
    let mut parts = Vec::new();
    for row in &rep.rows {
        let mge = row.mge.unwrap_or(f64::INFINITY);
        pass &= row.sr == 1.0 && mge <= 0.10;
        parts.push(format!(
            "{} SR {:.1}% MGE {:.2} cm",
            row.track,
            100.0 * row.sr,
            100.0 * mge
        ));
    }
    report(3, "expert closed loop", pass, parts.join("; "), t0)
}

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut verdicts = Vec::new();

    verdicts.push(kalman_improvement());
    let (v, setups) = quantile_coverage();
    verdicts.push(v);
    verdicts.push(expert_closed_loop());

    // Desk-scale policy: the same recipe as the pipeline, at reduced volume.
    let t_train = Instant::now();
    let settings = SimSettings::default();
    let dc_cfg = DcConfig {
        runs: 5,
        run_seconds: 20.0,
        n_perturb: 10,
        record_every: 2,
    };
    let train_cfg = TrainConfig {
        epochs: 10,
        seed: derive_seed(SEED, "train-policy"),
        ..TrainConfig::default()
    };
    let mut dc = Vec::new();
    for s in &setups {
        let seed = derive_seed(SEED, &format!("collect-dc/{}", s.track.name));
        dc.extend(
            collect_dc(
                &s.track,
                &Pilot::Expert,
                &s.quantiles,
                &s.perception,
                &settings,
                &dc_cfg,
                train_cfg.noise_sigma,
                seed,
            )
            .unwrap(),
        );
    }
    let trained = train_policy(
        &dc,
        &train_cfg,
        &settings.camera,
        settings.dynamics.a_max,
        None,
    )
    .unwrap();
    let train_secs = t_train.elapsed().as_secs_f64();
    println!(
        "trained policy on {} samples in {train_secs:.0}s, final mse {:.4}",
        dc.len(),
        trained.losses.last().unwrap()
    );

    let t_eval = Instant::now();
    let policy = Arc::new(trained.policy);
    let pilots = [Pilot::Expert, Pilot::Dp, Pilot::Mm(policy)];
    let (rep, episodes) = evaluate_matrix(
        &builtin_tracks(),
        &pilots,
        &calibrated,
        &settings,
        &[SEED],
        1,
    )
    .unwrap();
    let sr = |t: &str, c: &str| rep.row(t, c).unwrap().sr;

    let (e, m, d) = (sr("uturn", "expert"), sr("uturn", "mm"), sr("uturn", "dp"));
    let runtime = train_secs + t_eval.elapsed().as_secs_f64();
    verdicts.push(report(
        4,
        "controller ordering",
        e >= m && m >= d && d <= m - 0.10 && runtime <= 600.0,
        format!(
            "uturn SR expert {:.1}%, mm {:.1}%, dp {:.1}% (training + evaluation {runtime:.0}s)",
            100.0 * e,
            100.0 * m,
            100.0 * d
        ),
        t_eval,
    ));

    let circle = rep.row("circle", "mm").unwrap();
    let mge = circle.mge.unwrap_or(f64::INFINITY);
    verdicts.push(report(
        5,
        "MM circle performance",
        circle.sr >= 0.90 && mge <= 0.15,
        format!("SR {:.1}%, MGE {:.2} cm", 100.0 * circle.sr, 100.0 * mge),
        t_eval,
    ));

    let t0 = Instant::now();
    let (checked, worst) = support::gradient_check(24, 21);
    verdicts.push(report(
        6,
        "gradient correctness",
        checked >= 10 && worst < 1e-4,
        format!("{checked} coordinates, worst relative error {worst:.2e}"),
        t0,
    ));

    let t0 = Instant::now();
    let p = support::projection_check(1000, 11);
    let c = support::crossing_check(1000, 12);
    verdicts.push(report(
        7,
        "geometry oracles",
        p.mismatches == 0 && p.max_pixel_error < 1e-6 && c.disagreements == 0 && c.direction_errors == 0,
        format!(
            "projection: {} keypoints, max error {:.1e} px, {} visibility mismatches; crossing: {} segments, {} disagreements",
            p.compared, p.max_pixel_error, p.mismatches, c.checked, c.disagreements
        ),
        t0,
    ));

    let mm: Vec<_> = episodes
        .iter()
        .filter(|e| e.controller == "mm")
        .flat_map(|e| e.attention.iter())
        .collect();
    let att = AttentionSummary::from_samples(mm);
    verdicts.push(report(
        8,
        "attention-visibility diagnostic",
        att.vision_preferred() == Some(true),
        format!(
            "vision-token mass {:.3} over {} fully-visible steps vs {:.3} over {} hidden steps",
            att.visible_mass.unwrap_or(f64::NAN),
            att.visible_steps,
            att.hidden_mass.unwrap_or(f64::NAN),
            att.hidden_steps
        ),
        t_eval,
    ));

    let t0 = Instant::now();
    let cfg = RunConfig::default()
        .with_overrides(
            &[
                "error_model.dq.runs=12",
                "collection.runs=1",
                "collection.n_perturb=2",
                "collection.record_every=4",
                "training.epochs=2",
                "training.policy.d_model=32",
                "training.policy.hidden=32",
                "eval.episode.laps=2",
            ]
            .map(String::from),
        )
        .unwrap();
    let run = |jobs| {
        let dir = tempfile::tempdir().unwrap();
        Pipeline::new(&cfg, dir.path(), jobs).run_all().unwrap();
        std::fs::read(dir.path().join("eval/report.json")).unwrap()
    };
    let (a, b) = (run(1), run(2));
    verdicts.push(report(
        9,
        "determinism",
        a == b,
        format!(
            "two pipeline runs (1 and 2 workers), reports of {} bytes identical: {}",
            a.len(),
            a == b
        ),
        t0,
    ));

    let fatal: Vec<u32> = verdicts
        .iter()
        .filter(|v| !v.pass && (strict || !KNOWN_FAILURES.contains(&v.id)))
        .map(|v| v.id)
        .collect();
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    if fatal.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {fatal:?}");
        ExitCode::FAILURE
    }
}
