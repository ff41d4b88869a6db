//! Exit codes and output formats of the `falcon` binary.

use std::path::Path;
use std::process::{Command, Output};

fn falcon(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_falcon"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("FALCON_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const QUICK: [&str; 6] = [
    "--set",
    "eval.controllers=[\"expert\",\"dp\"]",
    "--set",
    "eval.episode.laps=1",
    "--set",
    "tracks=[\"circle\"]",
];

fn quick_evaluate(dir: &Path) -> Output {
    assert!(falcon(
        dir,
        &QUICK[4..]
            .iter()
            .copied()
            .chain(["tracks"])
            .collect::<Vec<_>>()
    )
    .status
    .success());
    let mut args = QUICK.to_vec();
    args.push("evaluate");
    falcon(dir, &args)
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = falcon(dir.path(), &["--config", "/nonexistent/run.json", "tracks"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "training.epochz=3",
        "training.epochs=-4",
        "eval.controllers=[\"pid\"]",
    ] {
        let o = falcon(dir.path(), &["--set", bad, "tracks"]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
}

#[test]
fn missing_artifacts_are_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = falcon(dir.path(), &["train-policy"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("stage 'train-policy' failed") && err.contains("missing artifact"),
        "{err}"
    );
}

#[test]
fn empty_report_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    std::fs::write(&path, r#"{"laps": 1, "seeds": [0], "rows": []}"#).unwrap();
    let o = falcon(dir.path(), &["report", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tracks_lists_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let o = falcon(dir.path(), &["tracks"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["circle", "uturn", "figure8"] {
        assert!(text.contains(name));
        assert!(dir
            .path()
            .join("tracks")
            .join(format!("{name}.json"))
            .exists());
    }
}

#[test]
fn evaluate_then_report_as_csv_with_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let o = quick_evaluate(dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("state-based"));
    assert!(dir
        .path()
        .join("eval/trajectories/circle_expert_0.csv")
        .exists());

    let o = falcon(dir.path(), &["report", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "track,controller,episodes,gates_attempted,gates_passed,sr,mge,threshold"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("circle,expert,1,4,4,1,"));

    let easy = dir.path().join("easy.json");
    std::fs::write(
        &easy,
        r#"[{"track": "circle", "controller": "expert", "min_sr": 0.9}]"#,
    )
    .unwrap();
    let o = falcon(
        dir.path(),
        &["report", "--thresholds", easy.to_str().unwrap()],
    );
    assert!(o.status.success());

    let hard = dir.path().join("hard.json");
    std::fs::write(
        &hard,
        r#"[{"track": "circle", "controller": "expert", "max_mge": 0.0001},
            {"track": "uturn", "controller": "mm", "min_sr": 0.5}]"#,
    )
    .unwrap();
    let o = falcon(
        dir.path(),
        &["report", "--thresholds", hard.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.matches("threshold violated").count(), 2, "{err}");
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn evaluation_is_reproducible_and_follows_the_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(quick_evaluate(a.path()).status.success());
    assert!(quick_evaluate(b.path()).status.success());
    let read = |d: &Path| std::fs::read(d.join("eval/report.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));

    let c = tempfile::tempdir().unwrap();
    assert!(
        falcon(c.path(), &["--set", "tracks=[\"circle\"]", "tracks"])
            .status
            .success()
    );
    let mut args = QUICK.to_vec();
    args.push("evaluate");
    let o = Command::new(env!("CARGO_BIN_EXE_falcon"))
        .arg("--out")
        .arg(c.path())
        .args(&args)
        .env("FALCON_SEED", "99")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn dumped_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let o = falcon(dir.path(), &["--set", "training.epochs=7", "config"]);
    assert!(o.status.success());
    let path = dir.path().join("run.json");
    std::fs::write(&path, stdout(&o)).unwrap();
    let again = falcon(dir.path(), &["--config", path.to_str().unwrap(), "config"]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), stdout(&o));
    assert!(stdout(&o).contains("\"epochs\": 7"));
}
