//! Policy gradients, supervised training and dataset aggregation.

mod support;

use falcon_core::error_model::{LinearQuantile, QuantileModel};
use falcon_core::eval::{run_episode, PerceptionSource, Pilot, SimSettings};
use falcon_core::geometry::builtin_track;
use falcon_core::imitation::{
    collect_dc, dagger_iterate, evaluate_mse, train_policy, ControllerSample, DcConfig, TrackSetup,
    TrainConfig,
};
use falcon_core::perception::NoiseOracleConfig;
use falcon_core::policy::PolicyConfig;

fn zero_width_model() -> QuantileModel {
    QuantileModel {
        lower: vec![LinearQuantile::constant(0.1, -0.05); 4],
        upper: vec![LinearQuantile::constant(0.9, 0.05); 4],
    }
}

fn oracle(track: &str) -> PerceptionSource {
    PerceptionSource::Oracle(NoiseOracleConfig::for_track(track))
}

fn dc(track: &str, cfg: DcConfig, seed: u64) -> Vec<ControllerSample> {
    collect_dc(
        &builtin_track(track).unwrap(),
        &Pilot::Expert,
        &zero_width_model(),
        &oracle(track),
        &SimSettings::default(),
        &cfg,
        0.5,
        seed,
    )
    .unwrap()
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        lr_decay: 1.0,
        seed: 9,
        policy: PolicyConfig {
            d_model: 32,
            heads: 4,
            hidden: 64,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let (checked, worst) = support::gradient_check(24, 21);
    assert!(checked >= 10, "only {checked} coordinates checked");
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn overfits_a_small_dataset() {
    let data = dc(
        "circle",
        DcConfig {
            runs: 1,
            run_seconds: 50.0,
            n_perturb: 1,
            record_every: 1,
        },
        4,
    );
    assert!(data.len() >= 990, "{} samples", data.len());
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        lr_decay: 0.99,
        batch_size: 16,
        policy: PolicyConfig {
            d_model: 64,
            heads: 4,
            hidden: 128,
        },
        ..small_train(450)
    };
    let out = train_policy(&data, &cfg, &Default::default(), 4.0, None).unwrap();
    let mse = evaluate_mse(&out.policy, &data, &Default::default());
    assert!(mse < 1e-3, "train mse {mse}");
    assert!(out.losses.last().unwrap() < &out.losses[0]);
}

#[test]
fn training_is_deterministic() {
    let data = dc(
        "uturn",
        DcConfig {
            runs: 1,
            run_seconds: 5.0,
            n_perturb: 3,
            record_every: 1,
        },
        5,
    );
    let a = train_policy(&data, &small_train(3), &Default::default(), 4.0, None).unwrap();
    let b = train_policy(&data, &small_train(3), &Default::default(), 4.0, None).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.losses, b.losses);
}

fn setups() -> Vec<TrackSetup> {
    ["circle", "uturn"]
        .iter()
        .map(|n| TrackSetup {
            track: builtin_track(n).unwrap(),
            quantiles: zero_width_model(),
            perception: oracle(n),
        })
        .collect()
}

const TINY_DC: DcConfig = DcConfig {
    runs: 1,
    run_seconds: 4.0,
    n_perturb: 2,
    record_every: 2,
};

#[test]
fn aggregation_grows_the_dataset() {
    let mut cfg = small_train(2);
    cfg.dagger_iterations = 3;
    cfg.beta_schedule = vec![1.0, 0.5, 0.0];
    let out = dagger_iterate(
        None,
        Vec::new(),
        &setups(),
        &SimSettings::default(),
        &TINY_DC,
        &cfg,
        0,
        3,
        2,
    )
    .unwrap();
    let sizes: Vec<usize> = out.iterations.iter().map(|i| i.dataset_size).collect();
    assert_eq!(sizes.len(), 3);
    assert!(sizes.windows(2).all(|w| w[1] > w[0]), "{sizes:?}");
    assert_eq!(out.dataset.len(), sizes[2]);
    assert_eq!(out.losses.len(), 3 * cfg.epochs);
}

#[test]
fn single_expert_iteration_is_behavior_cloning() {
    let cfg = small_train(2);
    let settings = SimSettings::default();
    let agg = dagger_iterate(
        None,
        Vec::new(),
        &setups(),
        &settings,
        &TINY_DC,
        &cfg,
        0,
        3,
        1,
    )
    .unwrap();
    assert_eq!(agg.iterations.len(), 1);

    // the same data, trained directly, gives the same network
    let again = dagger_iterate(
        None,
        agg.dataset.clone(),
        &setups(),
        &settings,
        &TINY_DC,
        &cfg,
        0,
        3,
        1,
    )
    .unwrap();
    assert_eq!(again.policy, agg.policy);
    assert_eq!(again.dataset.len(), agg.dataset.len());
}

#[test]
fn expert_survives_training_noise() {
    let mut settings = SimSettings::default();
    settings.episode.action_noise = 0.5;
    let r = run_episode(
        &builtin_track("circle").unwrap(),
        &Pilot::Expert,
        &oracle("circle"),
        &settings,
        17,
    )
    .unwrap();
    assert!(r.success_rate() >= 0.95, "SR {}", r.success_rate());
}
