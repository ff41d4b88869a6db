//! End-to-end stages with every intermediate artifact persisted under one
//! output directory. Each stage reads only what earlier stages wrote, so any
//! stage can be rerun on its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, RunConfig};
use crate::error::{FalconError, Result};
use crate::error_model::{
    collect_dq, coverage, dataset_hash, load_records, save_records, split_by_run, QuantileModel,
    ERROR_DIMS,
};
use crate::eval::{
    evaluate_matrix, log_trajectory, parallel_map, EvalReport, PerceptionSource, Pilot,
};
use crate::geometry::Track;
use crate::imitation::{
    collect_iteration, dagger_iterate, load_dc, save_dc, save_losses, TrackSetup,
};
use crate::perception::{
    generate_npe_dataset, load_npe_dataset, save_npe_dataset, train_npe_regressor, NpeRegressor,
};
use crate::policy::PolicyNet;
use crate::seeding::{derive_seed, rng_from_seed};

pub const STAGES: [&str; 8] = [
    "tracks",
    "npe-data",
    "train-npe",
    "collect-dq",
    "fit-quantiles",
    "collect-dc",
    "train-policy",
    "evaluate",
];

/// File layout of one pipeline output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, dir: &str, name: &str) -> PathBuf {
        self.root.join(dir).join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn track(&self, name: &str) -> PathBuf {
        self.file("tracks", &format!("{name}.json"))
    }
    pub fn npe_data(&self, name: &str) -> PathBuf {
        self.file("npe", &format!("{name}_data.csv"))
    }
    pub fn regressor(&self, name: &str) -> PathBuf {
        self.file("npe", &format!("{name}.json"))
    }
    pub fn npe_report(&self, name: &str) -> PathBuf {
        self.file("npe", &format!("{name}_report.json"))
    }
    pub fn dq(&self, name: &str) -> PathBuf {
        self.file("dq", &format!("{name}.csv"))
    }
    pub fn quantiles(&self, name: &str) -> PathBuf {
        self.file("quantiles", &format!("{name}.json"))
    }
    pub fn coverage(&self) -> PathBuf {
        self.file("quantiles", "coverage.json")
    }
    pub fn dc(&self) -> PathBuf {
        self.root.join("dc.bin")
    }
    pub fn aggregated_dc(&self) -> PathBuf {
        self.root.join("dc_aggregated.bin")
    }
    pub fn policy(&self) -> PathBuf {
        self.root.join("policy.json")
    }
    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }
    pub fn dagger(&self) -> PathBuf {
        self.root.join("dagger.json")
    }
    pub fn report(&self) -> PathBuf {
        self.file("eval", "report.json")
    }
    pub fn trajectory(&self, track: &str, controller: &str, episode: usize) -> PathBuf {
        self.file(
            "eval/trajectories",
            &format!("{track}_{controller}_{episode}.csv"),
        )
    }
}

/// Held-out interval coverage of one track's quantile model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub train_records: usize,
    pub heldout_records: usize,
    pub coverage: [f64; ERROR_DIMS],
    pub dataset_hash: String,
}

pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub artifacts: Artifacts,
    pub jobs: usize,
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Adds the path to I/O errors so missing upstream artifacts are obvious.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        FalconError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => FalconError::MissingArtifact {
            path: path.to_path_buf(),
        },
        FalconError::Io(io) => FalconError::Format(format!("{}: {io}", path.display())),
        FalconError::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound) => {
            FalconError::MissingArtifact {
                path: path.to_path_buf(),
            }
        }
        FalconError::Csv(c) => FalconError::Format(format!("{}: {c}", path.display())),
        other => other,
    })
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a RunConfig, out: impl Into<PathBuf>, jobs: usize) -> Self {
        Self {
            config,
            artifacts: Artifacts::new(out),
            jobs: jobs.max(1),
        }
    }

    fn seed(&self, label: &str) -> u64 {
        derive_seed(self.config.seed, label)
    }

    /// Runs every stage in order. The NPE stages are skipped when the oracle
    /// backend is configured.
    pub fn run_all(&self) -> Result<EvalReport> {
        std::fs::create_dir_all(&self.artifacts.root)?;
        std::fs::write(self.artifacts.config(), self.config.to_json()?)?;
        for stage in STAGES {
            if matches!(stage, "npe-data" | "train-npe")
                && self.config.perception.backend == BackendKind::Oracle
            {
                log::info!("skipping {stage}: oracle perception backend");
                continue;
            }
            self.run_stage(stage)?;
        }
        EvalReport::load(&self.artifacts.report())
    }

    pub fn run_stage(&self, stage: &str) -> Result<()> {
        log::info!("stage {stage}");
        let r = match stage {
            "tracks" => self.tracks(),
            "npe-data" => self.npe_data(),
            "train-npe" => self.train_npe(),
            "collect-dq" => self.collect_dq(),
            "fit-quantiles" => self.fit_quantiles(),
            "collect-dc" => self.collect_dc(),
            "train-policy" => self.train_policy(),
            "evaluate" => self.evaluate().map(|_| ()),
            other => return Err(FalconError::Config(format!("unknown stage '{other}'"))),
        };
        r.map_err(|e| FalconError::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        })
    }

    pub fn tracks(&self) -> Result<()> {
        for t in self.config.load_tracks()? {
            let path = self.artifacts.track(&t.name);
            ensure_parent(&path)?;
            t.save(&path)?;
        }
        Ok(())
    }

    /// Tracks as persisted by the `tracks` stage.
    pub fn load_tracks(&self) -> Result<Vec<Track>> {
        self.config
            .load_tracks()?
            .iter()
            .map(|t| {
                let path = self.artifacts.track(&t.name);
                with_path(&path, Track::load(&path))
            })
            .collect()
    }

    pub fn npe_data(&self) -> Result<()> {
        let tracks = self.load_tracks()?;
        parallel_map(&tracks, self.jobs, |t| {
            let mut rng = rng_from_seed(self.seed(&format!("npe-data/{}", t.name)));
            let data = generate_npe_dataset(
                t,
                &self.config.camera,
                self.config.perception.npe.samples,
                &mut rng,
            );
            let path = self.artifacts.npe_data(&t.name);
            ensure_parent(&path)?;
            save_npe_dataset(&data, &path)
        })?;
        Ok(())
    }

    pub fn train_npe(&self) -> Result<()> {
        let tracks = self.load_tracks()?;
        parallel_map(&tracks, self.jobs, |t| {
            let path = self.artifacts.npe_data(&t.name);
            let data = with_path(&path, load_npe_dataset(&path))?;
            let mut hyper = self.config.perception.npe.train.clone();
            hyper.seed = self.seed(&format!("train-npe/{}", t.name));
            let (reg, report) = train_npe_regressor(&data, &self.config.camera, &hyper)?;
            log::info!(
                "{}: NPE held-out position RMSE {:.3} m, yaw RMSE {:.2} deg",
                t.name,
                report.holdout_position_rmse,
                report.holdout_yaw_rmse.to_degrees()
            );
            reg.save(&self.artifacts.regressor(&t.name))?;
            std::fs::write(
                self.artifacts.npe_report(&t.name),
                serde_json::to_string_pretty(&report)?,
            )?;
            Ok(())
        })?;
        Ok(())
    }

    /// Perception backend for `track` according to the configuration.
    pub fn perception(&self, track: &Track) -> Result<PerceptionSource> {
        match self.config.perception.backend {
            BackendKind::Oracle => {
                let cfg = self
                    .config
                    .perception
                    .oracle
                    .get(&track.name)
                    .ok_or_else(|| {
                        FalconError::Config(format!(
                            "no oracle calibration for track '{}'",
                            track.name
                        ))
                    })?;
                Ok(PerceptionSource::Oracle(*cfg))
            }
            BackendKind::Regressor => {
                let path = self.artifacts.regressor(&track.name);
                let reg = with_path(&path, NpeRegressor::load(&path))?;
                Ok(PerceptionSource::Regressor(Arc::new(reg)))
            }
        }
    }

    pub fn collect_dq(&self) -> Result<()> {
        let tracks = self.load_tracks()?;
        let settings = self.config.sim_settings();
        parallel_map(&tracks, self.jobs, |t| {
            let seed = self.seed(&format!("collect-dq/{}", t.name));
            let records = collect_dq(
                t,
                &self.perception(t)?,
                &settings,
                &self.config.error_model.dq,
                seed,
            )?;
            let path = self.artifacts.dq(&t.name);
            ensure_parent(&path)?;
            save_records(&records, &path)
        })?;
        Ok(())
    }

    pub fn fit_quantiles(&self) -> Result<()> {
        let tracks = self.load_tracks()?;
        let entries = parallel_map(&tracks, self.jobs, |t| {
            let path = self.artifacts.dq(&t.name);
            let records = with_path(&path, load_records(&path))?;
            let (train, held) = split_by_run(&records, self.config.error_model.holdout_every);
            let model = QuantileModel::fit(&train)?;
            let cov = coverage(&model, &held);
            log::info!("{}: held-out interval coverage {cov:.3?}", t.name);
            let out = self.artifacts.quantiles(&t.name);
            ensure_parent(&out)?;
            model.save(&out)?;
            Ok((
                t.name.clone(),
                CoverageEntry {
                    train_records: train.len(),
                    heldout_records: held.len(),
                    coverage: cov,
                    dataset_hash: dataset_hash(&records),
                },
            ))
        })?;
        let map: BTreeMap<String, CoverageEntry> = entries.into_iter().collect();
        std::fs::write(
            self.artifacts.coverage(),
            serde_json::to_string_pretty(&map)?,
        )?;
        Ok(())
    }

    fn setups(&self) -> Result<Vec<TrackSetup>> {
        self.load_tracks()?
            .into_iter()
            .map(|track| {
                let path = self.artifacts.quantiles(&track.name);
                let quantiles = with_path(&path, QuantileModel::load(&path))?;
                let perception = self.perception(&track)?;
                Ok(TrackSetup {
                    track,
                    quantiles,
                    perception,
                })
            })
            .collect()
    }

    pub fn collect_dc(&self) -> Result<()> {
        let setups = self.setups()?;
        let seed = self.seed("collect-dc");
        let dc = collect_iteration(
            0,
            self.config.training.beta_schedule[0],
            None,
            &setups,
            &self.config.sim_settings(),
            &self.config.collection,
            self.config.training.noise_sigma,
            seed,
            self.jobs,
        )?;
        log::info!("collected {} controller samples", dc.len());
        save_dc(&dc, seed, &self.artifacts.dc())
    }

    pub fn train_policy(&self) -> Result<()> {
        let setups = self.setups()?;
        let path = self.artifacts.dc();
        let (dc, seed) = with_path(&path, load_dc(&path))?;
        let mut cfg = self.config.training.clone();
        cfg.seed = self.seed("train-policy");
        let out = dagger_iterate(
            None,
            dc,
            &setups,
            &self.config.sim_settings(),
            &self.config.collection,
            &cfg,
            self.config.eval.dagger_eval_laps,
            seed,
            self.jobs,
        )?;
        out.policy.save(&self.artifacts.policy())?;
        save_losses(&out.losses, &self.artifacts.losses())?;
        std::fs::write(
            self.artifacts.dagger(),
            serde_json::to_string_pretty(&out.iterations)?,
        )?;
        if cfg.dagger_iterations > 1 {
            save_dc(&out.dataset, seed, &self.artifacts.aggregated_dc())?;
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        let tracks = self.load_tracks()?;
        let pilots = self
            .config
            .eval
            .controllers
            .iter()
            .map(|c| match c.as_str() {
                "expert" => Ok(Pilot::Expert),
                "dp" => Ok(Pilot::Dp),
                "mm" => {
                    let path = self.artifacts.policy();
                    Ok(Pilot::Mm(Arc::new(with_path(
                        &path,
                        PolicyNet::load(&path),
                    )?)))
                }
                other => Err(FalconError::Config(format!("unknown controller '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let sources = tracks
            .iter()
            .map(|t| Ok((t.name.clone(), self.perception(t)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let seeds: Vec<u64> = (0..self.config.eval.seeds)
            .map(|i| self.seed(&format!("evaluate/{i}")))
            .collect();
        let (report, episodes) = evaluate_matrix(
            &tracks,
            &pilots,
            &|t: &Track| sources[&t.name].clone(),
            &self.config.sim_settings(),
            &seeds,
            self.jobs,
        )?;
        let path = self.artifacts.report();
        ensure_parent(&path)?;
        report.save(&path)?;
        let per = seeds.len();
        for (i, e) in episodes.iter().enumerate() {
            let traj = self.artifacts.trajectory(&e.track, &e.controller, i % per);
            ensure_parent(&traj)?;
            log_trajectory(e, &traj)?;
        }
        Ok(report)
    }
}
