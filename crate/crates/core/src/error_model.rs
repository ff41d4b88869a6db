//! Conditional perception-error quantiles: collect estimator errors along
//! expert flights, fit 10th/90th percentile regressors, check their coverage
//! and sample perturbed poses inside the predicted band.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FalconError, Result};
use crate::eval::{run_episode_with, PerceptionSource, Pilot, SimSettings};
use crate::geometry::{wrap_angle, Pose6, Track};
use crate::seeding::episode_seed;

/// Number of modeled error dimensions: x, y, z, yaw.
pub const ERROR_DIMS: usize = 4;
/// Features: 1, x, y, z, sin yaw, cos yaw, distance to the next gate.
pub const N_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    pub true_pose: Pose6,
    pub est_pose: Pose6,
    /// `est - true` per dimension, yaw wrapped.
    pub error: [f64; ERROR_DIMS],
    pub gate_distance: f64,
    /// Index of the run the record came from.
    pub run: usize,
}

impl ErrorRecord {
    pub fn new(true_pose: Pose6, est_pose: Pose6, gate_distance: f64, run: usize) -> Self {
        Self {
            true_pose,
            est_pose,
            error: [
                est_pose.x - true_pose.x,
                est_pose.y - true_pose.y,
                est_pose.z - true_pose.z,
                wrap_angle(est_pose.yaw - true_pose.yaw),
            ],
            gate_distance,
            run,
        }
    }

    pub fn features(&self) -> [f64; N_FEATURES] {
        features(&self.true_pose, self.gate_distance)
    }
}

pub fn features(p: &Pose6, gate_distance: f64) -> [f64; N_FEATURES] {
    [1.0, p.x, p.y, p.z, p.yaw.sin(), p.yaw.cos(), gate_distance]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DqConfig {
    pub runs: usize,
    /// Length of each run in seconds.
    pub run_seconds: f64,
    /// Record one sample every this many control steps.
    pub record_every: usize,
    /// Initial seconds of each run that are not recorded.
    pub burn_in: f64,
    /// Std of the noise injected into the expert's applied acceleration.
    pub noise_sigma: f64,
}

impl Default for DqConfig {
    fn default() -> Self {
        Self {
            runs: 500,
            run_seconds: 20.0,
            record_every: 10,
            burn_in: 1.0,
            noise_sigma: 0.5,
        }
    }
}

impl DqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0
            || !(self.run_seconds > 0.0)
            || self.record_every == 0
            || !(self.burn_in >= 0.0)
            || !(self.noise_sigma >= 0.0)
        {
            return Err(FalconError::Config(format!("invalid D_Q config {self:?}")));
        }
        Ok(())
    }
}

/// Flies the (noise-injected) expert and records filtered estimates against
/// ground truth.
pub fn collect_dq(
    track: &Track,
    perception: &PerceptionSource,
    settings: &SimSettings,
    cfg: &DqConfig,
    seed: u64,
) -> Result<Vec<ErrorRecord>> {
    cfg.validate()?;
    let mut s = *settings;
    s.episode.action_noise = cfg.noise_sigma;
    s.episode.max_duration = Some(cfg.run_seconds);
    s.episode.laps = s.episode.laps.max(100);
    let mut out = Vec::new();
    for run in 0..cfg.runs {
        let mut step = 0usize;
        run_episode_with(
            track,
            &Pilot::Expert,
            perception,
            &s,
            episode_seed(seed, run),
            &mut |ctx| {
                if ctx.t >= cfg.burn_in && step.is_multiple_of(cfg.record_every) {
                    let d = (ctx.gate.position() - ctx.state.position).norm();
                    out.push(ErrorRecord::new(
                        ctx.state.pose(),
                        ctx.perception.filtered.pose,
                        d,
                        run,
                    ));
                }
                step += 1;
            },
        )?;
    }
    Ok(out)
}

/// Pinball loss `r (tau - 1[r < 0])` of residual `r`.
pub fn pinball(r: f64, tau: f64) -> f64 {
    if r < 0.0 {
        r * (tau - 1.0)
    } else {
        r * tau
    }
}

/// Linear conditional quantile on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearQuantile {
    pub tau: f64,
    pub weights: [f64; N_FEATURES],
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
}

impl LinearQuantile {
    pub fn constant(tau: f64, value: f64) -> Self {
        let mut weights = [0.0; N_FEATURES];
        weights[0] = value;
        Self {
            tau,
            weights,
            mean: [0.0; N_FEATURES],
            scale: [1.0; N_FEATURES],
        }
    }

    pub fn predict(&self, phi: &[f64; N_FEATURES]) -> f64 {
        let terms = self
            .weights
            .iter()
            .zip(phi)
            .zip(&self.mean)
            .zip(&self.scale);
        self.weights[0]
            + terms
                .skip(1)
                .map(|(((w, x), m), s)| w * (x - m) / s)
                .sum::<f64>()
    }

    pub fn loss(&self, phis: &[[f64; N_FEATURES]], ys: &[f64]) -> f64 {
        let total: f64 = phis
            .iter()
            .zip(ys)
            .map(|(p, y)| pinball(y - self.predict(p), self.tau))
            .sum();
        total / ys.len() as f64
    }
}

/// Empirical `tau`-quantile (lower order statistic).
pub fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((tau * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

/// Fits one linear quantile model by Adam on the pinball subgradient, starting
/// from (and never returning anything worse than) the unconditional quantile.
pub fn fit_linear_quantile(
    phis: &[[f64; N_FEATURES]],
    ys: &[f64],
    tau: f64,
) -> Result<LinearQuantile> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(FalconError::Domain(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    if ys.len() < 100 || phis.len() != ys.len() {
        return Err(FalconError::Domain(format!(
            "need at least 100 records, got {}",
            ys.len()
        )));
    }
    let n = ys.len() as f64;
    let mut model = LinearQuantile::constant(tau, empirical_quantile(ys, tau));
    let mut active = [false; N_FEATURES];
    for k in 1..N_FEATURES {
        let m = phis.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = phis.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / n;
        model.mean[k] = m;
        if var > 1e-12 {
            model.scale[k] = var.sqrt();
            active[k] = true;
        } else {
            log::warn!("quantile feature {k} has zero variance; leaving it out");
        }
    }
    active[0] = true;

    let y_scale = {
        let m = ys.iter().sum::<f64>() / n;
        (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(1e-9)
    };
    let std_phis: Vec<[f64; N_FEATURES]> = phis
        .iter()
        .map(|p| {
            let mut s = [0.0; N_FEATURES];
            s[0] = 1.0;
            for k in 1..N_FEATURES {
                if active[k] {
                    s[k] = (p[k] - model.mean[k]) / model.scale[k];
                }
            }
            s
        })
        .collect();

    let mut best = model.clone();
    let mut best_loss = model.loss(phis, ys);
    let mut w = model.weights;
    let (mut m, mut v) = ([0.0; N_FEATURES], [0.0; N_FEATURES]);
    let (b1, b2) = (0.9f64, 0.999f64);
    let iters = 3000;
    for it in 1..=iters {
        let mut g = [0.0; N_FEATURES];
        let mut loss = 0.0;
        for (s, y) in std_phis.iter().zip(ys) {
            let pred: f64 = s.iter().zip(&w).map(|(a, b)| a * b).sum();
            let r = y - pred;
            loss += pinball(r, tau);
            // d/dpred of pinball(y - pred)
            let dp = if r < 0.0 { 1.0 - tau } else { -tau };
            for k in 0..N_FEATURES {
                g[k] += dp * s[k];
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(FalconError::Divergence {
                epoch: it,
                detail: "non-finite pinball loss".into(),
            });
        }
        if loss < best_loss {
            best_loss = loss;
            best.weights = w;
        }
        let lr = 0.05 * y_scale / (1.0 + it as f64 / 300.0);
        let t = it as i32;
        for k in 0..N_FEATURES {
            if !active[k] {
                continue;
            }
            let gk = g[k] / n;
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / (1.0 - b1.powi(t));
            let vh = v[k] / (1.0 - b2.powi(t));
            w[k] -= lr * mh / (vh.sqrt() + 1e-12);
        }
    }
    let mut final_model = best.clone();
    final_model.weights = w;
    if final_model.loss(phis, ys) < best_loss {
        best = final_model;
    }
    Ok(best)
}

/// Fits the `tau`-quantile of every error dimension.
pub fn fit_quantiles(records: &[ErrorRecord], tau: f64) -> Result<Vec<LinearQuantile>> {
    let phis: Vec<_> = records.iter().map(|r| r.features()).collect();
    (0..ERROR_DIMS)
        .map(|d| {
            let ys: Vec<f64> = records.iter().map(|r| r.error[d]).collect();
            fit_linear_quantile(&phis, &ys, tau)
        })
        .collect()
}

/// Lower and upper conditional quantiles per error dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantileModel {
    pub lower: Vec<LinearQuantile>,
    pub upper: Vec<LinearQuantile>,
}

impl QuantileModel {
    /// Fits the 10th and 90th percentiles and reports interval crossings on
    /// the training inputs.
    pub fn fit(records: &[ErrorRecord]) -> Result<Self> {
        let model = Self {
            lower: fit_quantiles(records, 0.1)?,
            upper: fit_quantiles(records, 0.9)?,
        };
        for d in 0..ERROR_DIMS {
            let crossed = records.iter().filter(|r| {
                let (lo, hi) = model.interval(d, &r.features());
                lo > hi
            });
            let c = crossed.count();
            if c > 0 {
                log::warn!(
                    "error dim {d}: quantiles cross on {c} of {} training inputs",
                    records.len()
                );
            }
        }
        Ok(model)
    }

    pub fn interval(&self, dim: usize, phi: &[f64; N_FEATURES]) -> (f64, f64) {
        (self.lower[dim].predict(phi), self.upper[dim].predict(phi))
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != ERROR_DIMS || self.upper.len() != ERROR_DIMS {
            return Err(FalconError::Format(
                "quantile model needs four dimensions".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Fraction of records whose error lies inside `[Q_lo, Q_hi]`, per dimension.
pub fn coverage(model: &QuantileModel, held_out: &[ErrorRecord]) -> [f64; ERROR_DIMS] {
    let mut hits = [0usize; ERROR_DIMS];
    for r in held_out {
        let phi = r.features();
        for (d, h) in hits.iter_mut().enumerate() {
            let (lo, hi) = model.interval(d, &phi);
            if lo <= r.error[d] && r.error[d] <= hi {
                *h += 1;
            }
        }
    }
    hits.map(|h| h as f64 / held_out.len().max(1) as f64)
}

/// Draws `n` poses `p + Unif(Q_lo(p), Q_hi(p))` per dimension. Crossed
/// intervals are swapped.
pub fn sample_perturbed<R: Rng + ?Sized>(
    p: &Pose6,
    gate_distance: f64,
    model: &QuantileModel,
    n: usize,
    rng: &mut R,
) -> Vec<Pose6> {
    let phi = features(p, gate_distance);
    let bounds: Vec<(f64, f64)> = (0..ERROR_DIMS)
        .map(|d| {
            let (lo, hi) = model.interval(d, &phi);
            if lo > hi {
                log::debug!("crossed quantile interval in dim {d}; swapping");
                (hi, lo)
            } else {
                (lo, hi)
            }
        })
        .collect();
    (0..n)
        .map(|_| {
            let mut e = [0.0; ERROR_DIMS];
            for (d, (lo, hi)) in bounds.iter().enumerate() {
                e[d] = if hi > lo {
                    rng.random_range(*lo..=*hi)
                } else {
                    *lo
                };
            }
            Pose6::new(
                p.x + e[0],
                p.y + e[1],
                p.z + e[2],
                p.roll,
                p.pitch,
                p.yaw + e[3],
            )
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorRow {
    run: usize,
    true_x: f64,
    true_y: f64,
    true_z: f64,
    true_roll: f64,
    true_pitch: f64,
    true_yaw: f64,
    est_x: f64,
    est_y: f64,
    est_z: f64,
    est_roll: f64,
    est_pitch: f64,
    est_yaw: f64,
    err_x: f64,
    err_y: f64,
    err_z: f64,
    err_yaw: f64,
    gate_distance: f64,
}

pub fn save_records(records: &[ErrorRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let (t, e) = (&r.true_pose, &r.est_pose);
        w.serialize(ErrorRow {
            run: r.run,
            true_x: t.x,
            true_y: t.y,
            true_z: t.z,
            true_roll: t.roll,
            true_pitch: t.pitch,
            true_yaw: t.yaw,
            est_x: e.x,
            est_y: e.y,
            est_z: e.z,
            est_roll: e.roll,
            est_pitch: e.pitch,
            est_yaw: e.yaw,
            err_x: r.error[0],
            err_y: r.error[1],
            err_z: r.error[2],
            err_yaw: r.error[3],
            gate_distance: r.gate_distance,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<ErrorRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize::<ErrorRow>() {
        let r = row?;
        out.push(ErrorRecord {
            true_pose: Pose6 {
                x: r.true_x,
                y: r.true_y,
                z: r.true_z,
                roll: r.true_roll,
                pitch: r.true_pitch,
                yaw: r.true_yaw,
            },
            est_pose: Pose6 {
                x: r.est_x,
                y: r.est_y,
                z: r.est_z,
                roll: r.est_roll,
                pitch: r.est_pitch,
                yaw: r.est_yaw,
            },
            error: [r.err_x, r.err_y, r.err_z, r.err_yaw],
            gate_distance: r.gate_distance,
            run: r.run,
        });
    }
    Ok(out)
}

/// SHA-256 over the little-endian bytes of every record.
pub fn dataset_hash(records: &[ErrorRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update((r.run as u64).to_le_bytes());
        for p in [&r.true_pose, &r.est_pose] {
            for v in [p.x, p.y, p.z, p.roll, p.pitch, p.yaw] {
                h.update(v.to_le_bytes());
            }
        }
        for v in r.error {
            h.update(v.to_le_bytes());
        }
        h.update(r.gate_distance.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits records by run: runs whose index modulo `k` is zero are held out.
pub fn split_by_run(records: &[ErrorRecord], k: usize) -> (Vec<ErrorRecord>, Vec<ErrorRecord>) {
    records.iter().partition(|r| r.run % k.max(1) != 0)
}
