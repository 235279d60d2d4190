//! Coverage and worst-case bound experiments on synthetic scenes.

use rayon::prelude::*;
use serde::Serialize;

use super::synth::{generate_scene, generate_votes, scene_rng};
use super::{ExperimentConfig, PipelineError};
use crate::bounds::{worst_case_bound_with_witness, BoundError, BoundQuery, BoundStatus};
use crate::conformal::{
    beta_conditional_coverage, beta_mean_std, calibrate_estimates, summarize, CalibrationRecord,
    KeypointEstimate, KeypointLabels, PredictionSet,
};
use crate::geom3d::{project, CameraIntrinsics, ObjectModel, Pose};
use crate::purse::{build_purse, ransag, sample_purse, Purse, PurseError};

/// Stream families keep calibration, test and bound scenes disjoint.
const CALIB_STREAM: u64 = 1 << 40;
const TEST_STREAM: u64 = 2 << 40;
const BOUND_STREAM: u64 = 3 << 40;
const RESAMPLE_STRIDE: u64 = 1 << 24;
const WITNESS_TRIAL_FACTOR: usize = 50;
/// Reprojection threshold of the 2D projection metric, in pixels.
pub const PROJECTION_THRESHOLD_PX: f64 = 5.0;

/// A scene reduced to what the experiments need.
struct Sample {
    pose: Pose,
    labels: KeypointLabels,
    ests: Vec<KeypointEstimate>,
}

struct Context {
    model: ObjectModel,
    k: CameraIntrinsics,
}

impl Context {
    fn new(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let model = cfg.model()?;
        let k = cfg.intrinsics()?;
        Ok(Self { model, k })
    }

    fn sample(&self, cfg: &ExperimentConfig, stream: u64) -> Result<Sample, PipelineError> {
        let mut rng = scene_rng(cfg.seed, stream);
        let mut scene = generate_scene(
            &self.model,
            &self.k,
            &cfg.noise,
            cfg.image_width,
            cfg.image_height,
            stream,
            &mut rng,
        )?;
        if cfg.uses_votes() {
            scene.votes = Some(generate_votes(&scene.labels, &cfg.noise, &mut rng)?);
        }
        let ests = summarize(&scene.detection(cfg.uses_votes()), &cfg.nonconformity)?;
        Ok(Sample {
            pose: scene.pose,
            labels: scene.labels,
            ests,
        })
    }

    fn samples(&self, cfg: &ExperimentConfig, base: u64, n: usize) -> Result<Vec<Sample>, PipelineError> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.sample(cfg, base + i))
            .collect()
    }

    fn calibrate(&self, cfg: &ExperimentConfig, base: u64) -> Result<CalibrationRecord, PipelineError> {
        let calib: Vec<_> = self
            .samples(cfg, base, cfg.n_calib)?
            .into_iter()
            .map(|s| (s.labels, s.ests))
            .collect();
        Ok(calibrate_estimates(&calib, &cfg.nonconformity)?)
    }

    /// PURSE of a set; `None` when the set has a degenerate (point) region.
    fn purse(&self, pred: &PredictionSet, cfg: &ExperimentConfig) -> Result<Option<Purse>, PipelineError> {
        match build_purse(pred, &self.k, &self.model, cfg.trans_bound) {
            Ok(p) => Ok(Some(p)),
            Err(PurseError::DegenerateRegion { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Calibration record drawn from the calibration stream of `cfg`.
pub fn calibrate_synthetic(cfg: &ExperimentConfig) -> Result<CalibrationRecord, PipelineError> {
    Context::new(cfg)?.calibrate(cfg, CALIB_STREAM)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub epsilon: f64,
    pub resample: usize,
    pub kp_coverage: f64,
    pub purse_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSummary {
    pub epsilon: f64,
    pub n_calib: usize,
    pub n_test: usize,
    pub resamples: usize,
    pub mean_kp_coverage: f64,
    pub std_kp_coverage: f64,
    pub mean_purse_coverage: f64,
    pub std_purse_coverage: f64,
    /// Mean and standard deviation of the Beta law of conditional coverage.
    pub expected_mean: f64,
    pub expected_std: f64,
    /// Fraction of test samples where keypoint and PURSE coverage agree.
    pub equivalence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub summaries: Vec<CoverageSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Each resample draws fresh calibration and test scenes, calibrates and
/// measures the fraction of test scenes whose labels fall in the keypoint
/// sets and whose groundtruth pose falls in the PURSE.
pub fn run_coverage_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport, PipelineError> {
    let ctx = Context::new(cfg)?;
    let mut rows = Vec::new();
    let mut agree = vec![0usize; cfg.epsilons.len()];
    for r in 0..cfg.resamples {
        let offset = r as u64 * RESAMPLE_STRIDE;
        let record = ctx.calibrate(cfg, CALIB_STREAM + offset)?;
        let test = ctx.samples(cfg, TEST_STREAM + offset, cfg.n_test)?;
        for (e, &eps) in cfg.epsilons.iter().enumerate() {
            let alpha = record.quantile_at(eps)?;
            let hits = test
                .par_iter()
                .map(|s| {
                    let pred = PredictionSet::from_estimates(&s.ests, alpha, eps)?;
                    let kp = pred.contains(&s.labels);
                    let purse = ctx.purse(&pred, cfg)?.is_some_and(|p| p.contains(&s.pose));
                    Ok((kp, purse))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            let n = hits.len() as f64;
            agree[e] += hits.iter().filter(|(a, b)| a == b).count();
            rows.push(CoverageRow {
                epsilon: eps,
                resample: r,
                kp_coverage: hits.iter().filter(|h| h.0).count() as f64 / n,
                purse_coverage: hits.iter().filter(|h| h.1).count() as f64 / n,
            });
        }
    }

    let mut summaries = Vec::new();
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let kp: Vec<f64> = rows.iter().filter(|r| r.epsilon == eps).map(|r| r.kp_coverage).collect();
        let ps: Vec<f64> = rows.iter().filter(|r| r.epsilon == eps).map(|r| r.purse_coverage).collect();
        let (a, b) = beta_conditional_coverage(cfg.n_calib, eps)?;
        let (expected_mean, expected_std) = beta_mean_std(a, b);
        let (mean_kp_coverage, std_kp_coverage) = mean_std(&kp);
        let (mean_purse_coverage, std_purse_coverage) = mean_std(&ps);
        summaries.push(CoverageSummary {
            epsilon: eps,
            n_calib: cfg.n_calib,
            n_test: cfg.n_test,
            resamples: cfg.resamples,
            mean_kp_coverage,
            std_kp_coverage,
            mean_purse_coverage,
            std_purse_coverage,
            expected_mean,
            expected_std,
            equivalence_rate: agree[e] as f64 / (cfg.n_test * cfg.resamples).max(1) as f64,
        });
    }
    Ok(CoverageReport { rows, summaries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Bounded,
    PurseEmpty,
    /// No pose estimate: degenerate set or RANSAG without valid samples.
    NoEstimate,
    /// The relaxation could not be solved to the required accuracy.
    SolverFailed,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Bounded => "bounded",
            RowStatus::PurseEmpty => "purse_empty",
            RowStatus::NoEstimate => "no_estimate",
            RowStatus::SolverFailed => "solver_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsRow {
    pub scene_id: u64,
    pub epsilon: f64,
    pub lambda: f64,
    pub status: RowStatus,
    pub d_upper: Option<f64>,
    /// Rotation bound in degrees (`λ = 1` only).
    pub angle_deg: Option<f64>,
    /// Square root of the largest sampled objective over the PURSE.
    pub witness_value: Option<f64>,
    pub gt_in_purse: bool,
    /// `‖R̄ − R_gt‖_F` for `λ = 1`, `‖t̄ − t_gt‖` for `λ = 0`.
    pub actual_error: Option<f64>,
    /// Mean reprojection distance of the estimate to the labels, in pixels.
    pub reprojection_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsSummary {
    pub epsilon: f64,
    pub lambda: f64,
    pub scenes: usize,
    pub bounded: usize,
    pub purse_empty: usize,
    pub no_estimate: usize,
    pub solver_failed: usize,
    pub gt_in_purse: usize,
    /// Scenes with the groundtruth in the PURSE and error above the bound.
    pub bound_violations: usize,
    /// Bounded scenes with a sampled PURSE pose beyond the bound.
    pub witness_violations: usize,
    pub median_d_upper: Option<f64>,
    pub median_angle_deg: Option<f64>,
    /// Fraction of scenes whose estimate reprojects within the threshold.
    pub projection_success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    pub summaries: Vec<BoundsSummary>,
}

/// Relative slack used when comparing bounds to sampled values.
pub const VALIDITY_TOL: f64 = 1e-6;

fn exceeds(value: f64, bound: f64) -> bool {
    value > bound + VALIDITY_TOL * (1.0 + bound)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn mean_reprojection(pose: &Pose, labels: &KeypointLabels, ctx: &Context) -> Option<f64> {
    let mut sum = 0.0;
    for (y, p) in labels.y.iter().zip(&ctx.model.keypoints3d) {
        sum += (project(pose, &ctx.k, p).ok()? - y).norm();
    }
    Some(sum / labels.len() as f64)
}

fn bound_scene(
    ctx: &Context,
    cfg: &ExperimentConfig,
    record: &CalibrationRecord,
    scene_id: u64,
) -> Result<Vec<BoundsRow>, PipelineError> {
    let s = ctx.sample(cfg, BOUND_STREAM + scene_id)?;
    let mut rows = Vec::new();
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let seed = cfg.seed ^ (scene_id << 8 | e as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let alpha = record.quantile_at(eps)?;
        let pred = PredictionSet::from_estimates(&s.ests, alpha, eps)?;
        let no_estimate = |lambda: f64, gt_in_purse: bool| BoundsRow {
            scene_id,
            epsilon: eps,
            lambda,
            status: RowStatus::NoEstimate,
            d_upper: None,
            angle_deg: None,
            witness_value: None,
            gt_in_purse,
            actual_error: None,
            reprojection_px: None,
        };
        let Some(purse) = ctx.purse(&pred, cfg)? else {
            rows.extend([0.0, 1.0].map(|l| no_estimate(l, false)));
            continue;
        };
        let gt_in_purse = purse.contains(&s.pose);
        let estimate = match ransag(&purse, &pred, &ctx.model, &ctx.k, cfg.trials, seed) {
            Ok(r) => r.average,
            Err(PurseError::NoValidSamples) => {
                rows.extend([0.0, 1.0].map(|l| no_estimate(l, gt_in_purse)));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let witness = if cfg.witness_samples > 0 {
            sample_purse(
                &purse,
                &pred,
                &ctx.model,
                &ctx.k,
                cfg.witness_samples,
                cfg.witness_samples * WITNESS_TRIAL_FACTOR,
                !seed,
            )?
        } else {
            Vec::new()
        };
        let reprojection_px = mean_reprojection(&estimate, &s.labels, ctx);
        for lambda in [0.0, 1.0] {
            let query = BoundQuery::new(purse.clone(), estimate, lambda)?;
            let actual = if lambda == 1.0 {
                (estimate.rot.matrix() - s.pose.rot.matrix()).norm()
            } else {
                (estimate.t - s.pose.t).norm()
            };
            let res = match worst_case_bound_with_witness(&query, &witness) {
                Ok(r) => r,
                Err(BoundError::Solver(_)) => {
                    rows.push(BoundsRow {
                        status: RowStatus::SolverFailed,
                        gt_in_purse,
                        actual_error: Some(actual),
                        reprojection_px,
                        ..no_estimate(lambda, gt_in_purse)
                    });
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let status = match res.status {
                BoundStatus::Bounded => RowStatus::Bounded,
                BoundStatus::PurseEmpty => RowStatus::PurseEmpty,
            };
            rows.push(BoundsRow {
                scene_id,
                epsilon: eps,
                lambda,
                status,
                d_upper: Some(res.d_upper),
                angle_deg: res.angle_upper_deg(),
                witness_value: res.lower_witness.as_ref().map(|w| w.1.max(0.0).sqrt()),
                gt_in_purse,
                actual_error: Some(actual),
                reprojection_px,
            });
        }
    }
    Ok(rows)
}

/// Calibrates once, then for every test scene and epsilon builds the set,
/// the PURSE and the RANSAG estimate and bounds its rotation (`λ = 1`) and
/// translation (`λ = 0`) error.
pub fn run_bounds_experiment(cfg: &ExperimentConfig) -> Result<BoundsReport, PipelineError> {
    let ctx = Context::new(cfg)?;
    let record = ctx.calibrate(cfg, CALIB_STREAM)?;
    let rows: Vec<BoundsRow> = (0..cfg.n_bound_scenes as u64)
        .into_par_iter()
        .map(|i| bound_scene(&ctx, cfg, &record, i))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let summaries = summarize_bounds(&rows, &cfg.epsilons);
    Ok(BoundsReport { rows, summaries })
}

pub fn summarize_bounds(rows: &[BoundsRow], epsilons: &[f64]) -> Vec<BoundsSummary> {
    let mut out = Vec::new();
    for &eps in epsilons {
        for lambda in [0.0, 1.0] {
            let sel: Vec<&BoundsRow> = rows
                .iter()
                .filter(|r| r.epsilon == eps && r.lambda == lambda)
                .collect();
            let count = |st: RowStatus| sel.iter().filter(|r| r.status == st).count();
            let bounded: Vec<&&BoundsRow> = sel.iter().filter(|r| r.status == RowStatus::Bounded).collect();
            out.push(BoundsSummary {
                epsilon: eps,
                lambda,
                scenes: sel.len(),
                bounded: bounded.len(),
                purse_empty: count(RowStatus::PurseEmpty),
                no_estimate: count(RowStatus::NoEstimate),
                solver_failed: count(RowStatus::SolverFailed),
                gt_in_purse: sel.iter().filter(|r| r.gt_in_purse).count(),
                bound_violations: bounded
                    .iter()
                    .filter(|r| r.gt_in_purse)
                    .filter(|r| matches!((r.actual_error, r.d_upper), (Some(a), Some(d)) if exceeds(a, d)))
                    .count(),
                witness_violations: bounded
                    .iter()
                    .filter(|r| matches!((r.witness_value, r.d_upper), (Some(w), Some(d)) if exceeds(w, d)))
                    .count(),
                median_d_upper: median(bounded.iter().filter_map(|r| r.d_upper).collect()),
                median_angle_deg: median(bounded.iter().filter_map(|r| r.angle_deg).collect()),
                projection_success_rate: if sel.is_empty() {
                    0.0
                } else {
                    sel.iter()
                        .filter(|r| r.reprojection_px.is_some_and(|p| p < PROJECTION_THRESHOLD_PX))
                        .count() as f64
                        / sel.len() as f64
                },
            });
        }
    }
    out
}
