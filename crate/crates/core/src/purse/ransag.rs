//! Random sample averaging: sample keypoints inside their regions, solve
//! P3P, keep the poses inside the PURSE and average them.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Purse, PurseError};
use crate::conformal::PredictionSet;
use crate::geom3d::{average_poses, p3p, pnp, CameraIntrinsics, ObjectModel, Pose};

const FALLBACK_DIVISOR: usize = 20;
const SAMPLE_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RansagResult {
    pub samples: Vec<Pose>,
    pub average: Pose,
    pub fallback_used: bool,
    pub trials: usize,
    pub seed: u64,
}

/// Per-trial generator: stream `index` of the ChaCha8 generator seeded with
/// `seed`.
pub(crate) fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform sample from `{y : (y − μ)ᵀ Λ (y − μ) ≤ 1}`.
pub fn sample_in_region(mu: &Vector2<f64>, lambda: &Matrix2<f64>, rng: &mut impl Rng) -> Result<Vector2<f64>, PurseError> {
    if !lambda.iter().all(|v| v.is_finite()) {
        return Err(PurseError::NotPositiveDefinite);
    }
    let chol = lambda.cholesky().ok_or(PurseError::NotPositiveDefinite)?;
    let r = rng.random::<f64>().sqrt() * (1.0 - 1e-12);
    let theta = rng.random::<f64>() * std::f64::consts::TAU;
    let u = Vector2::new(r * theta.cos(), r * theta.sin());
    // y − μ = L⁻ᵀ u
    let lt = chol.l().transpose();
    let d = lt
        .solve_upper_triangular(&u)
        .ok_or(PurseError::NotPositiveDefinite)?;
    Ok(mu + d)
}

fn check_inputs(pred: &PredictionSet, model: &ObjectModel) -> Result<(), PurseError> {
    if pred.len() != model.len() {
        return Err(PurseError::DimensionMismatch {
            sets: pred.len(),
            keypoints: model.len(),
        });
    }
    if model.len() < 3 {
        return Err(PurseError::TooFewKeypoints(model.len()));
    }
    for (k, r) in pred.regions.iter().enumerate() {
        if r.is_point() || r.shape.cholesky().is_none() {
            return Err(PurseError::DegenerateRegion { keypoint: k });
        }
    }
    Ok(())
}

/// One P3P trial; returns the in-PURSE solutions.
fn trial(
    purse: &Purse,
    pred: &PredictionSet,
    model: &ObjectModel,
    k: &CameraIntrinsics,
    mut rng: ChaCha8Rng,
) -> Vec<Pose> {
    let idx = rand::seq::index::sample(&mut rng, model.len(), 3);
    let ids = [idx.index(0), idx.index(1), idx.index(2)];
    let pts = ids.map(|i| model.keypoints3d[i]);
    if crate::geom3d::collinear(&pts[0], &pts[1], &pts[2]) {
        return Vec::new();
    }
    let mut pixels = [Vector2::zeros(); 3];
    for (slot, &i) in pixels.iter_mut().zip(&ids) {
        let r = &pred.regions[i];
        match sample_in_region(&r.center, &r.shape, &mut rng) {
            Ok(y) => *slot = y,
            Err(_) => return Vec::new(),
        }
    }
    p3p(&pixels, &pts, k)
        .into_iter()
        .filter(|p| purse.contains(p))
        .collect()
}

/// Samples poses from the PURSE with `trials` P3P trials and averages them.
/// When no trial lands in the PURSE, `⌊trials/20⌋` PnP fits on keypoints
/// sampled from all regions are averaged instead, without membership checks.
pub fn ransag(
    purse: &Purse,
    pred: &PredictionSet,
    model: &ObjectModel,
    intrinsics: &CameraIntrinsics,
    trials: usize,
    seed: u64,
) -> Result<RansagResult, PurseError> {
    check_inputs(pred, model)?;
    if trials == 0 {
        return Err(PurseError::NoTrials);
    }
    let samples: Vec<Pose> = (0..trials)
        .into_par_iter()
        .map(|i| trial(purse, pred, model, intrinsics, trial_rng(seed, i as u64)))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    if !samples.is_empty() {
        let average = average_poses(&samples)?;
        return Ok(RansagResult {
            samples,
            average,
            fallback_used: false,
            trials,
            seed,
        });
    }

    let fallback = trials / FALLBACK_DIVISOR;
    let samples: Vec<Pose> = (0..fallback)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = trial_rng(seed, (trials + i) as u64);
            let pixels = pred
                .regions
                .iter()
                .map(|r| sample_in_region(&r.center, &r.shape, &mut rng))
                .collect::<Result<Vec<_>, _>>()
                .ok()?;
            pnp(&pixels, &model.keypoints3d, intrinsics)
                .ok()
                .filter(|p| p.t.iter().all(|v| v.is_finite()))
        })
        .collect();
    if samples.is_empty() {
        return Err(PurseError::NoValidSamples);
    }
    let average = average_poses(&samples)?;
    Ok(RansagResult {
        samples,
        average,
        fallback_used: true,
        trials,
        seed,
    })
}

/// Collects up to `count` in-PURSE poses using at most `max_trials` P3P
/// trials. Trials run in fixed-size blocks so the result does not depend on
/// the thread count.
pub fn sample_purse(
    purse: &Purse,
    pred: &PredictionSet,
    model: &ObjectModel,
    intrinsics: &CameraIntrinsics,
    count: usize,
    max_trials: usize,
    seed: u64,
) -> Result<Vec<Pose>, PurseError> {
    check_inputs(pred, model)?;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while out.len() < count && start < max_trials {
        let end = (start + SAMPLE_BLOCK).min(max_trials);
        let block: Vec<Vec<Pose>> = (start..end)
            .into_par_iter()
            .map(|i| trial(purse, pred, model, intrinsics, trial_rng(seed, i as u64)))
            .collect();
        for poses in block {
            out.extend(poses);
        }
        start = end;
    }
    out.truncate(count);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{KeypointEstimate, Region};
    use crate::geom3d::{project, Rotation3};
    use crate::purse::build_purse;
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(250.0, 250.0, 160.0, 120.0, 0.0).unwrap()
    }

    fn gt() -> Pose {
        Pose::new(
            Rotation3::from_axis_angle(&Vector3::new(-0.4, 1.0, 0.1), 0.6),
            Vector3::new(-0.03, 0.02, 0.9),
        )
    }

    fn tight_scene(radius: f64) -> (ObjectModel, PredictionSet, Purse) {
        let model = ObjectModel::synthetic_duck();
        let ests: Vec<_> = model
            .keypoints3d
            .iter()
            .map(|y| KeypointEstimate::Peak {
                pixel: project(&gt(), &k(), y).unwrap(),
                prob: 1.0,
            })
            .collect();
        let pred = PredictionSet::from_estimates(&ests, radius, 0.1).unwrap();
        let purse = build_purse(&pred, &k(), &model, 5.0).unwrap();
        (model, pred, purse)
    }

    #[test]
    fn region_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lambda = Matrix2::new(4.0, 1.0, 1.0, 2.0);
        let region = Region {
            center: Vector2::new(3.0, -2.0),
            shape: lambda,
        };
        for _ in 0..100_000 {
            let y = sample_in_region(&region.center, &lambda, &mut rng).unwrap();
            assert!(region.contains(&y));
        }
    }

    #[test]
    fn unit_disk_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let pts: Vec<_> = (0..n)
            .map(|_| sample_in_region(&Vector2::zeros(), &Matrix2::identity(), &mut rng).unwrap())
            .collect();
        let mean = pts.iter().sum::<Vector2<f64>>() / n as f64;
        // coordinate variance of the uniform unit disk is 1/4
        let se = (0.25 / n as f64).sqrt();
        assert!(mean.x.abs() < 3.0 * se && mean.y.abs() < 3.0 * se);
        let r2 = pts.iter().map(|p| p.norm_squared()).sum::<f64>() / n as f64;
        assert!((r2 - 0.5).abs() < 0.02);
    }

    #[test]
    fn anisotropic_axis_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lambda = Matrix2::new(4.0, 0.0, 0.0, 1.0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..20_000 {
            let y = sample_in_region(&Vector2::zeros(), &lambda, &mut rng).unwrap();
            sx += y.x * y.x;
            sy += y.y * y.y;
        }
        let ratio = (sx / sy).sqrt();
        assert!((ratio - 0.5).abs() < 0.025, "{ratio}");
    }

    #[test]
    fn rejects_non_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bad = Matrix2::new(1.0, 0.0, 0.0, -1.0);
        assert!(matches!(
            sample_in_region(&Vector2::zeros(), &bad, &mut rng),
            Err(PurseError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn tight_sets_yield_accurate_average() {
        let (model, pred, purse) = tight_scene(2.0);
        let res = ransag(&purse, &pred, &model, &k(), 1000, 7).unwrap();
        assert!(!res.fallback_used);
        assert!(res.samples.len() >= 50, "{}", res.samples.len());
        assert!(res.samples.iter().all(|p| purse.contains(p)));
        assert!(res.average.rot.angle_to(&gt().rot).to_degrees() < 2.0);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (model, pred, purse) = tight_scene(3.0);
        let a = ransag(&purse, &pred, &model, &k(), 200, 11).unwrap();
        let b = ransag(&purse, &pred, &model, &k(), 200, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = ransag(&purse, &pred, &model, &k(), 200, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn contradictory_sets_trigger_fallback() {
        let (model, mut pred, _) = tight_scene(2.0);
        // swap two far-apart regions so no rigid pose fits
        pred.regions.swap(0, 6);
        let purse = build_purse(&pred, &k(), &model, 5.0).unwrap();
        let res = ransag(&purse, &pred, &model, &k(), 1000, 3).unwrap();
        assert!(res.fallback_used);
        assert_eq!(res.samples.len(), 50);
    }

    #[test]
    fn sample_purse_respects_budget() {
        let (model, pred, purse) = tight_scene(3.0);
        let s = sample_purse(&purse, &pred, &model, &k(), 30, 5000, 9).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.iter().all(|p| purse.contains(p)));
        let again = sample_purse(&purse, &pred, &model, &k(), 30, 5000, 9).unwrap();
        assert_eq!(s, again);
    }
}
