//! Synthetic scene generator standing in for the keypoint network.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NoiseSpec, PipelineError};
use crate::conformal::{Detection, Heatmap, KeypointLabels, VoteField};
use crate::geom3d::{project, CameraIntrinsics, ObjectModel, Pose, Rotation3};

const MAX_ATTEMPTS: usize = 100;
const DEPTH_RANGE: (f64, f64) = (0.5, 2.0);
/// Fraction of the image half-size used for random lateral offsets.
const LATERAL_SPREAD: f64 = 0.3;
const FRUSTUM_MARGIN: f64 = 2.0;
const BLOB_RADIUS_SIGMAS: f64 = 4.0;
const VOTES_PER_KEYPOINT: usize = 60;
const VOTE_ANGLE_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene_id: u64,
    pub pose: Pose,
    pub labels: KeypointLabels,
    pub heatmap: Heatmap,
    /// Which channels carry an outlier blob.
    pub outliers: Vec<bool>,
    /// Vote fields, when requested.
    pub votes: Option<Vec<VoteField>>,
    pub noise: NoiseSpec,
}

impl SyntheticScene {
    pub fn detection(&self, use_votes: bool) -> Detection {
        match (&self.votes, use_votes) {
            (Some(v), true) => Detection::Votes(v.clone()),
            _ => Detection::Heatmap(self.heatmap.clone()),
        }
    }
}

/// Scene metadata written next to the binary heatmap by `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub pose: Pose,
    pub labels: KeypointLabels,
    pub outliers: Vec<bool>,
    pub heatmap_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes_file: Option<String>,
    pub noise: NoiseSpec,
}

/// Generator for scene `index` of stream family `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn normal2(rng: &mut impl Rng) -> Vector2<f64> {
    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Camera looking at the object origin from a uniform upper-hemisphere
/// direction, with uniform roll, depth and a small lateral offset.
fn sample_pose(k: &CameraIntrinsics, width: usize, height: usize, rng: &mut impl Rng) -> Pose {
    let z: f64 = rng.random();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let rho = (1.0 - z * z).max(0.0).sqrt();
    let view = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
    let dist = rng.random_range(DEPTH_RANGE.0..DEPTH_RANGE.1);

    let zc = -view;
    let up = if zc.z.abs() > 0.99 { Vector3::x() } else { Vector3::z() };
    let xc0 = up.cross(&zc).normalize();
    let yc0 = zc.cross(&xc0);
    let roll = rng.random::<f64>() * std::f64::consts::TAU;
    let (s, c) = roll.sin_cos();
    let xc = xc0 * c + yc0 * s;
    let yc = zc.cross(&xc);
    let r = Matrix3::from_rows(&[xc.transpose(), yc.transpose(), zc.transpose()]);
    let rot = Rotation3::new(r).expect("orthonormal by construction");

    let du = rng.random_range(-LATERAL_SPREAD..LATERAL_SPREAD) * width as f64 * 0.5;
    let dv = rng.random_range(-LATERAL_SPREAD..LATERAL_SPREAD) * height as f64 * 0.5;
    let t = Vector3::new(dist * du / k.fx, dist * dv / k.fy, dist);
    Pose::new(rot, t)
}

fn in_frame(p: &Vector2<f64>, width: usize, height: usize) -> bool {
    p.x >= FRUSTUM_MARGIN
        && p.y >= FRUSTUM_MARGIN
        && p.x <= width as f64 - 1.0 - FRUSTUM_MARGIN
        && p.y <= height as f64 - 1.0 - FRUSTUM_MARGIN
}

/// Discretized isotropic Gaussian of total mass `mass` around `center`.
fn blob(center: &Vector2<f64>, sigma: f64, mass: f64, width: usize, height: usize, out: &mut Vec<(usize, f64)>) {
    let r = (BLOB_RADIUS_SIGMAS * sigma).ceil();
    let x0 = (center.x - r).floor().max(0.0) as usize;
    let y0 = (center.y - r).floor().max(0.0) as usize;
    let x1 = ((center.x + r).ceil().max(0.0) as usize).min(width - 1);
    let y1 = ((center.y + r).ceil().max(0.0) as usize).min(height - 1);
    let start = out.len();
    let mut total = 0.0;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - center.x).powi(2) + (y as f64 - center.y).powi(2);
            let w = (-0.5 * d2 / (sigma * sigma)).exp();
            if w > 0.0 {
                out.push((y * width + x, w));
                total += w;
            }
        }
    }
    if total > 0.0 {
        for e in &mut out[start..] {
            e.1 *= mass / total;
        }
    } else {
        // blob center far outside the image: put the mass on the nearest pixel
        let x = center.x.round().clamp(0.0, (width - 1) as f64) as usize;
        let y = center.y.round().clamp(0.0, (height - 1) as f64) as usize;
        out.push((y * width + x, mass));
    }
}

/// Draws one scene: a random in-frustum pose, the projected labels and a
/// heatmap with a Gaussian blob per keypoint (offset by detection noise) and
/// occasional outlier blobs.
pub fn generate_scene(
    model: &ObjectModel,
    k: &CameraIntrinsics,
    noise: &NoiseSpec,
    width: usize,
    height: usize,
    scene_id: u64,
    rng: &mut impl Rng,
) -> Result<SyntheticScene, PipelineError> {
    noise.validate()?;
    let mut found = None;
    for _ in 0..MAX_ATTEMPTS {
        let pose = sample_pose(k, width, height, rng);
        let px: Option<Vec<_>> = model
            .keypoints3d
            .iter()
            .map(|y| project(&pose, k, y).ok().filter(|p| in_frame(p, width, height)))
            .collect();
        if let Some(px) = px {
            found = Some((pose, px));
            break;
        }
    }
    let (pose, labels) = found.ok_or(PipelineError::OutOfFrustum(MAX_ATTEMPTS))?;

    let mut channels = Vec::with_capacity(labels.len());
    let mut outliers = Vec::with_capacity(labels.len());
    for y in &labels {
        let center = y + normal2(rng) * noise.sigma_det;
        let outlier = noise.p_out > 0.0 && rng.random::<f64>() < noise.p_out;
        let mut entries = Vec::new();
        let main_mass = if outlier { 1.0 - noise.w_out } else { 1.0 };
        blob(&center, noise.sigma_blob, main_mass, width, height, &mut entries);
        if outlier {
            let at = Vector2::new(
                rng.random_range(0..width) as f64,
                rng.random_range(0..height) as f64,
            );
            blob(&at, noise.sigma_blob, noise.w_out, width, height, &mut entries);
        }
        channels.push(entries);
        outliers.push(outlier);
    }
    let heatmap = Heatmap::from_sparse(width, height, channels)?;
    Ok(SyntheticScene {
        scene_id,
        pose,
        labels: KeypointLabels::new(labels),
        heatmap,
        outliers,
        votes: None,
        noise: *noise,
    })
}

/// Pixel-wise unit vectors pointing at each (noisy) keypoint from pixels in
/// the object's bounding box; with probability `p_out` a vote points in a
/// uniformly random direction.
pub fn generate_votes(
    labels: &KeypointLabels,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> Result<Vec<VoteField>, PipelineError> {
    let (mut lo, mut hi) = (labels.y[0], labels.y[0]);
    for y in &labels.y {
        lo = lo.inf(y);
        hi = hi.sup(y);
    }
    let pad = Vector2::new(5.0, 5.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let mut fields = Vec::with_capacity(labels.len());
    for y in &labels.y {
        let center = y + normal2(rng) * noise.sigma_det;
        let mut votes = Vec::with_capacity(VOTES_PER_KEYPOINT);
        while votes.len() < VOTES_PER_KEYPOINT {
            let p = Vector2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
            let dir = if rng.random::<f64>() < noise.p_out {
                let a = rng.random::<f64>() * std::f64::consts::TAU;
                Vector2::new(a.cos(), a.sin())
            } else {
                let d = center - p;
                if d.norm() < 1e-6 {
                    continue;
                }
                let a = d.y.atan2(d.x) + VOTE_ANGLE_SIGMA * rng.sample::<f64, _>(StandardNormal);
                Vector2::new(a.cos(), a.sin())
            };
            votes.push((p, dir));
        }
        fields.push(VoteField::new(votes)?);
    }
    Ok(fields)
}
