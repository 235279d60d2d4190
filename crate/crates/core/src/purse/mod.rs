//! Pose uncertainty sets built from keypoint prediction sets.
//!
//! For keypoint `k` with model point `Y_k`, let `U_k = [Y_kᵀ ⊗ P, P]` so that
//! `U_k s = P (R Y_k + t)` for `s = [vec(R); t]`. With rows `u_1, u_2, u_3`
//! of `U_k`, the projection lies in the region `(y − μ)ᵀ Λ (y − μ) ≤ 1` and in
//! front of the camera exactly when
//!
//! ```text
//! sᵀ A_k s ≤ 0,   b_kᵀ s > 0,
//! A_k = M Λ Mᵀ − u_3 u_3ᵀ,   M = [u_1 − μ_1 u_3, u_2 − μ_2 u_3],   b_k = u_3.
//! ```
//!
//! Indeed `sᵀ A_k s = depth² · ((y − μ)ᵀ Λ (y − μ) − 1)`.

mod ransag;

pub use ransag::{ransag, sample_in_region, sample_purse, RansagResult};

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::PredictionSet;
use crate::geom3d::{CameraIntrinsics, GeomError, ObjectModel, Pose, PoseVector};

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;

/// Minimum accepted keypoint depth, meters.
pub const DEPTH_MIN: f64 = 1e-3;
/// Slack on the quadratic constraints in membership tests.
pub const QUADRATIC_TOL: f64 = 1e-9;
/// Default radius of the redundant translation ball, meters.
pub const DEFAULT_TRANS_BOUND: f64 = 5.0;

#[derive(Debug, Error)]
pub enum PurseError {
    #[error("{sets} prediction-set regions for {keypoints} model keypoints")]
    DimensionMismatch { sets: usize, keypoints: usize },
    #[error("region of keypoint {keypoint} is a single point or not positive definite")]
    DegenerateRegion { keypoint: usize },
    #[error("shape matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("need at least 3 keypoints, got {0}")]
    TooFewKeypoints(usize),
    #[error("number of trials must be positive")]
    NoTrials,
    #[error("no finite pose could be sampled")]
    NoValidSamples,
    #[error("invalid purse: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// The set of poses `{s : sᵀA_k s ≤ 0, b_kᵀ s > 0 ∀k, ‖t‖ ≤ trans_bound}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PurseJson", into = "PurseJson")]
pub struct Purse {
    a: Vec<Mat12>,
    b: Vec<Vec12>,
    pub trans_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct PurseJson {
    #[serde(rename = "A")]
    a: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
    #[serde(default = "default_trans_bound")]
    trans_bound: f64,
}

fn default_trans_bound() -> f64 {
    DEFAULT_TRANS_BOUND
}

impl TryFrom<PurseJson> for Purse {
    type Error = PurseError;

    fn try_from(raw: PurseJson) -> Result<Self, Self::Error> {
        let mut a = Vec::with_capacity(raw.a.len());
        for (k, rows) in raw.a.iter().enumerate() {
            if rows.len() != 12 || rows.iter().any(|r| r.len() != 12) {
                return Err(PurseError::Invalid(format!("A[{k}] is not 12x12")));
            }
            a.push(Mat12::from_fn(|i, j| rows[i][j]));
        }
        let mut b = Vec::with_capacity(raw.b.len());
        for (k, v) in raw.b.iter().enumerate() {
            if v.len() != 12 {
                return Err(PurseError::Invalid(format!("b[{k}] has length {}", v.len())));
            }
            b.push(Vec12::from_column_slice(v));
        }
        Purse::from_parts(a, b, raw.trans_bound)
    }
}

impl From<Purse> for PurseJson {
    fn from(p: Purse) -> Self {
        PurseJson {
            a: p
                .a
                .iter()
                .map(|m| (0..12).map(|i| (0..12).map(|j| m[(i, j)]).collect()).collect())
                .collect(),
            b: p.b.iter().map(|v| v.iter().copied().collect()).collect(),
            trans_bound: p.trans_bound,
        }
    }
}

/// `U_k = [Y_1 P, Y_2 P, Y_3 P, P]`, a 3×12 matrix with `U_k s = P(R Y + t)`.
pub fn projection_operator(p: &Matrix3<f64>, y: &Vector3<f64>) -> SMatrix<f64, 3, 12> {
    let mut u = SMatrix::<f64, 3, 12>::zeros();
    for j in 0..3 {
        u.fixed_view_mut::<3, 3>(0, 3 * j).copy_from(&(p * y[j]));
    }
    u.fixed_view_mut::<3, 3>(0, 9).copy_from(p);
    u
}

impl Purse {
    /// Validates shapes, finiteness and symmetry (within 1e-12, relative).
    pub fn from_parts(a: Vec<Mat12>, b: Vec<Vec12>, trans_bound: f64) -> Result<Self, PurseError> {
        if a.len() != b.len() {
            return Err(PurseError::Invalid(format!("{} matrices, {} vectors", a.len(), b.len())));
        }
        if !(trans_bound > 0.0 && trans_bound.is_finite()) {
            return Err(PurseError::Invalid("trans_bound must be positive".into()));
        }
        for (k, m) in a.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) || !b[k].iter().all(|v| v.is_finite()) {
                return Err(PurseError::Invalid(format!("constraint {k} is not finite")));
            }
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 * m.abs().max().max(1.0) {
                return Err(PurseError::Invalid(format!("A[{k}] is not symmetric")));
            }
        }
        let a = a.into_iter().map(|m| (m + m.transpose()) * 0.5).collect();
        Ok(Self { a, b, trans_bound })
    }

    pub fn a(&self) -> &[Mat12] {
        &self.a
    }

    pub fn b(&self) -> &[Vec12] {
        &self.b
    }

    pub fn num_keypoints(&self) -> usize {
        self.a.len()
    }

    /// `sᵀ A_k s` for every keypoint.
    pub fn quadratic_values(&self, pose: &Pose) -> Vec<f64> {
        let s = PoseVector::from_pose(pose).0;
        self.a.iter().map(|a| s.dot(&(a * s))).collect()
    }

    /// `b_kᵀ s`, the keypoint depths.
    pub fn depths(&self, pose: &Pose) -> Vec<f64> {
        let s = PoseVector::from_pose(pose).0;
        self.b.iter().map(|b| b.dot(&s)).collect()
    }

    pub fn contains(&self, pose: &Pose) -> bool {
        if !(pose.t.norm() <= self.trans_bound) {
            return false;
        }
        let s = PoseVector::from_pose(pose).0;
        self.a
            .iter()
            .zip(&self.b)
            .all(|(a, b)| b.dot(&s) > DEPTH_MIN && s.dot(&(a * s)) <= QUADRATIC_TOL)
    }
}

/// Builds the pose uncertainty set of a prediction set.
pub fn build_purse(
    pred: &PredictionSet,
    intrinsics: &CameraIntrinsics,
    model: &ObjectModel,
    trans_bound: f64,
) -> Result<Purse, PurseError> {
    if pred.len() != model.len() {
        return Err(PurseError::DimensionMismatch {
            sets: pred.len(),
            keypoints: model.len(),
        });
    }
    let p = intrinsics.matrix();
    let mut a = Vec::with_capacity(model.len());
    let mut b = Vec::with_capacity(model.len());
    for (k, (region, y)) in pred.regions.iter().zip(&model.keypoints3d).enumerate() {
        if region.is_point() || region.shape.cholesky().is_none() {
            return Err(PurseError::DegenerateRegion { keypoint: k });
        }
        let u = projection_operator(&p, y);
        let (u1, u2, u3) = (u.row(0).transpose(), u.row(1).transpose(), u.row(2).transpose());
        let mu: Vector2<f64> = region.center;
        let mut m = SMatrix::<f64, 12, 2>::zeros();
        m.set_column(0, &(u1 - u3 * mu.x));
        m.set_column(1, &(u2 - u3 * mu.y));
        let ak = m * region.shape * m.transpose() - u3 * u3.transpose();
        a.push((ak + ak.transpose()) * 0.5);
        b.push(u3);
    }
    Purse::from_parts(a, b, trans_bound)
}
