//! Rigid-body geometry, pinhole projection, pose solvers and rotation
//! averaging.
//!
//! Vectorization convention: a pose `(R, t)` is flattened as
//! `s = [vec(R); t]` where `vec` stacks the *columns* of `R`. With this
//! convention `(Yᵀ ⊗ P) vec(R) = P R Y`, which is what the pose uncertainty
//! set construction relies on. Every module in the crate goes through
//! [`PoseVector`] for this conversion.

mod p3p;
mod pnp;

pub use p3p::p3p;
pub use pnp::{pnp, reprojection_rms};

use nalgebra::{Matrix3, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("pixel and point counts differ ({pixels} vs {points})")]
    CorrespondenceMismatch { pixels: usize, points: usize },
    #[error("pose refinement failed to reduce the reprojection residual")]
    SolverDiverged,
    #[error("matrix is rank deficient; SO(3) projection is ambiguous")]
    RankDeficient,
    #[error("empty input")]
    EmptyInput,
    #[error("value {0} is outside the valid range")]
    OutOfRange(f64),
    #[error("matrix is not a rotation: {0}")]
    InvalidRotation(String),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid object model: {0}")]
    InvalidModel(String),
}

/// A 3×3 rotation matrix (an element of SO(3)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthogonality and a positive determinant within
    /// [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeomError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(GeomError::InvalidRotation(format!(
                "|RᵀR - I|max = {ortho:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeomError::InvalidRotation(format!("det = {det}")));
        }
        Ok(Self(m))
    }

    /// Rodrigues' formula; `axis` need not be normalized.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Exponential map from an axis-angle vector.
    pub fn exp(w: &Vector3<f64>) -> Self {
        let theta = w.norm();
        let k = skew(w);
        let (a, b) = if theta < 1e-8 {
            (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation3) -> Self {
        Self(self.0 * other.0)
    }

    /// Geodesic (angle) distance in radians.
    pub fn angle_to(&self, other: &Rotation3) -> f64 {
        let c = ((self.0.transpose() * other.0).trace() - 1.0) * 0.5;
        // acos is ill-conditioned near ±1; use the chordal form instead.
        let d = (self.0 - other.0).norm();
        if c > 0.9 {
            2.0 * (d / (2.0 * std::f64::consts::SQRT_2)).min(1.0).asin()
        } else {
            c.clamp(-1.0, 1.0).acos()
        }
    }

    /// Chordal (Frobenius) distance `‖R₁ − R₂‖_F`.
    pub fn chordal_to(&self, other: &Rotation3) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation3 {
    type Error = GeomError;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        Rotation3::new(Matrix3::from_fn(|i, j| rows[i][j]))
    }
}

impl From<Rotation3> for [[f64; 3]; 3] {
    fn from(r: Rotation3) -> Self {
        let m = r.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid transform mapping object-frame points into the camera frame:
/// `X_cam = rot · X_obj + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(rename = "rotation")]
    pub rot: Rotation3,
    #[serde(rename = "translation")]
    pub t: Vector3<f64>,
}

impl Pose {
    pub fn new(rot: Rotation3, t: Vector3<f64>) -> Self {
        Self { rot, t }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.matrix() * p + self.t
    }

    pub fn to_vector(&self) -> PoseVector {
        PoseVector::from_pose(self)
    }

    /// Frobenius rotation error and Euclidean translation error to `other`.
    pub fn errors_to(&self, other: &Pose) -> (f64, f64) {
        (self.rot.chordal_to(&other.rot), (self.t - other.t).norm())
    }
}

/// `s = [vec(R); t]` with column-major `vec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector(pub SVector<f64, 12>);

impl PoseVector {
    pub fn from_pose(pose: &Pose) -> Self {
        let mut s = SVector::<f64, 12>::zeros();
        let m = pose.rot.matrix();
        for col in 0..3 {
            for row in 0..3 {
                s[3 * col + row] = m[(row, col)];
            }
        }
        s.fixed_rows_mut::<3>(9).copy_from(&pose.t);
        Self(s)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|row, col| self.0[3 * col + row])
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(9).into_owned()
    }

    pub fn to_pose(&self) -> Result<Pose, GeomError> {
        Ok(Pose::new(
            Rotation3::new(self.rotation_matrix())?,
            self.translation(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Pinhole intrinsics `P = [[fx, skew, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, GeomError> {
        let k = Self { fx, fy, cx, cy, skew };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(GeomError::InvalidIntrinsics("non-finite entry".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeomError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    /// Pixel to normalized image coordinates (`K⁻¹ [u, v, 1]ᵀ`).
    pub fn unproject(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let y = (px.y - self.cy) / self.fy;
        let x = (px.x - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, GeomError> {
        if !(p.z > 0.0) {
            return Err(GeomError::NonPositiveDepth(p.z));
        }
        let x = p.x / p.z;
        let y = p.y / p.z;
        Ok(Vector2::new(
            self.fx * x + self.skew * y + self.cx,
            self.fy * y + self.cy,
        ))
    }
}

/// 3D semantic keypoints of an object, expressed in the object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectModelJson", into = "ObjectModelJson")]
pub struct ObjectModel {
    pub object_id: String,
    pub keypoints3d: Vec<Vector3<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ObjectModelJson {
    object_id: String,
    keypoints_3d: Vec<[f64; 3]>,
}

impl TryFrom<ObjectModelJson> for ObjectModel {
    type Error = GeomError;

    fn try_from(raw: ObjectModelJson) -> Result<Self, Self::Error> {
        ObjectModel::new(
            raw.object_id,
            raw.keypoints_3d
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
        )
    }
}

impl From<ObjectModel> for ObjectModelJson {
    fn from(m: ObjectModel) -> Self {
        ObjectModelJson {
            object_id: m.object_id,
            keypoints_3d: m.keypoints3d.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

impl ObjectModel {
    pub fn new(object_id: impl Into<String>, keypoints3d: Vec<Vector3<f64>>) -> Result<Self, GeomError> {
        if keypoints3d.len() < 4 {
            return Err(GeomError::InvalidModel(format!(
                "need at least 4 keypoints, got {}",
                keypoints3d.len()
            )));
        }
        if !keypoints3d.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(GeomError::InvalidModel("non-finite keypoint".into()));
        }
        for i in 0..keypoints3d.len() {
            for j in 0..i {
                if keypoints3d[i] == keypoints3d[j] {
                    return Err(GeomError::InvalidModel(format!(
                        "keypoints {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Self {
            object_id: object_id.into(),
            keypoints3d,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints3d.is_empty()
    }

    /// The in-repo 8-keypoint box ("synthetic duck"): perturbed corners of a
    /// 0.20 × 0.16 × 0.12 m cuboid.
    pub fn synthetic_duck() -> Self {
        let corners = [
            [-0.100, -0.080, -0.060],
            [0.104, -0.078, -0.061],
            [0.098, 0.083, -0.057],
            [-0.102, 0.079, -0.063],
            [-0.097, -0.082, 0.062],
            [0.101, -0.081, 0.058],
            [0.103, 0.077, 0.060],
            [-0.099, 0.084, 0.059],
        ];
        Self::new(
            "synthetic_duck",
            corners
                .iter()
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
        .expect("built-in model is valid")
    }
}

/// Projects an object-frame point into pixels under `pose`.
pub fn project(
    pose: &Pose,
    intrinsics: &CameraIntrinsics,
    point3d: &Vector3<f64>,
) -> Result<Vector2<f64>, GeomError> {
    intrinsics.project_camera_point(&pose.transform(point3d))
}

/// Nearest rotation in Frobenius norm: `U diag(1, 1, det(UVᵀ)) Vᵀ`.
pub fn project_so3(m: &Matrix3<f64>) -> Result<Rotation3, GeomError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(GeomError::OutOfRange(f64::NAN));
    }
    let svd = m.svd(true, true);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] == 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(GeomError::RankDeficient);
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    // the smallest singular direction absorbs the reflection
    let imin = (0..3)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap_or(2);
    let mut diag = Vector3::new(1.0, 1.0, 1.0);
    diag[imin] = d;
    let r = u * Matrix3::from_diagonal(&diag) * v_t;
    // one Newton-Schulz-free cleanup keeps the result within tolerance
    Ok(Rotation3(orthonormalize(&r)))
}

/// Re-orthonormalizes a matrix that is already a rotation up to rounding.
pub(crate) fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    // one polar-decomposition Newton step: R ← (R + R⁻ᵀ)/2
    match r.try_inverse() {
        Some(inv) => (r + inv.transpose()) * 0.5,
        None => *r,
    }
}

/// Chordal L2 mean: rotation = SO(3) projection of the summed rotations,
/// translation = arithmetic mean.
pub fn average_poses(poses: &[Pose]) -> Result<Pose, GeomError> {
    if poses.is_empty() {
        return Err(GeomError::EmptyInput);
    }
    let mut rsum = Matrix3::zeros();
    let mut tsum = Vector3::zeros();
    for p in poses {
        rsum += p.rot.matrix();
        tsum += p.t;
    }
    let rot = project_so3(&rsum)?;
    Ok(Pose::new(rot, tsum / poses.len() as f64))
}

const MAX_CHORDAL: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Inverts `‖R₁ − R₂‖_F = 2√2 sin(θ/2)`.
pub fn frobenius_to_angle(d_frob: f64) -> Result<f64, GeomError> {
    if !(0.0..=MAX_CHORDAL + 1e-9).contains(&d_frob) {
        return Err(GeomError::OutOfRange(d_frob));
    }
    let x = (d_frob / MAX_CHORDAL).clamp(0.0, 1.0);
    Ok(2.0 * x.asin())
}

pub fn angle_to_frobenius(theta: f64) -> f64 {
    MAX_CHORDAL * (theta * 0.5).sin()
}

/// `true` when the three points are (numerically) collinear.
pub(crate) fn collinear(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> bool {
    let ab = b - a;
    let ac = c - a;
    let scale = ab.norm_squared().max(ac.norm_squared());
    scale == 0.0 || ab.cross(&ac).norm() <= 1e-9 * scale
}

/// Rigid alignment `dst ≈ R src + t` (Kabsch).
pub(crate) fn align_points(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, GeomError> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(GeomError::DegenerateConfiguration);
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    let rot = project_so3(&h).map_err(|_| GeomError::DegenerateConfiguration)?;
    let t = cd - rot.matrix() * cs;
    Ok(Pose::new(rot, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotation(rng: &mut impl Rng) -> Rotation3 {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Rotation3::from_axis_angle(&axis, rng.random_range(0.0..PI))
    }

    #[test]
    fn project_optical_axis_point() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let px = project(&Pose::identity(), &k, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn project_similar_triangles() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 0.0).unwrap();
        let px = project(&Pose::identity(), &k, &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px, Vector2::new(10.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let k = CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 0.0).unwrap();
        let err = project(&Pose::identity(), &k, &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(GeomError::NonPositiveDepth(_))));
        let err = project(&Pose::identity(), &k, &Vector3::new(0.0, 0.0, 0.0));
        assert!(matches!(err, Err(GeomError::NonPositiveDepth(_))));
    }

    #[test]
    fn project_matches_homogeneous_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let k = CameraIntrinsics::new(
                rng.random_range(100.0..900.0),
                rng.random_range(100.0..900.0),
                rng.random_range(0.0..640.0),
                rng.random_range(0.0..480.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap();
            let pose = Pose::new(
                random_rotation(&mut rng),
                Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(2.0..4.0),
                ),
            );
            let y = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            // oracle: explicit 3x4 camera matrix times homogeneous point
            let p = k.matrix();
            let r = pose.rot.matrix();
            let mut cam = [[0.0f64; 4]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    cam[i][j] = (0..3).map(|l| p[(i, l)] * r[(l, j)]).sum();
                }
                cam[i][3] = (0..3).map(|l| p[(i, l)] * pose.t[l]).sum();
            }
            let yh = [y.x, y.y, y.z, 1.0];
            let h: Vec<f64> = (0..3)
                .map(|i| (0..4).map(|j| cam[i][j] * yh[j]).sum())
                .collect();
            let expected = Vector2::new(h[0] / h[2], h[1] / h[2]);
            let got = project(&pose, &k, &y).unwrap();
            assert!((got - expected).norm() < 1e-12 * (1.0 + expected.norm()));
        }
    }

    #[test]
    fn pose_vector_is_column_major_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = Pose::new(random_rotation(&mut rng), Vector3::new(0.1, -0.2, 1.5));
        let s = pose.to_vector();
        let m = pose.rot.matrix();
        assert_eq!(s.0[1], m[(1, 0)]);
        assert_eq!(s.0[3], m[(0, 1)]);
        assert_eq!(s.0[11], 1.5);
        assert_eq!(s.to_pose().unwrap(), pose);
    }

    #[test]
    fn kronecker_identity_holds_for_column_major_vec() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_rotation(&mut rng);
        let p = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 0.5)
            .unwrap()
            .matrix();
        let y = Vector3::new(0.3, -0.1, 0.2);
        let s = Pose::new(r, Vector3::zeros()).to_vector();
        let mut lhs = Vector3::zeros();
        for j in 0..3 {
            for col in 0..3 {
                // block j of (Yᵀ ⊗ P) is y_j · P acting on column j of R
                lhs += y[j] * p.column(col) * s.0[3 * j + col];
            }
        }
        let rhs = p * r.matrix() * y;
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn project_so3_idempotent_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            let once = project_so3(r.matrix()).unwrap();
            assert!((once.matrix() - r.matrix()).abs().max() < 1e-12);
            let scaled = project_so3(&(r.matrix() * 2.5)).unwrap();
            assert!((scaled.matrix() - r.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn project_so3_rejects_rank_deficient() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(project_so3(&m), Err(GeomError::RankDeficient));
        assert_eq!(project_so3(&Matrix3::zeros()), Err(GeomError::RankDeficient));
    }

    #[test]
    fn project_so3_output_satisfies_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if let Ok(r) = project_so3(&m) {
                assert!(Rotation3::new(*r.matrix()).is_ok());
            }
        }
    }

    /// Brute-force chordal minimizer over a grid of axis-angle vectors.
    fn grid_nearest_rotation(m: &Matrix3<f64>, center: &Rotation3, half_width: f64, steps: usize) -> Rotation3 {
        let mut best = (f64::INFINITY, *center);
        let h = 2.0 * half_width / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let w = Vector3::new(
                        -half_width + i as f64 * h,
                        -half_width + j as f64 * h,
                        -half_width + k as f64 * h,
                    );
                    let r = Rotation3::exp(&w).compose(center);
                    let cost = (r.matrix() - m).norm_squared();
                    if cost < best.0 {
                        best = (cost, r);
                    }
                }
            }
        }
        best.1
    }

    #[test]
    fn project_so3_matches_grid_search_on_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let base = random_rotation(&mut rng);
        let mut sum = Matrix3::zeros();
        for _ in 0..5 {
            let w = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            );
            sum += Rotation3::exp(&w).compose(&base).matrix();
        }
        // coarse-to-fine grid around the base rotation
        let coarse = grid_nearest_rotation(&sum, &base, 0.4, 40);
        let fine = grid_nearest_rotation(&sum, &coarse, 0.02, 20);
        let got = project_so3(&sum).unwrap();
        assert!(got.angle_to(&fine) < 2e-3, "{}", got.angle_to(&fine));
    }

    #[test]
    fn average_of_single_pose_is_itself() {
        let pose = Pose::new(Rotation3::exp(&Vector3::new(0.1, 0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0));
        let avg = average_poses(&[pose]).unwrap();
        assert!((avg.rot.matrix() - pose.rot.matrix()).abs().max() < 1e-12);
        assert_eq!(avg.t, pose.t);
    }

    #[test]
    fn average_translation_is_arithmetic_mean() {
        let a = Pose::new(Rotation3::identity(), Vector3::new(0.0, 0.0, 1.0));
        let b = Pose::new(Rotation3::identity(), Vector3::new(0.0, 0.0, 3.0));
        assert_eq!(average_poses(&[a, b]).unwrap().t, Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(average_poses(&[]), Err(GeomError::EmptyInput));
    }

    #[test]
    fn symmetric_perturbations_average_to_center() {
        let r = Rotation3::exp(&Vector3::new(0.4, -0.2, 0.9));
        let d = Rotation3::exp(&Vector3::new(0.05, 0.02, -0.03));
        let a = Pose::new(d.compose(&r), Vector3::zeros());
        let b = Pose::new(d.transpose().compose(&r), Vector3::zeros());
        let avg = average_poses(&[a, b]).unwrap();
        let sum = a.rot.matrix() + b.rot.matrix();
        let coarse = grid_nearest_rotation(&sum, &r, 0.05, 20);
        let fine = grid_nearest_rotation(&sum, &coarse, 0.005, 20);
        assert!(avg.rot.angle_to(&r) < 1e-9);
        assert!(avg.rot.angle_to(&fine) < 1e-3);
    }

    #[test]
    fn frobenius_angle_conversion() {
        assert_eq!(frobenius_to_angle(0.0).unwrap(), 0.0);
        assert_relative_eq!(frobenius_to_angle(2.0 * 2f64.sqrt()).unwrap(), PI, epsilon = 1e-12);
        let quarter = Rotation3::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let d = quarter.chordal_to(&Rotation3::identity());
        assert_relative_eq!(d, 2.0, epsilon = 1e-12);
        assert_relative_eq!(frobenius_to_angle(d).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        assert!(frobenius_to_angle(-0.1).is_err());
        assert!(frobenius_to_angle(3.0).is_err());
        // small float overshoot is clamped
        assert_relative_eq!(frobenius_to_angle(MAX_CHORDAL + 1e-12).unwrap(), PI);
    }

    #[test]
    fn frobenius_to_angle_is_monotone() {
        let mut prev = -1.0;
        for i in 0..=1000 {
            let a = frobenius_to_angle(MAX_CHORDAL * i as f64 / 1000.0).unwrap();
            assert!(a > prev);
            prev = a;
        }
    }

    #[test]
    fn rotation_validation() {
        assert!(Rotation3::new(Matrix3::identity() * 1.01).is_err());
        assert!(Rotation3::new(-Matrix3::identity()).is_err());
        let json = serde_json::to_string(&Rotation3::identity()).unwrap();
        assert_eq!(json, "[[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]]");
        assert!(serde_json::from_str::<Rotation3>("[[2,0,0],[0,1,0],[0,0,1]]").is_err());
    }

    #[test]
    fn object_model_json() {
        let json = r#"{"object_id":"box","keypoints_3d":[[0,0,0],[1,0,0],[0,1,0],[0,0,1]]}"#;
        let m: ObjectModel = serde_json::from_str(json).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.keypoints3d[1], Vector3::new(1.0, 0.0, 0.0));
        let dup = r#"{"object_id":"box","keypoints_3d":[[0,0,0],[0,0,0],[0,1,0],[0,0,1]]}"#;
        assert!(serde_json::from_str::<ObjectModel>(dup).is_err());
        let few = r#"{"object_id":"box","keypoints_3d":[[0,0,0],[0,1,0],[0,0,1]]}"#;
        assert!(serde_json::from_str::<ObjectModel>(few).is_err());
    }

    #[test]
    fn intrinsics_json_and_validation() {
        let k: CameraIntrinsics =
            serde_json::from_str(r#"{"fx":500,"fy":500,"cx":320,"cy":240,"skew":0.0}"#).unwrap();
        assert_eq!(k.matrix()[(0, 2)], 320.0);
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 0.0).is_err());
        let px = Vector2::new(123.0, 45.0);
        let ray = k.unproject(&px);
        assert!((k.project_camera_point(&(ray * 3.0)).unwrap() - px).norm() < 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn unproject_then_project_is_identity(
            u in 0.0f64..640.0, v in 0.0f64..480.0, depth in 0.01f64..100.0, skew in -2.0f64..2.0
        ) {
            let k = CameraIntrinsics::new(520.0, 510.0, 320.0, 240.0, skew).unwrap();
            let px = Vector2::new(u, v);
            let back = k.project_camera_point(&(k.unproject(&px) * depth)).unwrap();
            proptest::prop_assert!((back - px).norm() < 1e-10);
        }

        #[test]
        fn exp_yields_valid_rotation(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0) {
            let r = Rotation3::exp(&Vector3::new(x, y, z));
            proptest::prop_assert!(Rotation3::new(*r.matrix()).is_ok());
        }
    }
}
