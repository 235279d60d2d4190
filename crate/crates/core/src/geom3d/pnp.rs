//! Non-minimal pose estimation: DLT or P3P initialization followed by
//! Gauss-Newton on the reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix6, SVector, Vector2, Vector3, Vector6};

use super::{collinear, p3p, project_so3, CameraIntrinsics, GeomError, Pose, Rotation3};

const MAX_ITERS: usize = 50;
const STEP_TOL: f64 = 1e-12;
const MAX_P3P_TRIPLES: usize = 20;

/// Reprojection-error minimizing pose for `K ≥ 4` correspondences.
pub fn pnp(
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    intrinsics: &CameraIntrinsics,
) -> Result<Pose, GeomError> {
    if pixels.len() != points.len() {
        return Err(GeomError::CorrespondenceMismatch {
            pixels: pixels.len(),
            points: points.len(),
        });
    }
    if points.len() < 4 {
        return Err(GeomError::InsufficientCorrespondences {
            needed: 4,
            got: points.len(),
        });
    }
    if !pixels.iter().all(|p| p.iter().all(|v| v.is_finite()))
        || !points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    {
        return Err(GeomError::DegenerateConfiguration);
    }

    let mut inits: Vec<Pose> = Vec::new();
    if points.len() >= 6 {
        if let Some(p) = dlt(pixels, points, intrinsics) {
            inits.push(p);
        }
    }
    inits.extend(p3p_inits(pixels, points, intrinsics));

    let init = inits
        .into_iter()
        .filter_map(|p| cost(&p, pixels, points, intrinsics).map(|c| (c, p)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
        .ok_or(GeomError::DegenerateConfiguration)?;

    let pose = refine(init, pixels, points, intrinsics)?;
    if !pose.t.iter().all(|v| v.is_finite())
        || points.iter().any(|y| !(pose.transform(y).z > 0.0))
    {
        return Err(GeomError::SolverDiverged);
    }
    Ok(pose)
}

/// Root-mean-square reprojection error in pixels.
pub fn reprojection_rms(
    pose: &Pose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
) -> Option<f64> {
    cost(pose, pixels, points, k).map(|c| (c / points.len() as f64).sqrt())
}

/// Sum of squared reprojection errors; `None` if any point is behind the
/// camera.
fn cost(
    pose: &Pose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
) -> Option<f64> {
    let mut acc = 0.0;
    for (y, px) in points.iter().zip(pixels) {
        let q = k.project_camera_point(&pose.transform(y)).ok()?;
        acc += (q - px).norm_squared();
    }
    acc.is_finite().then_some(acc)
}

fn p3p_inits(
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
) -> Vec<Pose> {
    let n = points.len();
    let mut out = Vec::new();
    let mut tried = 0;
    // spread-out triples first: (i, i + n/3, i + 2n/3)
    let mut triples = Vec::new();
    for i in 0..n {
        triples.push([i, (i + n / 3) % n, (i + 2 * n / 3) % n]);
    }
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                triples.push([i, j, l]);
            }
        }
    }
    for t in triples {
        if tried >= MAX_P3P_TRIPLES {
            break;
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let pts = t.map(|i| points[i]);
        if collinear(&pts[0], &pts[1], &pts[2]) {
            continue;
        }
        tried += 1;
        out.extend(p3p(&t.map(|i| pixels[i]), &pts, k));
    }
    out
}

/// Direct linear transform on normalized coordinates.
fn dlt(pixels: &[Vector2<f64>], points: &[Vector3<f64>], k: &CameraIntrinsics) -> Option<Pose> {
    let n = points.len();
    let mean = points.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n as f64;
    if spread == 0.0 {
        return None;
    }
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (y, px)) in points.iter().zip(pixels).enumerate() {
        let x = k.unproject(px);
        let yn = (y - mean) / spread;
        let h = [yn.x, yn.y, yn.z, 1.0];
        for c in 0..4 {
            a[(2 * i, c)] = h[c];
            a[(2 * i, 8 + c)] = -x.x * h[c];
            a[(2 * i + 1, 4 + c)] = h[c];
            a[(2 * i + 1, 8 + c)] = -x.y * h[c];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    // a unique null vector needs a clear gap to the next eigenvalue
    let (l0, l1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 1e-10 * eig.eigenvalues[order[11]]) || l0 > 1e-2 * l1 {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let m = Matrix3::from_fn(|r, c| v[4 * r + c]);
    let tvec = Vector3::new(v[3], v[7], v[11]);
    let svd = m.svd(false, false);
    let scale = svd.singular_values.iter().sum::<f64>() / 3.0;
    if scale == 0.0 {
        return None;
    }
    let mut m = m / scale;
    let mut tvec = tvec / scale;
    if m.determinant() < 0.0 {
        m = -m;
        tvec = -tvec;
    }
    let rot = project_so3(&m).ok()?;
    // undo the point normalization: R (y - mean)/spread + t_n, scaled by spread
    let t = tvec * spread - rot.matrix() * mean;
    let pose = Pose::new(rot, t);
    points
        .iter()
        .all(|y| pose.transform(y).z > 0.0)
        .then_some(pose)
}

fn refine(
    mut pose: Pose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &CameraIntrinsics,
) -> Result<Pose, GeomError> {
    let mut c = cost(&pose, pixels, points, k).ok_or(GeomError::SolverDiverged)?;
    for _ in 0..MAX_ITERS {
        if c == 0.0 {
            break;
        }
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (y, px) in points.iter().zip(pixels) {
            let ry = pose.rot.matrix() * y;
            let x = ry + pose.t;
            let z = x.z;
            let q = k.project_camera_point(&x).map_err(|_| GeomError::SolverDiverged)?;
            let r = q - px;
            let dp = nalgebra::Matrix2x3::new(
                k.fx / z,
                k.skew / z,
                -(k.fx * x.x + k.skew * x.y) / (z * z),
                0.0,
                k.fy / z,
                -k.fy * x.y / (z * z),
            );
            let mut dx = nalgebra::Matrix3x6::<f64>::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-super::skew(&ry)));
            dx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = dp * dx;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(chol) = jtj.cholesky() else {
            break;
        };
        let step: SVector<f64, 6> = -chol.solve(&jtr);
        let mut alpha = 1.0;
        let mut improved = None;
        for _ in 0..20 {
            let s = step * alpha;
            let cand = apply(&pose, &s);
            if let Some(cc) = cost(&cand, pixels, points, k) {
                if cc < c {
                    improved = Some((cand, cc, s.norm()));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, cc, norm)) = improved else {
            break;
        };
        pose = cand;
        c = cc;
        if norm < STEP_TOL * (1.0 + pose.t.norm()) {
            break;
        }
    }
    if !c.is_finite() {
        return Err(GeomError::SolverDiverged);
    }
    Ok(pose)
}

fn apply(pose: &Pose, step: &SVector<f64, 6>) -> Pose {
    let w = Vector3::new(step[0], step[1], step[2]);
    let dt = Vector3::new(step[3], step[4], step[5]);
    let r = Rotation3::exp(&w).matrix() * pose.rot.matrix();
    Pose::new(Rotation3(super::orthonormalize(&r)), pose.t + dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::{project, ObjectModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(
            Rotation3::from_axis_angle(&axis, rng.random_range(0.0..3.1)),
            Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.6..2.0),
            ),
        )
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(250.0, 250.0, 160.0, 120.0, 0.0).unwrap()
    }

    #[test]
    fn noiseless_duck_recovers_ground_truth() {
        let model = ObjectModel::synthetic_duck();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let gt = random_pose(&mut rng);
            let px: Vec<_> = model
                .keypoints3d
                .iter()
                .map(|y| project(&gt, &k(), y).unwrap())
                .collect();
            let est = pnp(&px, &model.keypoints3d, &k()).unwrap();
            assert!(est.rot.angle_to(&gt.rot) < 1e-6);
            assert!((est.t - gt.t).norm() < 1e-6);
            assert!(reprojection_rms(&est, &px, &model.keypoints3d, &k()).unwrap() < 1e-8);
        }
    }

    #[test]
    fn four_coplanar_points() {
        let pts = vec![
            Vector3::new(-0.1, -0.1, 0.0),
            Vector3::new(0.1, -0.1, 0.0),
            Vector3::new(0.1, 0.1, 0.0),
            Vector3::new(-0.12, 0.09, 0.0),
        ];
        let gt = Pose::new(
            Rotation3::from_axis_angle(&Vector3::new(1.0, 0.2, 0.0), 0.5),
            Vector3::new(0.02, -0.01, 1.0),
        );
        let px: Vec<_> = pts.iter().map(|y| project(&gt, &k(), y).unwrap()).collect();
        let est = pnp(&px, &pts, &k()).unwrap();
        assert!(reprojection_rms(&est, &px, &pts, &k()).unwrap() < 1e-8);
    }

    #[test]
    fn gaussian_noise_keeps_rms_small() {
        let model = ObjectModel::synthetic_duck();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut total = 0.0;
        for _ in 0..100 {
            let gt = random_pose(&mut rng);
            let px: Vec<_> = model
                .keypoints3d
                .iter()
                .map(|y| {
                    project(&gt, &k(), y).unwrap()
                        + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let est = pnp(&px, &model.keypoints3d, &k()).unwrap();
            let rms = reprojection_rms(&est, &px, &model.keypoints3d, &k()).unwrap();
            // the optimum never exceeds the residual at the true pose
            let gt_rms = reprojection_rms(&gt, &px, &model.keypoints3d, &k()).unwrap();
            assert!(rms <= gt_rms + 1e-9);
            total += rms;
        }
        assert!(total / 100.0 <= 2.0);
    }

    #[test]
    fn arity_errors() {
        let pts = vec![Vector3::x(), Vector3::y(), Vector3::z()];
        let px = vec![Vector2::zeros(); 3];
        assert_eq!(
            pnp(&px, &pts, &k()),
            Err(GeomError::InsufficientCorrespondences { needed: 4, got: 3 })
        );
        assert!(matches!(
            pnp(&px[..2], &pts, &k()),
            Err(GeomError::CorrespondenceMismatch { .. })
        ));
    }
}
