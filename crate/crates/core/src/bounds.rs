//! Certified worst-case pose error bounds.
//!
//! For a reference pose `(R̄, t̄)` and weight `λ ∈ [0, 1]` the squared
//! pose-to-PURSE distance is
//!
//! ```text
//! max  λ‖R − R̄‖²_F + (1 − λ)‖t − t̄‖²   over (R, t) in the PURSE
//! ```
//!
//! a QCQP in `s = [vec(R); t]`. Its first-order (Shor) relaxation over the
//! lifted matrix `X ≈ [1; s][1; s]ᵀ` is a 13×13 SDP whose dual bound is a
//! certified upper bound on the distance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::conformal::PredictionSet;
use crate::geom3d::{frobenius_to_angle, CameraIntrinsics, ObjectModel, Pose, PoseVector};
use crate::purse::{sample_purse, Mat12, Purse, PurseError, Vec12, DEPTH_MIN};
use crate::sdp::{solve_sdp, SdpError, SdpProblem, SdpStatus, DEFAULT_MAX_ITERS, DEFAULT_TOL};

/// Number of PURSE samples drawn for the lower witness.
pub const WITNESS_SAMPLES: usize = 1000;
const WITNESS_MAX_TRIALS: usize = 50_000;
const WITNESS_SEED_SALT: u64 = 0x5eed_b0d5;
/// Largest `‖R₁ − R₂‖²_F` over SO(3).
pub const MAX_ROTATION_FROB_SQ: f64 = 8.0;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("lambda must lie in [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("no candidate poses")]
    NoCandidates,
    #[error("SDP solver failed with status {0:?}")]
    Solver(SdpStatus),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Purse(#[from] PurseError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    pub purse: Purse,
    pub ref_pose: Pose,
    pub lambda: f64,
}

impl BoundQuery {
    pub fn new(purse: Purse, ref_pose: Pose, lambda: f64) -> Result<Self, BoundError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(BoundError::InvalidLambda(lambda));
        }
        Ok(Self {
            purse,
            ref_pose,
            lambda,
        })
    }

    /// `λ‖R − R̄‖²_F + (1 − λ)‖t − t̄‖²` at `pose`.
    pub fn distance_sq(&self, pose: &Pose) -> f64 {
        weighted_distance_sq(&self.ref_pose, self.lambda, pose)
    }

    /// Analytic maximum of the objective given the translation ball.
    pub fn cap(&self) -> f64 {
        let reach = self.purse.trans_bound + self.ref_pose.t.norm();
        self.lambda * MAX_ROTATION_FROB_SQ + (1.0 - self.lambda) * reach * reach
    }
}

pub fn weighted_distance_sq(ref_pose: &Pose, lambda: f64, pose: &Pose) -> f64 {
    let dr = (pose.rot.matrix() - ref_pose.rot.matrix()).norm_squared();
    let dt = (pose.t - ref_pose.t).norm_squared();
    lambda * dr + (1.0 - lambda) * dt
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundStatus {
    Bounded,
    /// The relaxation is infeasible, hence so is the PURSE.
    PurseEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundResult {
    pub status: BoundStatus,
    pub lambda: f64,
    pub d_squared_upper: f64,
    pub d_upper: f64,
    /// Rotation angle bound in radians, reported for `λ = 1`.
    pub angle_upper: Option<f64>,
    /// Largest sampled objective value and the pose attaining it.
    pub lower_witness: Option<(Pose, f64)>,
    pub sdp_status: SdpStatus,
    pub sdp_iterations: usize,
}

impl BoundResult {
    pub fn angle_upper_deg(&self) -> Option<f64> {
        self.angle_upper.map(f64::to_degrees)
    }

    /// Keeps the sample with the largest objective value as the witness.
    pub fn attach_witness(&mut self, query: &BoundQuery, samples: &[Pose]) {
        self.lower_witness = samples
            .iter()
            .map(|p| (p, query.distance_sq(p)))
            .fold(None, |best: Option<(&Pose, f64)>, (p, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((p, v)),
            })
            .map(|(p, v)| (*p, v));
    }
}

/// `sᵀ Q s + lᵀ s + c` with `Q` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub q: Mat12,
    pub l: Vec12,
    pub c: f64,
}

impl Quadratic {
    fn zero() -> Self {
        Self {
            q: Mat12::zeros(),
            l: Vec12::zeros(),
            c: 0.0,
        }
    }

    pub fn eval(&self, s: &Vec12) -> f64 {
        s.dot(&(self.q * s)) + self.l.dot(s) + self.c
    }

    /// The 13×13 matrix `M` with `⟨M, [1; s][1; s]ᵀ⟩ = eval(s)`.
    pub fn lift(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(13, 13);
        m[(0, 0)] = self.c;
        for i in 0..12 {
            m[(0, i + 1)] = 0.5 * self.l[i];
            m[(i + 1, 0)] = 0.5 * self.l[i];
            for j in 0..12 {
                m[(i + 1, j + 1)] = 0.5 * (self.q[(i, j)] + self.q[(j, i)]);
            }
        }
        m
    }
}

/// Maximize `objective` subject to `equalities = 0` and `inequalities ≤ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Qcqp {
    pub objective: Quadratic,
    pub equalities: Vec<Quadratic>,
    pub inequalities: Vec<Quadratic>,
}

impl Qcqp {
    /// Largest violation at `s` (equality residuals, positive inequality parts).
    pub fn violation(&self, s: &Vec12) -> f64 {
        let eq = self.equalities.iter().map(|q| q.eval(s).abs());
        let ineq = self.inequalities.iter().map(|q| q.eval(s).max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }
}

/// Index of `R[i][j]` in the column-major pose vector.
fn r_idx(i: usize, j: usize) -> usize {
    3 * j + i
}

/// The 15 SO(3) equalities: row orthonormality (6) and `r_i × r_j = r_k`
/// for cyclic `(i, j, k)` (9).
pub fn so3_constraints() -> Vec<Quadratic> {
    let mut out = Vec::with_capacity(15);
    for i in 0..3 {
        for j in i..3 {
            let mut q = Quadratic::zero();
            for c in 0..3 {
                q.q[(r_idx(i, c), r_idx(j, c))] += 0.5;
                q.q[(r_idx(j, c), r_idx(i, c))] += 0.5;
            }
            q.c = if i == j { -1.0 } else { 0.0 };
            out.push(q);
        }
    }
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        for m in 0..3 {
            let (a, b) = ((m + 1) % 3, (m + 2) % 3);
            let mut q = Quadratic::zero();
            // (r_i × r_j)_m = r_ia r_jb − r_ib r_ja
            for (p, r, sign) in [(r_idx(i, a), r_idx(j, b), 1.0), (r_idx(i, b), r_idx(j, a), -1.0)] {
                q.q[(p, r)] += 0.5 * sign;
                q.q[(r, p)] += 0.5 * sign;
            }
            q.l[r_idx(k, m)] = -1.0;
            out.push(q);
        }
    }
    out
}

/// Builds the distance QCQP. With `‖R‖²_F = 3` the rotation objective is
/// `6 − 2 tr(R̄ᵀR)`, affine in `R`.
pub fn assemble_qcqp(query: &BoundQuery) -> Qcqp {
    let lambda = query.lambda;
    let rbar = PoseVector::from_pose(&query.ref_pose).0;
    let tbar = query.ref_pose.t;

    let mut objective = Quadratic::zero();
    for i in 9..12 {
        objective.q[(i, i)] = 1.0 - lambda;
    }
    for i in 0..9 {
        objective.l[i] = -2.0 * lambda * rbar[i];
    }
    for i in 0..3 {
        objective.l[9 + i] = -2.0 * (1.0 - lambda) * tbar[i];
    }
    objective.c = 6.0 * lambda + (1.0 - lambda) * tbar.norm_squared();

    let purse = &query.purse;
    let mut inequalities = Vec::with_capacity(2 * purse.num_keypoints() + 1);
    for a in purse.a() {
        inequalities.push(Quadratic {
            q: *a,
            l: Vec12::zeros(),
            c: 0.0,
        });
    }
    for b in purse.b() {
        inequalities.push(Quadratic {
            q: Mat12::zeros(),
            l: -b,
            c: DEPTH_MIN,
        });
    }
    let mut ball = Quadratic::zero();
    for i in 9..12 {
        ball.q[(i, i)] = 1.0;
    }
    ball.c = -purse.trans_bound * purse.trans_bound;
    inequalities.push(ball);

    Qcqp {
        objective,
        equalities: so3_constraints(),
        inequalities,
    }
}

/// First-order relaxation: every quadratic becomes `⟨lift, X⟩` and `X₀₀ = 1`.
pub fn shor_relax(qcqp: &Qcqp) -> Result<SdpProblem, SdpError> {
    let mut p = SdpProblem::new(13, qcqp.objective.lift())?;
    let mut e00 = DMatrix::zeros(13, 13);
    e00[(0, 0)] = 1.0;
    p.add_equality(e00, 1.0)?;
    for q in &qcqp.equalities {
        let mut m = q.lift();
        let c = m[(0, 0)];
        m[(0, 0)] = 0.0;
        p.add_equality(m, -c)?;
    }
    for q in &qcqp.inequalities {
        let mut m = q.lift();
        let c = m[(0, 0)];
        m[(0, 0)] = 0.0;
        p.add_inequality(m, -c)?;
    }
    Ok(p)
}

/// Upper bound on `tr X` over the relaxation: `1 + ‖R‖²_F + ‖t‖²`.
fn trace_bound(purse: &Purse) -> f64 {
    4.0 + purse.trans_bound * purse.trans_bound
}

/// Solves the relaxation and reports the certified bound. No witness is
/// attached; see [`worst_case_bound_with_witness`].
pub fn worst_case_bound(query: &BoundQuery) -> Result<BoundResult, BoundError> {
    if !(0.0..=1.0).contains(&query.lambda) {
        return Err(BoundError::InvalidLambda(query.lambda));
    }
    let problem = shor_relax(&assemble_qcqp(query))?;
    let sol = solve_sdp(&problem, DEFAULT_MAX_ITERS, DEFAULT_TOL);
    let (status, d2) = match sol.status {
        SdpStatus::PrimalInfeasible => (BoundStatus::PurseEmpty, 0.0),
        SdpStatus::Optimal | SdpStatus::MaxIterations => {
            let ub = sol.certified_upper_bound(&problem, trace_bound(&query.purse));
            if !ub.is_finite() {
                return Err(BoundError::Solver(sol.status));
            }
            (BoundStatus::Bounded, ub.clamp(0.0, query.cap()))
        }
        s @ (SdpStatus::DualInfeasible | SdpStatus::NumericalFailure) => {
            return Err(BoundError::Solver(s));
        }
    };
    let d_upper = d2.sqrt();
    let angle_upper = (query.lambda == 1.0).then(|| {
        frobenius_to_angle(d_upper.min(MAX_ROTATION_FROB_SQ.sqrt())).unwrap_or(std::f64::consts::PI)
    });
    Ok(BoundResult {
        status,
        lambda: query.lambda,
        d_squared_upper: d2,
        d_upper,
        angle_upper,
        lower_witness: None,
        sdp_status: sol.status,
        sdp_iterations: sol.iterations,
    })
}

/// PURSE samples for the lower witness, drawn with a seed derived from `seed`.
pub fn witness_samples(
    purse: &Purse,
    pred: &PredictionSet,
    model: &ObjectModel,
    intrinsics: &CameraIntrinsics,
    seed: u64,
) -> Result<Vec<Pose>, BoundError> {
    Ok(sample_purse(
        purse,
        pred,
        model,
        intrinsics,
        WITNESS_SAMPLES,
        WITNESS_MAX_TRIALS,
        seed ^ WITNESS_SEED_SALT,
    )?)
}

pub fn worst_case_bound_with_witness(query: &BoundQuery, samples: &[Pose]) -> Result<BoundResult, BoundError> {
    let mut res = worst_case_bound(query)?;
    res.attach_witness(query, samples);
    Ok(res)
}

/// Evaluates the bound with each candidate as reference pose and returns the
/// index, pose and bound of the tightest one (ties go to the lowest index).
pub fn sample_min_bound(
    purse: &Purse,
    candidates: &[Pose],
    lambda: f64,
) -> Result<(usize, Pose, BoundResult), BoundError> {
    if candidates.is_empty() {
        return Err(BoundError::NoCandidates);
    }
    let results: Vec<BoundResult> = candidates
        .par_iter()
        .map(|p| worst_case_bound(&BoundQuery::new(purse.clone(), *p, lambda)?))
        .collect::<Result<_, _>>()?;
    let (best, res) = results
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.d_squared_upper < a.1.d_squared_upper { b } else { a })
        .expect("non-empty");
    Ok((best, candidates[best], res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{KeypointEstimate, Region};
    use crate::geom3d::{project, Rotation3};
    use crate::purse::build_purse;
    use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
    use proptest::prelude::*;

    fn rot_about(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::from(axis), angle).matrix()
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(250.0, 250.0, 160.0, 120.0, 0.0).unwrap()
    }

    fn gt() -> Pose {
        Pose::new(
            Rotation3::from_axis_angle(&Vector3::new(0.2, 1.0, -0.3), 0.7),
            Vector3::new(0.04, -0.03, 1.1),
        )
    }

    fn scene(radius: f64) -> (ObjectModel, PredictionSet, Purse) {
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

    fn empty_purse() -> Purse {
        Purse::from_parts(Vec::new(), Vec::new(), 5.0).unwrap()
    }

    #[test]
    fn identity_reference_objective_expansion() {
        let q = BoundQuery::new(empty_purse(), Pose::identity(), 1.0).unwrap();
        let qc = assemble_qcqp(&q);
        assert_eq!(qc.objective.q, Mat12::zeros());
        let r = rot_about([1.0, 2.0, 0.5], 1.1);
        let s = PoseVector::from_pose(&Pose::new(Rotation3::new(r).unwrap(), Vector3::zeros())).0;
        assert!((qc.objective.eval(&s) - (6.0 - 2.0 * r.trace())).abs() < 1e-12);
    }

    #[test]
    fn translation_objective_expansion() {
        let tbar = Vector3::new(0.3, -0.2, 1.5);
        let q = BoundQuery::new(empty_purse(), Pose::new(Rotation3::identity(), tbar), 0.0).unwrap();
        let qc = assemble_qcqp(&q);
        let t = Vector3::new(-1.0, 0.4, 2.0);
        let mut s = Vec12::zeros();
        s[9] = t.x;
        s[10] = t.y;
        s[11] = t.z;
        let expect = t.norm_squared() - 2.0 * tbar.dot(&t) + tbar.norm_squared();
        assert!((qc.objective.eval(&s) - expect).abs() < 1e-12);
    }

    #[test]
    fn so3_constraints_vanish_on_rotations_only() {
        let cons = so3_constraints();
        assert_eq!(cons.len(), 15);
        let r = rot_about([0.3, -1.0, 0.2], 2.4);
        let s = PoseVector::from_pose(&Pose::new(Rotation3::new(r).unwrap(), Vector3::zeros())).0;
        assert!(cons.iter().all(|c| c.eval(&s).abs() < 1e-12));
        // a reflection satisfies orthonormality but not handedness
        let refl = -r;
        let mut s2 = s;
        for i in 0..3 {
            for j in 0..3 {
                s2[r_idx(i, j)] = refl[(i, j)];
            }
        }
        assert!(cons[..6].iter().all(|c| c.eval(&s2).abs() < 1e-12));
        assert!(cons[6..].iter().any(|c| c.eval(&s2).abs() > 0.1));
    }

    #[test]
    fn lift_matches_evaluation() {
        let q = BoundQuery::new(scene(5.0).2, gt(), 0.4).unwrap();
        let qc = assemble_qcqp(&q);
        let s = PoseVector::from_pose(&gt()).0;
        let mut z = nalgebra::DVector::zeros(13);
        z[0] = 1.0;
        z.rows_mut(1, 12).copy_from(&s);
        let x = &z * z.transpose();
        for quad in qc.inequalities.iter().chain(&qc.equalities).chain([&qc.objective]) {
            assert!((quad.lift().dot(&x) - quad.eval(&s)).abs() < 1e-9 * (1.0 + quad.q.amax()));
        }
    }

    #[test]
    fn purse_samples_satisfy_assembled_constraints() {
        let (model, pred, purse) = scene(4.0);
        let q = BoundQuery::new(purse.clone(), gt(), 1.0).unwrap();
        let qc = assemble_qcqp(&q);
        let samples = sample_purse(&purse, &pred, &model, &k(), 200, 5000, 1).unwrap();
        assert!(!samples.is_empty());
        for p in &samples {
            let s = PoseVector::from_pose(p).0;
            assert!(qc.violation(&s) < 1e-9, "{}", qc.violation(&s));
        }
    }

    #[test]
    fn trust_region_toy_is_tight() {
        let q = BoundQuery::new(empty_purse(), Pose::identity(), 0.0).unwrap();
        let problem = shor_relax(&assemble_qcqp(&q)).unwrap();
        let sol = solve_sdp(&problem, DEFAULT_MAX_ITERS, DEFAULT_TOL);
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.objective_value - 25.0).abs() < 1e-4);
        let res = worst_case_bound(&q).unwrap();
        assert!((res.d_squared_upper - 25.0).abs() < 1e-4);
    }

    #[test]
    fn rotation_only_toy_saturates() {
        let q = BoundQuery::new(empty_purse(), Pose::identity(), 1.0).unwrap();
        let problem = shor_relax(&assemble_qcqp(&q)).unwrap();
        let sol = solve_sdp(&problem, DEFAULT_MAX_ITERS, DEFAULT_TOL);
        assert!(sol.objective_value >= 8.0 - 1e-6);
        // grid over rotation angles: the true maximum 8 is attained at π
        let grid_max = (0..=180)
            .map(|d| {
                let r = rot_about([0.0, 0.0, 1.0], (d as f64).to_radians());
                (r - Matrix3::identity()).norm_squared()
            })
            .fold(0.0, f64::max);
        assert!((grid_max - 8.0).abs() < 1e-12);
        let res = worst_case_bound(&q).unwrap();
        assert_eq!(res.d_squared_upper, 8.0);
        assert!((res.angle_upper.unwrap() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn tiny_sets_collapse_the_bound() {
        let (_, _, purse) = scene(1e-4);
        for lambda in [0.0, 1.0] {
            let q = BoundQuery::new(purse.clone(), gt(), lambda).unwrap();
            let res = worst_case_bound(&q).unwrap();
            assert_eq!(res.status, BoundStatus::Bounded);
            assert!(res.d_upper < 1e-3, "lambda {lambda}: {}", res.d_upper);
        }
    }

    #[test]
    fn disjoint_sets_for_one_keypoint_are_empty() {
        let (model, pred, purse) = scene(2.0);
        // a second, disjoint set for keypoint 0
        let mut moved = pred.clone();
        moved.regions[0] = Region {
            center: pred.regions[0].center + Vector2::new(40.0, 0.0),
            shape: pred.regions[0].shape,
        };
        let other = build_purse(&moved, &k(), &model, 5.0).unwrap();
        let mut a = purse.a().to_vec();
        let mut b = purse.b().to_vec();
        a.push(other.a()[0]);
        b.push(other.b()[0]);
        let empty = Purse::from_parts(a, b, 5.0).unwrap();
        let res = worst_case_bound(&BoundQuery::new(empty, gt(), 1.0).unwrap()).unwrap();
        assert_eq!(res.status, BoundStatus::PurseEmpty);
        assert_eq!(res.sdp_status, SdpStatus::PrimalInfeasible);
    }

    #[test]
    fn bound_dominates_samples_and_groundtruth() {
        let (model, pred, purse) = scene(6.0);
        let samples = witness_samples(&purse, &pred, &model, &k(), 3).unwrap();
        assert!(samples.len() >= 100);
        let reference = average_ref(&samples);
        for lambda in [0.0, 1.0] {
            let q = BoundQuery::new(purse.clone(), reference, lambda).unwrap();
            let res = worst_case_bound_with_witness(&q, &samples).unwrap();
            let (_, w) = res.lower_witness.unwrap();
            assert!(w <= res.d_squared_upper + 1e-6);
            assert!(q.distance_sq(&gt()) <= res.d_squared_upper + 1e-5);
            for p in &samples {
                assert!(q.distance_sq(p) <= res.d_squared_upper + 1e-5);
            }
            assert!(res.d_squared_upper <= q.cap() + 1e-12);
        }
    }

    fn average_ref(samples: &[Pose]) -> Pose {
        crate::geom3d::average_poses(samples).unwrap()
    }

    #[test]
    fn wide_sets_saturate_rotation_bound() {
        let (_, _, purse) = scene(150.0);
        let res = worst_case_bound(&BoundQuery::new(purse, gt(), 1.0).unwrap()).unwrap();
        assert!(res.angle_upper_deg().unwrap() > 179.0, "{:?}", res.angle_upper_deg());
    }

    #[test]
    fn smaller_sets_give_smaller_bounds() {
        let mut prev = f64::INFINITY;
        for radius in [12.0, 8.0, 4.0, 2.0] {
            let (_, _, purse) = scene(radius);
            let res = worst_case_bound(&BoundQuery::new(purse, gt(), 0.0).unwrap()).unwrap();
            assert!(res.d_squared_upper <= prev + 1e-7);
            prev = res.d_squared_upper;
        }
    }

    #[test]
    fn sample_min_over_superset() {
        let (model, pred, purse) = scene(5.0);
        let mut cands = sample_purse(&purse, &pred, &model, &k(), 5, 5000, 8).unwrap();
        let avg = average_ref(&cands);
        let avg_bound = worst_case_bound(&BoundQuery::new(purse.clone(), avg, 0.0).unwrap()).unwrap();
        cands.push(avg);
        let (idx, pose, best) = sample_min_bound(&purse, &cands, 0.0).unwrap();
        assert!(best.d_squared_upper <= avg_bound.d_squared_upper + 1e-9);
        assert_eq!(pose, cands[idx]);
        let (i1, _, single) = sample_min_bound(&purse, &cands[..1], 0.0).unwrap();
        assert_eq!(i1, 0);
        let direct = worst_case_bound(&BoundQuery::new(purse, cands[0], 0.0).unwrap()).unwrap();
        assert_eq!(single, direct);
    }

    #[test]
    fn rejects_bad_lambda_and_no_candidates() {
        assert!(BoundQuery::new(empty_purse(), Pose::identity(), 1.5).is_err());
        assert!(matches!(
            sample_min_bound(&empty_purse(), &[], 1.0),
            Err(BoundError::NoCandidates)
        ));
    }

    #[test]
    fn anisotropic_region_keeps_validity() {
        let (model, mut pred, _) = scene(3.0);
        pred.regions[2].shape = Matrix2::new(0.02, 0.01, 0.01, 0.2);
        let purse = build_purse(&pred, &k(), &model, 5.0).unwrap();
        let samples = sample_purse(&purse, &pred, &model, &k(), 300, 10_000, 5).unwrap();
        let q = BoundQuery::new(purse, gt(), 1.0).unwrap();
        let res = worst_case_bound_with_witness(&q, &samples).unwrap();
        assert!(res.lower_witness.unwrap().1 <= res.d_squared_upper + 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn general_lambda_bound_covers_groundtruth(lambda in 0.0f64..=1.0, radius in 1.0f64..10.0) {
            let (_, _, purse) = scene(radius);
            let q = BoundQuery::new(purse, Pose::identity(), lambda).unwrap();
            let res = worst_case_bound(&q).unwrap();
            prop_assert!(q.distance_sq(&gt()) <= res.d_squared_upper + 1e-5);
            prop_assert!((res.d_upper * res.d_upper - res.d_squared_upper).abs() < 1e-9);
        }
    }
}
