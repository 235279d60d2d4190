use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eye(d: usize) -> DMatrix<f64> {
    DMatrix::identity(d, d)
}

fn random_sym(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    (&m + m.transpose()) * 0.5
}

fn random_pd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + eye(d) * 0.1
}

fn lambda_max(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

/// Golden-section minimum of a convex function on `[lo, hi]`.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    f((lo + hi) / 2.0)
}

fn solve(p: &SdpProblem) -> SdpSolution {
    solve_sdp(p, DEFAULT_MAX_ITERS, DEFAULT_TOL)
}

#[test]
fn trace_constrained_trace_objective() {
    let mut p = SdpProblem::new(3, eye(3)).unwrap();
    p.add_equality(eye(3), 1.0).unwrap();
    let s = solve(&p);
    assert_eq!(s.status, SdpStatus::Optimal);
    assert!((s.objective_value - 1.0).abs() < 1e-7);
    assert!((s.primal_value - 1.0).abs() < 1e-7);
}

#[test]
fn single_entry_objective() {
    let mut c = DMatrix::zeros(2, 2);
    c[(0, 0)] = 1.0;
    let mut p = SdpProblem::new(2, c).unwrap();
    let mut a = DMatrix::zeros(2, 2);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    p.add_equality(a, 1.0).unwrap();
    let s = solve(&p);
    assert_eq!(s.status, SdpStatus::Optimal);
    assert!((s.objective_value - 1.0).abs() < 1e-7);
    assert!((s.x[(0, 0)] - 1.0).abs() < 1e-6);
}

#[test]
fn max_eigenvalue_matches_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for d in [2, 4, 7] {
        let c = random_sym(d, &mut rng);
        let mut p = SdpProblem::new(d, c.clone()).unwrap();
        p.add_equality(eye(d), 1.0).unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.objective_value - lambda_max(&c)).abs() < 1e-6, "d={d}");
    }
}

#[test]
fn equality_constrained_matches_dual_line_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..5 {
        let d = 3 + trial % 3;
        let c = random_sym(d, &mut rng);
        let a = random_sym(d, &mut rng);
        let x0 = random_pd(d, &mut rng);
        let t = x0.trace();
        let b = a.dot(&x0);
        let mut p = SdpProblem::new(d, c.clone()).unwrap();
        p.add_equality(eye(d), t).unwrap();
        p.add_equality(a.clone(), b).unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SdpStatus::Optimal);
        let oracle = golden(|y| t * lambda_max(&(&c - &a * y)) + b * y, -200.0, 200.0);
        assert!((s.objective_value - oracle).abs() < 1e-5, "{} vs {oracle}", s.objective_value);
        assert!((s.primal_value - oracle).abs() < 1e-5);
    }
}

#[test]
fn inequality_constrained_matches_dual_line_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let d = 4;
        let c = random_sym(d, &mut rng);
        let g = random_sym(d, &mut rng);
        let x0 = random_pd(d, &mut rng);
        let x0 = &x0 / x0.trace();
        // slack keeps Slater's condition
        let h = g.dot(&x0) + 0.05;
        let mut p = SdpProblem::new(d, c.clone()).unwrap();
        p.add_equality(eye(d), 1.0).unwrap();
        p.add_inequality(g.clone(), h).unwrap();
        let s = solve(&p);
        assert_eq!(s.status, SdpStatus::Optimal);
        let oracle = golden(|v| lambda_max(&(&c - &g * v)) + h * v, 0.0, 200.0);
        assert!((s.objective_value - oracle).abs() < 1e-5, "{} vs {oracle}", s.objective_value);
        assert!(s.v[0] >= -1e-9);
    }
}

#[test]
fn contradictory_traces_are_infeasible() {
    let mut p = SdpProblem::new(3, eye(3)).unwrap();
    p.add_equality(eye(3), 1.0).unwrap();
    p.add_equality(eye(3), 2.0).unwrap();
    let s = solve(&p);
    assert_eq!(s.status, SdpStatus::PrimalInfeasible);
    assert!(s.certificate.unwrap().verify(&p));
}

#[test]
fn negative_trace_bound_is_infeasible() {
    let mut p = SdpProblem::new(3, eye(3)).unwrap();
    p.add_inequality(eye(3), -1.0).unwrap();
    let cert = infeasibility_certificate(&p).unwrap();
    assert!(cert.verify(&p));
}

#[test]
fn interior_point_detects_infeasibility() {
    // X11 = 1, X22 = 1, X12 ≥ 2 violates the 2x2 PSD condition
    let mut p = SdpProblem::new(2, DMatrix::zeros(2, 2)).unwrap();
    p.add_equality(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 1.0).unwrap();
    p.add_equality(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), 1.0).unwrap();
    p.add_inequality(DMatrix::from_row_slice(2, 2, &[0.0, -0.5, -0.5, 0.0]), -2.0).unwrap();
    let s = solve(&p);
    assert_eq!(s.status, SdpStatus::PrimalInfeasible);
    let cert = s.certificate.unwrap();
    assert!(cert.verify(&p));
}

#[test]
fn unbounded_objective_is_dual_infeasible() {
    let mut c = DMatrix::zeros(2, 2);
    c[(0, 0)] = 1.0;
    let mut p = SdpProblem::new(2, c).unwrap();
    p.add_equality(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]), 1.0).unwrap();
    assert_eq!(solve(&p).status, SdpStatus::DualInfeasible);
}

#[test]
fn feasible_problem_has_no_certificate() {
    let mut p = SdpProblem::new(2, eye(2)).unwrap();
    p.add_equality(eye(2), 1.0).unwrap();
    assert!(matches!(
        infeasibility_certificate(&p),
        Err(SdpError::CertificateUnavailable(SdpStatus::Optimal))
    ));
}

#[test]
fn rejects_malformed_input() {
    assert!(SdpProblem::new(0, DMatrix::zeros(0, 0)).is_err());
    assert!(SdpProblem::new(2, eye(3)).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    assert!(SdpProblem::new(2, asym.clone()).is_err());
    let mut p = SdpProblem::new(2, eye(2)).unwrap();
    assert!(p.add_equality(asym, 1.0).is_err());
    assert!(p.add_inequality(eye(2), f64::NAN).is_err());
}

#[test]
fn solution_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let c = random_sym(5, &mut rng);
    let mut p = SdpProblem::new(5, c).unwrap();
    p.add_equality(eye(5), 2.0).unwrap();
    p.add_inequality(random_sym(5, &mut rng), 1.0).unwrap();
    assert_eq!(solve(&p), solve(&p));
}

#[test]
fn certified_bound_covers_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = 4;
    let c = random_sym(d, &mut rng);
    let a = random_sym(d, &mut rng);
    let x0 = random_pd(d, &mut rng);
    let x0 = &x0 / x0.trace();
    let b = a.dot(&x0);
    let mut p = SdpProblem::new(d, c.clone()).unwrap();
    p.add_equality(eye(d), 1.0).unwrap();
    p.add_equality(a.clone(), b).unwrap();
    let s = solve(&p);
    let ub = s.certified_upper_bound(&p, 1.0);
    assert!(ub >= s.primal_value - 1e-9);
    // feasible points along segments from X0 towards random PSD matrices
    for _ in 0..200 {
        let r = random_pd(d, &mut rng);
        let r = &r / r.trace();
        let dir = &r - &x0;
        let ad = a.dot(&dir);
        // project out the A component using X0 itself as a corrector
        let corr = if ad.abs() > 1e-12 { &dir - (&x0 - &eye(d) / d as f64) * (ad / a.dot(&(&x0 - &eye(d) / d as f64))) } else { dir };
        let mut t = 1.0;
        let x = loop {
            let x = &x0 + &corr * t;
            if min_eigenvalue(&x) >= 0.0 || t < 1e-6 {
                break x;
            }
            t *= 0.5;
        };
        if p.violation(&x) < 1e-9 {
            assert!(c.dot(&x) <= ub + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn primal_is_psd_and_feasible(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3 + (seed % 3) as usize;
        let c = random_sym(d, &mut rng);
        let x0 = random_pd(d, &mut rng);
        let mut p = SdpProblem::new(d, c).unwrap();
        p.add_equality(eye(d), x0.trace()).unwrap();
        let a = random_sym(d, &mut rng);
        p.add_equality(a.clone(), a.dot(&x0)).unwrap();
        let g = random_sym(d, &mut rng);
        p.add_inequality(g.clone(), g.dot(&x0) + 0.1).unwrap();
        let s = solve(&p);
        prop_assert_eq!(s.status, SdpStatus::Optimal);
        prop_assert!(min_eigenvalue(&s.x) >= -1e-7);
        prop_assert!(p.violation(&s.x) < 1e-6 * (1.0 + x0.trace()));
        prop_assert!(s.duality_gap < 1e-5 * (1.0 + s.objective_value.abs()));
        // weak duality against the known feasible point
        prop_assert!(s.objective_value >= p.objective().dot(&x0) - 1e-7);
    }
}
