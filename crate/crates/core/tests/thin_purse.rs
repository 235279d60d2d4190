//! A PURSE whose relaxation has a nearly empty interior: the interior point
//! iteration loses accuracy late and must fall back to its best iterate.

use purse_core::bounds::{assemble_qcqp, shor_relax, worst_case_bound, BoundQuery, BoundStatus};
use purse_core::geom3d::Pose;
use purse_core::purse::Purse;
use purse_core::sdp::{solve_sdp, SdpStatus, DEFAULT_MAX_ITERS, DEFAULT_TOL};

fn fixture() -> (Purse, Pose) {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/");
    let purse = serde_json::from_str(&std::fs::read_to_string(format!("{dir}thin_purse.json")).unwrap()).unwrap();
    let pose = serde_json::from_str(&std::fs::read_to_string(format!("{dir}thin_purse_pose.json")).unwrap()).unwrap();
    (purse, pose)
}

#[test]
fn relaxation_solves_for_both_weights() {
    let (purse, pose) = fixture();
    for (lambda, expected) in [(0.0, 0.8968), (1.0, 1.2784)] {
        let q = BoundQuery::new(purse.clone(), pose, lambda).unwrap();
        let sol = solve_sdp(&shor_relax(&assemble_qcqp(&q)).unwrap(), DEFAULT_MAX_ITERS, DEFAULT_TOL);
        assert_eq!(sol.status, SdpStatus::Optimal, "lambda {lambda}");
        let res = worst_case_bound(&q).unwrap();
        assert_eq!(res.status, BoundStatus::Bounded);
        assert!(res.d_squared_upper >= 0.0 && res.d_squared_upper <= q.cap());
        let d = res.d_squared_upper.sqrt();
        assert!((d - expected).abs() < 1e-3, "lambda {lambda}: {d}");
    }
}
