//! Conformal keypoint detection and geometric uncertainty propagation for
//! 6-DoF object pose estimation.
//!
//! The crate turns per-keypoint detections (heatmaps or pixel-wise votes)
//! into conformal prediction sets, propagates those sets into a pose
//! uncertainty set (PURSE) over SE(3), samples and averages poses from it,
//! and certifies worst-case rotation and translation error bounds through a
//! semidefinite relaxation.
//!
//! Module map:
//!
//! * [`geom3d`]: rotations, poses, pinhole projection, P3P/PnP and rotation
//!   averaging.
//! * [`conformal`]: heatmap and vote-field detections, nonconformity scores,
//!   calibration and prediction sets.
//! * [`purse`]: pose uncertainty set construction, membership and random
//!   sample averaging.
//! * [`sdp`]: a small dense interior-point SDP solver.
//! * [`bounds`]: the pose-to-set distance QCQP, its Shor relaxation and the
//!   resulting certified bounds.
//! * [`pipeline`]: synthetic scenes, experiments, CSV/plot emission and the
//!   command line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod conformal;
pub mod geom3d;
pub mod pipeline;
pub mod purse;
pub mod sdp;

pub use bounds::{BoundQuery, BoundResult, BoundStatus};
pub use conformal::{
    CalibrationRecord, Heatmap, KeypointLabels, NonconformityConfig, NonconformityKind,
    PredictionSet, VoteField,
};
pub use geom3d::{CameraIntrinsics, ObjectModel, Pose, PoseVector, Rotation3};
pub use purse::{Purse, RansagResult};
pub use sdp::{SdpProblem, SdpSolution, SdpStatus};
