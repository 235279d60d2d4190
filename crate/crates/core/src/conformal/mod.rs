//! Inductive conformal calibration of keypoint detectors and per-keypoint
//! prediction sets.
//!
//! A detection (a [`Heatmap`] or one [`VoteField`] per keypoint) is first
//! reduced to one [`KeypointEstimate`] per keypoint. Nonconformity scores,
//! calibration and prediction sets all work from those estimates:
//!
//! * `peak`: the most likely pixel `q` and its probability `p`; score
//!   `p·‖y − q‖`, set is a disk of radius `α/p`.
//! * `cov`: mean and covariance of the top-J pixels; score is the squared
//!   Mahalanobis distance, set is an ellipse `Σ⁻¹/α`.
//! * `pvnet`: robust vote intersection and inlier covariance; same score and
//!   set shape as `cov`.
//!
//! The score of a sample is the maximum over keypoints.

mod calibration;
mod heatmap;
mod scores;
mod sets;
mod voting;

pub use calibration::{beta_conditional_coverage, beta_mean_std, quantile_index, CalibrationRecord};
pub use heatmap::Heatmap;
pub use scores::{
    calibrate, calibrate_estimates, keypoint_score, score, score_cov, score_estimates,
    score_peak, score_pvnet, summarize, Detection, KeypointEstimate,
};
pub use sets::{
    predict_set, predict_set_ball, predict_set_ellipse, predict_set_pvnet, PredictionSet, Region,
};
pub use voting::{gnc_tls_point, vote_candidates, GncResult, VoteField, MAX_VOTE_PAIRS};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("covariance of keypoint {keypoint} is singular")]
    SingularCovariance { keypoint: usize },
    #[error("epsilon {epsilon} gives quantile index outside [1, {n}]")]
    EpsilonOutOfRange { epsilon: f64, n: usize },
    #[error("peak probability of keypoint {keypoint} is zero")]
    ZeroPeakProbability { keypoint: usize },
    #[error("need at least 2 candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("keypoint {keypoint}: inliers are too few or collinear")]
    DegenerateInliers { keypoint: usize },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<ConformalError>,
    },
    #[error("detection does not match nonconformity kind {0:?}")]
    KindMismatch(NonconformityKind),
    #[error("invalid heatmap: {0}")]
    InvalidHeatmap(String),
    #[error("invalid vote field: {0}")]
    InvalidVoteField(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Groundtruth keypoint pixels of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointLabels {
    pub y: Vec<Vector2<f64>>,
}

impl KeypointLabels {
    pub fn new(y: Vec<Vector2<f64>>) -> Self {
        Self { y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonconformityKind {
    Peak,
    Cov,
    Pvnet,
}

impl std::str::FromStr for NonconformityKind {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "peak" => Ok(Self::Peak),
            "cov" => Ok(Self::Cov),
            "pvnet" => Ok(Self::Pvnet),
            other => Err(ConformalError::InvalidConfig(format!(
                "unknown nonconformity kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconformityConfig {
    pub kind: NonconformityKind,
    #[serde(default = "default_top_j")]
    pub top_j: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_top_j() -> usize {
    100
}

fn default_beta() -> f64 {
    5.0
}

impl NonconformityConfig {
    pub fn new(kind: NonconformityKind) -> Self {
        Self {
            kind,
            top_j: default_top_j(),
            beta: default_beta(),
        }
    }

    pub fn validate(&self) -> Result<(), ConformalError> {
        if self.top_j == 0 {
            return Err(ConformalError::InvalidConfig("top_j must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ConformalError::InvalidConfig("beta must be positive".into()));
        }
        Ok(())
    }
}

impl Default for NonconformityConfig {
    fn default() -> Self {
        Self::new(NonconformityKind::Peak)
    }
}
