//! Keypoint estimates and nonconformity scores.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use super::heatmap::spans_plane;
use super::voting::{gnc_tls_point, vote_candidates};
use super::{
    CalibrationRecord, ConformalError, Heatmap, KeypointLabels, NonconformityConfig,
    NonconformityKind, VoteField,
};

const MAX_CONDITION: f64 = 1e12;
const COV_REGULARIZATION: f64 = 1e-9;

/// Raw detector output for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Detection {
    Heatmap(Heatmap),
    Votes(Vec<VoteField>),
}

impl Detection {
    pub fn num_keypoints(&self) -> usize {
        match self {
            Detection::Heatmap(h) => h.num_keypoints(),
            Detection::Votes(v) => v.len(),
        }
    }
}

/// Per-keypoint summary of a detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeypointEstimate {
    Peak {
        pixel: Vector2<f64>,
        prob: f64,
    },
    /// `info` is the inverse of `cov`.
    Gaussian {
        mean: Vector2<f64>,
        cov: Matrix2<f64>,
        info: Matrix2<f64>,
    },
}

impl KeypointEstimate {
    pub fn center(&self) -> Vector2<f64> {
        match self {
            KeypointEstimate::Peak { pixel, .. } => *pixel,
            KeypointEstimate::Gaussian { mean, .. } => *mean,
        }
    }

    /// Builds a Gaussian estimate, adding a tiny ridge only when `full_rank`
    /// says the support is not degenerate.
    pub fn gaussian(
        keypoint: usize,
        mean: Vector2<f64>,
        cov: Matrix2<f64>,
        full_rank: bool,
    ) -> Result<Self, ConformalError> {
        let singular = ConformalError::SingularCovariance { keypoint };
        if !full_rank || !cov.iter().all(|v| v.is_finite()) {
            return Err(singular);
        }
        let cov = if well_conditioned(&cov) {
            cov
        } else {
            let reg = cov + Matrix2::identity() * COV_REGULARIZATION;
            if !well_conditioned(&reg) {
                return Err(singular);
            }
            reg
        };
        let info = cov.try_inverse().ok_or(singular)?;
        Ok(KeypointEstimate::Gaussian {
            mean,
            cov,
            info: (info + info.transpose()) * 0.5,
        })
    }
}

fn well_conditioned(m: &Matrix2<f64>) -> bool {
    let e = m.symmetric_eigenvalues();
    let (lo, hi) = (e.min(), e.max());
    lo > 0.0 && hi / lo < MAX_CONDITION
}

/// Per-keypoint nonconformity of label `y`.
pub fn keypoint_score(est: &KeypointEstimate, y: &Vector2<f64>) -> f64 {
    match est {
        KeypointEstimate::Peak { pixel, prob } => prob * (y - pixel).norm(),
        KeypointEstimate::Gaussian { mean, info, .. } => {
            let d = y - mean;
            (d.transpose() * info * d)[0]
        }
    }
}

/// Maximum keypoint score.
pub fn score_estimates(ests: &[KeypointEstimate], labels: &KeypointLabels) -> Result<f64, ConformalError> {
    if ests.len() != labels.len() {
        return Err(ConformalError::ShapeMismatch {
            expected: ests.len(),
            got: labels.len(),
        });
    }
    Ok(ests
        .iter()
        .zip(&labels.y)
        .map(|(e, y)| keypoint_score(e, y))
        .fold(0.0, f64::max))
}

/// Reduces a detection to one estimate per keypoint.
pub fn summarize(det: &Detection, config: &NonconformityConfig) -> Result<Vec<KeypointEstimate>, ConformalError> {
    config.validate()?;
    match (det, config.kind) {
        (Detection::Heatmap(h), NonconformityKind::Peak) => Ok(peak_estimates(h)),
        (Detection::Heatmap(h), NonconformityKind::Cov) => cov_estimates(h, config.top_j),
        (Detection::Votes(f), NonconformityKind::Pvnet) => pvnet_estimates(f, config.beta),
        (_, kind) => Err(ConformalError::KindMismatch(kind)),
    }
}

fn peak_estimates(h: &Heatmap) -> Vec<KeypointEstimate> {
    (0..h.num_keypoints())
        .map(|k| {
            let (pixel, prob) = h.peak(k);
            KeypointEstimate::Peak { pixel, prob }
        })
        .collect()
}

fn cov_estimates(h: &Heatmap, top_j: usize) -> Result<Vec<KeypointEstimate>, ConformalError> {
    (0..h.num_keypoints())
        .map(|k| {
            let (mean, cov, full) = h.top_j_moments(k, top_j);
            KeypointEstimate::gaussian(k, mean, cov, full)
        })
        .collect()
}

fn pvnet_estimates(fields: &[VoteField], beta: f64) -> Result<Vec<KeypointEstimate>, ConformalError> {
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let degenerate = ConformalError::DegenerateInliers { keypoint: k };
            let cands = vote_candidates(f);
            let gnc = gnc_tls_point(&cands, beta).map_err(|_| ConformalError::DegenerateInliers { keypoint: k })?;
            let inl: Vec<Vector2<f64>> = gnc.inliers.iter().map(|&i| cands[i]).collect();
            if inl.len() < 2 || !spans_plane(&inl) {
                return Err(degenerate);
            }
            let mut cov = Matrix2::zeros();
            for q in &inl {
                let d = q - gnc.point;
                cov += d * d.transpose();
            }
            cov /= inl.len() as f64;
            KeypointEstimate::gaussian(k, gnc.point, cov, true)
                .map_err(|_| ConformalError::DegenerateInliers { keypoint: k })
        })
        .collect()
}

pub fn score_peak(labels: &KeypointLabels, heatmap: &Heatmap) -> Result<f64, ConformalError> {
    score_estimates(&peak_estimates(heatmap), labels)
}

pub fn score_cov(labels: &KeypointLabels, heatmap: &Heatmap, top_j: usize) -> Result<f64, ConformalError> {
    if top_j == 0 {
        return Err(ConformalError::InvalidConfig("top_j must be positive".into()));
    }
    score_estimates(&cov_estimates(heatmap, top_j)?, labels)
}

pub fn score_pvnet(labels: &KeypointLabels, fields: &[VoteField], beta: f64) -> Result<f64, ConformalError> {
    score_estimates(&pvnet_estimates(fields, beta)?, labels)
}

/// Nonconformity of one labelled sample under `config`.
pub fn score(labels: &KeypointLabels, det: &Detection, config: &NonconformityConfig) -> Result<f64, ConformalError> {
    score_estimates(&summarize(det, config)?, labels)
}

/// Scores every calibration sample (in parallel) and sorts the result.
pub fn calibrate(
    dataset: &[(KeypointLabels, Detection)],
    config: &NonconformityConfig,
) -> Result<CalibrationRecord, ConformalError> {
    if dataset.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let scores = dataset
        .par_iter()
        .enumerate()
        .map(|(index, (labels, det))| {
            score(labels, det, config).map_err(|e| ConformalError::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationRecord::from_scores(scores, *config)
}

/// Same as [`calibrate`] for samples already reduced to estimates.
pub fn calibrate_estimates(
    dataset: &[(KeypointLabels, Vec<KeypointEstimate>)],
    config: &NonconformityConfig,
) -> Result<CalibrationRecord, ConformalError> {
    if dataset.is_empty() {
        return Err(ConformalError::EmptyCalibration);
    }
    let scores = dataset
        .iter()
        .enumerate()
        .map(|(index, (labels, ests))| {
            score_estimates(ests, labels).map_err(|e| ConformalError::Sample {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    CalibrationRecord::from_scores(scores, *config)
}
