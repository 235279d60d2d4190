//! Prediction sets `{y : (y − μ)ᵀ Λ (y − μ) ≤ 1}` per keypoint.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::scores::{summarize, Detection, KeypointEstimate};
use super::{CalibrationRecord, ConformalError, Heatmap, KeypointLabels, NonconformityKind, VoteField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Vector2<f64>,
    /// Shape matrix `Λ`. Entries are infinite for a single-point set.
    pub shape: Matrix2<f64>,
}

impl Region {
    pub fn quadratic(&self, y: &Vector2<f64>) -> f64 {
        let d = y - self.center;
        if d.x == 0.0 && d.y == 0.0 {
            return 0.0;
        }
        let q = (d.transpose() * self.shape * d)[0];
        if q.is_nan() {
            f64::INFINITY
        } else {
            q
        }
    }

    pub fn contains(&self, y: &Vector2<f64>) -> bool {
        self.quadratic(y) <= 1.0
    }

    pub fn is_point(&self) -> bool {
        !self.shape.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub regions: Vec<Region>,
    pub epsilon: f64,
    pub quantile: f64,
}

impl PredictionSet {
    /// Set at calibration quantile `alpha` built from keypoint estimates.
    pub fn from_estimates(
        ests: &[KeypointEstimate],
        alpha: f64,
        epsilon: f64,
    ) -> Result<Self, ConformalError> {
        let regions = ests
            .iter()
            .enumerate()
            .map(|(k, e)| region(k, e, alpha))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            regions,
            epsilon,
            quantile: alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// `true` when every label lies in its keypoint region.
    pub fn contains(&self, labels: &KeypointLabels) -> bool {
        labels.len() == self.regions.len()
            && self.regions.iter().zip(&labels.y).all(|(r, y)| r.contains(y))
    }
}

fn region(k: usize, est: &KeypointEstimate, alpha: f64) -> Result<Region, ConformalError> {
    match *est {
        KeypointEstimate::Peak { pixel, prob } => {
            if !(prob > 0.0) {
                return Err(ConformalError::ZeroPeakProbability { keypoint: k });
            }
            let s = prob * prob / (alpha * alpha);
            Ok(Region {
                center: pixel,
                shape: Matrix2::new(s, 0.0, 0.0, s),
            })
        }
        KeypointEstimate::Gaussian { mean, info, .. } => {
            let shape = if alpha == 0.0 {
                Matrix2::new(f64::INFINITY, 0.0, 0.0, f64::INFINITY)
            } else {
                info / alpha
            };
            Ok(Region { center: mean, shape })
        }
    }
}

/// Calibrated set for any detection, using the record's nonconformity.
pub fn predict_set(det: &Detection, record: &CalibrationRecord, epsilon: f64) -> Result<PredictionSet, ConformalError> {
    let alpha = record.quantile_at(epsilon)?;
    let ests = summarize(det, &record.config)?;
    PredictionSet::from_estimates(&ests, alpha, epsilon)
}

/// Disks of radius `α / p_k` around the heatmap peaks.
pub fn predict_set_ball(heatmap: &Heatmap, record: &CalibrationRecord, epsilon: f64) -> Result<PredictionSet, ConformalError> {
    let mut cfg = record.config;
    cfg.kind = NonconformityKind::Peak;
    let alpha = record.quantile_at(epsilon)?;
    let ests = summarize(&Detection::Heatmap(heatmap.clone()), &cfg)?;
    PredictionSet::from_estimates(&ests, alpha, epsilon)
}

/// Ellipses `Σ_k⁻¹ / α` around the top-J means.
pub fn predict_set_ellipse(
    heatmap: &Heatmap,
    record: &CalibrationRecord,
    epsilon: f64,
    top_j: usize,
) -> Result<PredictionSet, ConformalError> {
    let mut cfg = record.config;
    cfg.kind = NonconformityKind::Cov;
    cfg.top_j = top_j;
    let alpha = record.quantile_at(epsilon)?;
    let ests = summarize(&Detection::Heatmap(heatmap.clone()), &cfg)?;
    PredictionSet::from_estimates(&ests, alpha, epsilon)
}

/// Ellipses from robust vote intersection and inlier covariance.
pub fn predict_set_pvnet(
    fields: &[VoteField],
    record: &CalibrationRecord,
    epsilon: f64,
) -> Result<PredictionSet, ConformalError> {
    let mut cfg = record.config;
    cfg.kind = NonconformityKind::Pvnet;
    let alpha = record.quantile_at(epsilon)?;
    let ests = summarize(&Detection::Votes(fields.to_vec()), &cfg)?;
    PredictionSet::from_estimates(&ests, alpha, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::{keypoint_score, NonconformityConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn peak(p: f64) -> KeypointEstimate {
        KeypointEstimate::Peak {
            pixel: Vector2::new(10.0, 10.0),
            prob: p,
        }
    }

    #[test]
    fn ball_radius() {
        let s = PredictionSet::from_estimates(&[peak(0.5)], 2.0, 0.1).unwrap();
        assert!((s.regions[0].shape - Matrix2::identity() / 16.0).abs().max() < 1e-15);
        assert!(s.regions[0].contains(&Vector2::new(14.0, 10.0)));
        assert!(!s.regions[0].contains(&Vector2::new(14.001, 10.0)));
        assert!(matches!(
            PredictionSet::from_estimates(&[peak(0.0)], 2.0, 0.1),
            Err(ConformalError::ZeroPeakProbability { keypoint: 0 })
        ));
    }

    #[test]
    fn zero_quantile_is_a_point() {
        let s = PredictionSet::from_estimates(&[peak(0.5)], 0.0, 0.1).unwrap();
        let r = s.regions[0];
        assert!(r.is_point());
        assert!(r.contains(&Vector2::new(10.0, 10.0)));
        assert!(!r.contains(&Vector2::new(10.0, 10.5)));
        assert!(!r.contains(&Vector2::new(10.5, 10.0)));
        let g = KeypointEstimate::gaussian(0, Vector2::zeros(), Matrix2::identity(), true).unwrap();
        let s = PredictionSet::from_estimates(&[g], 0.0, 0.1).unwrap();
        assert!(s.regions[0].contains(&Vector2::zeros()));
        assert!(!s.regions[0].contains(&Vector2::new(0.0, 1e-9)));
    }

    #[test]
    fn larger_peak_means_smaller_radius() {
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let p = i as f64 / 20.0;
            let s = PredictionSet::from_estimates(&[peak(p)], 1.5, 0.1).unwrap();
            let radius = 1.0 / s.regions[0].shape[(0, 0)].sqrt();
            assert!(radius < prev);
            prev = radius;
        }
    }

    #[test]
    fn ellipse_shapes() {
        let g = KeypointEstimate::gaussian(0, Vector2::zeros(), Matrix2::identity(), true).unwrap();
        let s = PredictionSet::from_estimates(&[g], 4.0, 0.1).unwrap();
        assert!((s.regions[0].shape - Matrix2::identity() * 0.25).abs().max() < 1e-15);
        assert!(s.regions[0].contains(&Vector2::new(2.0, 0.0)));
        let cov = Matrix2::new(3.0, 1.0, 1.0, 2.0);
        let g = KeypointEstimate::gaussian(0, Vector2::zeros(), cov, true).unwrap();
        let a1 = PredictionSet::from_estimates(&[g], 1.5, 0.1).unwrap();
        let a2 = PredictionSet::from_estimates(&[g], 3.0, 0.1).unwrap();
        let det = |s: &PredictionSet| s.regions[0].shape.try_inverse().unwrap().determinant();
        assert!((det(&a2) / det(&a1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ellipse_axes_follow_blob_covariance() {
        let (sx, sy, theta) = (5.0f64, 2.0f64, 0.6f64);
        let rot = nalgebra::Rotation2::new(theta).into_inner();
        let cov = rot * Matrix2::new(sx * sx, 0.0, 0.0, sy * sy) * rot.transpose();
        let info = cov.try_inverse().unwrap();
        let (w, h) = (60, 60);
        let c = Vector2::new(30.2, 29.7);
        let mut data = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let d = Vector2::new(x as f64, y as f64) - c;
                data.push((-0.5 * (d.transpose() * info * d)[0]).exp());
            }
        }
        let hm = Heatmap::from_dense(1, h, w, &data).unwrap();
        let cfg = NonconformityConfig::new(NonconformityKind::Cov);
        let rec = CalibrationRecord::from_scores(vec![1.0; 20], cfg).unwrap();
        let set = predict_set_ellipse(&hm, &rec, 0.1, 100).unwrap();
        let (_, top_cov, _) = hm.top_j_moments(0, 100);
        // oracle: eigenvectors of the top-J covariance
        let eig = top_cov.symmetric_eigen();
        let shape = set.regions[0].shape;
        for i in 0..2 {
            let v = eig.eigenvectors.column(i).into_owned();
            let sv = shape * v;
            let cross = sv.x * v.y - sv.y * v.x;
            assert!(cross.abs() < 1e-8 * sv.norm());
        }
    }

    #[test]
    fn membership_agrees_with_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = Matrix2::new(4.0, 1.0, 1.0, 3.0);
        let g = KeypointEstimate::gaussian(0, Vector2::new(5.0, 5.0), cov, true).unwrap();
        let ests = [peak(0.3), g];
        let alpha = 2.0;
        let s = PredictionSet::from_estimates(&ests, alpha, 0.1).unwrap();
        for _ in 0..2000 {
            let y = Vector2::new(rng.random_range(-5.0..20.0), rng.random_range(-5.0..20.0));
            for (k, e) in ests.iter().enumerate() {
                let score = keypoint_score(e, &y);
                if (score - alpha).abs() > 1e-9 {
                    assert_eq!(s.regions[k].contains(&y), score <= alpha);
                }
            }
        }
    }
}
