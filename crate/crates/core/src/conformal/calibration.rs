//! Calibration records and quantile lookup.

use serde::{Deserialize, Serialize};

use super::{ConformalError, NonconformityConfig};

/// Sorted (nonincreasing) calibration scores and the nonconformity used to
/// compute them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordJson")]
pub struct CalibrationRecord {
    pub config: NonconformityConfig,
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct RecordJson {
    config: NonconformityConfig,
    scores: Vec<f64>,
}

impl TryFrom<RecordJson> for CalibrationRecord {
    type Error = ConformalError;

    fn try_from(raw: RecordJson) -> Result<Self, Self::Error> {
        raw.config.validate()?;
        CalibrationRecord::from_scores(raw.scores, raw.config)
    }
}

impl CalibrationRecord {
    /// Sorts the scores nonincreasing. Scores must be finite and
    /// nonnegative.
    pub fn from_scores(mut scores: Vec<f64>, config: NonconformityConfig) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        if let Some(i) = scores.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ConformalError::InvalidConfig(format!(
                "score {i} is not a finite nonnegative number"
            )));
        }
        scores.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { config, scores })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// The `⌊(n+1)ε⌋`-th largest score.
    pub fn quantile_at(&self, epsilon: f64) -> Result<f64, ConformalError> {
        let h = quantile_index(self.n(), epsilon)?;
        Ok(self.scores[h - 1])
    }
}

/// `h = ⌊(n+1)ε⌋`, required to lie in `[1, n]`. Products within 1e-9 below an
/// integer are rounded up to absorb binary representation error in `ε`.
pub fn quantile_index(n: usize, epsilon: f64) -> Result<usize, ConformalError> {
    let err = ConformalError::EpsilonOutOfRange { epsilon, n };
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon < 1.0) {
        return Err(err);
    }
    let h = ((n as f64 + 1.0) * epsilon + 1e-9).floor();
    if h < 1.0 || h > n as f64 {
        return Err(err);
    }
    Ok(h as usize)
}

/// Parameters `(n + 1 − h, h)` of the Beta law of the conditional coverage.
pub fn beta_conditional_coverage(n: usize, epsilon: f64) -> Result<(f64, f64), ConformalError> {
    let h = quantile_index(n, epsilon)?;
    Ok(((n + 1 - h) as f64, h as f64))
}

/// Mean and standard deviation of `Beta(a, b)`.
pub fn beta_mean_std(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (a / s, (a * b / (s * s * (s + 1.0))).sqrt())
}
