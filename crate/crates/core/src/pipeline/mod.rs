//! Synthetic scenes, desk-scale experiments, result files and the CLI.
//!
//! Scenes are drawn i.i.d. (uniform hemisphere viewpoints), so calibration
//! and test splits are exchangeable. Every scene gets its own generator
//! derived from the experiment seed and its index; parallel evaluation is
//! therefore reproducible and results are ordered by scene id.

pub mod cli;
mod experiments;
mod output;
mod synth;

pub use experiments::{
    calibrate_synthetic, run_bounds_experiment, run_coverage_experiment, summarize_bounds,
    BoundsReport, BoundsRow, BoundsSummary, CoverageReport, CoverageRow, CoverageSummary,
    RowStatus, PROJECTION_THRESHOLD_PX, VALIDITY_TOL,
};
pub use output::{render_plots, write_bounds_cdf, write_bounds_csv, write_coverage_csv};
pub use synth::{generate_scene, generate_votes, scene_rng, SceneRecord, SyntheticScene};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundError;
use crate::conformal::{quantile_index, ConformalError, NonconformityConfig, NonconformityKind};
use crate::geom3d::{CameraIntrinsics, GeomError, ObjectModel};
use crate::purse::{PurseError, DEFAULT_TRANS_BOUND};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no in-frustum pose after {0} attempts")]
    OutOfFrustum(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Purse(#[from] PurseError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Generator knobs for synthetic heatmaps (pixels and probabilities).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Width of the Gaussian blob drawn around each detection.
    pub sigma_blob: f64,
    /// Standard deviation of the detection offset from the true projection.
    pub sigma_det: f64,
    /// Probability that a channel carries an outlier blob.
    pub p_out: f64,
    /// Mass of the outlier blob.
    pub w_out: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_blob: 3.0,
            sigma_det: 2.0,
            p_out: 0.05,
            w_out: 0.3,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(format!("noise: {m}")));
        if !(self.sigma_blob > 0.0 && self.sigma_blob.is_finite()) {
            return bad("sigma_blob must be positive");
        }
        if !(self.sigma_det >= 0.0 && self.sigma_det.is_finite()) {
            return bad("sigma_det must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.p_out) {
            return bad("p_out must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.w_out) {
            return bad("w_out must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Experiment configuration, read from JSON. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub epsilons: Vec<f64>,
    pub nonconformity: NonconformityConfig,
    pub n_calib: usize,
    pub n_test: usize,
    /// Calibration resamples in the coverage experiment.
    pub resamples: usize,
    /// Test scenes in the bounds experiment.
    pub n_bound_scenes: usize,
    pub seed: u64,
    /// Object model JSON; the built-in synthetic duck when absent.
    pub model_path: Option<PathBuf>,
    /// Intrinsics JSON; `fx = fy = 250, cx = 160, cy = 120` when absent.
    pub intrinsics_path: Option<PathBuf>,
    pub image_width: usize,
    pub image_height: usize,
    pub trans_bound: f64,
    /// RANSAG trials per scene.
    pub trials: usize,
    /// Check every bound against this many sampled PURSE poses (0 disables).
    pub witness_samples: usize,
    pub noise: NoiseSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.4],
            nonconformity: NonconformityConfig::default(),
            n_calib: 200,
            n_test: 1000,
            resamples: 20,
            n_bound_scenes: 200,
            seed: 0,
            model_path: None,
            intrinsics_path: None,
            image_width: 320,
            image_height: 240,
            trans_bound: DEFAULT_TRANS_BOUND,
            trials: 1000,
            witness_samples: 1000,
            noise: NoiseSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| PipelineError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.epsilons.is_empty() {
            return bad("epsilons must not be empty".into());
        }
        if self.n_calib == 0 || self.n_test == 0 {
            return bad("n_calib and n_test must be positive".into());
        }
        for &eps in &self.epsilons {
            if quantile_index(self.n_calib, eps).is_err() {
                return bad(format!(
                    "epsilon {eps}: floor((n_calib + 1) * epsilon) must lie in [1, {}]",
                    self.n_calib
                ));
            }
        }
        self.nonconformity
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.image_width < 16 || self.image_height < 16 {
            return bad("image must be at least 16x16 pixels".into());
        }
        if !(self.trans_bound > 0.0 && self.trans_bound.is_finite()) {
            return bad("trans_bound must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        self.noise.validate()
    }

    pub fn model(&self) -> Result<ObjectModel, PipelineError> {
        match &self.model_path {
            None => Ok(ObjectModel::synthetic_duck()),
            Some(p) => read_json(p),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, PipelineError> {
        let k: CameraIntrinsics = match &self.intrinsics_path {
            None => default_intrinsics(),
            Some(p) => read_json(p)?,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn uses_votes(&self) -> bool {
        self.nonconformity.kind == NonconformityKind::Pvnet
    }
}

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 250.0,
        fy: 250.0,
        cx: 160.0,
        cy: 120.0,
        skew: 0.0,
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"n_calib": 50, "epsilons": [0.2]}"#).unwrap();
        assert_eq!(c.n_calib, 50);
        assert_eq!(c.n_test, 1000);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_epsilon_and_unknown_fields() {
        let c = ExperimentConfig {
            n_calib: 5,
            epsilons: vec![0.1],
            ..Default::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilon 0.1"), "{msg}");
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"n_calibration": 5}"#).is_err());
    }

    #[test]
    fn rejects_bad_noise() {
        let mut c = ExperimentConfig::default();
        c.noise.sigma_blob = 0.0;
        assert!(c.validate().is_err());
        c.noise = NoiseSpec {
            w_out: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
