//! TOML experiment configuration.
//!
//! Every section and key is optional; omitted values take the defaults below. Unknown keys
//! are rejected so typos surface as errors instead of silently using a default.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::NoiseModel;
use crate::frames::CameraIntrinsics;
use crate::gmm::{select_k, DemoDataset, EmSettings, GaussianMixture, GmmError};
use crate::leg::{CartesianGains, LegGeometry, TargetingParams};
use crate::selector::SelectorContext;
use crate::sim::{EpisodeSetup, PerceptionParams, SimConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

/// Observation noise; each episode gets its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSettings {
    pub sigma_px: f64,
    pub sigma_depth: f64,
    pub drop_prob: f64,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self { sigma_px: n.sigma_px, sigma_depth: n.sigma_depth, drop_prob: n.drop_prob }
    }
}

impl NoiseSettings {
    pub fn model(&self, seed: u64) -> NoiseModel {
        NoiseModel { sigma_px: self.sigma_px, sigma_depth: self.sigma_depth, drop_prob: self.drop_prob, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorSettings {
    /// Catch plane position for the plane method, meters.
    pub x_offset: f64,
    /// How far ahead MinDist and GMM search the trajectory, seconds.
    pub t_horizon: f64,
}

impl Default for SelectorSettings {
    fn default() -> Self {
        Self { x_offset: 0.25, t_horizon: 3.0 }
    }
}

/// Where the catch-space mixture comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSettings {
    /// Pre-fitted mixture (JSON, as written by `fit-gmm`). Takes precedence over demonstrations.
    pub mixture_file: Option<PathBuf>,
    /// Recorded demonstration catch positions, one `x y z` per line.
    pub demo_file: Option<PathBuf>,
    /// Synthetic demonstrations, used when neither file is given.
    pub demos: usize,
    /// Mean of the synthetic demonstrations relative to the nominal foot center.
    pub demo_offset: Vector3<f64>,
    pub demo_std: Vector3<f64>,
    pub demo_seed: u64,
    pub k_max: usize,
    pub em: EmSettings,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            mixture_file: None,
            demo_file: None,
            demos: 100,
            demo_offset: Vector3::new(0.0, 0.0, 0.05),
            demo_std: Vector3::new(0.05, 0.07, 0.06),
            demo_seed: 7,
            k_max: 4,
            em: EmSettings::default(),
        }
    }
}

/// Throw sampler. Throws start `distance` in front of the robot and fly at a horizontal speed
/// drawn from `[speed_min, speed_max]` towards an aim point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThrowSettings {
    pub distance: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Release height in the robot frame and the half-width of its uniform spread.
    pub release_height: f64,
    pub release_height_spread: f64,
    pub release_lateral_spread: f64,
    /// Standard deviation of centered aim points about the nominal foot center.
    pub aim_sigma: Vector3<f64>,
    /// Low throws aim this far below the shoulders (uniform in the range), meters.
    pub low_depth_min: f64,
    pub low_depth_max: f64,
    pub low_lateral_sigma: f64,
    /// Release time; the camera starts a few frames earlier.
    pub release_time: f64,
}

impl Default for ThrowSettings {
    fn default() -> Self {
        Self {
            distance: 2.0,
            speed_min: 2.5,
            speed_max: 4.5,
            release_height: 0.0,
            release_height_spread: 0.1,
            release_lateral_spread: 0.1,
            aim_sigma: Vector3::new(0.0, 0.05, 0.06),
            low_depth_min: 0.15,
            low_depth_max: 0.45,
            low_lateral_sigma: 0.05,
            release_time: 0.5,
        }
    }
}

impl ThrowSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.distance > 0.0) {
            return bad("throws.distance must be positive");
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return bad("throws.speed_min must be positive and at most speed_max");
        }
        if !(self.release_height_spread >= 0.0 && self.release_lateral_spread >= 0.0 && self.low_lateral_sigma >= 0.0) {
            return bad("throw spreads must be non-negative");
        }
        if !self.aim_sigma.iter().all(|s| *s >= 0.0) {
            return bad("throws.aim_sigma must be non-negative");
        }
        if !(self.low_depth_min >= 0.0 && self.low_depth_min <= self.low_depth_max) {
            return bad("throws.low_depth_min must be non-negative and at most low_depth_max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub camera: CameraIntrinsics,
    pub noise: NoiseSettings,
    pub perception: PerceptionParams,
    pub selector: SelectorSettings,
    pub gmm: GmmSettings,
    pub leg: LegGeometry,
    pub gains: CartesianGains,
    pub targeting: TargetingParams,
    pub sim: SimConfig,
    pub throws: ThrowSettings,
    /// Directory that relative file paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Parses and validates configuration text. `origin` names the source in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<Config, ConfigError> {
    let cfg: Config = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse { path: origin.to_string(), line, column, msg: e.message().to_string() }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    let mut cfg = parse_config(&text, &path.display().to_string())?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.camera.validate().map_err(|e| invalid(&e))?;
        self.noise.model(0).validate().map_err(|e| invalid(&e))?;
        self.leg.validate().map_err(|e| invalid(&e))?;
        self.gains.validate().map_err(|e| invalid(&e))?;
        self.targeting.validate().map_err(|e| invalid(&e))?;
        self.sim.validate().map_err(|e| invalid(&e))?;
        self.throws.validate()?;
        if !(self.selector.t_horizon > 0.0 && self.selector.x_offset.is_finite()) {
            return Err(ConfigError::Invalid("selector.t_horizon must be positive".into()));
        }
        if self.gmm.k_max == 0 {
            return Err(ConfigError::Invalid("gmm.k_max must be at least 1".into()));
        }
        if !self.gmm.demo_std.iter().all(|s| *s > 0.0) {
            return Err(ConfigError::Invalid("gmm.demo_std must be positive".into()));
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Nominal foot center, the MinDist target.
    pub fn foot_center(&self) -> Vector3<f64> {
        self.leg.foot_center()
    }

    /// Demonstration catch positions: the demo file if configured, else a synthetic set.
    pub fn demos(&self) -> Result<DemoDataset, ConfigError> {
        match &self.gmm.demo_file {
            Some(p) => {
                let path = self.resolve(p);
                let f = fs::File::open(&path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
                Ok(DemoDataset::read_records(BufReader::new(f), &path.display().to_string())?)
            }
            None => Ok(DemoDataset::synthesize(
                self.foot_center() + self.gmm.demo_offset,
                self.gmm.demo_std,
                self.gmm.demos,
                self.gmm.demo_seed,
            )),
        }
    }

    /// The catch-space mixture, loaded or fitted with BIC model selection.
    pub fn mixture(&self) -> Result<GaussianMixture, ConfigError> {
        if let Some(p) = &self.gmm.mixture_file {
            let path = self.resolve(p);
            let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            return serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                line: e.line(),
                column: e.column(),
                msg: e.to_string(),
            });
        }
        let demos = self.demos()?;
        Ok(select_k(&demos, 1..=self.gmm.k_max, &self.gmm.em)?.fit.mixture)
    }

    pub fn episode_setup(&self, mixture: GaussianMixture) -> EpisodeSetup {
        EpisodeSetup {
            camera: self.camera,
            noise: self.noise.model(0),
            perception: self.perception,
            selector: SelectorContext {
                x_offset: self.selector.x_offset,
                x_c: self.foot_center(),
                mixture,
                t_horizon: self.selector.t_horizon,
            },
            geometry: self.leg.clone(),
            gains: self.gains,
            targeting: self.targeting,
            sim: self.sim.clone(),
        }
    }
}

/// Isotropic single-component mixture at the foot center, for runs that skip demonstrations.
pub fn isotropic_mixture(center: Vector3<f64>, std: f64) -> GaussianMixture {
    GaussianMixture::single(center, Matrix3::identity() * std * std).expect("positive variance")
}
