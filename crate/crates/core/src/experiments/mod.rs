//! Configuration, scenario catalog, batch runner, offline replay and reports.

pub mod config;
pub mod report;
pub mod scenario;

use thiserror::Error;

use crate::ballistics::{throw_start_filter, BallisticsError, ObservationStream};
use crate::frames::pixel_to_robot;
use crate::gmm::{GaussianMixture, GmmError};
use crate::predictor::RegressionAccumulators;
use crate::selector::{refresh, CatchPlan, Method};
use crate::sim::SimError;

pub use config::{load_config, parse_config, Config, ConfigError};
pub use report::{emit_report, render_report, Format, Report};
pub use scenario::{run_scenario, run_scenario_with, Scenario};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Observation(#[from] BallisticsError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One planning step of an offline replay.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReplayStep {
    pub stamp: f64,
    pub observations: usize,
    pub plan: Option<CatchPlan>,
}

/// Re-runs throw-start filtering, fitting and selection over a recorded observation log.
pub fn replay(
    stream: &ObservationStream,
    cfg: &Config,
    mixture: &GaussianMixture,
    method: Method,
) -> Result<Vec<ReplayStep>, ExperimentError> {
    let flight = throw_start_filter(stream, &cfg.camera, cfg.perception.delta_min)?;
    let ctx = cfg.episode_setup(mixture.clone()).selector;
    let mut acc = RegressionAccumulators::new();
    let mut steps = Vec::new();
    for det in &flight.detections {
        let Ok(pt) = pixel_to_robot(det, &cfg.camera) else { continue };
        acc.ingest(&pt);
        let plan = if acc.n >= cfg.perception.min_observations {
            acc.solve(cfg.perception.lambda, cfg.perception.g)
                .ok()
                .and_then(|fit| refresh(method, &fit, &ctx, fit.local_time(det.stamp)).ok())
        } else {
            None
        };
        steps.push(ReplayStep { stamp: det.stamp, observations: acc.n, plan });
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballistics::{generate_observations, NoiseModel, ThrowSpec};
    use nalgebra::Vector3;

    #[test]
    fn replay_converges_on_a_clean_log() {
        let cfg = Config::default();
        let x_c = cfg.foot_center();
        let throw = ThrowSpec::new(Vector3::new(2.25, 0.0, 0.0), Vector3::new(-3.5, 0.0, 2.7), 0.0);
        let stream = generate_observations(&throw, &cfg.camera, &NoiseModel::noiseless(), 30.0, 4).unwrap();
        let mut buf = Vec::new();
        stream.write_records(&mut buf).unwrap();
        let parsed = ObservationStream::read_records(buf.as_slice(), 30.0).unwrap();
        let mix = config::isotropic_mixture(x_c, 0.1);
        let steps = replay(&parsed, &cfg, &mix, Method::Plane).unwrap();
        let last = steps.last().and_then(|s| s.plan).unwrap();
        let t_true = (0.25 - 2.25) / -3.5;
        assert!((last.t_origin + last.t_catch - t_true).abs() < 1e-6);
        assert!(steps.iter().take(2).all(|s| s.plan.is_none()));
    }
}
