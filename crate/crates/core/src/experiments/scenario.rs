//! Scenario catalog and the paired Monte-Carlo runner.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use super::report::{EpisodeRow, Report};
use super::ExperimentError;
use crate::ballistics::ThrowSpec;
use crate::gmm::GaussianMixture;
use crate::selector::Method;
use crate::sim::run_episode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AimMode {
    /// Aim at the nominal foot center plus Gaussian aim noise.
    Centered,
    /// Aim below the shoulders.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n_throws: usize,
    pub methods: Vec<Method>,
    pub aim: AimMode,
    /// Run without observation noise or aim scatter.
    pub noiseless: bool,
    /// Replaces the configured capture radius when set.
    pub capture_radius: Option<f64>,
    pub seed: u64,
}

pub const BUILTIN_SCENARIOS: [&str; 3] = ["centered-50", "low-10", "smoke"];

impl Scenario {
    pub fn builtin(name: &str, seed: u64) -> Option<Scenario> {
        let base = Scenario {
            name: name.to_string(),
            n_throws: 50,
            methods: Method::ALL.to_vec(),
            aim: AimMode::Centered,
            noiseless: false,
            capture_radius: None,
            seed,
        };
        match name {
            "centered-50" => Some(base),
            "low-10" => Some(Scenario { n_throws: 10, aim: AimMode::Low, ..base }),
            "smoke" => Some(Scenario { n_throws: 1, noiseless: true, capture_radius: Some(0.15), ..base }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_throws == 0 {
            return Err(ExperimentError::InvalidScenario("n_throws must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::InvalidScenario("at least one method is required".into()));
        }
        if self.capture_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(ExperimentError::InvalidScenario("capture_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Per-throw observation seed, shared by every method.
pub fn episode_seed(scenario_seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = scenario_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A sampled throw together with the point it was aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledThrow {
    pub throw: ThrowSpec,
    pub aim: Vector3<f64>,
}

/// Draws the scenario's throw sequence. Depends only on the scenario and config, never on the method.
pub fn sample_throws(s: &Scenario, cfg: &Config) -> Vec<SampledThrow> {
    let t = &cfg.throws;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let x_c = cfg.foot_center();
    let shoulder_z = cfg.leg.shoulder_left.z.max(cfg.leg.shoulder_right.z);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    (0..s.n_throws)
        .map(|_| {
            let speed = rng.random_range(t.speed_min..=t.speed_max);
            let h = t.release_height + t.release_height_spread * rng.random_range(-1.0..=1.0);
            let lat = t.release_lateral_spread * rng.random_range(-1.0..=1.0);
            let noise = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng));
            let depth = rng.random_range(t.low_depth_min..=t.low_depth_max);
            let aim = match (s.aim, s.noiseless) {
                (AimMode::Centered, true) => x_c,
                (AimMode::Centered, false) => x_c + t.aim_sigma.component_mul(&noise),
                (AimMode::Low, noiseless) => {
                    let y = if noiseless { 0.0 } else { t.low_lateral_sigma * noise.y };
                    Vector3::new(cfg.selector.x_offset, x_c.y + y, shoulder_z - depth)
                }
            };
            let p0 = Vector3::new(x_c.x + t.distance, lat, h);
            let horizontal = ((aim.x - p0.x).powi(2) + (aim.y - p0.y).powi(2)).sqrt();
            let flight = horizontal / speed;
            let g = crate::ballistics::STANDARD_GRAVITY;
            let v0 = Vector3::new(
                (aim.x - p0.x) / flight,
                (aim.y - p0.y) / flight,
                (aim.z - p0.z) / flight + 0.5 * g * flight,
            );
            SampledThrow { throw: ThrowSpec::new(p0, v0, t.release_time), aim }
        })
        .collect()
}

/// Runs a scenario with the mixture built from the config.
pub fn run_scenario(s: &Scenario, cfg: &Config) -> Result<Report, ExperimentError> {
    let mixture = cfg.mixture()?;
    run_scenario_with(s, cfg, &mixture)
}

/// Runs every method on the same throw sequence and the same per-throw noise seeds.
pub fn run_scenario_with(s: &Scenario, cfg: &Config, mixture: &GaussianMixture) -> Result<Report, ExperimentError> {
    s.validate()?;
    let mut setup = cfg.episode_setup(mixture.clone());
    if s.noiseless {
        setup.noise = crate::ballistics::NoiseModel::noiseless();
    }
    if let Some(r) = s.capture_radius {
        setup.sim.capture_radius = r;
    }
    setup.validate()?;
    let throws = sample_throws(s, cfg);
    let jobs: Vec<(Method, usize)> = s.methods.iter().flat_map(|m| (0..s.n_throws).map(move |i| (*m, i))).collect();
    let rows: Vec<EpisodeRow> = jobs
        .par_iter()
        .map(|&(method, i)| {
            let mut local = setup.clone();
            local.sim.method = method;
            let seed = episode_seed(s.seed, i);
            let sampled = &throws[i];
            match run_episode(&sampled.throw, &local, seed) {
                Ok(r) => EpisodeRow::from_result(method, i, seed, sampled, &r),
                Err(_) => EpisodeRow::diverged(method, i, seed, sampled),
            }
        })
        .collect();
    Ok(Report::new(s, &setup, cfg, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog() {
        for name in BUILTIN_SCENARIOS {
            let s = Scenario::builtin(name, 1).unwrap();
            s.validate().unwrap();
        }
        assert_eq!(Scenario::builtin("low-10", 0).unwrap().n_throws, 10);
        assert!(Scenario::builtin("nope", 0).is_none());
        let mut s = Scenario::builtin("smoke", 0).unwrap();
        s.n_throws = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn throws_hit_their_aim_points() {
        let cfg = Config::default();
        for name in ["centered-50", "low-10"] {
            let s = Scenario::builtin(name, 42).unwrap();
            for st in sample_throws(&s, &cfg) {
                let th = st.throw;
                let t = th.t0 + (st.aim.x - th.p0.x) / th.v0.x;
                assert!((th.position_at(t) - st.aim).norm() < 1e-9);
                let vh = th.v0.xy().norm();
                assert!(vh >= cfg.throws.speed_min - 1e-12 && vh <= cfg.throws.speed_max + 1e-12);
                assert!((th.p0.x - cfg.foot_center().x - 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn low_throws_are_below_the_shoulders() {
        let cfg = Config::default();
        let s = Scenario::builtin("low-10", 3).unwrap();
        for st in sample_throws(&s, &cfg) {
            assert!(st.aim.z <= cfg.leg.shoulder_left.z - 0.15 + 1e-12);
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| episode_seed(5, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(episode_seed(5, 0), episode_seed(6, 0));
    }
}
