//! Closed-loop catching episodes.
//!
//! One episode flies a [`ThrowSpec`] past the robot while the pipeline runs on synthetic
//! camera frames: back-projection, throw-start filtering, trajectory fitting and catch-point
//! selection on each frame, and Cartesian PD control of both front legs every control tick.
//! Joints are decoupled second-order systems; there is no contact model, so success is a
//! geometric test at the moment the legs finish closing.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{generate_observations, BallisticsError, NoiseModel, ThrowSpec, ThrowStartDetector, STANDARD_GRAVITY};
use crate::frames::{pixel_to_robot, CameraIntrinsics, PixelDetection};
use crate::leg::{
    cartesian_pd_torque, forward_kinematics, foot_targets_from_plan, CartesianGains, ClosingTrigger, FootTarget,
    JointState, LegError, LegGeometry, Phase, Side, TargetingParams, Workspace,
};
use crate::predictor::RegressionAccumulators;
use crate::selector::{refresh, CatchPlan, Method, SelectorContext};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("episode diverged at t = {t:.4} s (joint speed {qd:.1} rad/s)")]
    Diverged { t: f64, qd: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Observation(#[from] BallisticsError),
    #[error(transparent)]
    Leg(#[from] LegError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub control_dt: f64,
    pub perception_fps: f64,
    /// Delay between a frame's stamp and its detection reaching the planner, seconds.
    pub latency: f64,
    pub joint_inertia: [f64; 3],
    pub joint_damping: f64,
    pub capture_radius: f64,
    pub object_halfwidth: f64,
    pub max_episode_time: f64,
    /// Time simulated after the legs finish closing.
    pub settle_time: f64,
    /// Keep every n-th control tick in the trace.
    pub trace_decimation: usize,
    pub divergence_speed: f64,
    pub method: Method,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 1e-3,
            perception_fps: 30.0,
            latency: 1e-3,
            joint_inertia: [0.03; 3],
            joint_damping: 0.02,
            capture_radius: 0.07,
            object_halfwidth: 0.05,
            max_episode_time: 3.0,
            settle_time: 0.1,
            trace_decimation: 10,
            divergence_speed: 1e3,
            method: Method::Gmm,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return bad(format!("control_dt must be positive, got {}", self.control_dt));
        }
        if !(self.perception_fps > 0.0 && self.perception_fps.is_finite()) {
            return bad(format!("perception_fps must be positive, got {}", self.perception_fps));
        }
        if self.perception_fps * self.control_dt > 1.0 {
            return bad("perception period is shorter than the control period".into());
        }
        if !(self.latency >= 0.0) {
            return bad(format!("latency must be non-negative, got {}", self.latency));
        }
        if !self.joint_inertia.iter().all(|i| *i > 0.0) || !(self.joint_damping >= 0.0) {
            return bad("joint inertia must be positive and damping non-negative".into());
        }
        if !(self.capture_radius > 0.0 && self.object_halfwidth >= 0.0) {
            return bad("capture_radius must be positive and object_halfwidth non-negative".into());
        }
        if !(self.max_episode_time > 0.0 && self.settle_time >= 0.0) {
            return bad("episode times must be positive".into());
        }
        if self.trace_decimation == 0 {
            return bad("trace_decimation must be at least 1".into());
        }
        Ok(())
    }

    /// Control ticks per camera frame; the camera period is rounded to a whole number of ticks.
    pub fn ticks_per_frame(&self) -> u64 {
        (1.0 / (self.perception_fps * self.control_dt)).round().max(1.0) as u64
    }

    pub fn effective_fps(&self) -> f64 {
        1.0 / (self.ticks_per_frame() as f64 * self.control_dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionParams {
    /// Frames of the object held still before release.
    pub pre_release_frames: usize,
    /// Per-axis displacement between frames that marks the throw start, meters.
    pub delta_min: f64,
    pub lambda: f64,
    pub g: f64,
    /// Observations needed before the first fit.
    pub min_observations: usize,
}

impl Default for PerceptionParams {
    fn default() -> Self {
        Self { pre_release_frames: 5, delta_min: 0.05, lambda: 1.0, g: STANDARD_GRAVITY, min_observations: 3 }
    }
}

/// Everything an episode needs apart from the throw and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSetup {
    pub camera: CameraIntrinsics,
    pub noise: NoiseModel,
    pub perception: PerceptionParams,
    pub selector: SelectorContext,
    pub geometry: LegGeometry,
    pub gains: CartesianGains,
    pub targeting: TargetingParams,
    pub sim: SimConfig,
}

impl EpisodeSetup {
    pub fn validate(&self) -> Result<(), SimError> {
        self.camera.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.noise.validate()?;
        self.geometry.validate()?;
        self.gains.validate()?;
        self.targeting.validate()?;
        self.sim.validate()?;
        if self.perception.min_observations < 3 {
            return Err(SimError::InvalidConfig("min_observations must be at least 3".into()));
        }
        if !(self.perception.delta_min > 0.0 && self.perception.lambda >= 0.0) {
            return Err(SimError::InvalidConfig("delta_min must be positive and lambda non-negative".into()));
        }
        Ok(())
    }

    pub fn workspaces(&self) -> [Workspace; 2] {
        Side::BOTH.map(|s| Workspace::from_geometry(&self.geometry, s, self.targeting.workspace_shrink))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub legs: [JointState; 2],
    pub tau: [Vector3<f64>; 2],
    /// Feet in the robot frame.
    pub feet: [Vector3<f64>; 2],
    pub object: Vector3<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub t: f64,
    pub object: Vector3<f64>,
    pub feet: [Vector3<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub caught: bool,
    /// Object to feet-midpoint distance when closing completed; `None` if it never did.
    pub catch_error: Option<f64>,
    pub mean_power: f64,
    pub completion: Option<Completion>,
    /// The plan in force when closing completed, or the last one made.
    pub final_plan: Option<CatchPlan>,
    /// Whether the final plan's catch point lies below the reachable foot height.
    pub below_floor: bool,
    pub plan_history: Vec<CatchPlan>,
    pub trace: Vec<TraceSample>,
    pub effective_fps: f64,
    pub ticks: u64,
}

/// Mean over samples of the summed joint mechanical power magnitude of both legs.
pub fn mean_total_power(trace: &[TraceSample]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    trace.iter().map(sample_power).sum::<f64>() / trace.len() as f64
}

fn sample_power(s: &TraceSample) -> f64 {
    (0..2).map(|l| s.tau[l].component_mul(&s.legs[l].qd).abs().sum()).sum()
}

/// A running episode, advanced one control tick at a time by [`Episode::step`].
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    setup: &'a EpisodeSetup,
    pub throw: ThrowSpec,
    workspaces: [Workspace; 2],
    detections: Vec<PixelDetection>,
    next_detection: usize,
    detector: ThrowStartDetector,
    acc: RegressionAccumulators,
    plan: Option<CatchPlan>,
    plans: Vec<CatchPlan>,
    trigger: ClosingTrigger,
    pub legs: [JointState; 2],
    tick: u64,
    t_start: f64,
    power_sum: f64,
    completion: Option<Completion>,
    trace: Vec<TraceSample>,
}

impl<'a> Episode<'a> {
    pub fn new(throw: ThrowSpec, setup: &'a EpisodeSetup, seed: u64) -> Result<Self, SimError> {
        setup.validate()?;
        let fps = setup.sim.effective_fps();
        let noise = NoiseModel { seed, ..setup.noise };
        let stream = generate_observations(&throw, &setup.camera, &noise, fps, setup.perception.pre_release_frames)?;
        let t_start = throw.t0 - setup.perception.pre_release_frames as f64 / fps;
        Ok(Self {
            setup,
            throw,
            workspaces: setup.workspaces(),
            detections: stream.detections,
            next_detection: 0,
            detector: ThrowStartDetector::new(setup.perception.delta_min)?,
            acc: RegressionAccumulators::new(),
            plan: None,
            plans: Vec::new(),
            trigger: ClosingTrigger::new(setup.targeting.t_thresh),
            legs: Side::BOTH.map(|s| JointState::at_rest(setup.geometry.nominal(s))),
            tick: 0,
            t_start,
            power_sum: 0.0,
            completion: None,
            trace: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t_start + self.tick as f64 * self.setup.sim.control_dt
    }

    pub fn plan(&self) -> Option<&CatchPlan> {
        self.plan.as_ref()
    }

    pub fn completion(&self) -> Option<&Completion> {
        self.completion.as_ref()
    }

    pub fn feet(&self) -> [Vector3<f64>; 2] {
        let g = &self.setup.geometry;
        Side::BOTH.map(|s| forward_kinematics(g, s, &self.legs[s.index()].q) + g.shoulder(s))
    }

    fn perceive(&mut self, t: f64) {
        let p = &self.setup.perception;
        while let Some(det) = self.detections.get(self.next_detection) {
            if det.stamp + self.setup.sim.latency > t + 1e-9 {
                break;
            }
            self.next_detection += 1;
            let Ok(pt) = pixel_to_robot(det, &self.setup.camera) else { continue };
            if !self.detector.accept(pt.position()) {
                continue;
            }
            self.acc.ingest(&pt);
            if self.acc.n < p.min_observations {
                continue;
            }
            let Ok(fit) = self.acc.solve(p.lambda, p.g) else { continue };
            if let Ok(plan) = refresh(self.setup.sim.method, &fit, &self.setup.selector, fit.local_time(t)) {
                self.plan = Some(plan);
                self.plans.push(plan);
            }
        }
    }

    fn targets(&mut self, t: f64) -> [FootTarget; 2] {
        let g = &self.setup.geometry;
        match self.plan {
            Some(plan) => {
                let phase = self.trigger.update(plan.remaining_at(t));
                foot_targets_from_plan(&plan, phase, &self.setup.targeting, g, &self.workspaces)
            }
            None => Side::BOTH.map(|s| FootTarget { p_d: forward_kinematics(g, s, &g.nominal(s)), phase: Phase::Open }),
        }
    }

    fn captured(&self, object: &Vector3<f64>, feet: &[Vector3<f64>; 2]) -> bool {
        let sim = &self.setup.sim;
        let mid = (feet[0] + feet[1]) / 2.0;
        let lateral = 2.0 * self.setup.targeting.y_closed + sim.object_halfwidth;
        (object - mid).norm() <= sim.capture_radius && feet.iter().all(|f| (f.y - object.y).abs() <= lateral)
    }

    /// Advances one control tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        let sim = &self.setup.sim;
        self.perceive(t);
        let targets = self.targets(t);
        let object = self.throw.position_at(t.max(self.throw.t0));
        let tau = Side::BOTH.map(|s| {
            let i = s.index();
            cartesian_pd_torque(&self.setup.geometry, s, &self.legs[i], &targets[i], &self.setup.gains)
        });
        let feet = self.feet();
        let sample = TraceSample { t, legs: self.legs, tau, feet, object, phase: self.trigger.phase() };
        self.power_sum += sample_power(&sample);
        if self.tick % sim.trace_decimation as u64 == 0 {
            self.trace.push(sample);
        }

        if self.completion.is_none() && self.trigger.phase() == Phase::Closed {
            if let Some(plan) = self.plan.filter(|p| t >= p.arrival_time()) {
                let _ = plan;
                self.completion = Some(Completion { t, object, feet });
            }
        }

        let dt = sim.control_dt;
        for s in Side::BOTH {
            let i = s.index();
            let leg = &mut self.legs[i];
            for j in 0..3 {
                let qdd = (tau[i][j] - sim.joint_damping * leg.qd[j]) / sim.joint_inertia[j];
                leg.qd[j] += dt * qdd;
                leg.q[j] += dt * leg.qd[j];
            }
            let (lo, hi) = self.setup.geometry.limits(s);
            leg.clamp(&lo, &hi);
            let fastest = leg.qd.amax();
            if !(fastest <= sim.divergence_speed) {
                return Err(SimError::Diverged { t, qd: fastest });
            }
        }
        self.tick += 1;
        Ok(())
    }

    pub fn finished(&self) -> bool {
        let t = self.time();
        let sim = &self.setup.sim;
        match &self.completion {
            Some(c) => t >= c.t + sim.settle_time - 1e-12,
            None => t - self.t_start >= sim.max_episode_time,
        }
    }

    pub fn into_result(self) -> EpisodeResult {
        let floor = Side::BOTH
            .iter()
            .map(|s| self.workspaces[s.index()].min.z + self.setup.geometry.shoulder(*s).z)
            .fold(f64::INFINITY, f64::min);
        let caught = self.completion.as_ref().is_some_and(|c| self.captured(&c.object, &c.feet));
        let catch_error = self.completion.as_ref().map(|c| (c.object - (c.feet[0] + c.feet[1]) / 2.0).norm());
        EpisodeResult {
            caught,
            catch_error,
            mean_power: if self.tick == 0 { 0.0 } else { self.power_sum / self.tick as f64 },
            completion: self.completion,
            final_plan: self.plan,
            below_floor: self.plan.is_some_and(|p| p.x_catch.z < floor),
            plan_history: self.plans,
            trace: self.trace,
            effective_fps: self.setup.sim.effective_fps(),
            ticks: self.tick,
        }
    }
}

/// Runs one throw to completion. Deterministic in `(throw, setup, seed)`.
pub fn run_episode(throw: &ThrowSpec, setup: &EpisodeSetup, seed: u64) -> Result<EpisodeResult, SimError> {
    let mut ep = Episode::new(*throw, setup, seed)?;
    while !ep.finished() {
        ep.step()?;
    }
    Ok(ep.into_result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianMixture;
    use nalgebra::Matrix3;

    fn setup(method: Method) -> EpisodeSetup {
        let geometry = LegGeometry::default();
        let x_c = geometry.foot_center();
        EpisodeSetup {
            camera: CameraIntrinsics::default(),
            noise: NoiseModel::default(),
            perception: PerceptionParams::default(),
            selector: SelectorContext {
                x_offset: 0.25,
                x_c,
                mixture: GaussianMixture::single(x_c, Matrix3::from_diagonal(&Vector3::new(0.01, 0.005, 0.0025))).unwrap(),
                t_horizon: 3.0,
            },
            geometry,
            gains: CartesianGains::default(),
            targeting: TargetingParams::default(),
            sim: SimConfig { method, ..SimConfig::default() },
        }
    }

    /// Throw from 2 m that passes through `aim` after flying `flight` seconds.
    fn throw_at(aim: Vector3<f64>, flight: f64) -> ThrowSpec {
        let p0 = Vector3::new(2.0, 0.0, 0.0);
        let v0 = Vector3::new((aim.x - p0.x) / flight, (aim.y - p0.y) / flight, (aim.z - p0.z + 0.5 * STANDARD_GRAVITY * flight * flight) / flight);
        ThrowSpec::new(p0, v0, 0.5)
    }

    #[test]
    fn zero_gains_leave_legs_still() {
        let mut s = setup(Method::Gmm);
        s.gains = CartesianGains::zero();
        let throw = throw_at(s.selector.x_c, 0.5);
        let mut ep = Episode::new(throw, &s, 1).unwrap();
        let before = ep.legs;
        for _ in 0..300 {
            ep.step().unwrap();
            assert_eq!(ep.legs, before);
        }
        for x in &ep.into_result().trace {
            assert_eq!(x.object, throw.position_at(x.t.max(throw.t0)));
        }
    }

    #[test]
    fn joint_damping_dissipates() {
        let mut s = setup(Method::Gmm);
        s.gains = CartesianGains { kd_joint: Vector3::repeat(1.0), ..CartesianGains::zero() };
        let mut ep = Episode::new(throw_at(s.selector.x_c, 0.5), &s, 2).unwrap();
        ep.legs[0].qd = Vector3::new(2.0, -3.0, 4.0);
        ep.legs[1].qd = Vector3::new(-1.0, 1.5, -2.5);
        let energy = |ep: &Episode| -> f64 {
            ep.legs.iter().map(|l| (0..3).map(|j| 0.5 * s.sim.joint_inertia[j] * l.qd[j] * l.qd[j]).sum::<f64>()).sum()
        };
        let mut last = energy(&ep);
        for _ in 0..500 {
            ep.step().unwrap();
            let e = energy(&ep);
            assert!(e <= last + 1e-15, "{e} > {last}");
            last = e;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn smaller_time_step_converges() {
        let foot_at = |dt: f64| {
            let mut s = setup(Method::Gmm);
            s.noise = NoiseModel::noiseless();
            s.sim.control_dt = dt;
            s.sim.perception_fps = 25.0;
            let mut ep = Episode::new(throw_at(s.selector.x_c + Vector3::new(0.0, 0.03, 0.02), 0.55), &s, 3).unwrap();
            while ep.time() < 1.0 - 1e-9 {
                ep.step().unwrap();
            }
            ep.feet()
        };
        let (a, b) = (foot_at(1e-3), foot_at(5e-4));
        for i in 0..2 {
            assert!((a[i] - b[i]).norm() < 1e-3, "{} vs {}", a[i], b[i]);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let s = setup(Method::MinDist);
        let throw = throw_at(s.selector.x_c + Vector3::new(0.02, -0.03, 0.05), 0.6);
        let a = run_episode(&throw, &s, 11).unwrap();
        let b = run_episode(&throw, &s, 11).unwrap();
        assert_eq!(a, b);
        let c = run_episode(&throw, &s, 12).unwrap();
        assert_ne!(a.plan_history, c.plan_history);
    }

    #[test]
    fn centered_noiseless_throw_is_caught() {
        let mut s = setup(Method::Gmm);
        s.noise = NoiseModel::noiseless();
        s.sim.capture_radius = 0.15;
        let r = run_episode(&throw_at(s.selector.x_c, 0.6), &s, 0).unwrap();
        assert!(r.caught, "error {:?}", r.catch_error);
        assert!(r.mean_power > 0.0);
        assert!(!r.plan_history.is_empty());
    }

    #[test]
    fn overhead_throw_is_missed() {
        let s = setup(Method::Gmm);
        let r = run_episode(&throw_at(s.selector.x_c + Vector3::new(0.0, 0.0, 2.0), 0.6), &s, 0).unwrap();
        assert!(!r.caught);
    }

    #[test]
    fn power_metric() {
        let still = JointState::at_rest(Vector3::zeros());
        let mut sample = TraceSample {
            t: 0.0,
            legs: [still; 2],
            tau: [Vector3::zeros(); 2],
            feet: [Vector3::zeros(); 2],
            object: Vector3::zeros(),
            phase: Phase::Open,
        };
        assert_eq!(mean_total_power(&[sample; 4]), 0.0);
        sample.tau[1] = Vector3::new(0.0, 1.0, 0.0);
        sample.legs[1].qd = Vector3::new(0.0, 2.0, 0.0);
        assert!((mean_total_power(&[sample; 3]) - 2.0).abs() < 1e-15);
        sample.tau[0] = Vector3::new(-1.5, 0.0, 0.0);
        sample.legs[0].qd = Vector3::new(2.0, 0.0, 0.0);
        assert!((mean_total_power(&[sample]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn decimated_power_tracks_full_rate() {
        // free decay under joint damping only: a smooth trace
        let mut s = setup(Method::Gmm);
        s.sim.trace_decimation = 1;
        s.gains = CartesianGains { kd_joint: Vector3::repeat(0.01), ..CartesianGains::zero() };
        let mut ep = Episode::new(throw_at(s.selector.x_c, 0.6), &s, 5).unwrap();
        ep.legs[0].qd = Vector3::new(0.5, -0.8, -0.6);
        ep.legs[1].qd = Vector3::new(-0.4, 0.7, -0.9);
        for _ in 0..400 {
            ep.step().unwrap();
        }
        let r = ep.into_result();
        let full = mean_total_power(&r.trace);
        assert!(full > 0.0);
        assert!((full - r.mean_power).abs() <= 1e-9 * full);
        for k in [2, 4, 5, 10] {
            let sub: Vec<_> = r.trace.iter().step_by(k).copied().collect();
            let p = mean_total_power(&sub);
            assert!((p - full).abs() <= 0.01 * full, "k={k}: {p} vs {full}");
        }
    }

    #[test]
    fn config_validation() {
        let mut s = setup(Method::Plane);
        s.sim.control_dt = 0.0;
        assert!(s.validate().is_err());
        let mut s = setup(Method::Plane);
        s.sim.perception_fps = -30.0;
        assert!(s.validate().is_err());
        let c = SimConfig::default();
        assert_eq!(c.ticks_per_frame(), 33);
        assert!((c.effective_fps() - 1000.0 / 33.0).abs() < 1e-9);
    }
}
