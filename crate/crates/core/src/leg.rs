//! Front-leg kinematics and control.
//!
//! Each front leg is an abduction joint followed by a planar hip/knee chain, mounted on a body
//! pitched nose-up by `body_pitch` (the robot stands on its rear legs while catching). Positions
//! returned by [`forward_kinematics`] are in the leg frame, whose origin is the shoulder
//! (`shoulder_left` / `shoulder_right` in the robot frame) with axes parallel to the robot's.

use nalgebra::{DVector, Matrix3, Rotation3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selector::CatchPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LegError {
    #[error("invalid leg geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("invalid reference: {0}")]
    InvalidReference(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// +1 for the left leg, -1 for the right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegGeometry {
    pub l_hip: f64,
    pub l_thigh: f64,
    pub l_calf: f64,
    pub shoulder_left: Vector3<f64>,
    pub shoulder_right: Vector3<f64>,
    /// Nose-up rotation of the body about the lateral axis, radians.
    pub body_pitch: f64,
    /// Lower joint limits (abduction, hip, knee) for the left leg; the right leg mirrors abduction.
    pub q_min: [f64; 3],
    pub q_max: [f64; 3],
    /// Stance the legs rest in before a throw, left-leg convention.
    pub nominal_q: [f64; 3],
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self {
            l_hip: 0.08,
            l_thigh: 0.213,
            l_calf: 0.213,
            shoulder_left: Vector3::new(0.0, 0.047, -0.05),
            shoulder_right: Vector3::new(0.0, -0.047, -0.05),
            body_pitch: 85f64.to_radians(),
            q_min: [-0.6, -1.8, 1.0],
            q_max: [0.6, -0.7, 2.0],
            nominal_q: [0.0, -1.14511, 1.87684],
        }
    }
}

impl LegGeometry {
    pub fn validate(&self) -> Result<(), LegError> {
        for (name, l) in [("l_hip", self.l_hip), ("l_thigh", self.l_thigh), ("l_calf", self.l_calf)] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(LegError::InvalidGeometry(format!("{name} must be positive, got {l}")));
            }
        }
        for j in 0..3 {
            if !(self.q_min[j] < self.q_max[j]) {
                return Err(LegError::InvalidGeometry(format!(
                    "joint {j}: min {} must be below max {}",
                    self.q_min[j], self.q_max[j]
                )));
            }
            if !(self.q_min[j]..=self.q_max[j]).contains(&self.nominal_q[j]) {
                return Err(LegError::InvalidGeometry(format!("nominal stance joint {j} outside limits")));
            }
        }
        if !(self.body_pitch.is_finite() && self.shoulder_left.iter().chain(self.shoulder_right.iter()).all(|v| v.is_finite())) {
            return Err(LegError::InvalidGeometry("shoulder position must be finite".into()));
        }
        Ok(())
    }

    /// Body-to-robot rotation.
    pub fn body_rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::y_axis(), -self.body_pitch)
    }

    pub fn shoulder(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::Left => self.shoulder_left,
            Side::Right => self.shoulder_right,
        }
    }

    pub fn limits(&self, side: Side) -> (Vector3<f64>, Vector3<f64>) {
        let lo = Vector3::from(self.q_min);
        let hi = Vector3::from(self.q_max);
        match side {
            Side::Left => (lo, hi),
            Side::Right => (Vector3::new(-hi.x, lo.y, lo.z), Vector3::new(-lo.x, hi.y, hi.z)),
        }
    }

    pub fn nominal(&self, side: Side) -> Vector3<f64> {
        let q = Vector3::from(self.nominal_q);
        Vector3::new(side.sign() * q.x, q.y, q.z)
    }

    /// Nominal foot center: midpoint of both feet at the nominal stance, robot frame.
    pub fn foot_center(&self) -> Vector3<f64> {
        let l = forward_kinematics(self, Side::Left, &self.nominal(Side::Left)) + self.shoulder_left;
        let r = forward_kinematics(self, Side::Right, &self.nominal(Side::Right)) + self.shoulder_right;
        (l + r) / 2.0
    }
}

pub fn forward_kinematics(geom: &LegGeometry, side: Side, q: &Vector3<f64>) -> Vector3<f64> {
    let (l1, l2) = (geom.l_thigh, geom.l_calf);
    let (s1, c1) = q.x.sin_cos();
    let (s2, c2) = q.y.sin_cos();
    let (s23, c23) = (q.y + q.z).sin_cos();
    let px = -l1 * s2 - l2 * s23;
    let pz = -l1 * c2 - l2 * c23;
    let py = side.sign() * geom.l_hip;
    geom.body_rotation() * Vector3::new(px, py * c1 - pz * s1, py * s1 + pz * c1)
}

pub fn jacobian(geom: &LegGeometry, side: Side, q: &Vector3<f64>) -> Matrix3<f64> {
    let (l1, l2) = (geom.l_thigh, geom.l_calf);
    let (s1, c1) = q.x.sin_cos();
    let (s2, c2) = q.y.sin_cos();
    let (s23, c23) = (q.y + q.z).sin_cos();
    let px = -l1 * s2 - l2 * s23;
    let pz = -l1 * c2 - l2 * c23;
    let py = side.sign() * geom.l_hip;
    // planar chain derivatives: d(px, pz)/dq2 = (pz, -px), d(px, pz)/dq3 = (-l2 c23, l2 s23)
    let (dx3, dz3) = (-l2 * c23, l2 * s23);
    let body = Matrix3::new(
        0.0, pz, dx3,
        -py * s1 - pz * c1, px * s1, -dz3 * s1,
        py * c1 - pz * s1, -px * c1, dz3 * c1,
    );
    geom.body_rotation() * body
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: Vector3<f64>,
    pub qd: Vector3<f64>,
}

impl JointState {
    pub fn at_rest(q: Vector3<f64>) -> Self {
        Self { q, qd: Vector3::zeros() }
    }

    /// Clamps positions into limits and zeroes velocity components pushing further out.
    pub fn clamp(&mut self, lo: &Vector3<f64>, hi: &Vector3<f64>) {
        for j in 0..3 {
            if self.q[j] < lo[j] {
                self.q[j] = lo[j];
                self.qd[j] = self.qd[j].max(0.0);
            } else if self.q[j] > hi[j] {
                self.q[j] = hi[j];
                self.qd[j] = self.qd[j].min(0.0);
            }
        }
    }
}

/// Diagonal gains of the Cartesian PD law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartesianGains {
    pub kp: Vector3<f64>,
    pub kd: Vector3<f64>,
    pub kd_joint: Vector3<f64>,
}

impl Default for CartesianGains {
    fn default() -> Self {
        Self { kp: Vector3::repeat(400.0), kd: Vector3::repeat(8.0), kd_joint: Vector3::repeat(1.0) }
    }
}

impl CartesianGains {
    pub fn zero() -> Self {
        Self { kp: Vector3::zeros(), kd: Vector3::zeros(), kd_joint: Vector3::zeros() }
    }

    pub fn validate(&self) -> Result<(), LegError> {
        if self.kp.iter().chain(self.kd.iter()).chain(self.kd_joint.iter()).all(|g| *g >= 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(LegError::InvalidGains("gains must be finite and non-negative".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootTarget {
    /// Desired foot position in the leg frame.
    pub p_d: Vector3<f64>,
    pub phase: Phase,
}

/// `tau = J^T [Kp e - Kd J qd] - Kd_joint qd` for a given Jacobian and position error.
pub fn cartesian_pd_law(j: &Matrix3<f64>, error: &Vector3<f64>, qd: &Vector3<f64>, gains: &CartesianGains) -> Vector3<f64> {
    let v = j * qd;
    let force = gains.kp.component_mul(error) - gains.kd.component_mul(&v);
    j.transpose() * force - gains.kd_joint.component_mul(qd)
}

pub fn cartesian_pd_torque(
    geom: &LegGeometry,
    side: Side,
    state: &JointState,
    target: &FootTarget,
    gains: &CartesianGains,
) -> Vector3<f64> {
    let p = forward_kinematics(geom, side, &state.q);
    let j = jacobian(geom, side, &state.q);
    cartesian_pd_law(&j, &(target.p_d - p), &state.qd, gains)
}

/// Axis-aligned foot workspace in a leg frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Workspace {
    /// Bounding box of foot positions over a joint-limit grid, shrunk about its center.
    pub fn from_geometry(geom: &LegGeometry, side: Side, shrink: f64) -> Self {
        const N: usize = 24;
        let (lo, hi) = geom.limits(side);
        let mut min = Vector3::repeat(f64::INFINITY);
        let mut max = Vector3::repeat(f64::NEG_INFINITY);
        let at = |j: usize, i: usize| lo[j] + (hi[j] - lo[j]) * i as f64 / N as f64;
        for a in 0..=N {
            for b in 0..=N {
                for c in 0..=N {
                    let p = forward_kinematics(geom, side, &Vector3::new(at(0, a), at(1, b), at(2, c)));
                    min = min.inf(&p);
                    max = max.sup(&p);
                }
            }
        }
        let center = (min + max) / 2.0;
        let half = (max - min) / 2.0 * (1.0 - shrink);
        Self { min: center - half, max: center + half }
    }

    pub fn clip(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p.sup(&self.min).inf(&self.max)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn shifted(&self, offset: &Vector3<f64>) -> Self {
        Self { min: self.min + offset, max: self.max + offset }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetingParams {
    pub y_opened: f64,
    pub y_closed: f64,
    pub t_thresh: f64,
    pub workspace_shrink: f64,
}

impl Default for TargetingParams {
    fn default() -> Self {
        Self { y_opened: 0.15, y_closed: 0.01, t_thresh: 0.15, workspace_shrink: 0.1 }
    }
}

impl TargetingParams {
    pub fn validate(&self) -> Result<(), LegError> {
        if !(self.y_opened >= 0.0 && self.y_closed >= 0.0 && self.t_thresh >= 0.0) {
            return Err(LegError::InvalidGeometry("foot offsets and t_thresh must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.workspace_shrink) {
            return Err(LegError::InvalidGeometry(format!("workspace_shrink must be in [0, 1), got {}", self.workspace_shrink)));
        }
        Ok(())
    }

    pub fn offset(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Open => self.y_opened,
            Phase::Closed => self.y_closed,
        }
    }
}

/// Left and right leg-frame targets placed either side of the catch point, clipped into each workspace.
pub fn foot_targets_from_plan(
    plan: &CatchPlan,
    phase: Phase,
    params: &TargetingParams,
    geom: &LegGeometry,
    workspaces: &[Workspace; 2],
) -> [FootTarget; 2] {
    let off = params.offset(phase);
    Side::BOTH.map(|side| {
        let robot = plan.x_catch + Vector3::new(0.0, side.sign() * off, 0.0);
        let leg = robot - geom.shoulder(side);
        FootTarget { p_d: workspaces[side.index()].clip(&leg), phase }
    })
}

/// Switches from open to closed once the remaining time drops below the threshold, then stays closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosingTrigger {
    pub t_thresh: f64,
    closed: bool,
}

impl ClosingTrigger {
    pub fn new(t_thresh: f64) -> Self {
        Self { t_thresh, closed: false }
    }

    pub fn update(&mut self, t_remain: f64) -> Phase {
        if t_remain < self.t_thresh {
            self.closed = true;
        }
        self.phase()
    }

    pub fn phase(&self) -> Phase {
        if self.closed {
            Phase::Closed
        } else {
            Phase::Open
        }
    }
}

/// Stateless form of the trigger for a single reading.
pub fn closing_trigger(t_remain: f64, t_thresh: f64) -> Phase {
    ClosingTrigger::new(t_thresh).update(t_remain)
}

/// `tau = Kp (q_d - q) + Kd (qd_d - qd) + tau_d`.
#[allow(clippy::too_many_arguments)]
pub fn joint_pd_tracking<const N: usize>(
    q_d: &SVector<f64, N>,
    qd_d: &SVector<f64, N>,
    tau_ff: &SVector<f64, N>,
    q: &SVector<f64, N>,
    qd: &SVector<f64, N>,
    kp: &SMatrix<f64, N, N>,
    kd: &SMatrix<f64, N, N>,
) -> SVector<f64, N> {
    kp * (q_d - q) + kd * (qd_d - qd) + tau_ff
}

/// Linearly resamples a uniformly spaced reference (`coarse_dt`) onto a finer grid (`fine_dt`).
///
/// Returns `(stamps, values)`. Every `coarse_dt / fine_dt`-th output reproduces an input knot exactly.
pub fn interpolate_reference(
    stamps: &[f64],
    values: &[DVector<f64>],
    coarse_dt: f64,
    fine_dt: f64,
) -> Result<(Vec<f64>, Vec<DVector<f64>>), LegError> {
    if stamps.len() < 2 || stamps.len() != values.len() {
        return Err(LegError::InvalidReference(format!(
            "need at least two samples with matching stamps, got {} stamps and {} values",
            stamps.len(),
            values.len()
        )));
    }
    if !(coarse_dt > 0.0 && fine_dt > 0.0) {
        return Err(LegError::InvalidReference("sample periods must be positive".into()));
    }
    let ratio = (coarse_dt / fine_dt).round();
    if ratio < 1.0 || (ratio * fine_dt - coarse_dt).abs() > 1e-9 * coarse_dt {
        return Err(LegError::InvalidReference(format!("{coarse_dt} is not a multiple of {fine_dt}")));
    }
    let dim = values[0].len();
    if values.iter().any(|v| v.len() != dim) {
        return Err(LegError::InvalidReference("samples have differing dimensions".into()));
    }
    for (k, w) in stamps.windows(2).enumerate() {
        if ((w[1] - w[0]) - coarse_dt).abs() > 1e-6 * coarse_dt {
            return Err(LegError::InvalidReference(format!(
                "spacing {} between samples {k} and {} is not {coarse_dt}",
                w[1] - w[0],
                k + 1
            )));
        }
    }
    let ratio = ratio as usize;
    let n_out = (stamps.len() - 1) * ratio + 1;
    let mut out_t = Vec::with_capacity(n_out);
    let mut out_v = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let (k, r) = (i / ratio, i % ratio);
        if r == 0 {
            out_t.push(stamps[k]);
            out_v.push(values[k].clone());
        } else {
            let f = r as f64 / ratio as f64;
            out_t.push(stamps[k] + f * (stamps[k + 1] - stamps[k]));
            out_v.push(&values[k] + (&values[k + 1] - &values[k]) * f);
        }
    }
    Ok((out_t, out_v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::Method;
    use proptest::prelude::*;

    fn geom() -> LegGeometry {
        LegGeometry::default()
    }

    fn level() -> LegGeometry {
        LegGeometry { body_pitch: 0.0, ..geom() }
    }

    fn fd_jacobian(g: &LegGeometry, side: Side, q: &Vector3<f64>, h: f64) -> Matrix3<f64> {
        let mut j = Matrix3::zeros();
        for c in 0..3 {
            let mut qp = *q;
            let mut qm = *q;
            qp[c] += h;
            qm[c] -= h;
            j.set_column(c, &((forward_kinematics(g, side, &qp) - forward_kinematics(g, side, &qm)) / (2.0 * h)));
        }
        j
    }

    fn plan_at(x: Vector3<f64>) -> CatchPlan {
        CatchPlan { x_catch: x, t_catch: 0.5, t_remain: 0.3, method: Method::Gmm, t_origin: 0.0 }
    }

    #[test]
    fn zero_configuration() {
        let g = level();
        let p = forward_kinematics(&g, Side::Left, &Vector3::zeros());
        assert!((p - Vector3::new(0.0, 0.08, -0.426)).norm() < 1e-15);
        let p = forward_kinematics(&g, Side::Right, &Vector3::zeros());
        assert!((p - Vector3::new(0.0, -0.08, -0.426)).norm() < 1e-15);
    }

    #[test]
    fn folded_knee_height() {
        let g = LegGeometry { l_calf: 0.15, ..level() };
        let p = forward_kinematics(&g, Side::Left, &Vector3::new(0.0, 0.0, std::f64::consts::PI));
        assert!((p.z + (0.213 - 0.15)).abs() < 1e-12);
        assert!(p.x.abs() < 1e-12);
    }

    #[test]
    fn jacobian_structure() {
        let g = level();
        // abduction column is the rotation tangent (0, -z, y)
        let q = Vector3::new(0.2, -1.8, 1.5);
        let p = forward_kinematics(&g, Side::Left, &q);
        let j = jacobian(&g, Side::Left, &q);
        assert!((j.column(0) - Vector3::new(0.0, -p.z, p.y)).norm() < 1e-15);
        let g = geom();
        let axis = g.body_rotation() * Vector3::x();
        let p = forward_kinematics(&g, Side::Right, &Vector3::zeros());
        let j = jacobian(&g, Side::Right, &Vector3::zeros());
        assert!((j.column(0) - axis.cross(&p)).norm() < 1e-15);
        // knee singularity
        let dets: Vec<f64> = [0.3, 0.1, 0.01, 0.0]
            .iter()
            .map(|q3| jacobian(&g, Side::Left, &Vector3::new(0.1, -1.5, *q3)).determinant().abs())
            .collect();
        assert!(dets.windows(2).all(|w| w[1] < w[0]));
        assert!(dets[3] < 1e-15);
    }

    #[test]
    fn pd_law_values() {
        let gains = CartesianGains::default();
        let tau = cartesian_pd_law(&Matrix3::identity(), &Vector3::new(0.01, 0.0, 0.0), &Vector3::zeros(), &gains);
        assert!((tau - Vector3::new(4.0, 0.0, 0.0)).norm() < 1e-12);

        let g = geom();
        let state = JointState { q: Vector3::new(0.1, -1.9, 1.6), qd: Vector3::zeros() };
        let p = forward_kinematics(&g, Side::Left, &state.q);
        let tau = cartesian_pd_torque(&g, Side::Left, &state, &FootTarget { p_d: p, phase: Phase::Open }, &gains);
        assert!(tau.norm() < 1e-12);

        let moving = JointState { qd: Vector3::new(0.5, -1.0, 2.0), ..state };
        let target = FootTarget { p_d: p + Vector3::new(0.03, 0.0, -0.02), phase: Phase::Open };
        let tau = cartesian_pd_torque(&g, Side::Left, &moving, &target, &CartesianGains::zero());
        assert_eq!(tau, Vector3::zeros());
        let damp = CartesianGains { kd_joint: Vector3::new(1.0, 2.0, 3.0), ..CartesianGains::zero() };
        let tau = cartesian_pd_torque(&g, Side::Left, &moving, &target, &damp);
        assert!((tau - Vector3::new(-0.5, 2.0, -6.0)).norm() < 1e-15);
    }

    #[test]
    fn targets_around_the_plan() {
        let g = geom();
        let params = TargetingParams::default();
        let ws = Side::BOTH.map(|s| Workspace::from_geometry(&g, s, params.workspace_shrink));
        let plan = plan_at(Vector3::new(0.25, 0.0, -0.05));
        let [l, r] = foot_targets_from_plan(&plan, Phase::Open, &params, &g, &ws);
        assert!(((l.p_d + g.shoulder_left).y - 0.15).abs() < 1e-12);
        assert!(((r.p_d + g.shoulder_right).y + 0.15).abs() < 1e-12);
        assert!(((l.p_d + g.shoulder_left) - Vector3::new(0.25, 0.15, -0.05)).norm() < 1e-12);
        let [l, r] = foot_targets_from_plan(&plan, Phase::Closed, &params, &g, &ws);
        assert!(((l.p_d + g.shoulder_left).y - 0.01).abs() < 1e-12);
        assert!(((r.p_d + g.shoulder_right).y + 0.01).abs() < 1e-12);
        assert_eq!(l.phase, Phase::Closed);

        let low = plan_at(Vector3::new(0.25, 0.0, -2.0));
        for (t, w) in foot_targets_from_plan(&low, Phase::Open, &params, &g, &ws).iter().zip(&ws) {
            assert_eq!(t.p_d.z, w.min.z);
        }
    }

    #[test]
    fn trigger_latches() {
        assert_eq!(closing_trigger(0.14, 0.15), Phase::Closed);
        assert_eq!(closing_trigger(0.16, 0.15), Phase::Open);
        let mut trig = ClosingTrigger::new(0.15);
        let seq: Vec<_> = [0.2, 0.14, 0.2].iter().map(|t| trig.update(*t)).collect();
        assert_eq!(seq, vec![Phase::Open, Phase::Closed, Phase::Closed]);
    }

    #[test]
    fn joint_tracking_values() {
        let z = SVector::<f64, 3>::zeros();
        let kp = SMatrix::<f64, 3, 3>::identity() * 50.0;
        let kd = SMatrix::<f64, 3, 3>::identity() * 2.0;
        let q_d = SVector::<f64, 3>::new(0.3, -1.0, 1.2);
        let qd_d = SVector::<f64, 3>::new(0.1, 0.2, 0.3);
        assert_eq!(joint_pd_tracking(&q_d, &qd_d, &z, &q_d, &qd_d, &kp, &kd), z);
        let q = q_d - SVector::<f64, 3>::new(0.0, 0.1, 0.0);
        let tau = joint_pd_tracking(&q_d, &qd_d, &z, &q, &qd_d, &kp, &kd);
        assert!((tau - SVector::<f64, 3>::new(0.0, 5.0, 0.0)).norm() < 1e-12);
        let ff = SVector::<f64, 3>::new(1.0, -2.0, 0.5);
        let zero = SMatrix::<f64, 3, 3>::zeros();
        assert_eq!(joint_pd_tracking(&q_d, &qd_d, &ff, &q, &z, &zero, &zero), ff);
    }

    #[test]
    fn reference_interpolation() {
        let v = |x: f64| DVector::from_vec(vec![x]);
        let (t, out) = interpolate_reference(&[0.0, 0.01], &[v(0.0), v(1.0)], 0.01, 0.001).unwrap();
        assert_eq!(out.len(), 11);
        assert!((out[3][0] - 0.3).abs() < 1e-12);
        assert!((t[3] - 0.003).abs() < 1e-15);

        let stamps: Vec<f64> = (0..6).map(|k| 0.5 + 0.01 * k as f64).collect();
        let vals: Vec<_> = (0..6).map(|k| DVector::from_vec(vec![(k as f64).sin(), k as f64 * 0.7])).collect();
        let (_, out) = interpolate_reference(&stamps, &vals, 0.01, 0.001).unwrap();
        for (k, val) in vals.iter().enumerate() {
            assert_eq!(&out[10 * k], val);
        }
        let flat = vec![v(2.5); 4];
        let (_, out) = interpolate_reference(&[0.0, 0.01, 0.02, 0.03], &flat, 0.01, 0.001).unwrap();
        assert!(out.iter().all(|x| x[0] == 2.5));

        assert!(matches!(
            interpolate_reference(&[0.0, 0.01, 0.025], &[v(0.0), v(1.0), v(2.0)], 0.01, 0.001),
            Err(LegError::InvalidReference(_))
        ));
        assert!(interpolate_reference(&[0.0], &[v(0.0)], 0.01, 0.001).is_err());
    }

    #[test]
    fn defaults_are_valid_and_centered() {
        let g = geom();
        g.validate().unwrap();
        let c = g.foot_center();
        assert!(c.y.abs() < 1e-12);
        assert!((c - Vector3::new(0.25, 0.0, -0.02)).norm() < 1e-4, "{c}");
        let ws = Workspace::from_geometry(&g, Side::Left, 0.1);
        assert!(ws.contains(&(forward_kinematics(&g, Side::Left, &g.nominal(Side::Left)))));
        let bad = LegGeometry { l_thigh: 0.0, ..geom() };
        assert!(bad.validate().is_err());
        let bad = LegGeometry { q_min: [0.7, -1.8, 1.0], ..geom() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn workspaces_mirror() {
        let g = geom();
        let l = Workspace::from_geometry(&g, Side::Left, 0.1);
        let r = Workspace::from_geometry(&g, Side::Right, 0.1);
        assert!((l.min.y + r.max.y).abs() < 1e-12 && (l.max.y + r.min.y).abs() < 1e-12);
        assert!((l.min.z - r.min.z).abs() < 1e-12);
    }

    fn joint_in_limits(side: Side) -> impl Strategy<Value = Vector3<f64>> {
        let (lo, hi) = geom().limits(side);
        (lo.x..hi.x, lo.y..hi.y, lo.z..hi.z).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(q in joint_in_limits(Side::Left), right in any::<bool>()) {
            let g = geom();
            let side = if right { Side::Right } else { Side::Left };
            let q = Vector3::new(side.sign() * q.x, q.y, q.z);
            let j = jacobian(&g, side, &q);
            prop_assume!(j.determinant().abs() > 1e-4);
            let fd = fd_jacobian(&g, side, &q, 1e-6);
            prop_assert!((j - fd).abs().max() <= 1e-6);
        }

        #[test]
        fn fk_is_lipschitz(q in prop::array::uniform3(-3.0f64..3.0), d in prop::array::uniform3(-0.1f64..0.1)) {
            let g = geom();
            let q = Vector3::from(q);
            let d = Vector3::from(d);
            let step = (forward_kinematics(&g, Side::Left, &(q + d)) - forward_kinematics(&g, Side::Left, &q)).norm();
            prop_assert!(step <= (g.l_hip + g.l_thigh + g.l_calf) * d.norm() + 1e-12);
        }

        #[test]
        fn pd_torque_is_linear_in_error(q in joint_in_limits(Side::Left), e in prop::array::uniform3(-0.05f64..0.05)) {
            let g = geom();
            let state = JointState::at_rest(q);
            let p = forward_kinematics(&g, Side::Left, &q);
            let e = Vector3::from(e);
            let gains = CartesianGains::default();
            let t1 = cartesian_pd_torque(&g, Side::Left, &state, &FootTarget { p_d: p + e, phase: Phase::Open }, &gains);
            let t2 = cartesian_pd_torque(&g, Side::Left, &state, &FootTarget { p_d: p + 2.0 * e, phase: Phase::Open }, &gains);
            prop_assert!((t2 - 2.0 * t1).abs().max() <= 1e-12);
        }

        #[test]
        fn clipping_is_a_projection(p in prop::array::uniform3(-1.0f64..1.0)) {
            let ws = Workspace::from_geometry(&geom(), Side::Left, 0.1);
            let c = ws.clip(&Vector3::from(p));
            prop_assert!(ws.contains(&c));
            prop_assert_eq!(ws.clip(&c), c);
            if ws.contains(&Vector3::from(p)) {
                prop_assert_eq!(c, Vector3::from(p));
            }
        }

        #[test]
        fn trigger_is_monotone(a in -1.0f64..1.0, b in -1.0f64..1.0, th in 0.0f64..0.5) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            if closing_trigger(hi, th) == Phase::Closed {
                prop_assert_eq!(closing_trigger(lo, th), Phase::Closed);
            }
            let mut trig = ClosingTrigger::new(th);
            trig.update(lo);
            let was = trig.phase();
            prop_assert!(was == Phase::Open || trig.update(hi) == Phase::Closed);
        }
    }
}
