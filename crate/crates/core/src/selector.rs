//! Catch-point selection on a fitted trajectory.
//!
//! Three strategies map the current [`TrajectoryFit`] to a [`CatchPlan`]:
//!
//! - **Plane**: the crossing of the vertical plane `x = x_offset`.
//! - **MinDist**: the trajectory point closest to the nominal foot center `x_c`.
//! - **Gmm**: the trajectory point of highest density under the catch-space mixture.
//!
//! MinDist and single-component Gmm both minimize a quadratic form `r(t)^T P r(t)` with
//! `r(t)` quadratic in t, i.e. a quartic. Its stationary points are the roots of a cubic,
//! solved in closed form; the interval endpoints are always candidates.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::GaussianMixture;
use crate::predictor::{time_at_x, FitError, TrajectoryFit};
use crate::roots;

/// Scan resolution for multi-component mixtures, seconds.
pub const GMM_SCAN_STEP: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no feasible catch: {0}")]
    Infeasible(#[from] FitError),
    #[error("catch time {t_catch:.4} s is earlier than now ({t_now:.4} s)")]
    InPast { t_catch: f64, t_now: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Plane,
    #[serde(rename = "mindist")]
    MinDist,
    Gmm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Plane, Method::MinDist, Method::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Plane => "plane",
            Method::MinDist => "mindist",
            Method::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "plane" => Ok(Method::Plane),
            "mindist" | "min-dist" => Ok(Method::MinDist),
            "gmm" => Ok(Method::Gmm),
            other => Err(format!("unknown method '{other}' (expected plane, mindist or gmm)")),
        }
    }
}

/// Selected catch position and timing. Times are in the fit's time base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatchPlan {
    pub x_catch: Vector3<f64>,
    pub t_catch: f64,
    pub t_remain: f64,
    pub method: Method,
    /// Absolute time of the fit's t = 0, so `t_origin + t_catch` is the expected arrival.
    pub t_origin: f64,
}

impl CatchPlan {
    pub fn arrival_time(&self) -> f64 {
        self.t_origin + self.t_catch
    }

    /// Time remaining at absolute time `now`.
    pub fn remaining_at(&self, now: f64) -> f64 {
        self.arrival_time() - now
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorContext {
    pub x_offset: f64,
    pub x_c: Vector3<f64>,
    pub mixture: GaussianMixture,
    pub t_horizon: f64,
}

fn plan(fit: &TrajectoryFit, t_catch: f64, t_now: f64, method: Method) -> CatchPlan {
    CatchPlan { x_catch: fit.position(t_catch), t_catch, t_remain: t_catch - t_now, method, t_origin: fit.t_origin }
}

pub fn plane_intersection(fit: &TrajectoryFit, ctx: &SelectorContext, t_now: f64) -> Result<CatchPlan, PlanError> {
    let t_catch = time_at_x(fit, ctx.x_offset)?;
    if t_catch < t_now {
        return Err(PlanError::InPast { t_catch, t_now });
    }
    let mut p = plan(fit, t_catch, t_now, Method::Plane);
    p.x_catch.x = ctx.x_offset;
    Ok(p)
}

/// Quartic coefficients `[c4, c3, c2, c1, c0]` of `r(t)^T P r(t)` with `r(t) = fit(t) - center`.
pub fn quadratic_form_quartic(fit: &TrajectoryFit, center: &Vector3<f64>, weight: &Matrix3<f64>) -> [f64; 5] {
    let (a, b, c) = fit.polynomial();
    let c = c - center;
    let (pa, pb, pc) = (weight * a, weight * b, weight * c);
    [
        a.dot(&pa),
        2.0 * a.dot(&pb),
        b.dot(&pb) + 2.0 * a.dot(&pc),
        2.0 * b.dot(&pc),
        c.dot(&pc),
    ]
}

/// Earliest global minimizer of `r(t)^T P r(t)` over `[t_lo, t_hi]`.
pub fn argmin_quadratic_form(
    fit: &TrajectoryFit,
    center: &Vector3<f64>,
    weight: &Matrix3<f64>,
    t_lo: f64,
    t_hi: f64,
) -> f64 {
    let q = quadratic_form_quartic(fit, center, weight);
    let eval = |t: f64| {
        let r = fit.position(t) - center;
        r.dot(&(weight * r))
    };
    let mut candidates = vec![t_lo, t_hi];
    candidates.extend(
        roots::cubic(4.0 * q[0], 3.0 * q[1], 2.0 * q[2], q[3])
            .into_iter()
            .filter(|t| *t > t_lo && *t < t_hi),
    );
    candidates.sort_by(|a, b| a.total_cmp(b));
    let mut best = (candidates[0], eval(candidates[0]));
    for &t in &candidates[1..] {
        let v = eval(t);
        if v < best.1 {
            best = (t, v);
        }
    }
    best.0
}

pub fn min_distance_to_center(fit: &TrajectoryFit, ctx: &SelectorContext, t_now: f64) -> CatchPlan {
    let t = argmin_quadratic_form(fit, &ctx.x_c, &Matrix3::identity(), t_now, t_now + ctx.t_horizon);
    plan(fit, t, t_now, Method::MinDist)
}

/// Earliest maximizer of the mixture log-density along the trajectory on `[t_lo, t_hi]`.
pub fn argmax_density(fit: &TrajectoryFit, mixture: &GaussianMixture, t_lo: f64, t_hi: f64) -> f64 {
    if mixture.k() == 1 {
        let c = &mixture.components()[0];
        return argmin_quadratic_form(fit, &c.mean, mixture.precision(0), t_lo, t_hi);
    }
    let f = |t: f64| mixture.log_density(&fit.position(t));
    let steps = ((t_hi - t_lo) / GMM_SCAN_STEP).ceil().max(1.0) as usize;
    let h = (t_hi - t_lo) / steps as f64;
    let (mut best_i, mut best_v) = (0, f(t_lo));
    for i in 1..=steps {
        let v = f(t_lo + h * i as f64);
        if v > best_v {
            best_i = i;
            best_v = v;
        }
    }
    // golden-section refinement inside the bracketing cells
    let t_best = t_lo + h * best_i as f64;
    let (mut a, mut b) = ((t_best - h).max(t_lo), (t_best + h).min(t_hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        if b - a < 1e-10 {
            break;
        }
    }
    let t_ref = 0.5 * (a + b);
    if f(t_ref) > best_v {
        t_ref
    } else {
        t_best
    }
}

pub fn gmm_max_likelihood(fit: &TrajectoryFit, ctx: &SelectorContext, t_now: f64) -> CatchPlan {
    let t = argmax_density(fit, &ctx.mixture, t_now, t_now + ctx.t_horizon);
    plan(fit, t, t_now, Method::Gmm)
}

/// Re-plans with the configured method. Called once per camera frame.
pub fn refresh(method: Method, fit: &TrajectoryFit, ctx: &SelectorContext, t_now: f64) -> Result<CatchPlan, PlanError> {
    match method {
        Method::Plane => plane_intersection(fit, ctx, t_now),
        Method::MinDist => Ok(min_distance_to_center(fit, ctx, t_now)),
        Method::Gmm => Ok(gmm_max_likelihood(fit, ctx, t_now)),
    }
}
