//! Gravity-informed least-squares fit of the object's trajectory.
//!
//! x and y are fit as lines in time, z as a parabola whose quadratic coefficient is pulled
//! toward `-g/2` with weight `lambda`. All sums are kept incrementally so each new
//! observation costs O(1) and the normal systems can be re-solved every frame.

use nalgebra::{Cholesky, Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::RobotPoint;

/// Smallest |a_x| for which a plane crossing is reported.
pub const MIN_CROSSING_SPEED: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 3 observations, have {0}")]
    InsufficientData(usize),
    #[error("normal matrix is singular (repeated time stamps)")]
    Degenerate,
    #[error("trajectory never reaches x = {0}")]
    NoCrossing(f64),
    #[error("trajectory crossed the target at t = {t_cross:.4}, before the latest observation at {t_last:.4}")]
    AlreadyPassed { t_cross: f64, t_last: f64 },
}

/// Running power and moment sums of the observed points.
///
/// Stamps are rebased so the first ingested point sits at t = 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressionAccumulators {
    pub n: usize,
    pub origin: Option<f64>,
    /// Sums of t^0 .. t^4.
    pub power: [f64; 5],
    pub sum_x: f64,
    pub sum_xt: f64,
    pub sum_y: f64,
    pub sum_yt: f64,
    pub sum_z: f64,
    pub sum_zt: f64,
    pub sum_zt2: f64,
    /// Rebased stamps of every ingested point.
    pub stamps: Vec<f64>,
}

impl RegressionAccumulators {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest(&mut self, pt: &RobotPoint) {
        let origin = *self.origin.get_or_insert(pt.stamp);
        let t = pt.stamp - origin;
        let (t2, t3) = (t * t, t * t * t);
        self.n += 1;
        self.power[0] += 1.0;
        self.power[1] += t;
        self.power[2] += t2;
        self.power[3] += t3;
        self.power[4] += t2 * t2;
        self.sum_x += pt.x;
        self.sum_xt += pt.x * t;
        self.sum_y += pt.y;
        self.sum_yt += pt.y * t;
        self.sum_z += pt.z;
        self.sum_zt += pt.z * t;
        self.sum_zt2 += pt.z * t2;
        self.stamps.push(t);
    }

    /// Latest rebased stamp.
    pub fn last_stamp(&self) -> Option<f64> {
        self.stamps.iter().copied().reduce(f64::max)
    }

    pub fn solve(&self, lambda: f64, g: f64) -> Result<TrajectoryFit, FitError> {
        if self.n < 3 {
            return Err(FitError::InsufficientData(self.n));
        }
        let s = &self.power;
        let line = Matrix2::new(s[0], s[1], s[1], s[2]);
        let line_chol = factor(line.cholesky())?;
        let [bx, ax]: [f64; 2] = line_chol.solve(&Vector2::new(self.sum_x, self.sum_xt)).into();
        let [by, ay]: [f64; 2] = line_chol.solve(&Vector2::new(self.sum_y, self.sum_yt)).into();

        let parabola = Matrix3::new(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4] + lambda);
        let rhs = Vector3::new(self.sum_z, self.sum_zt, self.sum_zt2 - lambda * 0.5 * g);
        // with lambda > 0 the system is PD as soon as the line block is, so only the
        // unregularized case needs the conditioning check
        let chol = if lambda > 0.0 {
            parabola.cholesky().ok_or(FitError::Degenerate)?
        } else {
            factor(parabola.cholesky())?
        };
        let [cz, bz, az]: [f64; 3] = chol.solve(&rhs).into();

        let fit = TrajectoryFit {
            ax,
            bx,
            ay,
            by,
            az,
            bz,
            cz,
            lambda,
            g,
            n_used: self.n,
            t_origin: self.origin.unwrap_or(0.0),
            t_last: self.last_stamp().unwrap_or(0.0),
        };
        if !fit.coefficients().iter().all(|c| c.is_finite()) {
            return Err(FitError::Degenerate);
        }
        Ok(fit)
    }
}

/// Rejects factorizations that only succeeded through rounding.
fn factor<const D: usize>(
    chol: Option<Cholesky<f64, nalgebra::Const<D>>>,
) -> Result<Cholesky<f64, nalgebra::Const<D>>, FitError> {
    let chol = chol.ok_or(FitError::Degenerate)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d * d), hi.max(d * d)));
    if !(lo > 1e-14 * hi) {
        return Err(FitError::Degenerate);
    }
    Ok(chol)
}

/// Convenience wrapper matching the accumulate-then-solve flow.
pub fn solve(acc: &RegressionAccumulators, lambda: f64, g: f64) -> Result<TrajectoryFit, FitError> {
    acc.solve(lambda, g)
}

/// Fitted trajectory in the fit's own time base (t = 0 at the first observation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFit {
    pub ax: f64,
    pub bx: f64,
    pub ay: f64,
    pub by: f64,
    pub az: f64,
    pub bz: f64,
    pub cz: f64,
    pub lambda: f64,
    pub g: f64,
    pub n_used: usize,
    /// Absolute time of fit time zero, seconds.
    pub t_origin: f64,
    /// Latest observation, in fit time.
    pub t_last: f64,
}

impl TrajectoryFit {
    /// A fit with the given coefficients `[ax, bx, ay, by, az, bz, cz]`, as if observed at t = 0.
    pub fn from_coefficients(c: [f64; 7]) -> Self {
        Self {
            ax: c[0],
            bx: c[1],
            ay: c[2],
            by: c[3],
            az: c[4],
            bz: c[5],
            cz: c[6],
            lambda: 1.0,
            g: crate::ballistics::STANDARD_GRAVITY,
            n_used: 3,
            t_origin: 0.0,
            t_last: 0.0,
        }
    }

    pub fn coefficients(&self) -> [f64; 7] {
        [self.ax, self.bx, self.ay, self.by, self.az, self.bz, self.cz]
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.ax * t + self.bx,
            self.ay * t + self.by,
            (self.az * t + self.bz) * t + self.cz,
        )
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.ax, self.ay, 2.0 * self.az * t + self.bz)
    }

    /// Converts an absolute time to fit time.
    pub fn local_time(&self, absolute: f64) -> f64 {
        absolute - self.t_origin
    }

    /// Time coefficients of the trajectory as `(quadratic, linear, constant)` vectors.
    pub fn polynomial(&self) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        (
            Vector3::new(0.0, 0.0, self.az),
            Vector3::new(self.ax, self.ay, self.bz),
            Vector3::new(self.bx, self.by, self.cz),
        )
    }
}

pub fn predict_position(fit: &TrajectoryFit, t: f64) -> RobotPoint {
    RobotPoint::new(fit.position(t), t)
}

/// Fit time at which the trajectory crosses the plane `x = x_target`.
pub fn time_at_x(fit: &TrajectoryFit, x_target: f64) -> Result<f64, FitError> {
    if fit.ax.abs() < MIN_CROSSING_SPEED {
        return Err(FitError::NoCrossing(x_target));
    }
    let t = (x_target - fit.bx) / fit.ax;
    if t < fit.t_last {
        return Err(FitError::AlreadyPassed { t_cross: t, t_last: fit.t_last });
    }
    Ok(t)
}
