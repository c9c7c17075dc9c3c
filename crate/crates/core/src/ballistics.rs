//! Ground-truth projectile motion and the synthetic detection stream.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frames::{pixel_to_robot, robot_to_pixel, CameraIntrinsics, PixelDetection, RobotPoint};

/// Standard gravity, m/s^2.
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Observations stop this long after release even if the object stays in view.
pub const MAX_FLIGHT_TIME: f64 = 3.0;

#[derive(Debug, Error)]
pub enum BallisticsError {
    #[error("time {t} is before release at {t0}")]
    BeforeRelease { t: f64, t0: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed record on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Release state of a thrown object. Air resistance is neglected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrowSpec {
    pub p0: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub g: f64,
    pub t0: f64,
}

impl ThrowSpec {
    pub fn new(p0: Vector3<f64>, v0: Vector3<f64>, t0: f64) -> Self {
        Self { p0, v0, g: STANDARD_GRAVITY, t0 }
    }

    /// Position at `t`, without the before-release check.
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let dt = t - self.t0;
        self.p0 + self.v0 * dt - Vector3::new(0.0, 0.0, 0.5 * self.g * dt * dt)
    }

    pub fn velocity_at(&self, t: f64) -> Vector3<f64> {
        self.v0 - Vector3::new(0.0, 0.0, self.g * (t - self.t0))
    }
}

pub fn truth_position(throw: &ThrowSpec, t: f64) -> Result<RobotPoint, BallisticsError> {
    if t < throw.t0 {
        return Err(BallisticsError::BeforeRelease { t, t0: throw.t0 });
    }
    Ok(RobotPoint::new(throw.position_at(t), t))
}

/// Detector noise, applied in pixel and depth space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub sigma_px: f64,
    pub sigma_depth: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_px: 1.0, sigma_depth: 0.01, drop_prob: 0.05, seed: 0 }
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { sigma_px: 0.0, sigma_depth: 0.0, drop_prob: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), BallisticsError> {
        if !(self.sigma_px >= 0.0 && self.sigma_depth >= 0.0) {
            return Err(BallisticsError::InvalidParameter("noise sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(BallisticsError::InvalidParameter("drop_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Time-ordered detections from one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationStream {
    pub fps: f64,
    pub detections: Vec<PixelDetection>,
}

impl ObservationStream {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Writes `stamp xp yp depth` records, one per line, behind a `# fps` header.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# fps {}", self.fps)?;
        writeln!(out, "# stamp xp yp depth")?;
        for d in &self.detections {
            writeln!(out, "{:?} {:?} {:?} {:?}", d.stamp, d.xp, d.yp, d.depth)?;
        }
        Ok(())
    }

    /// Parses records written by [`write_records`](Self::write_records). Fields may be separated
    /// by whitespace or commas; `#` starts a comment. Without an fps header, `default_fps` is used.
    pub fn read_records<R: BufRead>(input: R, default_fps: f64) -> Result<Self, BallisticsError> {
        let mut fps = default_fps;
        let mut detections = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let mut parts = comment.split_whitespace();
                if parts.next() == Some("fps") {
                    fps = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| BallisticsError::Parse { line: lineno, msg: "bad fps header".into() })?;
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let vals: Vec<f64> = trimmed
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| BallisticsError::Parse { line: lineno, msg: e.to_string() })?;
            if vals.len() != 4 {
                return Err(BallisticsError::Parse {
                    line: lineno,
                    msg: format!("expected 4 fields (stamp xp yp depth), found {}", vals.len()),
                });
            }
            if let Some(prev) = detections.last().map(|d: &PixelDetection| d.stamp) {
                if vals[0] <= prev {
                    return Err(BallisticsError::Parse { line: lineno, msg: "stamps must be strictly increasing".into() });
                }
            }
            detections.push(PixelDetection { stamp: vals[0], xp: vals[1], yp: vals[2], depth: vals[3], confidence: 1.0 });
        }
        Ok(Self { fps, detections })
    }
}

/// Renders a throw through the synthetic camera.
///
/// Frames are taken at `t0 + k / fps`. `pre_release_frames` stationary frames at `p0` come first
/// and are never dropped. Each frame consumes the same number of random draws whether or not it
/// is visible, so two throws sharing a seed see identical noise sequences.
pub fn generate_observations(
    throw: &ThrowSpec,
    intr: &CameraIntrinsics,
    noise: &NoiseModel,
    fps: f64,
    pre_release_frames: usize,
) -> Result<ObservationStream, BallisticsError> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(BallisticsError::InvalidParameter(format!("fps must be positive, got {fps}")));
    }
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let period = 1.0 / fps;
    let mut detections = Vec::new();

    let mut render = |pos: Vector3<f64>, stamp: f64, droppable: bool, rng: &mut ChaCha8Rng| -> bool {
        let n: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let dropped = rng.random::<f64>() < noise.drop_prob;
        let Ok(mut det) = robot_to_pixel(&RobotPoint::new(pos, stamp), intr) else {
            return false;
        };
        if droppable && dropped {
            return true;
        }
        det.xp += noise.sigma_px * n[0];
        det.yp += noise.sigma_px * n[1];
        det.depth += noise.sigma_depth * n[2];
        if intr.in_view(&det) {
            detections.push(det);
        }
        true
    };

    for j in (1..=pre_release_frames).rev() {
        render(throw.p0, throw.t0 - j as f64 * period, false, &mut rng);
    }
    let mut k = 0usize;
    loop {
        let dt = k as f64 * period;
        if dt > MAX_FLIGHT_TIME {
            break;
        }
        let t = throw.t0 + dt;
        if !render(throw.position_at(t), t, true, &mut rng) {
            // behind the camera: the object has passed the robot
            break;
        }
        k += 1;
    }
    Ok(ObservationStream { fps, detections })
}

/// Streaming form of the throw-start test: reports when a detection moved more than
/// `delta_min` along any robot-frame axis since the previous detection.
#[derive(Debug, Clone)]
pub struct ThrowStartDetector {
    delta_min: f64,
    previous: Option<Vector3<f64>>,
    started: bool,
}

impl ThrowStartDetector {
    pub fn new(delta_min: f64) -> Result<Self, BallisticsError> {
        if !(delta_min > 0.0) {
            return Err(BallisticsError::InvalidParameter(format!("delta_min must be positive, got {delta_min}")));
        }
        Ok(Self { delta_min, previous: None, started: false })
    }

    pub fn started(&self) -> bool {
        self.started
    }

    /// Feeds one robot-frame position; returns true if it belongs to the flight phase.
    pub fn accept(&mut self, position: Vector3<f64>) -> bool {
        if !self.started {
            if let Some(prev) = self.previous {
                self.started = (position - prev).iter().any(|d| d.abs() > self.delta_min);
            }
            self.previous = Some(position);
        }
        self.started
    }
}

/// Drops the detections taken while the object was still held.
pub fn throw_start_filter(
    stream: &ObservationStream,
    intr: &CameraIntrinsics,
    delta_min: f64,
) -> Result<ObservationStream, BallisticsError> {
    let mut detector = ThrowStartDetector::new(delta_min)?;
    let mut out = ObservationStream { fps: stream.fps, detections: Vec::new() };
    if stream.len() < 2 {
        return Ok(out);
    }
    for det in &stream.detections {
        let Ok(p) = pixel_to_robot(det, intr) else { continue };
        if detector.accept(p.position()) {
            out.detections.push(*det);
        }
    }
    Ok(out)
}
