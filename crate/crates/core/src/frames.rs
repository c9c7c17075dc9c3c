//! Camera model and conversion between pixel+depth detections and the robot frame.
//!
//! The robot frame is right-handed with x forward, y to the left and z up. The
//! camera sits at the robot-frame origin (plus an optional mounting offset) and
//! is pitched by `tilt` about the lateral axis; positive tilt points the optical
//! axis below the horizon. Depth is range along the optical axis.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("point is not in front of the camera (depth {depth:.4} m)")]
    OutOfView { depth: f64 },
}

/// Pinhole intrinsics plus the camera pitch and mounting offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraIntrinsics {
    /// Focal length along image columns, pixels.
    pub fx: f64,
    /// Focal length along image rows, pixels.
    pub fy: f64,
    /// Principal point column, pixels.
    pub ppx: f64,
    /// Principal point row, pixels.
    pub ppy: f64,
    /// Angle of the optical axis below the horizontal, radians.
    pub tilt: f64,
    /// Image width in pixels; detections outside the image are not produced.
    pub width: f64,
    /// Image height in pixels.
    pub height: f64,
    /// Closest measurable depth, meters.
    pub min_depth: f64,
    /// Camera position in the robot frame, meters.
    pub offset: Vector3<f64>,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 640.0,
            fy: 640.0,
            ppx: 640.0,
            ppy: 360.0,
            tilt: 0.0,
            width: 1280.0,
            height: 720.0,
            min_depth: 0.4,
            offset: Vector3::zeros(),
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), FrameError> {
        let finite = [self.fx, self.fy, self.ppx, self.ppy, self.tilt, self.width, self.height, self.min_depth]
            .iter()
            .all(|v| v.is_finite())
            && self.offset.iter().all(|v| v.is_finite());
        if !finite {
            return Err(FrameError::InvalidInput("non-finite camera parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(FrameError::InvalidInput("focal lengths must be positive".into()));
        }
        if self.tilt.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(FrameError::InvalidInput("|tilt| must be below pi/2".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 || self.min_depth < 0.0 {
            return Err(FrameError::InvalidInput("image size and min depth must be positive".into()));
        }
        Ok(())
    }

    /// Whether a detection falls inside the image and beyond the minimum depth.
    pub fn in_view(&self, det: &PixelDetection) -> bool {
        det.depth >= self.min_depth
            && (0.0..self.width).contains(&det.xp)
            && (0.0..self.height).contains(&det.yp)
    }
}

/// One detector output: bounding-box center in pixels and its depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDetection {
    pub xp: f64,
    pub yp: f64,
    pub depth: f64,
    pub stamp: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub stamp: f64,
}

impl RobotPoint {
    pub fn new(position: Vector3<f64>, stamp: f64) -> Self {
        Self { x: position.x, y: position.y, z: position.z, stamp }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.stamp.is_finite()
    }
}

/// Back-projects a detection into the robot frame.
pub fn pixel_to_robot(det: &PixelDetection, intr: &CameraIntrinsics) -> Result<RobotPoint, FrameError> {
    if !(det.xp.is_finite() && det.yp.is_finite() && det.depth.is_finite() && det.stamp.is_finite()) {
        return Err(FrameError::InvalidInput("non-finite detection".into()));
    }
    if det.depth <= 0.0 {
        return Err(FrameError::InvalidInput(format!("depth must be positive, got {}", det.depth)));
    }
    let (sin, cos) = intr.tilt.sin_cos();
    let d = det.depth;
    let row = (det.yp - intr.ppy) / intr.fy;
    let col = (det.xp - intr.ppx) / intr.fx;
    let x = d * cos - d * row * sin;
    let y = d * col;
    let z = -(d * sin + d * row * cos);
    Ok(RobotPoint::new(Vector3::new(x, y, z) + intr.offset, det.stamp))
}

/// Exact inverse of [`pixel_to_robot`]; the synthetic camera.
///
/// The x and z equations are linear in (depth, depth * row offset), so they are
/// inverted as a rotation; the column offset follows from y.
pub fn robot_to_pixel(pt: &RobotPoint, intr: &CameraIntrinsics) -> Result<PixelDetection, FrameError> {
    if !pt.is_finite() {
        return Err(FrameError::InvalidInput("non-finite point".into()));
    }
    let p = pt.position() - intr.offset;
    let (sin, cos) = intr.tilt.sin_cos();
    let depth = p.x * cos - p.z * sin;
    if depth <= 0.0 {
        return Err(FrameError::OutOfView { depth });
    }
    let depth_row = -p.x * sin - p.z * cos;
    Ok(PixelDetection {
        xp: intr.ppx + intr.fx * p.y / depth,
        yp: intr.ppy + intr.fy * depth_row / depth,
        depth,
        stamp: pt.stamp,
        confidence: 1.0,
    })
}
