//! Gaze angle conventions.
//!
//! Angles are in degrees. The 3D convention is x right, y up, z forward, so
//! `(0, 0)` looks straight ahead along +z, positive yaw turns toward +x and
//! positive pitch toward +y.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaze direction as 2D spherical coordinates in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeAngles {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
}

impl GazeAngles {
    pub const fn new(yaw_deg: f64, pitch_deg: f64) -> Self {
        Self { yaw_deg, pitch_deg }
    }

    pub fn is_finite(&self) -> bool {
        self.yaw_deg.is_finite() && self.pitch_deg.is_finite()
    }

    /// True when both components lie within `±limit` degrees.
    pub fn within(&self, limit: f64) -> bool {
        self.yaw_deg.abs() <= limit && self.pitch_deg.abs() <= limit
    }
}

pub fn angles_to_vector(a: GazeAngles) -> [f64; 3] {
    let (yaw, pitch) = (a.yaw_deg.to_radians(), a.pitch_deg.to_radians());
    [pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos()]
}

pub fn vector_to_angles(v: [f64; 3]) -> Result<GazeAngles> {
    let [x, y, z] = v;
    let norm = (x * x + y * y + z * z).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::invalid("gaze vector must be finite and non-zero"));
    }
    let yaw = x.atan2(z);
    let pitch = y.atan2((x * x + z * z).sqrt());
    Ok(GazeAngles::new(yaw.to_degrees(), pitch.to_degrees()))
}

/// Horizontal flip: the gaze a left eye would have if the image were mirrored.
pub fn mirror_angles(a: GazeAngles) -> GazeAngles {
    GazeAngles::new(-a.yaw_deg, a.pitch_deg)
}

/// Great-circle angle between two gaze directions, in degrees.
pub fn angular_distance(a: GazeAngles, b: GazeAngles) -> f64 {
    let (u, v) = (angles_to_vector(a), angles_to_vector(b));
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    sin.atan2(cos).to_degrees()
}
