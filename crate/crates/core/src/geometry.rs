//! Global Cartesian frame shared by all base stations and the rotated local
//! frame of each base station.
//!
//! A base station at `O` with orientation `ϑ` sees a global point `p` at
//! local coordinates `R(-ϑ)(p - O)`; its boresight is the local +x axis,
//! which points along global bearing `ϑ`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::BsDescriptor;
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalPoint {
    pub x: f64,
    pub y: f64,
}

impl GlobalPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GlobalPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// Range and direction of a point as seen from one base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalPolar {
    pub range_m: f64,
    /// Angle from boresight, wrapped to (-π, π].
    pub angle_rad: f64,
}

impl LocalPolar {
    pub fn new(range_m: f64, angle_rad: f64) -> Self {
        Self {
            range_m,
            angle_rad: wrap_angle(angle_rad),
        }
    }

    pub fn from_delay(delay_s: f64, angle_rad: f64) -> Self {
        Self::new(0.5 * SPEED_OF_LIGHT * delay_s, angle_rad)
    }

    /// Round-trip delay `2r/c`.
    pub fn delay_s(&self) -> f64 {
        2.0 * self.range_m / SPEED_OF_LIGHT
    }

    /// Cartesian coordinates in the local (rotated) frame.
    pub fn local_xy(&self) -> (f64, f64) {
        let (s, c) = self.angle_rad.sin_cos();
        (self.range_m * c, self.range_m * s)
    }
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Local Cartesian coordinates of `p` in the frame of `bs`.
pub fn global_to_local_xy(p: &GlobalPoint, bs: &BsDescriptor) -> (f64, f64) {
    let dx = p.x - bs.position.x;
    let dy = p.y - bs.position.y;
    let (s, c) = bs.orientation_rad.sin_cos();
    (dx * c + dy * s, -dx * s + dy * c)
}

pub fn global_to_local(p: &GlobalPoint, bs: &BsDescriptor) -> Result<LocalPolar> {
    let (x, y) = global_to_local_xy(p, bs);
    let r = x.hypot(y);
    if r == 0.0 {
        return Err(Error::ZeroRange);
    }
    Ok(LocalPolar::new(r, y.atan2(x)))
}

pub fn local_polar_to_global(lp: &LocalPolar, bs: &BsDescriptor) -> GlobalPoint {
    let (x, y) = lp.local_xy();
    let (s, c) = bs.orientation_rad.sin_cos();
    GlobalPoint {
        x: bs.position.x + x * c - y * s,
        y: bs.position.y + x * s + y * c,
    }
}

/// Bearing of a local direction expressed in the global frame.
pub fn global_bearing(angle_rad: f64, bs: &BsDescriptor) -> f64 {
    wrap_angle(bs.orientation_rad + angle_rad)
}
