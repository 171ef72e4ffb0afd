//! Unit-sphere geometry in geographic coordinates.
//!
//! Bearings follow the navigation convention: 0° points due north (towards
//! increasing latitude) and angles grow clockwise, so 90° is due east. All
//! public values are in degrees; radians only appear inside this module.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// A point on the unit sphere as (longitude, latitude) in degrees.
///
/// Longitude lives in `[-180, 180)`; latitude in `[-90, 90]`. At the poles
/// longitude carries no information and is stored as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPos {
    lon: f64,
    lat: f64,
}

/// Initial heading in degrees, `[0, 360)`, 0 = north, clockwise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Bearing(f64);

/// Great-circle arc length in degrees.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ArcLen(f64);

pub fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if l >= 180.0 {
        l - 360.0
    } else {
        l
    }
}

/// Signed longitude difference `b - a` wrapped into `[-180, 180)`.
pub fn wrap_lon_diff(a: f64, b: f64) -> f64 {
    normalize_lon(b - a)
}

impl GeoPos {
    pub fn new(lon: f64, lat: f64) -> Self {
        debug_assert!(lon.is_finite() && lat.is_finite());
        let lat = lat.clamp(-90.0, 90.0);
        let lon = if lat.abs() == 90.0 { 0.0 } else { normalize_lon(lon) };
        // -0.0 and 0.0 should compare and serialize identically
        Self { lon: lon + 0.0, lat: lat + 0.0 }
    }

    pub const fn origin() -> Self {
        Self { lon: 0.0, lat: 0.0 }
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    /// Cartesian unit vector (x toward lon 0 on the equator, z toward the north pole).
    pub fn to_unit(&self) -> [f64; 3] {
        let (slat, clat) = self.lat.to_radians().sin_cos();
        let (slon, clon) = self.lon.to_radians().sin_cos();
        [clat * clon, clat * slon, slat]
    }

    pub fn from_unit(v: [f64; 3]) -> Self {
        let lat = v[2].atan2(v[0].hypot(v[1])).to_degrees();
        let lon = v[1].atan2(v[0]).to_degrees();
        Self::new(lon, lat)
    }

    /// Local tangent frame `(north, east)` at this point.
    ///
    /// At the poles the frame is the limit taken along the stored meridian
    /// (lon 0), so it stays well defined.
    pub fn tangent_frame(&self) -> ([f64; 3], [f64; 3]) {
        let (slat, clat) = self.lat.to_radians().sin_cos();
        let (slon, clon) = self.lon.to_radians().sin_cos();
        let north = [-slat * clon, -slat * slon, clat];
        let east = [-slon, clon, 0.0];
        (north, east)
    }
}

impl Default for GeoPos {
    fn default() -> Self {
        Self::origin()
    }
}

impl fmt::Display for GeoPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lon, self.lat)
    }
}

impl Bearing {
    pub fn new(deg: f64) -> Self {
        let d = deg.rem_euclid(360.0);
        Self(if d >= 360.0 { 0.0 } else { d + 0.0 })
    }

    pub fn deg(&self) -> f64 {
        self.0
    }
}

impl ArcLen {
    /// Negative inputs are a caller bug; they are clamped to zero in release builds.
    pub fn new(deg: f64) -> Self {
        debug_assert!(deg >= 0.0 || deg.is_nan(), "negative arc length {deg}");
        Self(deg.max(0.0))
    }

    pub const fn zero() -> Self {
        Self(0.0)
    }

    pub fn deg(&self) -> f64 {
        self.0
    }

    pub fn rad(&self) -> f64 {
        self.0.to_radians()
    }
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Great-circle distance via `atan2(|a×b|, a·b)`, accurate at every separation.
pub fn great_circle_dist(a: GeoPos, b: GeoPos) -> ArcLen {
    let (ua, ub) = (a.to_unit(), b.to_unit());
    let s = norm(cross(ua, ub));
    let c = dot(ua, ub);
    ArcLen::new(s.atan2(c).to_degrees())
}

/// Minimal absolute difference between two headings, in `[0, 180]`.
pub fn phase_diff(a: Bearing, b: Bearing) -> f64 {
    let d = (a.deg() - b.deg()).abs() % 360.0;
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Destination reached by travelling `dist` along the great circle that
/// leaves `p` with initial heading `bearing`.
pub fn geodesic_step(p: GeoPos, bearing: Bearing, dist: ArcLen) -> GeoPos {
    if dist.deg() == 0.0 {
        return p;
    }
    let u = p.to_unit();
    let (north, east) = p.tangent_frame();
    let (sb, cb) = bearing.deg().to_radians().sin_cos();
    let (sd, cd) = dist.rad().sin_cos();
    let mut q = [0.0; 3];
    for k in 0..3 {
        let t = cb * north[k] + sb * east[k];
        q[k] = cd * u[k] + sd * t;
    }
    GeoPos::from_unit(q)
}

/// Initial great-circle heading from `a` to `b`.
///
/// Identical and antipodal pairs have no unique heading and yield
/// [`Error::UndefinedBearing`].
pub fn bearing_between(a: GeoPos, b: GeoPos) -> Result<Bearing> {
    let (ua, ub) = (a.to_unit(), b.to_unit());
    if norm(cross(ua, ub)) < 1e-12 {
        return Err(Error::UndefinedBearing { from: a, to: b });
    }
    let (north, east) = a.tangent_frame();
    let y = dot(ub, east);
    let x = dot(ub, north);
    Ok(Bearing::new(y.atan2(x).to_degrees()))
}
