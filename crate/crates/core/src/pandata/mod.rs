//! Panoramic frames, viewports, head-movement traces and maps.

mod fov;
mod hmmap;
pub mod io;
mod synth;

pub use fov::{extract_fov, Observation, FOV_H_DEG, FOV_V_DEG, OBS_SIZE};
pub use hmmap::{build_hm_map, HMMap, DEFAULT_MAP_HEIGHT, DEFAULT_MAP_WIDTH, DEFAULT_SIGMA_SMOOTH};
pub use synth::{blob_path, gen_synthetic, BlobSpec, Motion, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{bearing_between, great_circle_dist, ArcLen, Bearing, GeoPos};

/// One equirectangular grayscale frame. Column 0 starts at lon -180°,
/// row 0 at lat +90°.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width != 2 * height || width < 64 {
            return Err(Error::InvalidInput(format!(
                "frame must be 2:1 and at least 64 wide, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Result<Self> {
        Self::new(width, height, vec![level; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Geographic position of a pixel centre.
    pub fn pixel_center(&self, col: usize, row: usize) -> GeoPos {
        let lon = -180.0 + (col as f64 + 0.5) * 360.0 / self.width as f64;
        let lat = 90.0 - (row as f64 + 0.5) * 180.0 / self.height as f64;
        GeoPos::new(lon, lat)
    }

    /// Rolls the panorama by `cols` columns towards increasing longitude.
    pub fn roll_columns(&self, cols: isize) -> Self {
        let w = self.width as isize;
        let mut out = vec![0u8; self.pixels.len()];
        for r in 0..self.height {
            for c in 0..self.width {
                let dst = (c as isize + cols).rem_euclid(w) as usize;
                out[r * self.width + dst] = self.get(c, r);
            }
        }
        Self { width: self.width, height: self.height, pixels: out }
    }
}

/// Recorded head positions of one subject on one video, one per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HMTrace {
    pub video_id: String,
    pub subject_id: String,
    pub positions: Vec<GeoPos>,
}

impl HMTrace {
    pub fn new(video_id: impl Into<String>, subject_id: impl Into<String>, positions: Vec<GeoPos>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidInput("a trace needs at least two positions".into()));
        }
        Ok(Self { video_id: video_id.into(), subject_id: subject_id.into(), positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Per-frame head movement: heading and angular speed in degrees per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanpathStep {
    pub dir: Bearing,
    pub mag: ArcLen,
}

impl ScanpathStep {
    pub fn new(dir: Bearing, mag: ArcLen) -> Self {
        if mag.deg() == 0.0 {
            Self::stationary()
        } else {
            Self { dir, mag }
        }
    }

    pub fn stationary() -> Self {
        Self { dir: Bearing::new(0.0), mag: ArcLen::zero() }
    }

    /// Step between two consecutive positions; coincident points give the
    /// stationary step, antipodal ones are an error.
    pub fn between(a: GeoPos, b: GeoPos) -> Result<Self> {
        let d = great_circle_dist(a, b);
        match bearing_between(a, b) {
            Ok(dir) => Ok(Self::new(dir, d)),
            Err(_) if d.deg() < 90.0 => Ok(Self::stationary()),
            Err(e) => Err(e),
        }
    }

    pub fn apply(&self, from: GeoPos) -> GeoPos {
        crate::sphere::geodesic_step(from, self.dir, self.mag)
    }
}

/// Ground-truth scanpath of a trace: one step per consecutive position pair.
pub fn derive_scanpath(trace: &HMTrace) -> Result<Vec<ScanpathStep>> {
    if trace.positions.len() < 2 {
        return Err(Error::InvalidInput("a trace needs at least two positions".into()));
    }
    trace.positions.windows(2).map(|w| ScanpathStep::between(w[0], w[1])).collect()
}

/// Integrates a scanpath from `start`, returning `steps.len() + 1` positions.
pub fn integrate_scanpath(start: GeoPos, steps: &[ScanpathStep]) -> Vec<GeoPos> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(start);
    let mut p = start;
    for s in steps {
        p = s.apply(p);
        out.push(p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_invariants() {
        assert!(Frame::filled(64, 32, 0).is_ok());
        assert!(Frame::filled(62, 31, 0).is_err());
        assert!(Frame::filled(64, 40, 0).is_err());
        assert!(Frame::new(64, 32, vec![0; 10]).is_err());
    }

    #[test]
    fn scanpath_examples() {
        let t = HMTrace::new("v", "s", vec![GeoPos::new(0.0, 0.0), GeoPos::new(0.0, 5.0)]).unwrap();
        let s = derive_scanpath(&t).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s[0].dir.deg().abs() < 1e-12);
        assert!((s[0].mag.deg() - 5.0).abs() < 1e-12);

        let t = HMTrace::new("v", "s", vec![GeoPos::origin(), GeoPos::origin()]).unwrap();
        assert_eq!(derive_scanpath(&t).unwrap(), vec![ScanpathStep::stationary()]);

        let t = HMTrace::new("v", "s", vec![GeoPos::origin(), GeoPos::new(180.0, 0.0)]).unwrap();
        assert!(derive_scanpath(&t).is_err());
        assert!(HMTrace::new("v", "s", vec![GeoPos::origin()]).is_err());
    }

    proptest! {
        #[test]
        fn scanpath_reintegrates_trace(
            start in (-180.0..180.0f64, -60.0..60.0f64),
            moves in proptest::collection::vec((0.0..360.0f64, 0.0..5.0f64), 1..40),
        ) {
            let mut p = GeoPos::new(start.0, start.1);
            let mut positions = vec![p];
            for (b, d) in moves {
                p = crate::sphere::geodesic_step(p, Bearing::new(b), ArcLen::new(d));
                positions.push(p);
            }
            let trace = HMTrace::new("v", "s", positions.clone()).unwrap();
            let steps = derive_scanpath(&trace).unwrap();
            let back = integrate_scanpath(positions[0], &steps);
            for (a, b) in back.iter().zip(&positions) {
                prop_assert!(great_circle_dist(*a, *b).deg() < 1e-6);
            }
        }
    }
}
