//! Seeded synthetic panoramas: bright Gaussian blobs moving over a flat
//! background, watched by scripted subjects that pursue them.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, HMTrace};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::sphere::{bearing_between, geodesic_step, great_circle_dist, ArcLen, Bearing, GeoPos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    Static,
    /// Travels along a great circle at constant speed (deg/frame).
    Linear { bearing_deg: f64, speed_deg: f64 },
    /// Like `Linear`, but reverses direction with probability `reverse_prob`
    /// before each step.
    Zigzag { bearing_deg: f64, speed_deg: f64, reverse_prob: f64 },
    /// Random heading changes of `turn_deg` standard deviation per frame and
    /// relative speed jitter. Headings reflect off `±lat_limit_deg`.
    Wander {
        speed_deg: f64,
        turn_deg: f64,
        #[serde(default)]
        speed_jitter: f64,
        #[serde(default = "default_lat_limit")]
        lat_limit_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub start: [f64; 2],
    #[serde(default = "default_blob_sigma")]
    pub sigma_deg: f64,
    #[serde(default = "default_intensity")]
    pub intensity: u8,
    pub motion: Motion,
}

fn default_lat_limit() -> f64 {
    90.0
}
fn default_blob_sigma() -> f64 {
    8.0
}
fn default_intensity() -> u8 {
    255
}
fn default_background() -> u8 {
    30
}
fn default_fps() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub video_id: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_background")]
    pub background: u8,
    pub blobs: Vec<BlobSpec>,
    pub subjects: usize,
    /// Fraction of the remaining distance to the blob covered per frame.
    pub pursuit_gain: f64,
    /// Cap on a subject's per-frame movement, degrees.
    pub max_step_deg: f64,
    #[serde(default)]
    pub noise_dir_deg: f64,
    #[serde(default)]
    pub noise_mag_deg: f64,
}

impl SynthSpec {
    /// One blob, eight subjects: the default world used by the CLI.
    pub fn single_blob(video_id: &str, width: usize, frames: usize, motion: Motion) -> Self {
        Self {
            video_id: video_id.to_string(),
            width,
            height: width / 2,
            frames,
            fps: default_fps(),
            background: default_background(),
            blobs: vec![BlobSpec { start: [0.0, 0.0], sigma_deg: 8.0, intensity: 255, motion }],
            subjects: 8,
            pursuit_gain: 0.5,
            max_step_deg: 8.0,
            noise_dir_deg: 10.0,
            noise_mag_deg: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.width != 2 * self.height || self.width < 64 {
            return bad(format!("frame size {}x{} must be 2:1 and at least 64 wide", self.width, self.height));
        }
        if self.frames < 2 {
            return bad("need at least two frames".into());
        }
        if self.blobs.is_empty() {
            return bad("need at least one blob".into());
        }
        if self.subjects == 0 {
            return bad("need at least one subject".into());
        }
        if !(self.pursuit_gain > 0.0 && self.pursuit_gain <= 1.0) {
            return bad(format!("pursuit gain {} outside (0, 1]", self.pursuit_gain));
        }
        if !(self.max_step_deg > 0.0) || self.noise_dir_deg < 0.0 || self.noise_mag_deg < 0.0 {
            return bad("step cap must be positive and noise levels non-negative".into());
        }
        for b in &self.blobs {
            if !(b.sigma_deg > 0.0) {
                return bad("blob sigma must be positive".into());
            }
            if !(-90.0..=90.0).contains(&b.start[1]) {
                return bad("blob start latitude out of range".into());
            }
            if let Motion::Zigzag { reverse_prob, .. } = b.motion {
                if !(0.0..=1.0).contains(&reverse_prob) {
                    return bad(format!("reverse probability {reverse_prob} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

fn blob_paths(spec: &SynthSpec, seed: u64) -> Vec<Vec<GeoPos>> {
    spec.blobs
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let mut rng = stream_rng(seed, 100 + k as u64);
            let unit = Normal::new(0.0, 1.0).unwrap();
            let mut p = GeoPos::new(b.start[0], b.start[1]);
            let mut heading = match b.motion {
                Motion::Linear { bearing_deg, .. } | Motion::Zigzag { bearing_deg, .. } => bearing_deg,
                Motion::Wander { .. } => rng.random_range(0.0..360.0),
                Motion::Static => 0.0,
            };
            let mut path = Vec::with_capacity(spec.frames);
            path.push(p);
            for _ in 1..spec.frames {
                let speed = match b.motion {
                    Motion::Static => 0.0,
                    Motion::Linear { speed_deg, .. } => speed_deg,
                    Motion::Zigzag { speed_deg, reverse_prob, .. } => {
                        if rng.random_bool(reverse_prob) {
                            heading += 180.0;
                        }
                        speed_deg
                    }
                    Motion::Wander { speed_deg, turn_deg, speed_jitter, .. } => {
                        heading += turn_deg * unit.sample(&mut rng);
                        (speed_deg * (1.0 + speed_jitter * unit.sample(&mut rng))).max(0.0)
                    }
                };
                if speed > 0.0 {
                    let mut q = geodesic_step(p, Bearing::new(heading), ArcLen::new(speed));
                    if let Motion::Wander { lat_limit_deg, .. } = b.motion {
                        if q.lat().abs() > lat_limit_deg {
                            heading = 180.0 - heading;
                            q = geodesic_step(p, Bearing::new(heading), ArcLen::new(speed));
                        }
                    }
                    // keep following the same great circle
                    if let Ok(back) = bearing_between(q, p) {
                        heading = back.deg() + 180.0;
                    }
                    p = q;
                }
                path.push(p);
            }
            path
        })
        .collect()
}

fn render(spec: &SynthSpec, blobs: &[(GeoPos, &BlobSpec)]) -> Frame {
    let (w, h) = (spec.width, spec.height);
    let mut px = Vec::with_capacity(w * h);
    let centers: Vec<([f64; 3], f64, f64)> = blobs
        .iter()
        .map(|(p, b)| (p.to_unit(), 2.0 * b.sigma_deg * b.sigma_deg, b.intensity as f64))
        .collect();
    for r in 0..h {
        let lat = 90.0 - (r as f64 + 0.5) * 180.0 / h as f64;
        for c in 0..w {
            let lon = -180.0 + (c as f64 + 0.5) * 360.0 / w as f64;
            let u = GeoPos::new(lon, lat).to_unit();
            let mut v = spec.background as f64;
            for (bc, denom, amp) in &centers {
                let dot = (u[0] * bc[0] + u[1] * bc[1] + u[2] * bc[2]).clamp(-1.0, 1.0);
                let d = dot.acos().to_degrees();
                v += (amp - spec.background as f64) * (-d * d / denom).exp();
            }
            px.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Frame::new(w, h, px).expect("validated dimensions")
}

/// Frames plus one pursuit trace per subject, all starting at the front
/// centre (0°, 0°). Subject `m` follows blob `m mod #blobs`. Identical
/// seeds give identical output.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Vec<Frame>, Vec<HMTrace>)> {
    spec.validate()?;
    let paths = blob_paths(spec, seed);
    let frames: Vec<Frame> = (0..spec.frames)
        .map(|t| {
            let here: Vec<(GeoPos, &BlobSpec)> =
                paths.iter().zip(&spec.blobs).map(|(p, b)| (p[t], b)).collect();
            render(spec, &here)
        })
        .collect();

    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut traces = Vec::with_capacity(spec.subjects);
    for m in 0..spec.subjects {
        let mut rng = stream_rng(seed, 1000 + m as u64);
        let target = &paths[m % paths.len()];
        let mut p = GeoPos::origin();
        let mut positions = Vec::with_capacity(spec.frames);
        positions.push(p);
        for t in 0..spec.frames - 1 {
            let d = great_circle_dist(p, target[t]).deg();
            let heading = match bearing_between(p, target[t]) {
                Ok(b) => b.deg(),
                Err(_) => rng.random_range(0.0..360.0),
            };
            let mut mag = (spec.pursuit_gain * d).min(spec.max_step_deg);
            let mut dir = heading;
            if spec.noise_mag_deg > 0.0 {
                mag = (mag + spec.noise_mag_deg * unit.sample(&mut rng)).max(0.0);
            }
            if spec.noise_dir_deg > 0.0 {
                dir += spec.noise_dir_deg * unit.sample(&mut rng);
            }
            p = geodesic_step(p, Bearing::new(dir), ArcLen::new(mag));
            positions.push(p);
        }
        traces.push(HMTrace::new(spec.video_id.clone(), format!("s{m:02}"), positions)?);
    }
    Ok((frames, traces))
}

/// Blob centre of blob `k` at every frame, for diagnostics and tests.
pub fn blob_path(spec: &SynthSpec, seed: u64, k: usize) -> Vec<GeoPos> {
    blob_paths(spec, seed).swap_remove(k)
}
