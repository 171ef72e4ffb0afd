//! HM maps from many stochastic workflows sharing one network, and the
//! front-centre-bias (FCB) prior that can be blended into them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{rollout, Greedy, Sampled};
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::pandata::{build_hm_map, Frame, HMMap, DEFAULT_MAP_HEIGHT, DEFAULT_MAP_WIDTH, DEFAULT_SIGMA_SMOOTH};
use crate::rng::stream_rng;
use crate::sphere::GeoPos;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    /// Number of workflows.
    pub workflows: usize,
    pub seed: u64,
    /// Follow the most probable heading instead of sampling.
    pub greedy: bool,
    pub map_width: usize,
    pub map_height: usize,
    pub sigma_smooth: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            workflows: 58,
            seed: 0,
            greedy: false,
            map_width: DEFAULT_MAP_WIDTH,
            map_height: DEFAULT_MAP_HEIGHT,
            sigma_smooth: DEFAULT_SIGMA_SMOOTH,
        }
    }
}

/// Positions of every workflow at every frame, `[workflow][frame]`.
/// Workflow `n` samples from its own random stream, so the result does not
/// depend on the order in which workflows are run.
pub fn workflow_positions(frames: &[Frame], params: &NetParams<f32>, config: &OfflineConfig) -> Result<Vec<Vec<GeoPos>>> {
    if config.workflows == 0 {
        return Err(Error::InvalidInput("need at least one workflow".into()));
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput("video has no frames".into()));
    }
    let steps = frames.len() - 1;
    (0..config.workflows)
        .map(|n| {
            let mut rng = stream_rng(config.seed, 20_000 + n as u64);
            if config.greedy {
                rollout(frames, params, GeoPos::origin(), steps, &mut Greedy, &mut rng)
            } else {
                rollout(frames, params, GeoPos::origin(), steps, &mut Sampled { eps: 0.0 }, &mut rng)
            }
        })
        .collect()
}

/// One HM map per frame from the positions of all workflows.
pub fn predict_hm_maps(frames: &[Frame], params: &NetParams<f32>, config: &OfflineConfig) -> Result<Vec<HMMap>> {
    let paths = workflow_positions(frames, params, config)?;
    maps_from_paths(&paths, frames.len(), config)
}

pub fn maps_from_paths(paths: &[Vec<GeoPos>], frames: usize, config: &OfflineConfig) -> Result<Vec<HMMap>> {
    (0..frames)
        .map(|t| {
            let at_t: Vec<GeoPos> = paths.iter().map(|p| p[t]).collect();
            build_hm_map(&at_t, config.map_width, config.map_height, config.sigma_smooth)
        })
        .collect()
}

/// Front-centre prior `exp(-(lon² + lat²) / σ²)`, or with `σ²` replaced by
/// `2σ²` when `half` is set.
pub fn fcb_value(lon: f64, lat: f64, sigma: f64, half: bool) -> f64 {
    let denom = if half { 2.0 * sigma * sigma } else { sigma * sigma };
    (-(lon * lon + lat * lat) / denom).exp()
}

pub fn fcb_map(width: usize, height: usize, sigma: f64, half: bool) -> Result<HMMap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidInput(format!("FCB width must be positive, got {sigma}")));
    }
    let mut m = HMMap::zeros(width, height);
    let denom = if half { 2.0 * sigma * sigma } else { sigma * sigma };
    m.add_planar_gaussian(GeoPos::origin(), denom, 1.0);
    Ok(m)
}

/// `w1 * fcb + w2 * map`, cell by cell.
pub fn combine_fcb(map: &HMMap, fcb: &HMMap, w1: f64, w2: f64) -> Result<HMMap> {
    if !map.same_raster(fcb) {
        return Err(Error::Shape("FCB raster differs from the map".into()));
    }
    let data = fcb.values().iter().zip(map.values()).map(|(f, h)| w1 * f + w2 * h).collect();
    HMMap::from_values(map.width(), map.height(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcbParams {
    pub sigma_f_deg: f64,
    pub w1: f64,
    pub w2: f64,
}

impl FcbParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_f_deg > 0.0 && self.w1 >= 0.0 && self.w2 >= 0.0 && (self.w1 + self.w2 - 1.0).abs() < 1e-9 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid FCB parameters {self:?}")))
        }
    }

    pub fn apply(&self, map: &HMMap, half: bool) -> Result<HMMap> {
        let f = fcb_map(map.width(), map.height(), self.sigma_f_deg, half)?;
        combine_fcb(map, &f, self.w1, self.w2)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializes")).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&s).map_err(|e| Error::format(path, e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

/// Search grid of the FCB fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FcbFitConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub coarse_step: f64,
    pub fine_step: f64,
    pub w1_step: f64,
    /// Use the `2σ²` denominator.
    pub half: bool,
}

impl Default for FcbFitConfig {
    fn default() -> Self {
        Self { sigma_min: 5.0, sigma_max: 60.0, coarse_step: 2.5, fine_step: 0.5, w1_step: 0.01, half: false }
    }
}

/// Second moments of one frame that do not depend on the FCB width.
struct FrameStats {
    var_h: f64,
    var_g: f64,
    cov_hg: f64,
    h: Vec<f64>,
    g: Vec<f64>,
}

fn centred(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    (c, var)
}

fn dotn(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Best `(w1, total CC)` for one FCB width. Each `w1` costs O(frames)
/// because the combined map's CC expands into precomputed moments.
fn best_w1(frames: &[FrameStats], fcb: &[f64], w1_step: f64) -> (f64, f64) {
    let (f, var_f) = centred(fcb);
    let per: Vec<(f64, f64, f64)> = frames.iter().map(|s| (dotn(&f, &s.g), dotn(&f, &s.h), s.var_g)).collect();
    let n = (1.0 / w1_step).round() as usize;
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..=n {
        let a = k as f64 * w1_step;
        let b = 1.0 - a;
        let mut total = 0.0;
        for (s, &(cov_fg, cov_fh, var_g)) in frames.iter().zip(&per) {
            let var_c = a * a * var_f + 2.0 * a * b * cov_fh + b * b * s.var_h;
            if var_c > 0.0 {
                total += (a * cov_fg + b * s.cov_hg) / (var_c * var_g).sqrt();
            }
        }
        if total > best.1 {
            best = (a, total);
        }
    }
    best
}

/// Maximizes the summed CC between `w1·FCB(σ) + (1-w1)·predicted` and the
/// ground-truth maps by a coarse σ grid, a finer grid around the coarse
/// optimum and an exhaustive `w1` grid. Ties go to the smaller σ, then the
/// smaller `w1`. Frames where either map is constant are skipped.
pub fn fit_fcb(predicted: &[HMMap], ground_truth: &[HMMap], config: &FcbFitConfig) -> Result<FcbParams> {
    if predicted.len() != ground_truth.len() || predicted.is_empty() {
        return Err(Error::InvalidInput(format!("{} predicted vs {} ground-truth maps", predicted.len(), ground_truth.len())));
    }
    let (w, h) = (predicted[0].width(), predicted[0].height());
    let mut frames = Vec::with_capacity(predicted.len());
    for (t, (p, g)) in predicted.iter().zip(ground_truth).enumerate() {
        if !p.same_raster(&predicted[0]) || !g.same_raster(p) {
            return Err(Error::Shape(format!("frame {t}: raster mismatch")));
        }
        let (hc, var_h) = centred(p.values());
        let (gc, var_g) = centred(g.values());
        if var_h == 0.0 || var_g == 0.0 {
            log::warn!("frame {t}: constant map, skipped in FCB fit");
            continue;
        }
        let cov_hg = dotn(&hc, &gc);
        frames.push(FrameStats { var_h, var_g, cov_hg, h: hc, g: gc });
    }
    if frames.is_empty() {
        return Err(Error::ConstantMap("every frame of the FCB fit"));
    }

    let eval = |sigma: f64| -> Result<(f64, f64)> {
        let f = fcb_map(w, h, sigma, config.half)?;
        Ok(best_w1(&frames, f.values(), config.w1_step))
    };
    let grid = |lo: f64, hi: f64, step: f64| -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    };
    let mut best = (config.sigma_min, 0.0, f64::NEG_INFINITY);
    for s in grid(config.sigma_min, config.sigma_max, config.coarse_step) {
        let (w1, score) = eval(s)?;
        if score > best.2 {
            best = (s, w1, score);
        }
    }
    let lo = (best.0 - config.coarse_step).max(config.sigma_min);
    let hi = (best.0 + config.coarse_step).min(config.sigma_max);
    let mut fine = (f64::INFINITY, 0.0, f64::NEG_INFINITY);
    for s in grid(lo, hi, config.fine_step) {
        let (w1, score) = eval(s)?;
        if score > fine.2 {
            fine = (s, w1, score);
        }
    }
    let (sigma, w1, _) = fine;
    Ok(FcbParams { sigma_f_deg: sigma, w1, w2: 1.0 - w1 })
}
