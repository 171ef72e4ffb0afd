//! Map and viewport metrics.
//!
//! CC and NSS treat every raster cell equally (standard saliency practice);
//! [`Weighting::SolidAngle`] weights cells by `cos(lat)` instead. MO is
//! always solid-angle weighted.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pandata::{build_hm_map, HMMap, HMTrace, FOV_H_DEG, FOV_V_DEG};
use crate::rng::stream_rng;
use crate::sphere::GeoPos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Uniform,
    SolidAngle,
}

fn cell_weights(map: &HMMap, w: Weighting) -> Vec<f64> {
    match w {
        Weighting::Uniform => vec![1.0; map.values().len()],
        Weighting::SolidAngle => (0..map.height())
            .flat_map(|r| std::iter::repeat_n(map.cell_lat(r).to_radians().cos(), map.width()))
            .collect(),
    }
}

/// Weighted mean and population standard deviation.
fn moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let wsum: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    let var = values.iter().zip(weights).map(|(v, w)| w * (v - mean) * (v - mean)).sum::<f64>() / wsum;
    (mean, var.sqrt())
}

/// Pearson correlation over raster cells.
pub fn cc(a: &HMMap, b: &HMMap) -> Result<f64> {
    cc_with(a, b, Weighting::Uniform)
}

pub fn cc_with(a: &HMMap, b: &HMMap, weighting: Weighting) -> Result<f64> {
    if !a.same_raster(b) {
        return Err(Error::Shape(format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    let w = cell_weights(a, weighting);
    let (ma, sa) = moments(a.values(), &w);
    let (mb, sb) = moments(b.values(), &w);
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::ConstantMap("CC of a constant map"));
    }
    let wsum: f64 = w.iter().sum();
    let cov = a.values().iter().zip(b.values()).zip(&w).map(|((x, y), w)| w * (x - ma) * (y - mb)).sum::<f64>() / wsum;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Mean z-score of the map at the cells holding `positions`.
pub fn nss(map: &HMMap, positions: &[GeoPos]) -> Result<f64> {
    nss_with(map, positions, Weighting::Uniform)
}

pub fn nss_with(map: &HMMap, positions: &[GeoPos], weighting: Weighting) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("NSS needs at least one position".into()));
    }
    let (m, s) = moments(map.values(), &cell_weights(map, weighting));
    if s == 0.0 {
        return Err(Error::ConstantMap("NSS of a constant map"));
    }
    Ok(positions.iter().map(|&p| (map.value_at(p) - m) / s).sum::<f64>() / positions.len() as f64)
}

/// Area under the ROC curve separating map values at `positives` from those
/// at `negatives`, by the rank statistic with ties counted as one half.
pub fn shuffled_auc(map: &HMMap, positives: &[GeoPos], negatives: &[GeoPos]) -> Result<f64> {
    let pos: Vec<f64> = positives.iter().map(|&p| map.value_at(p)).collect();
    let neg: Vec<f64> = negatives.iter().map(|&p| map.value_at(p)).collect();
    auc_from_scores(&pos, &neg)
}

/// Rank-statistic AUC of two score samples.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("AUC needs positives and negatives".into()));
    }
    let mut neg = neg.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = neg.partition_point(|&n| n < p);
        let not_above = neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

/// Equal-area sampling of a viewport in its own frame: `width` azimuths
/// across the horizontal field times `height` heights uniform in
/// sin(elevation). Every sample covers the same solid angle, so shares of
/// samples are shares of area.
#[derive(Debug, Clone)]
pub struct MoGrid {
    width: usize,
    height: usize,
    /// Components along (forward, right, up) of the viewport frame.
    local: Vec<[f64; 3]>,
}

/// Default MO grid.
pub const MO_WIDTH: usize = 512;
pub const MO_HEIGHT: usize = 256;

impl MoGrid {
    pub fn new(width: usize, height: usize) -> Self {
        let half_h = (FOV_H_DEG / 2.0).to_radians();
        let sin_v = (FOV_V_DEG / 2.0).to_radians().sin();
        let mut local = Vec::with_capacity(width * height);
        for j in 0..height {
            let z = -sin_v + (j as f64 + 0.5) * 2.0 * sin_v / height as f64;
            let r = (1.0 - z * z).sqrt();
            for i in 0..width {
                let phi = -half_h + (i as f64 + 0.5) * 2.0 * half_h / width as f64;
                local.push([r * phi.cos(), r * phi.sin(), z]);
            }
        }
        Self { width, height, local }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Share of `p`'s viewport that lies inside `g`'s.
    fn share(&self, p: GeoPos, g: GeoPos) -> f64 {
        let vp = Viewport::new(p);
        let vg = Viewport::new(g);
        let inside = self
            .local
            .iter()
            .filter(|[a, b, c]| {
                let v: [f64; 3] = std::array::from_fn(|k| a * vp.fwd[k] + b * vp.right[k] + c * vp.up[k]);
                vg.contains(&v)
            })
            .count();
        inside as f64 / self.local.len() as f64
    }

    /// Intersection over union of the two viewports' spherical areas. Both
    /// viewports have the same area, so IoU = q / (2 - q) with q the
    /// shared fraction, averaged over both directions for exact symmetry.
    pub fn mo(&self, p: GeoPos, g: GeoPos) -> f64 {
        let q = 0.5 * (self.share(p, g) + self.share(g, p));
        q / (2.0 - q)
    }
}

/// A zero-roll viewport: points within ±51.5° azimuth and ±30° elevation of
/// the centre, measured in the frame rotated onto the centre.
#[derive(Debug, Clone, Copy)]
pub struct Viewport {
    fwd: [f64; 3],
    right: [f64; 3],
    up: [f64; 3],
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl Viewport {
    pub fn new(center: GeoPos) -> Self {
        let (up, right) = center.tangent_frame();
        Self { fwd: center.to_unit(), right, up }
    }

    /// Membership without trigonometry: positive depth, azimuth via the
    /// right component against `tan(51.5°)` times depth, elevation via the
    /// up component against `sin(30°)`.
    pub fn contains(&self, v: &[f64; 3]) -> bool {
        let f = dot3(v, &self.fwd);
        if f <= 0.0 {
            return false;
        }
        let tan_h = (FOV_H_DEG / 2.0).to_radians().tan();
        let sin_v = (FOV_V_DEG / 2.0).to_radians().sin();
        dot3(v, &self.right).abs() <= tan_h * f && dot3(v, &self.up).abs() <= sin_v
    }

    /// Spherical area of one viewport in steradians.
    pub fn area() -> f64 {
        FOV_H_DEG.to_radians() * 2.0 * (FOV_V_DEG / 2.0).to_radians().sin()
    }
}

/// MO at the default 512×256 grid per viewport.
pub fn mo(p: GeoPos, g: GeoPos) -> f64 {
    thread_local! {
        static GRID: MoGrid = MoGrid::new(MO_WIDTH, MO_HEIGHT);
    }
    GRID.with(|grid| grid.mo(p, g))
}

/// Scores of one frame; `None` where the metric is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub frame: usize,
    pub cc: Option<f64>,
    pub nss: Option<f64>,
    pub sauc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScores {
    pub cc: f64,
    pub nss: f64,
    pub sauc: f64,
    pub per_frame: Vec<FrameScores>,
}

pub type EvalReport = BTreeMap<String, VideoScores>;

/// One video's predicted maps and ground-truth traces.
pub struct EvalVideo<'a> {
    pub video_id: String,
    pub maps: &'a [HMMap],
    pub traces: Vec<&'a HMTrace>,
}

/// Number of other frames whose positions serve as shuffled-AUC negatives.
pub const SAUC_NEGATIVE_FRAMES: usize = 10;

fn mean_defined(it: impl Iterator<Item = Option<f64>>) -> f64 {
    let v: Vec<f64> = it.flatten().collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// CC against ground-truth maps built from the subjects' positions, NSS at
/// those positions, and shuffled AUC with negatives from other videos (or
/// other frames of the same video when there is only one video).
pub fn evaluate(videos: &[EvalVideo<'_>], sigma_smooth: f64, seed: u64) -> Result<EvalReport> {
    let mut report = EvalReport::new();
    for (vi, v) in videos.iter().enumerate() {
        let len = v.traces.first().ok_or_else(|| Error::InvalidInput(format!("video {} has no traces", v.video_id)))?.len();
        if v.traces.iter().any(|t| t.len() != len) || v.maps.len() != len {
            return Err(Error::InvalidInput(format!("video {}: {} maps for traces of {} frames", v.video_id, v.maps.len(), len)));
        }
        let mut rng = stream_rng(seed, 500 + vi as u64);
        let mut per_frame = Vec::with_capacity(len);
        for t in 0..len {
            let map = &v.maps[t];
            let positions: Vec<GeoPos> = v.traces.iter().map(|tr| tr.positions[t]).collect();
            let gt = build_hm_map(&positions, map.width(), map.height(), sigma_smooth)?;
            let cc_t = ok_or_skip(cc(map, &gt), &v.video_id, t)?;
            let nss_t = ok_or_skip(nss(map, &positions), &v.video_id, t)?;
            let negatives = shuffled_negatives(videos, vi, t, &mut rng);
            let sauc_t = if negatives.is_empty() { None } else { Some(shuffled_auc(map, &positions, &negatives)?) };
            per_frame.push(FrameScores { frame: t, cc: cc_t, nss: nss_t, sauc: sauc_t });
        }
        if per_frame.iter().all(|f| f.nss.is_none()) {
            return Err(Error::ConstantMap("NSS on every frame"));
        }
        let scores = VideoScores {
            cc: mean_defined(per_frame.iter().map(|f| f.cc)),
            nss: mean_defined(per_frame.iter().map(|f| f.nss)),
            sauc: mean_defined(per_frame.iter().map(|f| f.sauc)),
            per_frame,
        };
        report.insert(v.video_id.clone(), scores);
    }
    Ok(report)
}

fn ok_or_skip(r: Result<f64>, video: &str, frame: usize) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ConstantMap(what)) => {
            log::warn!("video {video} frame {frame}: {what}, skipped");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn shuffled_negatives(videos: &[EvalVideo<'_>], vi: usize, t: usize, rng: &mut crate::rng::Rng) -> Vec<GeoPos> {
    let others: Vec<usize> = (0..videos.len()).filter(|&k| k != vi).collect();
    let mut out = Vec::new();
    for _ in 0..SAUC_NEGATIVE_FRAMES {
        let (video, frame) = if let Some(&k) = others.choose(rng) {
            let n = videos[k].traces[0].len();
            (k, rng.random_range(0..n))
        } else {
            let n = videos[vi].traces[0].len();
            if n < 2 {
                return out;
            }
            // any frame but the current one
            let f = rng.random_range(0..n - 1);
            (vi, if f >= t { f + 1 } else { f })
        };
        out.extend(videos[video].traces.iter().map(|tr| tr.positions[frame]));
    }
    out
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let s = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Flat export: one row per (video, frame); empty cells where undefined.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["video_id", "frame", "cc", "nss", "sauc"]).map_err(|e| Error::format(path, e.to_string()))?;
    for (id, s) in report {
        for f in &s.per_frame {
            w.write_record([id.clone(), f.frame.to_string(), opt(f.cc), opt(f.nss), opt(f.sauc)])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    
    fn random_map(seed: u64) -> HMMap {
        let mut rng = stream_rng(seed, 0);
        HMMap::from_values(64, 32, (0..64 * 32).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn oracle_cc(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for i in 0..a.len() {
            sab += (a[i] - ma) * (b[i] - mb);
            saa += (a[i] - ma).powi(2);
            sbb += (b[i] - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn cc_identities() {
        let m = random_map(1);
        assert!((cc(&m, &m).unwrap() - 1.0).abs() < 1e-12);
        let inv = HMMap::from_values(64, 32, m.values().iter().map(|v| 3.0 - v).collect()).unwrap();
        assert!((cc(&m, &inv).unwrap() + 1.0).abs() < 1e-12);
        let b = random_map(2);
        assert!((cc(&m, &b).unwrap() - oracle_cc(m.values(), b.values())).abs() < 1e-12);
        let flat = HMMap::from_values(64, 32, vec![0.5; 64 * 32]).unwrap();
        assert!(matches!(cc(&m, &flat), Err(Error::ConstantMap(_))));
        assert!(cc(&m, &HMMap::zeros(32, 16)).is_err());
    }

    #[test]
    fn nss_on_a_hand_raster() {
        // 4×2 raster, cells left to right then top to bottom
        let vals = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let m = HMMap::from_values(4, 2, vals).unwrap();
        let mean = 3.5;
        let sd = (42.0f64 / 8.0).sqrt();
        // (lon, lat) at the centres of cells (1, 0) and (3, 1)
        let p1 = GeoPos::new(-45.0, 45.0);
        let p2 = GeoPos::new(135.0, -45.0);
        let want = ((1.0 - mean) / sd + (7.0 - mean) / sd) / 2.0;
        assert!((nss(&m, &[p1, p2]).unwrap() - want).abs() < 1e-12);
        assert!((nss(&m, &[p2]).unwrap() - (7.0 - mean) / sd).abs() < 1e-12);
    }

    #[test]
    fn nss_at_the_maximum_and_under_uniform_sampling() {
        let m = random_map(3);
        let (imax, _) = m.values().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let p = GeoPos::new(m.cell_lon(imax % 64), m.cell_lat(imax / 64));
        let z = nss(&m, &[p]).unwrap();
        let (mu, sd) = moments(m.values(), &vec![1.0; m.values().len()]);
        assert!((z - (m.values()[imax] - mu) / sd).abs() < 1e-12 && z > 0.0);
        let mut rng = stream_rng(3, 1);
        let n = 20_000;
        let pts: Vec<GeoPos> =
            (0..n).map(|_| GeoPos::new(m.cell_lon(rng.random_range(0..64)), m.cell_lat(rng.random_range(0..32)))).collect();
        // standardized values have unit variance
        assert!(nss(&m, &pts).unwrap().abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn affine_invariance() {
        let a = random_map(4);
        let b = random_map(5);
        let t = HMMap::from_values(64, 32, a.values().iter().map(|v| 2.5 * v + 7.0).collect()).unwrap();
        assert!((cc(&a, &b).unwrap() - cc(&t, &b).unwrap()).abs() < 1e-9);
        let pts = [GeoPos::new(10.0, 20.0), GeoPos::new(-100.0, -5.0)];
        assert!((nss(&a, &pts).unwrap() - nss(&t, &pts).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc_from_scores(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc_from_scores(&[0.5, 0.7], &[0.5, 0.7]).unwrap(), 0.5);
        assert!(auc_from_scores(&[], &[1.0]).is_err());
        let mut rng = stream_rng(6, 0);
        let pos: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).round()).collect();
        let neg: Vec<f64> = (0..70).map(|_| (rng.random::<f64>() * 10.0).round()).collect();
        let mut brute = 0.0;
        for p in &pos {
            for n in &neg {
                brute += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        brute /= (pos.len() * neg.len()) as f64;
        assert!((auc_from_scores(&pos, &neg).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn auc_is_rank_invariant() {
        let m = random_map(7);
        let t = HMMap::from_values(64, 32, m.values().iter().map(|v| (3.0 * v).exp()).collect()).unwrap();
        let mut rng = stream_rng(7, 1);
        let pick = |rng: &mut crate::rng::Rng| GeoPos::new(rng.random_range(-180.0..180.0), rng.random_range(-89.0..89.0));
        let pos: Vec<GeoPos> = (0..30).map(|_| pick(&mut rng)).collect();
        let neg: Vec<GeoPos> = (0..40).map(|_| pick(&mut rng)).collect();
        assert!((shuffled_auc(&m, &pos, &neg).unwrap() - shuffled_auc(&t, &pos, &neg).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mo_boundaries() {
        let grid = MoGrid::new(128, 64);
        for p in [GeoPos::origin(), GeoPos::new(33.0, 71.0), GeoPos::new(0.0, 90.0), GeoPos::new(-120.0, -90.0)] {
            assert_eq!(grid.mo(p, p), 1.0);
        }
        assert_eq!(mo(GeoPos::new(20.0, 10.0), GeoPos::new(-160.0, -10.0)), 0.0);
        let a = GeoPos::new(10.0, 5.0);
        let b = GeoPos::new(40.0, -12.0);
        assert_eq!(grid.mo(a, b), grid.mo(b, a));
    }

    #[test]
    fn viewport_area_matches_quadrature() {
        // solid-angle-weighted count of equirectangular cells inside one viewport
        let (w, h) = (1024, 512);
        let vp = Viewport::new(GeoPos::new(17.0, 23.0));
        let cell = (360.0f64 / w as f64).to_radians() * (180.0f64 / h as f64).to_radians();
        let mut area = 0.0;
        for r in 0..h {
            let lat = 90.0 - (r as f64 + 0.5) * 180.0 / h as f64;
            for c in 0..w {
                let lon = -180.0 + (c as f64 + 0.5) * 360.0 / w as f64;
                if vp.contains(&GeoPos::new(lon, lat).to_unit()) {
                    area += cell * lat.to_radians().cos();
                }
            }
        }
        assert!((area - Viewport::area()).abs() / Viewport::area() < 2e-3);
    }

    #[test]
    fn grid_samples_lie_inside_their_viewport() {
        let grid = MoGrid::new(40, 20);
        for p in [GeoPos::new(-70.0, 12.0), GeoPos::new(150.0, -88.0)] {
            assert_eq!(grid.share(p, p), 1.0);
        }
    }

    #[test]
    fn mo_converges_under_refinement() {
        let (a, b) = (GeoPos::new(5.0, 20.0), GeoPos::new(38.0, 41.0));
        let coarse = MoGrid::new(256, 128).mo(a, b);
        let fine = MoGrid::new(1024, 512).mo(a, b);
        assert!(coarse > 0.05 && coarse < 0.95);
        assert!((coarse - fine).abs() < 2e-3, "{coarse} vs {fine}");
    }

    #[test]
    fn horizontal_offset_on_the_equator() {
        // on the equator a pure azimuth offset d slides the box: IoU = (103 - d)/(103 + d)
        let v = mo(GeoPos::origin(), GeoPos::new(30.0, 0.0));
        assert!((v - 73.0 / 133.0).abs() < 2e-3, "{v}");
    }

    #[test]
    fn evaluation_report_shapes() {
        let traces: Vec<HMTrace> = (0..3)
            .map(|s| HMTrace::new("v", format!("s{s}"), (0..4).map(|t| GeoPos::new(5.0 * t as f64 + s as f64, 0.0)).collect()).unwrap())
            .collect();
        let maps: Vec<HMMap> = (0..4).map(|t| build_hm_map(&[GeoPos::new(5.0 * t as f64, 0.0)], 64, 32, 10.0).unwrap()).collect();
        let ev = EvalVideo { video_id: "v".into(), maps: &maps, traces: traces.iter().collect() };
        let report = evaluate(&[ev], 10.0, 1).unwrap();
        let v = &report["v"];
        assert_eq!(v.per_frame.len(), 4);
        assert!(v.cc > 0.9 && v.nss > 1.0 && v.sauc.is_finite());
        let dir = tempfile::tempdir().unwrap();
        write_report_json(&dir.path().join("r.json"), &report).unwrap();
        write_report_csv(&dir.path().join("r.csv"), &report).unwrap();
        let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(back.len(), 1);
    }
}
