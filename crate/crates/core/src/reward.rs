//! Gaussian similarity rewards for predicted scanpath direction and magnitude.
//!
//! Each subject contributes a product of Gaussian factors: heading agreement
//! (phase difference against `rho`), positional validity (great-circle
//! distance against `varrho`) and, for the magnitude reward, speed agreement
//! (against `varsigma`). Contributions are averaged over the subjects.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pandata::ScanpathStep;
use crate::sphere::{great_circle_dist, phase_diff, ArcLen, Bearing, GeoPos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleUnit {
    Deg,
    Rad,
}

impl AngleUnit {
    fn from_deg(self, deg: f64) -> f64 {
        match self {
            AngleUnit::Deg => deg,
            AngleUnit::Rad => deg.to_radians(),
        }
    }
}

/// Reward scales. Distances are converted into each scale's unit before
/// dividing, so `rho = 42` degrees and `varrho = 0.7` radians by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub rho: f64,
    pub rho_unit: AngleUnit,
    pub varrho: f64,
    pub varrho_unit: AngleUnit,
    /// Magnitude scale in degrees per frame.
    pub varsigma: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { rho: 42.0, rho_unit: AngleUnit::Deg, varrho: 0.7, varrho_unit: AngleUnit::Rad, varsigma: 1.0 }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if self.rho > 0.0 && self.varrho > 0.0 && self.varsigma > 0.0 {
            Ok(())
        } else {
            Err(Error::Config("reward scales must be strictly positive".into()))
        }
    }
}

/// Positions and steps of the `M` reference subjects at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    entries: Vec<(GeoPos, ScanpathStep)>,
}

impl GroundTruthSet {
    pub fn new(entries: Vec<(GeoPos, ScanpathStep)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("ground truth needs at least one subject".into()));
        }
        Ok(Self { entries })
    }

    pub fn single(pos: GeoPos, step: ScanpathStep) -> Self {
        Self { entries: vec![(pos, step)] }
    }

    pub fn entries(&self) -> &[(GeoPos, ScanpathStep)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[inline]
fn gauss(x: f64, scale: f64) -> f64 {
    let z = x / scale;
    (-0.5 * z * z).exp()
}

/// Heading and position factor of one subject.
#[inline]
fn validity(pred_pos: GeoPos, pred_dir: Bearing, pos: GeoPos, step: &ScanpathStep, p: &RewardParams) -> f64 {
    let dd = p.rho_unit.from_deg(phase_diff(pred_dir, step.dir));
    let ds = p.varrho_unit.from_deg(great_circle_dist(pred_pos, pos).deg());
    gauss(dd, p.rho) * gauss(ds, p.varrho)
}

pub fn reward_alpha(pred_pos: GeoPos, pred_dir: Bearing, gt: &GroundTruthSet, params: &RewardParams) -> f64 {
    let n = gt.len() as f64;
    gt.entries.iter().map(|(pos, step)| validity(pred_pos, pred_dir, *pos, step, params)).sum::<f64>() / n
}

pub fn reward_nu(pred_pos: GeoPos, pred_step: ScanpathStep, gt: &GroundTruthSet, params: &RewardParams) -> f64 {
    evaluate(pred_pos, pred_step.dir, pred_step.mag, gt, params).nu
}

/// `∂ reward_nu / ∂ magnitude` with position and heading held fixed.
pub fn grad_reward_nu_wrt_mag(pred_pos: GeoPos, pred_step: ScanpathStep, gt: &GroundTruthSet, params: &RewardParams) -> f64 {
    evaluate(pred_pos, pred_step.dir, pred_step.mag, gt, params).dnu_dmag
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEval {
    pub alpha: f64,
    pub nu: f64,
    pub dnu_dmag: f64,
}

/// Both rewards and the magnitude gradient in one pass over the subjects.
///
/// The heading is passed separately from the magnitude so that a zero
/// predicted magnitude keeps the sampled heading.
pub fn evaluate(pred_pos: GeoPos, pred_dir: Bearing, pred_mag: ArcLen, gt: &GroundTruthSet, params: &RewardParams) -> RewardEval {
    let n = gt.len() as f64;
    let mut alpha = 0.0;
    let mut nu = 0.0;
    let mut dnu = 0.0;
    for (pos, step) in &gt.entries {
        let v = validity(pred_pos, pred_dir, *pos, step, params);
        let diff = pred_mag.deg() - step.mag.deg();
        let g = gauss(diff, params.varsigma);
        alpha += v;
        nu += v * g;
        dnu += -v * g * diff / (params.varsigma * params.varsigma);
    }
    RewardEval { alpha: alpha / n, nu: nu / n, dnu_dmag: dnu / n }
}
