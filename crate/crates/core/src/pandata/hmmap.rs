use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{wrap_lon_diff, GeoPos};

pub const DEFAULT_MAP_WIDTH: usize = 256;
pub const DEFAULT_MAP_HEIGHT: usize = 128;
/// Smoothing width of the per-position Gaussians, degrees.
pub const DEFAULT_SIGMA_SMOOTH: f64 = 10.0;

/// Scalar field over an equirectangular raster (row 0 at lat +90°,
/// column 0 at lon -180°).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HMMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl HMMap {
    pub fn from_values(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!("{} values for a {width}x{height} map", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_raster(&self, other: &HMMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn cell_lon(&self, col: usize) -> f64 {
        -180.0 + (col as f64 + 0.5) * 360.0 / self.width as f64
    }

    pub fn cell_lat(&self, row: usize) -> f64 {
        90.0 - (row as f64 + 0.5) * 180.0 / self.height as f64
    }

    /// `(col, row)` of the cell containing `p`.
    pub fn cell_of(&self, p: GeoPos) -> (usize, usize) {
        let c = ((p.lon() + 180.0) / 360.0 * self.width as f64).floor() as isize;
        let r = ((90.0 - p.lat()) / 180.0 * self.height as f64).floor() as isize;
        let c = c.rem_euclid(self.width as isize) as usize;
        let r = r.clamp(0, self.height as isize - 1) as usize;
        (c, r)
    }

    pub fn value_at(&self, p: GeoPos) -> f64 {
        let (c, r) = self.cell_of(p);
        self.get(c, r)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Scales so the peak is 1. All-zero maps are rejected.
    pub fn normalize_max(&mut self) -> Result<()> {
        let m = self.max();
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::InvalidInput("map has no positive peak".into()));
        }
        self.data.iter_mut().for_each(|v| *v /= m);
        Ok(())
    }

    /// Adds `weight * exp(-(dlon² + dlat²) / denom)` centred at `center`,
    /// with wrapped longitude differences. The Gaussian is separable so it
    /// is evaluated as an outer product of per-column and per-row factors.
    pub(crate) fn add_planar_gaussian(&mut self, center: GeoPos, denom: f64, weight: f64) {
        let cols: Vec<f64> = (0..self.width)
            .map(|c| {
                let d = wrap_lon_diff(center.lon(), self.cell_lon(c));
                (-d * d / denom).exp()
            })
            .collect();
        for r in 0..self.height {
            let d = self.cell_lat(r) - center.lat();
            let fr = weight * (-d * d / denom).exp();
            if fr == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.width..(r + 1) * self.width];
            for (v, fc) in row.iter_mut().zip(&cols) {
                *v += fr * fc;
            }
        }
    }
}

/// Sum of (lon, lat)-plane Gaussians of standard deviation `sigma_deg`
/// around each position, max-normalized to peak 1.
pub fn build_hm_map(positions: &[GeoPos], width: usize, height: usize, sigma_deg: f64) -> Result<HMMap> {
    if positions.is_empty() {
        return Err(Error::InvalidInput("HM map needs at least one position".into()));
    }
    if !(sigma_deg > 0.0) {
        return Err(Error::InvalidInput(format!("smoothing width must be positive, got {sigma_deg}")));
    }
    let mut map = HMMap::zeros(width, height);
    let denom = 2.0 * sigma_deg * sigma_deg;
    for &p in positions {
        map.add_planar_gaussian(p, denom, 1.0);
    }
    map.normalize_max()?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_position_peak() {
        let m = build_hm_map(&[GeoPos::origin()], 256, 128, 10.0).unwrap();
        assert_eq!(m.value_at(GeoPos::origin()), 1.0);
        assert_eq!(m.max(), 1.0);
    }

    #[test]
    fn one_sigma_offset() {
        // 360 columns: cell centres at half-degree offsets
        let m = build_hm_map(&[GeoPos::new(0.5, 0.5)], 360, 180, 10.0).unwrap();
        let peak = m.value_at(GeoPos::new(0.5, 0.5));
        let off = m.value_at(GeoPos::new(10.5, 0.5));
        assert!((off / peak - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn antipodal_pair_has_two_unit_peaks() {
        let a = GeoPos::new(-90.0 + 0.703125, 0.703125);
        let b = GeoPos::new(90.0 + 0.703125, -0.703125);
        let m = build_hm_map(&[a, b], 256, 128, 10.0).unwrap();
        // direct evaluation at each cell centre
        let eval = |p: GeoPos| -> f64 {
            [a, b]
                .iter()
                .map(|q| {
                    let dl = wrap_lon_diff(q.lon(), p.lon());
                    let dt = p.lat() - q.lat();
                    (-(dl * dl + dt * dt) / 200.0).exp()
                })
                .sum()
        };
        let (ca, ra) = m.cell_of(a);
        let (cb, rb) = m.cell_of(b);
        let va = eval(GeoPos::new(m.cell_lon(ca), m.cell_lat(ra)));
        let vb = eval(GeoPos::new(m.cell_lon(cb), m.cell_lat(rb)));
        assert!((va - vb).abs() < 1e-12);
        assert!((m.get(ca, ra) - 1.0).abs() < 1e-12);
        assert!((m.get(cb, rb) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wraps_across_dateline() {
        let m = build_hm_map(&[GeoPos::new(179.0, 0.0)], 360, 180, 10.0).unwrap();
        let e = m.value_at(GeoPos::new(-175.5, 0.5));
        let w = m.value_at(GeoPos::new(173.5, 0.5));
        assert!((e - w).abs() < 1e-12);
    }

    #[test]
    fn empty_positions_rejected() {
        assert!(build_hm_map(&[], 16, 8, 10.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn permutation_invariant(pts in proptest::collection::vec((-180.0..180.0f64, -90.0..90.0f64), 1..8)) {
            let ps: Vec<GeoPos> = pts.iter().map(|&(a, b)| GeoPos::new(a, b)).collect();
            let mut rev = ps.clone();
            rev.reverse();
            let m1 = build_hm_map(&ps, 64, 32, 10.0).unwrap();
            let m2 = build_hm_map(&rev, 64, 32, 10.0).unwrap();
            for (a, b) in m1.values().iter().zip(m2.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
