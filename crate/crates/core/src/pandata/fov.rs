use super::Frame;
use crate::sphere::GeoPos;

/// Side length of the square observation fed to the network.
pub const OBS_SIZE: usize = 42;
/// Horizontal and vertical viewport extents in degrees.
pub const FOV_H_DEG: f64 = 103.0;
pub const FOV_V_DEG: f64 = 60.0;

/// Downsampled viewport luma, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    data: Vec<f32>,
}

impl Observation {
    pub fn from_values(data: Vec<f32>) -> Option<Self> {
        (data.len() == OBS_SIZE * OBS_SIZE && data.iter().all(|v| (0.0..=1.0).contains(v)))
            .then_some(Self { data })
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * OBS_SIZE + col]
    }
}

/// Renders the 103°×60° rectilinear viewport centred on `center` (zero roll)
/// directly at 42×42, sampling the panorama bilinearly.
///
/// Rays are built for a centre on the prime meridian and then shifted by the
/// centre longitude, so a column roll of the frame paired with the same
/// longitude shift of the centre reproduces the observation.
pub fn extract_fov(frame: &Frame, center: GeoPos) -> Observation {
    let half_x = (FOV_H_DEG / 2.0).to_radians().tan();
    let half_y = (FOV_V_DEG / 2.0).to_radians().tan();
    let (slat, clat) = center.lat().to_radians().sin_cos();
    // viewport basis for a centre at longitude 0
    let fwd = [clat, 0.0, slat];
    let up = [-slat, 0.0, clat];

    let w = frame.width() as f64;
    let h = frame.height() as f64;
    let n = OBS_SIZE as f64;
    let mut data = Vec::with_capacity(OBS_SIZE * OBS_SIZE);
    for i in 0..OBS_SIZE {
        let y = half_y * (1.0 - 2.0 * (i as f64 + 0.5) / n);
        for j in 0..OBS_SIZE {
            let x = half_x * (2.0 * (j as f64 + 0.5) / n - 1.0);
            // right vector is +y for a centre on lon 0
            let d = [fwd[0] + y * up[0], x, fwd[2] + y * up[2]];
            let lon_rel = d[1].atan2(d[0]).to_degrees();
            let lat = d[2].atan2(d[0].hypot(d[1])).to_degrees();
            let fx = (lon_rel + 180.0) / 360.0 * w + center.lon() / 360.0 * w - 0.5;
            let fy = (90.0 - lat) / 180.0 * h - 0.5;
            data.push((sample_bilinear(frame, fx, fy) / 255.0) as f32);
        }
    }
    Observation { data }
}

fn sample_bilinear(frame: &Frame, fx: f64, fy: f64) -> f64 {
    let w = frame.width() as isize;
    let hmax = frame.height() as f64 - 1.0;
    let fy = fy.clamp(0.0, hmax);
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let c0 = (x0 as isize).rem_euclid(w) as usize;
    let c1 = (x0 as isize + 1).rem_euclid(w) as usize;
    let r0 = y0 as usize;
    let r1 = (r0 + 1).min(frame.height() - 1);
    let p = |c: usize, r: usize| frame.get(c, r) as f64;
    let top = p(c0, r0) * (1.0 - tx) + p(c1, r0) * tx;
    let bot = p(c0, r1) * (1.0 - tx) + p(c1, r1) * tx;
    top * (1.0 - ty) + bot * ty
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(o: &Observation) -> (usize, usize) {
        let (k, _) = o
            .values()
            .iter()
            .enumerate()
            .fold((0, f32::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        (k / OBS_SIZE, k % OBS_SIZE)
    }

    fn frame_with_blob(w: usize, h: usize, lon: f64, lat: f64) -> Frame {
        let mut f = Frame::filled(w, h, 20).unwrap();
        let mut px = f.pixels().to_vec();
        for r in 0..h {
            for c in 0..w {
                let p = f.pixel_center(c, r);
                let d = crate::sphere::great_circle_dist(p, GeoPos::new(lon, lat)).deg();
                if d < 6.0 {
                    px[r * w + c] = 250;
                }
            }
        }
        f = Frame::new(w, h, px).unwrap();
        f
    }

    #[test]
    fn constant_frame_gives_constant_observation() {
        let f = Frame::filled(128, 64, 128).unwrap();
        for c in [GeoPos::origin(), GeoPos::new(100.0, 80.0), GeoPos::new(-30.0, -90.0)] {
            let o = extract_fov(&f, c);
            assert!(o.values().iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
        }
    }

    #[test]
    fn single_pixel_peaks_at_center() {
        let mut px = vec![0u8; 128 * 64];
        // pixel whose centre is nearest (0, 0)
        px[31 * 128 + 64] = 255;
        let f = Frame::new(128, 64, px).unwrap();
        let center = f.pixel_center(64, 31);
        let o = extract_fov(&f, center);
        let (r, c) = argmax(&o);
        assert!((20..=21).contains(&r) && (20..=21).contains(&c), "argmax at {r},{c}");
        assert!(o.get(r, c) > 0.0);
    }

    #[test]
    fn blob_behind_viewer_is_invisible() {
        let f = frame_with_blob(128, 64, 0.0, 0.0);
        let o = extract_fov(&f, GeoPos::new(180.0, 0.0));
        assert!(o.values().iter().all(|&v| (v - 20.0 / 255.0).abs() < 1e-6));
        let o = extract_fov(&f, GeoPos::origin());
        assert!(o.values().iter().any(|&v| v > 0.9));
    }

    #[test]
    fn blob_east_of_center_shows_on_the_right() {
        let f = frame_with_blob(256, 128, 30.0, 0.0);
        let (_, c) = argmax(&extract_fov(&f, GeoPos::origin()));
        // gnomonic column of a 30° offset: tan 30° / tan 51.5° of the half-width
        let expect = 21.0 * (1.0 + 30f64.to_radians().tan() / 51.5f64.to_radians().tan()) - 0.5;
        assert!((c as f64 - expect).abs() <= 1.0, "column {c} vs {expect}");
        let f = frame_with_blob(256, 128, 0.0, 20.0);
        let (r, _) = argmax(&extract_fov(&f, GeoPos::origin()));
        assert!(r < 10, "row {r}");
    }

    #[test]
    fn column_roll_is_a_longitude_shift() {
        let f = frame_with_blob(64, 32, 20.0, 10.0);
        let base = GeoPos::new(5.0, 12.0);
        let o1 = extract_fov(&f, base);
        for shift in [1isize, 7, -13, 40] {
            let rolled = f.roll_columns(shift);
            let c = GeoPos::new(base.lon() + shift as f64 * 360.0 / 64.0, base.lat());
            let o2 = extract_fov(&rolled, c);
            for (a, b) in o1.values().iter().zip(o2.values()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pole_centers_are_finite() {
        let f = frame_with_blob(64, 32, 0.0, 85.0);
        let o = extract_fov(&f, GeoPos::new(0.0, 90.0));
        assert!(o.values().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}
