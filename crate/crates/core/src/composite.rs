//! Annual radar backscatter composite: per-pixel trimmed mean of VV and VH
//! after incidence-angle normalization, a VH-minus-VV band, and byte scaling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::raster::{check_same_shape, RasterBand, TileWindow, Unit, NODATA_F32};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Orbit {
    Asc,
    Desc,
    Na,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarization {
    Vv,
    Vh,
}

/// Domain in which observations are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingDomain {
    Db,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompositeParams {
    pub trim_fraction: f64,
    pub theta_ref: f64,
    pub default_slope: f64,
    pub averaging: AveragingDomain,
    pub vv_range: (f64, f64),
    pub vh_range: (f64, f64),
    pub diff_range: (f64, f64),
    /// Every n-th pixel of each scene contributes to the slope fit.
    pub slope_fit_stride: usize,
}

impl Default for CompositeParams {
    fn default() -> Self {
        CompositeParams {
            trim_fraction: 0.2,
            theta_ref: 37.5,
            default_slope: -0.1,
            averaging: AveragingDomain::Db,
            vv_range: (-25.0, 0.0),
            vh_range: (-32.0, -2.0),
            diff_range: (-15.0, 3.0),
            slope_fit_stride: 7,
        }
    }
}

impl CompositeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.trim_fraction) {
            return Err(Error::InvalidParameter(format!(
                "trim_fraction {} outside [0, 1)",
                self.trim_fraction
            )));
        }
        for (name, (lo, hi)) in [("vv", self.vv_range), ("vh", self.vh_range), ("diff", self.diff_range)] {
            if lo >= hi {
                return Err(Error::InvalidParameter(format!("{name} byte range lo {lo} >= hi {hi}")));
            }
        }
        if self.slope_fit_stride == 0 {
            return Err(Error::InvalidParameter("slope_fit_stride must be >= 1".into()));
        }
        Ok(())
    }
}

fn valid_db(v: f64) -> bool {
    Unit::Db.contains(v)
}

/// Mean after dropping the `floor(trim_fraction * n)` smallest valid values.
/// Invalid (non-finite or outside the dB domain) values are ignored; an empty
/// remainder yields `None`.
pub fn trimmed_mean(values: &[f64], trim_fraction: f64) -> Option<f64> {
    trimmed_mean_in(values, trim_fraction, AveragingDomain::Db)
}

pub fn trimmed_mean_in(values: &[f64], trim_fraction: f64, domain: AveragingDomain) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|&x| valid_db(x)).collect();
    trimmed_mean_owned(&mut v, trim_fraction, domain)
}

fn trimmed_mean_owned(v: &mut [f64], trim_fraction: f64, domain: AveragingDomain) -> Option<f64> {
    let n = v.len();
    if n == 0 {
        return None;
    }
    let drop = libm::floor(trim_fraction * n as f64) as usize;
    if drop >= n {
        return None;
    }
    v.sort_unstable_by(f64::total_cmp);
    let kept = &v[drop..];
    match domain {
        AveragingDomain::Db => Some(kept.iter().sum::<f64>() / kept.len() as f64),
        AveragingDomain::Linear => {
            let p = kept.iter().map(|&x| libm::pow(10.0, x / 10.0)).sum::<f64>() / kept.len() as f64;
            Some(10.0 * libm::log10(p))
        }
    }
}

/// Linear first-order correction of backscatter to a reference angle.
pub fn normalize_incidence(sigma_db: f64, theta_deg: f64, theta_ref: f64, slope_db_per_deg: f64) -> f64 {
    sigma_db - slope_db_per_deg * (theta_deg - theta_ref)
}

pub const MIN_SLOPE_PAIRS: usize = 10;
pub const MIN_ANGLE_SPREAD_DEG: f64 = 5.0;

/// Ordinary least-squares slope of backscatter (dB) on incidence (degrees).
pub fn estimate_angle_slope(pairs: &[(f64, f64)]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(s, t)| s.is_finite() && t.is_finite())
        .collect();
    if pairs.len() < MIN_SLOPE_PAIRS {
        return Err(Error::InsufficientData(format!(
            "{} angle pairs, need {MIN_SLOPE_PAIRS}; use the fixed default slope",
            pairs.len()
        )));
    }
    let (tmin, tmax) = pairs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, t)| (lo.min(t), hi.max(t)));
    if tmax - tmin < MIN_ANGLE_SPREAD_DEG {
        return Err(Error::InsufficientData(format!(
            "incidence spread {:.2} deg below {MIN_ANGLE_SPREAD_DEG}; use the fixed default slope",
            tmax - tmin
        )));
    }
    let n = pairs.len() as f64;
    let mean_t = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mean_s = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(s, t) in &pairs {
        sxy += (t - mean_t) * (s - mean_s);
        sxx += (t - mean_t) * (t - mean_t);
    }
    Ok(sxy / sxx)
}

/// Maps `v` linearly from `[lo, hi]` onto `0..=255` with clamping and
/// round-half-up.
pub fn byte_scale_value(v: f64, lo: f64, hi: f64) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    libm::floor(255.0 * t + 0.5) as u8
}

/// Byte-scales a dB band. Nodata pixels become 0; validity stays with the
/// source dB band.
pub fn byte_scale(band: &RasterBand, lo: f64, hi: f64, name: &str) -> Result<RasterBand> {
    if lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("byte range lo {lo} must be below hi {hi}")));
    }
    let values = (0..band.len())
        .map(|i| match band.value(i) {
            Some(v) => byte_scale_value(v as f64, lo, hi) as f32,
            None => 0.0,
        })
        .collect();
    RasterBand::new(name, Unit::Byte, None, band.width(), band.height(), values)
}

/// One co-registered radar acquisition.
#[derive(Debug, Clone, Copy)]
pub struct SceneView<'a> {
    pub orbit: Orbit,
    pub vv: &'a RasterBand,
    pub vh: &'a RasterBand,
    pub incidence: Option<&'a RasterBand>,
}

fn incidence_ok(t: f64) -> bool {
    (20.0..=50.0).contains(&t)
}

/// Normalization slope used for one orbit direction and polarization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub orbit: Orbit,
    pub polarization: Polarization,
    pub slope: f64,
    pub fitted: bool,
    pub n_pairs: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlopeTable {
    pub fits: Vec<SlopeFit>,
}

impl SlopeTable {
    pub fn slope(&self, orbit: Orbit, pol: Polarization, default: f64) -> f64 {
        self.fits
            .iter()
            .find(|f| f.orbit == orbit && f.polarization == pol)
            .map_or(default, |f| f.slope)
    }
}

/// Fits one slope per (orbit direction, polarization) over all scenes of the
/// year, falling back to `params.default_slope` when the fit is degenerate.
pub fn fit_angle_slopes(scenes: &[SceneView<'_>], params: &CompositeParams) -> SlopeTable {
    let mut orbits: Vec<Orbit> = scenes.iter().filter(|s| s.incidence.is_some()).map(|s| s.orbit).collect();
    orbits.sort();
    orbits.dedup();
    let mut fits = Vec::new();
    for orbit in orbits {
        for pol in [Polarization::Vv, Polarization::Vh] {
            let mut pairs = Vec::new();
            for s in scenes.iter().filter(|s| s.orbit == orbit) {
                let Some(inc) = s.incidence else { continue };
                let band = match pol {
                    Polarization::Vv => s.vv,
                    Polarization::Vh => s.vh,
                };
                for i in (0..band.len()).step_by(params.slope_fit_stride) {
                    if let (Some(v), Some(t)) = (band.value(i), inc.value(i)) {
                        let (v, t) = (v as f64, t as f64);
                        if valid_db(v) && incidence_ok(t) {
                            pairs.push((v, t));
                        }
                    }
                }
            }
            let n_pairs = pairs.len();
            let fit = match estimate_angle_slope(&pairs) {
                Ok(slope) => SlopeFit { orbit, polarization: pol, slope, fitted: true, n_pairs, note: None },
                Err(e) => SlopeFit {
                    orbit,
                    polarization: pol,
                    slope: params.default_slope,
                    fitted: false,
                    n_pairs,
                    note: Some(alloc::string::ToString::to_string(&e)),
                },
            };
            fits.push(fit);
        }
    }
    SlopeTable { fits }
}

/// Composited VV and VH means for the core region of one tile.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTile {
    pub vv: Vec<f32>,
    pub vh: Vec<f32>,
}

pub fn check_scenes(scenes: &[SceneView<'_>]) -> Result<()> {
    let Some(first) = scenes.first() else {
        return Err(Error::InsufficientData("no radar scenes".into()));
    };
    for s in scenes {
        check_same_shape(&[first.vv, s.vv, s.vh])?;
        if let Some(inc) = s.incidence {
            check_same_shape(&[first.vv, inc])?;
        }
    }
    Ok(())
}

/// Per-pixel composite over the core region of `win`.
pub fn composite_window(
    scenes: &[SceneView<'_>],
    slopes: &SlopeTable,
    params: &CompositeParams,
    win: &TileWindow,
) -> CompositeTile {
    let width = scenes.first().map_or(0, |s| s.vv.width());
    let mut vv_out = Vec::with_capacity(win.len());
    let mut vh_out = Vec::with_capacity(win.len());
    let mut vv_obs = Vec::with_capacity(scenes.len());
    let mut vh_obs = Vec::with_capacity(scenes.len());
    let slope_of: Vec<(f64, f64)> = scenes
        .iter()
        .map(|s| {
            (
                slopes.slope(s.orbit, Polarization::Vv, params.default_slope),
                slopes.slope(s.orbit, Polarization::Vh, params.default_slope),
            )
        })
        .collect();
    for (r, c) in win.pixels() {
        let i = r * width + c;
        vv_obs.clear();
        vh_obs.clear();
        for (s, &(k_vv, k_vh)) in scenes.iter().zip(&slope_of) {
            let theta = match s.incidence {
                Some(inc) => match inc.value(i).map(f64::from) {
                    Some(t) if incidence_ok(t) => Some(t),
                    _ => continue,
                },
                None => None,
            };
            let norm = |v: f64, k: f64| match theta {
                Some(t) => normalize_incidence(v, t, params.theta_ref, k),
                None => v,
            };
            if let Some(v) = s.vv.value(i).map(f64::from).filter(|&v| valid_db(v)) {
                vv_obs.push(norm(v, k_vv));
            }
            if let Some(v) = s.vh.value(i).map(f64::from).filter(|&v| valid_db(v)) {
                vh_obs.push(norm(v, k_vh));
            }
        }
        let to_f32 = |m: Option<f64>| m.map_or(NODATA_F32, |m| m as f32);
        vv_out.push(to_f32(trimmed_mean_owned(&mut vv_obs, params.trim_fraction, params.averaging)));
        vh_out.push(to_f32(trimmed_mean_owned(&mut vh_obs, params.trim_fraction, params.averaging)));
    }
    CompositeTile { vv: vv_out, vh: vh_out }
}

/// The six composite bands. Byte bands share validity with the dB bands.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnualComposite {
    pub vv_mean: RasterBand,
    pub vh_mean: RasterBand,
    pub vhvv_diff: RasterBand,
    pub vv_byte: RasterBand,
    pub vh_byte: RasterBand,
    pub diff_byte: RasterBand,
}

pub const COMPOSITE_BAND_NAMES: [&str; 6] = ["vv_mean", "vh_mean", "vhvv_diff", "vv_byte", "vh_byte", "diff_byte"];

impl AnnualComposite {
    /// Derives the difference band (`VH - VV`, dB) and the byte bands.
    pub fn from_means(vv_mean: RasterBand, vh_mean: RasterBand, params: &CompositeParams) -> Result<Self> {
        check_same_shape(&[&vv_mean, &vh_mean])?;
        let diff: Vec<f32> = vv_mean
            .values()
            .iter()
            .zip(vh_mean.values())
            .enumerate()
            .map(|(i, (&vv, &vh))| {
                if vv_mean.is_valid(i) && vh_mean.is_valid(i) {
                    vh - vv
                } else {
                    NODATA_F32
                }
            })
            .collect();
        let vhvv_diff = RasterBand::new("vhvv_diff", Unit::Db, Some(NODATA_F32), vv_mean.width(), vv_mean.height(), diff)?;
        let vv_byte = byte_scale(&vv_mean, params.vv_range.0, params.vv_range.1, "vv_byte")?;
        let vh_byte = byte_scale(&vh_mean, params.vh_range.0, params.vh_range.1, "vh_byte")?;
        let diff_byte = byte_scale(&vhvv_diff, params.diff_range.0, params.diff_range.1, "diff_byte")?;
        Ok(AnnualComposite {
            vv_mean: vv_mean.with_name("vv_mean"),
            vh_mean: vh_mean.with_name("vh_mean"),
            vhvv_diff,
            vv_byte,
            vh_byte,
            diff_byte,
        })
    }

    pub fn bands(&self) -> [&RasterBand; 6] {
        [&self.vv_mean, &self.vh_mean, &self.vhvv_diff, &self.vv_byte, &self.vh_byte, &self.diff_byte]
    }

    pub fn into_bands(self) -> Vec<RasterBand> {
        alloc::vec![self.vv_mean, self.vh_mean, self.vhvv_diff, self.vv_byte, self.vh_byte, self.diff_byte]
    }

    /// Validity shared by all six bands.
    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.vv_mean.len()).map(|i| self.vhvv_diff.is_valid(i)).collect()
    }
}

/// Whole-image composite on one thread.
pub fn build_composite(scenes: &[SceneView<'_>], params: &CompositeParams) -> Result<(AnnualComposite, SlopeTable)> {
    params.validate()?;
    check_scenes(scenes)?;
    let (w, h) = (scenes[0].vv.width(), scenes[0].vv.height());
    let slopes = fit_angle_slopes(scenes, params);
    let tile = composite_window(scenes, &slopes, params, &TileWindow::full(w, h));
    let vv = RasterBand::new("vv_mean", Unit::Db, Some(NODATA_F32), w, h, tile.vv)?;
    let vh = RasterBand::new("vh_mean", Unit::Db, Some(NODATA_F32), w, h, tile.vh)?;
    Ok((AnnualComposite::from_means(vv, vh, params)?, slopes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn trimmed_mean_examples() {
        assert_eq!(trimmed_mean(&[-8.0, -9.0, -10.0, -11.0, -20.0], 0.2), Some(-9.5));
        assert_eq!(trimmed_mean(&[-10.0], 0.2), Some(-10.0));
        assert_eq!(trimmed_mean(&[-7.0; 5], 0.2), Some(-7.0));
        assert_eq!(trimmed_mean(&[], 0.2), None);
        assert_eq!(trimmed_mean(&[f64::NAN, -9999.0], 0.2), None);
    }

    #[test]
    fn linear_mode_of_constant() {
        let m = trimmed_mean_in(&[-7.0; 4], 0.0, AveragingDomain::Linear).unwrap();
        assert!((m + 7.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        assert!((normalize_incidence(-10.0, 40.0, 37.5, 0.1) + 10.25).abs() < 1e-12);
        assert_eq!(normalize_incidence(-10.0, 37.5, 37.5, 0.3), -10.0);
        assert_eq!(normalize_incidence(-10.0, 44.0, 37.5, 0.0), -10.0);
    }

    #[test]
    fn slope_on_exact_line() {
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| {
            let t = 30.0 + i as f64 * 0.7;
            (-0.12 * t - 5.0, t)
        }).collect();
        assert!((estimate_angle_slope(&pairs).unwrap() + 0.12).abs() < 1e-9);
        let shifted: Vec<(f64, f64)> = pairs.iter().map(|&(s, t)| (s + 3.0, t)).collect();
        assert!((estimate_angle_slope(&shifted).unwrap() - estimate_angle_slope(&pairs).unwrap()).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 35.0)).collect();
        assert!(estimate_angle_slope(&flat).is_err());
        assert!(estimate_angle_slope(&pairs[..5]).is_err());
    }

    #[test]
    fn byte_scale_examples() {
        assert_eq!(byte_scale_value(-25.0, -25.0, 0.0), 0);
        assert_eq!(byte_scale_value(0.0, -25.0, 0.0), 255);
        assert_eq!(byte_scale_value(-12.5, -25.0, 0.0), 128);
        assert_eq!(byte_scale_value(-40.0, -25.0, 0.0), 0);
        let b = RasterBand::new("x", Unit::Db, Some(NODATA_F32), 1, 1, vec![-1.0]).unwrap();
        assert!(byte_scale(&b, 0.0, 0.0, "y").is_err());
    }

    fn band(vals: Vec<f32>) -> RasterBand {
        let n = vals.len();
        RasterBand::new("b", Unit::Db, Some(NODATA_F32), n, 1, vals).unwrap()
    }

    #[test]
    fn composite_drops_speckle_dip() {
        let vv: Vec<RasterBand> = [-8.0, -8.5, -9.0, -7.5, -20.0].iter().map(|&v| band(vec![v, -9999.0])).collect();
        let vh: Vec<RasterBand> = [-14.0, -14.5, -13.0, -15.0, -14.0].iter().map(|&v| band(vec![v, -9999.0])).collect();
        let scenes: Vec<SceneView> = vv.iter().zip(&vh).map(|(a, b)| SceneView { orbit: Orbit::Desc, vv: a, vh: b, incidence: None }).collect();
        let (comp, slopes) = build_composite(&scenes, &CompositeParams::default()).unwrap();
        assert!(slopes.fits.is_empty());
        assert!((comp.vv_mean.values()[0] as f64 - (-8.0 - 8.5 - 9.0 - 7.5) / 4.0).abs() < 1e-6);
        for b in comp.bands().iter().take(3) {
            assert!(!b.is_valid(1));
        }
        assert!(!comp.valid_mask()[1]);
    }

    proptest::proptest! {
        #[test]
        fn trimmed_mean_bounded_and_permutation_invariant(
            mut v in proptest::collection::vec(-50.0f64..10.0, 1..40),
            f in 0.0f64..0.95,
        ) {
            let m = trimmed_mean(&v, f).unwrap();
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            v.reverse();
            proptest::prop_assert!((trimmed_mean(&v, f).unwrap() - m).abs() < 1e-9);
        }

        #[test]
        fn zero_trim_is_plain_mean(v in proptest::collection::vec(-50.0f64..10.0, 1..40)) {
            let plain = v.iter().sum::<f64>() / v.len() as f64;
            proptest::prop_assert!((trimmed_mean(&v, 0.0).unwrap() - plain).abs() < 1e-9);
        }

        #[test]
        fn normalize_identity_at_reference(s in -40.0f64..0.0, k in -1.0f64..1.0, t in 20.0f64..50.0) {
            proptest::prop_assert_eq!(normalize_incidence(s, t, t, k), s);
        }

        #[test]
        fn byte_scale_monotone(a in -60.0f64..20.0, b in -60.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(byte_scale_value(lo, -25.0, 0.0) <= byte_scale_value(hi, -25.0, 0.0));
        }
    }
}
