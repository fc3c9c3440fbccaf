//! Forward model of synthetic scenes with known truth.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, product,
//! index)`, so scenes can be generated in any order or in parallel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::age::ClosureResult;
use crate::composite::Orbit;
use crate::raster::{GridGeometry, RasterBand, Unit, NODATA_F32, NODATA_U16};
use crate::validate::Vote;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandCover {
    Palm,
    Forest,
    Settlement,
    Mangrove,
    Water,
}

impl LandCover {
    pub const ALL: [LandCover; 5] =
        [LandCover::Palm, LandCover::Forest, LandCover::Settlement, LandCover::Mangrove, LandCover::Water];

    pub fn code(self) -> u16 {
        match self {
            LandCover::Palm => 1,
            LandCover::Forest => 2,
            LandCover::Settlement => 3,
            LandCover::Mangrove => 4,
            LandCover::Water => 5,
        }
    }
}

/// Axis-aligned block of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub class: LandCover,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub establishment_year: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-scene Gaussian noise in dB.
    pub radar_sd_db: f64,
    /// Per-observation Gaussian noise added to target NDVI and BSI.
    pub optical_sd: f64,
    pub cloud_rate: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { radar_sd_db: 1.5, optical_sd: 0.0, cloud_rate: 0.3 }
    }
}

/// Class-conditional `(VV, VH)` backscatter means in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadarConstants {
    pub palm: (f64, f64),
    pub forest: (f64, f64),
    pub settlement: (f64, f64),
    pub mangrove: (f64, f64),
    pub water: (f64, f64),
    /// True backscatter change per degree of incidence.
    pub angle_slope_db_per_deg: f64,
    pub theta_near_deg: f64,
    pub theta_far_deg: f64,
    pub revisit_days: u32,
    pub orbit: Orbit,
}

impl Default for RadarConstants {
    fn default() -> Self {
        RadarConstants {
            palm: (-8.0, -14.0),
            forest: (-7.0, -12.0),
            settlement: (-5.0, -11.0),
            mangrove: (-6.5, -13.5),
            water: (-18.0, -24.0),
            angle_slope_db_per_deg: -0.12,
            theta_near_deg: 30.0,
            theta_far_deg: 45.0,
            revisit_days: 12,
            orbit: Orbit::Desc,
        }
    }
}

impl RadarConstants {
    pub fn means(&self, c: LandCover) -> (f64, f64) {
        match c {
            LandCover::Palm => self.palm,
            LandCover::Forest => self.forest,
            LandCover::Settlement => self.settlement,
            LandCover::Mangrove => self.mangrove,
            LandCover::Water => self.water,
        }
    }

    /// Incidence angle at column `col` of a `width`-wide swath.
    pub fn theta(&self, col: usize, width: usize) -> f64 {
        let t = if width > 1 { col as f64 / (width - 1) as f64 } else { 0.5 };
        self.theta_near_deg + t * (self.theta_far_deg - self.theta_near_deg)
    }
}

/// Target `(ndvi, bsi, nir, blue)` of one surface state; red and SWIR1
/// follow from the index definitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptics {
    pub ndvi: f64,
    pub bsi: f64,
    pub nir: f64,
    pub blue: f64,
}

impl SurfaceOptics {
    /// `[blue, red, nir, swir1]` reproducing the target indices.
    pub fn reflectances(&self, ndvi: f64, bsi: f64) -> [f64; 4] {
        let (nir, blue) = (self.nir, self.blue);
        let red = nir * (1.0 - ndvi) / (1.0 + ndvi);
        let swir1 = ((nir + blue) * (1.0 + bsi) / (1.0 - bsi) - red).max(0.0);
        [blue, red, nir, swir1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConstants {
    pub palm_closed: SurfaceOptics,
    pub palm_open: SurfaceOptics,
    pub forest: SurfaceOptics,
    pub settlement: SurfaceOptics,
    pub mangrove: SurfaceOptics,
    pub water: SurfaceOptics,
    /// Reflectance of cloudy pixels in every band.
    pub cloud_reflectance: f64,
    /// QA bit set on cloudy pixels.
    pub cloud_bit: u8,
}

impl Default for OpticalConstants {
    fn default() -> Self {
        let s = |ndvi, bsi, nir, blue| SurfaceOptics { ndvi, bsi, nir, blue };
        OpticalConstants {
            palm_closed: s(0.75, 0.05, 0.30, 0.03),
            palm_open: s(0.55, 0.35, 0.25, 0.05),
            forest: s(0.80, 0.0, 0.32, 0.03),
            settlement: s(0.20, 0.25, 0.20, 0.10),
            mangrove: s(0.70, 0.0, 0.28, 0.03),
            water: s(-0.30, -0.20, 0.03, 0.06),
            cloud_reflectance: 0.35,
            cloud_bit: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: GridGeometry,
    pub parcels: Vec<Parcel>,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub seed: u64,
    #[serde(default = "default_ref_year")]
    pub ref_year: i32,
    #[serde(default = "default_lag")]
    pub closure_lag: i32,
    /// Forest loss is recorded this many years before establishment.
    #[serde(default = "default_loss_lead")]
    pub loss_lead_years: i32,
    #[serde(default = "default_archive_start")]
    pub optical_start_year: i32,
    #[serde(default)]
    pub radar: RadarConstants,
    #[serde(default)]
    pub optical: OpticalConstants,
    /// Peak height of a Gaussian hill centred on the grid, metres.
    #[serde(default = "default_hill")]
    pub hill_height_m: f64,
}

fn default_ref_year() -> i32 {
    2017
}
fn default_lag() -> i32 {
    2
}
fn default_loss_lead() -> i32 {
    5
}
fn default_archive_start() -> i32 {
    1984
}
fn default_hill() -> f64 {
    300.0
}

pub const ARCHIVE_START: i32 = 1984;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.cloud_rate) {
            return Err(Error::InvalidParameter(format!("cloud_rate {} outside [0, 1]", n.cloud_rate)));
        }
        if !(n.radar_sd_db >= 0.0 && n.optical_sd >= 0.0) {
            return Err(Error::InvalidParameter("noise deviations must be >= 0".into()));
        }
        if self.radar.revisit_days == 0 {
            return Err(Error::InvalidParameter("revisit_days must be >= 1".into()));
        }
        if self.optical_start_year > self.ref_year {
            return Err(Error::InvalidParameter("optical_start_year after ref_year".into()));
        }
        for (i, p) in self.parcels.iter().enumerate() {
            if p.rows == 0 || p.cols == 0 || p.row0 + p.rows > self.grid.height || p.col0 + p.cols > self.grid.width {
                return Err(Error::InvalidParameter(format!("parcel {i} outside grid")));
            }
            match (p.class, p.establishment_year) {
                (LandCover::Palm, Some(y)) if (1980..=self.ref_year).contains(&y) => {}
                (LandCover::Palm, _) => {
                    return Err(Error::InvalidParameter(format!(
                        "parcel {i}: palm needs establishment_year in [1980, {}]",
                        self.ref_year
                    )))
                }
                (_, Some(_)) => {
                    return Err(Error::InvalidParameter(format!("parcel {i}: establishment_year on non-palm")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Recursive-split layout generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    pub min_side: usize,
    pub max_side: usize,
    /// Relative weights for palm, forest, settlement, mangrove, water.
    pub class_weights: [f64; 5],
    pub establishment_first: i32,
    pub establishment_last: i32,
}

impl Default for LayoutParams {
    fn default() -> Self {
        LayoutParams {
            min_side: 8,
            max_side: 64,
            class_weights: [0.35, 0.35, 0.10, 0.10, 0.10],
            establishment_first: 1980,
            establishment_last: 2016,
        }
    }
}

fn stream(seed: u64, product: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(product.wrapping_mul(0x1_0000_0000).wrapping_add(index));
    rng
}

const STREAM_LAYOUT: u64 = 1;
const STREAM_RADAR: u64 = 2;
const STREAM_OPTICAL: u64 = 3;
const STREAM_INTERPRET: u64 = 4;

/// Tiles a `width x height` grid with non-overlapping parcels.
pub fn random_layout(width: usize, height: usize, params: &LayoutParams, seed: u64) -> Result<Vec<Parcel>> {
    if params.min_side == 0 || params.max_side < 2 * params.min_side {
        return Err(Error::InvalidParameter("layout needs 1 <= min_side and 2*min_side <= max_side".into()));
    }
    let wsum: f64 = params.class_weights.iter().sum();
    if !(wsum > 0.0) || params.class_weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidParameter("class weights must be >= 0 with positive sum".into()));
    }
    let mut rng = stream(seed, STREAM_LAYOUT, 0);
    let mut stack = vec![(0usize, 0usize, height, width)];
    let mut parcels = Vec::new();
    while let Some((r0, c0, h, w)) = stack.pop() {
        let split_rows = h >= w;
        let side = if split_rows { h } else { w };
        if side > params.max_side {
            let cut = rng.random_range(params.min_side..=side - params.min_side);
            if split_rows {
                stack.push((r0 + cut, c0, h - cut, w));
                stack.push((r0, c0, cut, w));
            } else {
                stack.push((r0, c0 + cut, h, w - cut));
                stack.push((r0, c0, h, cut));
            }
            continue;
        }
        let mut t = rng.random::<f64>() * wsum;
        let mut class = LandCover::Water;
        for (c, &wt) in LandCover::ALL.iter().zip(&params.class_weights) {
            if t < wt {
                class = *c;
                break;
            }
            t -= wt;
        }
        let establishment_year = (class == LandCover::Palm)
            .then(|| rng.random_range(params.establishment_first..=params.establishment_last));
        parcels.push(Parcel { row0: r0, col0: c0, rows: h, cols: w, class, establishment_year });
    }
    Ok(parcels)
}

/// Per-pixel ground truth painted from the parcel list (later parcels win).
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub width: usize,
    pub height: usize,
    /// Land cover per pixel; pixels outside every parcel are forest.
    pub cover: Vec<LandCover>,
    /// Establishment year for palm pixels.
    pub establishment: Vec<Option<i32>>,
    /// Index of the parcel that painted each pixel.
    pub parcel: Vec<u32>,
}

pub fn generate_truth(spec: &SceneSpec) -> Result<Truth> {
    spec.validate()?;
    let (w, h) = (spec.grid.width, spec.grid.height);
    let mut t = Truth {
        width: w,
        height: h,
        cover: vec![LandCover::Forest; w * h],
        establishment: vec![None; w * h],
        parcel: vec![u32::MAX; w * h],
    };
    for (k, p) in spec.parcels.iter().enumerate() {
        for r in p.row0..p.row0 + p.rows {
            for c in p.col0..p.col0 + p.cols {
                let i = r * w + c;
                t.cover[i] = p.class;
                t.establishment[i] = p.establishment_year;
                t.parcel[i] = k as u32;
            }
        }
    }
    Ok(t)
}

impl Truth {
    /// Cover at pixel `i` in `year`: palm parcels are forest before they are
    /// established.
    pub fn cover_in(&self, i: usize, year: i32) -> LandCover {
        match (self.cover[i], self.establishment[i]) {
            (LandCover::Palm, Some(e)) if year < e => LandCover::Forest,
            (c, _) => c,
        }
    }

    pub fn is_palm(&self, i: usize) -> bool {
        self.cover[i] == LandCover::Palm
    }

    /// Generator-dictated closure outcome of a palm pixel.
    pub fn closure(&self, i: usize, spec: &SceneSpec) -> Option<ClosureResult> {
        let e = self.establishment[i]?;
        let y = e + spec.closure_lag;
        Some(if y <= spec.optical_start_year.min(ARCHIVE_START) {
            ClosureResult::PreArchive
        } else if y > spec.ref_year {
            ClosureResult::OpenCanopy
        } else {
            ClosureResult::Dated(y)
        })
    }

    pub fn cover_band(&self) -> RasterBand {
        let v = self.cover.iter().map(|c| c.code() as f32).collect();
        RasterBand::new("truth_cover", Unit::ClassId, Some(NODATA_U16), self.width, self.height, v).unwrap()
    }

    pub fn palm_band(&self) -> RasterBand {
        let v = self.cover.iter().map(|c| (*c == LandCover::Palm) as u8 as f32).collect();
        RasterBand::new("truth_palm", Unit::Flag, Some(NODATA_U16), self.width, self.height, v).unwrap()
    }

    pub fn closure_band(&self, spec: &SceneSpec) -> RasterBand {
        let v = (0..self.cover.len()).map(|i| self.closure(i, spec).map_or(NODATA_U16, |c| c.encode())).collect();
        RasterBand::new("truth_closure_year", Unit::Year, Some(NODATA_U16), self.width, self.height, v).unwrap()
    }

    /// Forest-loss year raster (0 = no loss) placing loss
    /// `loss_lead_years` before establishment.
    pub fn loss_band(&self, spec: &SceneSpec) -> RasterBand {
        let v = self
            .establishment
            .iter()
            .map(|e| e.map_or(0.0, |e| (e - spec.loss_lead_years) as f32))
            .collect();
        RasterBand::new("loss_year", Unit::Year, Some(NODATA_U16), self.width, self.height, v).unwrap()
    }

    /// Three overlapping mangrove masks; each mangrove parcel is covered by
    /// two of them so only their union is complete.
    pub fn mangrove_masks(&self) -> [RasterBand; 3] {
        core::array::from_fn(|k| {
            let v = (0..self.cover.len())
                .map(|i| {
                    let hit = self.cover[i] == LandCover::Mangrove && (self.parcel[i] as usize + k) % 3 != 0;
                    hit as u8 as f32
                })
                .collect();
            RasterBand::new(format!("mangrove{}", k + 1), Unit::Flag, Some(NODATA_U16), self.width, self.height, v)
                .unwrap()
        })
    }

    /// Region ids 1..=4 by quadrant.
    pub fn region_band(&self) -> RasterBand {
        let (w, h) = (self.width, self.height);
        let v = (0..w * h)
            .map(|i| {
                let (r, c) = (i / w, i % w);
                (1 + (r >= h / 2) as u8 * 2 + (c >= w / 2) as u8) as f32
            })
            .collect();
        RasterBand::new("region", Unit::ClassId, Some(NODATA_U16), w, h, v).unwrap()
    }

    /// A competing extent product: truth palm with every fourth palm parcel
    /// missing and every fifth forest parcel added.
    pub fn other_product_band(&self, spec: &SceneSpec) -> RasterBand {
        let v = (0..self.cover.len())
            .map(|i| {
                let k = self.parcel[i] as usize;
                let yes = match self.cover[i] {
                    LandCover::Palm => k % 4 != 0,
                    LandCover::Forest => k < spec.parcels.len() && k % 5 == 0,
                    _ => false,
                };
                yes as u8 as f32
            })
            .collect();
        RasterBand::new("other_extent", Unit::Flag, Some(NODATA_U16), self.width, self.height, v).unwrap()
    }

    /// Smooth terrain with one Gaussian hill.
    pub fn dem_band(&self, spec: &SceneSpec) -> RasterBand {
        let (w, h) = (self.width, self.height);
        let (cr, cc) = (h as f64 * 0.3, w as f64 * 0.7);
        let sigma = (w.min(h) as f64 / 12.0).max(2.0);
        let v = (0..w * h)
            .map(|i| {
                let (r, c) = ((i / w) as f64, (i % w) as f64);
                let d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
                (20.0 + spec.hill_height_m * libm::exp(-d2 / (2.0 * sigma * sigma))) as f32
            })
            .collect();
        RasterBand::new("dem", Unit::Meters, Some(NODATA_F32), w, h, v).unwrap()
    }
}

/// One synthetic Sentinel-1 acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarScene {
    pub date: NaiveDate,
    pub orbit: Orbit,
    pub vv: RasterBand,
    pub vh: RasterBand,
    pub incidence: RasterBand,
}

/// Acquisition dates in `year`, one per revisit starting on 3 January.
pub fn radar_dates(spec: &SceneSpec, year: i32) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let Some(mut d) = NaiveDate::from_ymd_opt(year, 1, 3) else {
        return out;
    };
    while d.year() == year {
        out.push(d);
        d = d + Days::new(spec.radar.revisit_days as u64);
    }
    out
}

pub fn generate_radar_scene(spec: &SceneSpec, truth: &Truth, date: NaiveDate, index: usize) -> RadarScene {
    let (w, h) = (truth.width, truth.height);
    let rc = &spec.radar;
    let mut rng = stream(spec.seed, STREAM_RADAR, ((date.year() as u64) << 16) | index as u64);
    let noise = Normal::new(0.0, spec.noise.radar_sd_db).unwrap();
    let draw = |rng: &mut ChaCha8Rng| if spec.noise.radar_sd_db > 0.0 { noise.sample(rng) } else { 0.0 };
    let mut vv = Vec::with_capacity(w * h);
    let mut vh = Vec::with_capacity(w * h);
    let mut inc = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let theta = rc.theta(i % w, w);
        let (mv, mh) = rc.means(truth.cover_in(i, date.year()));
        let shift = rc.angle_slope_db_per_deg * (theta - 37.5);
        vv.push((mv + shift + draw(&mut rng)).clamp(-60.0, 20.0) as f32);
        vh.push((mh + shift + draw(&mut rng)).clamp(-60.0, 20.0) as f32);
        inc.push(theta as f32);
    }
    let band = |name: &str, unit, v| RasterBand::new(name, unit, Some(NODATA_F32), w, h, v).unwrap();
    RadarScene {
        date,
        orbit: rc.orbit,
        vv: band("vv", Unit::Db, vv),
        vh: band("vh", Unit::Db, vh),
        incidence: band("incidence", Unit::Degrees, inc),
    }
}

pub fn generate_radar_year(spec: &SceneSpec, truth: &Truth, year: i32) -> Vec<RadarScene> {
    radar_dates(spec, year)
        .into_iter()
        .enumerate()
        .map(|(k, d)| generate_radar_scene(spec, truth, d, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpticalSensor {
    L5,
    L7,
}

/// One synthetic Landsat scene: reflectances on a 1e-4 grid plus QA.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalScene {
    pub date: NaiveDate,
    pub sensor: OpticalSensor,
    /// `blue, red, nir, swir1`.
    pub bands: [RasterBand; 4],
    pub qa: RasterBand,
}

pub const OPTICAL_BAND_NAMES: [&str; 4] = ["blue", "red", "nir", "swir1"];

/// Monthly acquisitions on the 15th from `optical_start_year` to `ref_year`.
pub fn optical_dates(spec: &SceneSpec) -> Vec<(NaiveDate, OpticalSensor)> {
    let mut out = Vec::new();
    for y in spec.optical_start_year..=spec.ref_year {
        for m in 1..=12 {
            if let Some(d) = NaiveDate::from_ymd_opt(y, m, 15) {
                out.push((d, if y < 2000 { OpticalSensor::L5 } else { OpticalSensor::L7 }));
            }
        }
    }
    out
}

/// Reflectance as stored on the 16-bit scaled grid.
pub fn quantize_reflectance(v: f64) -> f32 {
    let dn = libm::round(v.clamp(0.0, 1.2) * 10_000.0);
    (dn * 1e-4) as f32
}

impl OpticalConstants {
    pub fn surface(&self, truth: &Truth, i: usize, date: NaiveDate, spec: &SceneSpec) -> SurfaceOptics {
        let year = date.year();
        match truth.cover_in(i, year) {
            LandCover::Palm => {
                let e = truth.establishment[i].unwrap_or(year);
                if year < e + spec.closure_lag {
                    self.palm_open
                } else {
                    self.palm_closed
                }
            }
            LandCover::Forest => self.forest,
            LandCover::Settlement => self.settlement,
            LandCover::Mangrove => self.mangrove,
            LandCover::Water => self.water,
        }
    }
}

pub fn generate_optical_scene(
    spec: &SceneSpec,
    truth: &Truth,
    date: NaiveDate,
    sensor: OpticalSensor,
    index: usize,
) -> OpticalScene {
    let (w, h) = (truth.width, truth.height);
    let oc = &spec.optical;
    let mut rng = stream(spec.seed, STREAM_OPTICAL, index as u64);
    let sd = spec.noise.optical_sd;
    let noise = Normal::new(0.0, sd.max(f64::MIN_POSITIVE)).unwrap();
    let mut bands: [Vec<f32>; 4] = core::array::from_fn(|_| Vec::with_capacity(w * h));
    let mut qa = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let cloudy = spec.noise.cloud_rate > 0.0 && rng.random::<f64>() < spec.noise.cloud_rate;
        let refl = if cloudy {
            [oc.cloud_reflectance; 4]
        } else {
            let s = oc.surface(truth, i, date, spec);
            let (mut nd, mut bs) = (s.ndvi, s.bsi);
            if sd > 0.0 {
                nd = (nd + noise.sample(&mut rng)).clamp(-0.95, 0.95);
                bs = (bs + noise.sample(&mut rng)).clamp(-0.95, 0.95);
            }
            s.reflectances(nd, bs)
        };
        for (b, v) in bands.iter_mut().zip(refl) {
            b.push(quantize_reflectance(v));
        }
        qa.push(if cloudy { (1u32 << oc.cloud_bit) as f32 } else { 0.0 });
    }
    let [b, r, n, s] = bands;
    let band = |name: &str, v| RasterBand::new(name, Unit::Reflectance, Some(NODATA_F32), w, h, v).unwrap();
    OpticalScene {
        date,
        sensor,
        bands: [band("blue", b), band("red", r), band("nir", n), band("swir1", s)],
        qa: RasterBand::new("qa", Unit::Flag, None, w, h, qa).unwrap(),
    }
}

pub fn generate_optical_series(spec: &SceneSpec, truth: &Truth) -> Vec<OpticalScene> {
    optical_dates(spec)
        .into_iter()
        .enumerate()
        .map(|(k, (d, s))| generate_optical_scene(spec, truth, d, s, k))
        .collect()
}

/// Simulated photo-interpretation: each location gets `n_votes` votes that
/// match the reference with probability `1 - error_rate`.
pub fn simulate_interpretations(
    locations: &[(usize, usize)],
    reference: impl Fn(usize, usize) -> bool,
    n_votes: usize,
    error_rate: f64,
    seed: u64,
) -> Vec<Vec<Vote>> {
    let mut rng = stream(seed, STREAM_INTERPRET, 0);
    locations
        .iter()
        .map(|&(r, c)| {
            let truth = reference(r, c);
            (0..n_votes)
                .map(|_| {
                    let right = rng.random::<f64>() >= error_rate;
                    if truth == right {
                        Vote::Palm
                    } else {
                        Vote::NotPalm
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optical::{bsi, ndvi};

    fn spec(w: usize, h: usize, seed: u64) -> SceneSpec {
        let grid = GridGeometry::new(32647, (500_000.0, 200_000.0), (30.0, -30.0), w, h).unwrap();
        SceneSpec {
            grid,
            parcels: random_layout(w, h, &LayoutParams { min_side: 4, max_side: 16, ..Default::default() }, seed).unwrap(),
            noise: NoiseSpec::default(),
            seed,
            ref_year: 2017,
            closure_lag: 2,
            loss_lead_years: 5,
            optical_start_year: 1984,
            radar: RadarConstants::default(),
            optical: OpticalConstants::default(),
            hill_height_m: 300.0,
        }
    }

    #[test]
    fn layout_covers_grid_once() {
        let s = spec(50, 37, 4);
        let mut hits = vec![0u8; 50 * 37];
        for p in &s.parcels {
            for r in p.row0..p.row0 + p.rows {
                for c in p.col0..p.col0 + p.cols {
                    hits[r * 50 + c] += 1;
                }
            }
        }
        assert!(hits.iter().all(|&h| h == 1));
        s.validate().unwrap();
    }

    #[test]
    fn zero_noise_radar_is_class_constant() {
        let mut s = spec(24, 24, 1);
        s.noise.radar_sd_db = 0.0;
        s.radar.angle_slope_db_per_deg = 0.0;
        let t = generate_truth(&s).unwrap();
        let sc = generate_radar_scene(&s, &t, NaiveDate::from_ymd_opt(2017, 1, 3).unwrap(), 0);
        for i in 0..24 * 24 {
            let (vv, vh) = s.radar.means(t.cover_in(i, 2017));
            assert_eq!((sc.vv.values()[i], sc.vh.values()[i]), (vv as f32, vh as f32));
        }
        let rc = RadarConstants::default();
        let margin = (rc.forest.1 - rc.forest.0) - (rc.palm.1 - rc.palm.0);
        assert!(margin >= 1.0);
    }

    #[test]
    fn reproducible() {
        let s = spec(16, 16, 9);
        let t = generate_truth(&s).unwrap();
        let d = NaiveDate::from_ymd_opt(2017, 5, 15).unwrap();
        assert_eq!(generate_radar_scene(&s, &t, d, 3), generate_radar_scene(&s, &t, d, 3));
        assert_eq!(
            generate_optical_scene(&s, &t, d, OpticalSensor::L7, 7),
            generate_optical_scene(&s, &t, d, OpticalSensor::L7, 7)
        );
        assert_ne!(generate_radar_scene(&s, &t, d, 3).vv, generate_radar_scene(&s, &t, d, 4).vv);
    }

    #[test]
    fn surface_indices_reproduced() {
        let oc = OpticalConstants::default();
        for s in [oc.palm_closed, oc.palm_open, oc.forest, oc.settlement, oc.mangrove, oc.water] {
            let [b, r, n, w] = s.reflectances(s.ndvi, s.bsi);
            assert!((ndvi(n, r).unwrap() - s.ndvi).abs() < 1e-12);
            assert!((bsi(w, r, n, b).unwrap() - s.bsi).abs() < 1e-12);
        }
    }

    #[test]
    fn truth_closure_and_clouds() {
        let mut s = spec(40, 40, 2);
        s.parcels = vec![Parcel { row0: 0, col0: 0, rows: 40, cols: 40, class: LandCover::Palm, establishment_year: Some(1998) }];
        let t = generate_truth(&s).unwrap();
        assert_eq!(t.closure(0, &s), Some(ClosureResult::Dated(2000)));
        s.noise.cloud_rate = 0.0;
        let d = NaiveDate::from_ymd_opt(2005, 3, 15).unwrap();
        assert!(generate_optical_scene(&s, &t, d, OpticalSensor::L7, 0).qa.values().iter().all(|&q| q == 0.0));
        s.noise.cloud_rate = 0.3;
        let qa = generate_optical_scene(&s, &t, d, OpticalSensor::L7, 1).qa;
        let clear = qa.values().iter().filter(|&&q| q == 0.0).count() as f64 / 1600.0;
        assert!((clear - 0.7).abs() <= 0.05, "clear fraction {clear}");
    }
}
