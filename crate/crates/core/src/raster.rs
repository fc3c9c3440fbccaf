//! Georeferenced raster model and tiled traversal.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical unit of a band. Each unit has one fixed on-disk sample type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    #[serde(rename = "dB")]
    Db,
    Reflectance,
    Index,
    Byte,
    ClassId,
    Year,
    Degrees,
    Flag,
    Meters,
    /// GLCM gray-level statistics such as SAVG.
    GrayLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleType {
    F32,
    U8,
    U16,
}

impl Unit {
    pub const ALL: [Unit; 10] = [
        Unit::Db,
        Unit::Reflectance,
        Unit::Index,
        Unit::Byte,
        Unit::ClassId,
        Unit::Year,
        Unit::Degrees,
        Unit::Flag,
        Unit::Meters,
        Unit::GrayLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Unit::Db => "dB",
            Unit::Reflectance => "reflectance",
            Unit::Index => "index",
            Unit::Byte => "byte",
            Unit::ClassId => "class_id",
            Unit::Year => "year",
            Unit::Degrees => "degrees",
            Unit::Flag => "flag",
            Unit::Meters => "meters",
            Unit::GrayLevel => "gray_level",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        Unit::ALL.into_iter().find(|u| u.name().eq_ignore_ascii_case(s))
    }

    /// Closed legal interval for non-nodata values, if the unit has one.
    pub fn domain(self) -> Option<(f64, f64)> {
        match self {
            Unit::Db => Some((-60.0, 20.0)),
            Unit::Reflectance => Some((0.0, 1.2)),
            Unit::Index => Some((-1.0, 1.0)),
            Unit::Byte => Some((0.0, 255.0)),
            Unit::ClassId | Unit::Year | Unit::Flag => Some((0.0, 65535.0)),
            Unit::GrayLevel => Some((0.0, 510.0)),
            Unit::Degrees | Unit::Meters => None,
        }
    }

    pub fn is_integral(self) -> bool {
        matches!(self, Unit::Byte | Unit::ClassId | Unit::Year | Unit::Flag)
    }

    pub fn sample_type(self) -> SampleType {
        match self {
            Unit::Db | Unit::Index | Unit::Reflectance | Unit::Degrees | Unit::Meters | Unit::GrayLevel => {
                SampleType::F32
            }
            Unit::Byte => SampleType::U8,
            Unit::ClassId | Unit::Year | Unit::Flag => SampleType::U16,
        }
    }

    /// Nodata value used when a stage creates a band of this unit. Byte bands
    /// use the full 0..=255 range and carry validity through a companion band.
    pub fn default_nodata(self) -> Option<f32> {
        match self.sample_type() {
            SampleType::F32 => Some(NODATA_F32),
            SampleType::U8 => None,
            SampleType::U16 => Some(NODATA_U16),
        }
    }

    pub fn contains(self, v: f64) -> bool {
        match self.domain() {
            Some((lo, hi)) => {
                v >= lo && v <= hi && (!self.is_integral() || libm::floor(v) == v)
            }
            None => v.is_finite(),
        }
    }
}

impl core::fmt::Display for Unit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

pub const NODATA_F32: f32 = -9999.0;
pub const NODATA_U16: f32 = 65535.0;

/// Axis-aligned bounding box in CRS units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

/// Affine north-up (or south-up) pixel grid in one CRS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub epsg: u32,
    pub origin_x: f64,
    pub origin_y: f64,
    pub px_size_x: f64,
    pub px_size_y: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(
        epsg: u32,
        origin: (f64, f64),
        px_size: (f64, f64),
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let g = GridGeometry {
            epsg,
            origin_x: origin.0,
            origin_y: origin.1,
            px_size_x: px_size.0,
            px_size_y: px_size.1,
            width,
            height,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid(format!(
                "empty grid {}x{}",
                self.width, self.height
            )));
        }
        let finite = [self.origin_x, self.origin_y, self.px_size_x, self.px_size_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.px_size_x == 0.0 || self.px_size_y == 0.0 {
            return Err(Error::InvalidGrid("pixel size must be finite and non-zero".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel area in squared CRS units.
    pub fn pixel_area(&self) -> f64 {
        libm::fabs(self.px_size_x * self.px_size_y)
    }

    /// Ground resolution in metres along x and y. Geographic grids use a
    /// spherical approximation at the grid's central latitude.
    pub fn meters_per_pixel(&self) -> (f64, f64) {
        if self.epsg == 4326 {
            let b = self.bbox();
            let lat = 0.5 * (b.min_y + b.max_y);
            let m_per_deg = 111_320.0;
            (
                libm::fabs(self.px_size_x) * m_per_deg * libm::cos(lat.to_radians()),
                libm::fabs(self.px_size_y) * m_per_deg,
            )
        } else {
            (libm::fabs(self.px_size_x), libm::fabs(self.px_size_y))
        }
    }

    /// Pixel area in square metres.
    pub fn pixel_area_m2(&self) -> f64 {
        let (mx, my) = self.meters_per_pixel();
        mx * my
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.px_size_x,
            self.origin_y + (row as f64 + 0.5) * self.px_size_y,
        )
    }

    /// Pixel containing map coordinate `(x, y)`, if inside the grid.
    pub fn pixel_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = libm::floor((x - self.origin_x) / self.px_size_x);
        let r = libm::floor((y - self.origin_y) / self.px_size_y);
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn bbox(&self) -> BBox {
        let x1 = self.origin_x + self.width as f64 * self.px_size_x;
        let y1 = self.origin_y + self.height as f64 * self.px_size_y;
        BBox {
            min_x: self.origin_x.min(x1),
            min_y: self.origin_y.min(y1),
            max_x: self.origin_x.max(x1),
            max_y: self.origin_y.max(y1),
        }
    }

    pub fn same_shape(&self, other: &GridGeometry) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn tiles(&self, tile: usize, halo: usize) -> Result<Vec<TileWindow>> {
        iter_tiles(self.width, self.height, tile, halo)
    }
}

/// One named band of `width * height` samples stored row-major.
///
/// Values are held as `f32` regardless of unit so that every on-disk sample
/// type round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterBand {
    pub name: String,
    pub unit: Unit,
    pub nodata: Option<f32>,
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl RasterBand {
    pub fn new(
        name: impl Into<String>,
        unit: Unit,
        nodata: Option<f32>,
        width: usize,
        height: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "band `{name}` has {} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(RasterBand {
            name,
            unit,
            nodata,
            width,
            height,
            values,
        })
    }

    pub fn filled(
        name: impl Into<String>,
        unit: Unit,
        nodata: Option<f32>,
        width: usize,
        height: usize,
        value: f32,
    ) -> Self {
        RasterBand {
            name: name.into(),
            unit,
            nodata,
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn is_nodata_value(&self, v: f32) -> bool {
        v.is_nan() || self.nodata == Some(v)
    }

    pub fn is_valid(&self, i: usize) -> bool {
        !self.is_nodata_value(self.values[i])
    }

    /// Value at flat index `i`, or `None` for nodata.
    pub fn value(&self, i: usize) -> Option<f32> {
        let v = self.values[i];
        (!self.is_nodata_value(v)).then_some(v)
    }

    /// Nodata marker to write into output pixels derived from this band.
    pub fn nodata_or_default(&self) -> f32 {
        self.nodata
            .or(self.unit.default_nodata())
            .unwrap_or(f32::NAN)
    }

    pub fn same_shape(&self, other: &RasterBand) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn matches_grid(&self, grid: &GridGeometry) -> bool {
        self.width == grid.width && self.height == grid.height
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Checks every non-nodata value against the unit's legal domain.
    pub fn check_domain(&self) -> Result<()> {
        for &v in &self.values {
            if self.is_nodata_value(v) {
                continue;
            }
            if !self.unit.contains(v as f64) {
                return Err(Error::Domain {
                    band: self.name.clone(),
                    unit: self.unit.name(),
                    value: v as f64,
                });
            }
        }
        Ok(())
    }

    /// Number of pixels equal to `1` (positives in a flag band).
    pub fn count_positive(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }
}

/// Ensures all bands share one shape.
pub fn check_same_shape(bands: &[&RasterBand]) -> Result<()> {
    if let Some(first) = bands.first() {
        for b in &bands[1..] {
            if !first.same_shape(b) {
                return Err(Error::ShapeMismatch(format!(
                    "band `{}` is {}x{} but `{}` is {}x{}",
                    b.name, b.width, b.height, first.name, first.width, first.height
                )));
            }
        }
    }
    Ok(())
}

/// A unit of tiled work: the core region `(x0, y0, w, h)` written by the
/// worker, plus a read region grown by `halo` and clipped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileWindow {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    pub halo: usize,
    pub read_x0: usize,
    pub read_y0: usize,
    pub read_w: usize,
    pub read_h: usize,
}

impl TileWindow {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize, halo: usize, width: usize, height: usize) -> Self {
        let read_x0 = x0.saturating_sub(halo);
        let read_y0 = y0.saturating_sub(halo);
        let read_x1 = (x0 + w + halo).min(width);
        let read_y1 = (y0 + h + halo).min(height);
        TileWindow {
            x0,
            y0,
            w,
            h,
            halo,
            read_x0,
            read_y0,
            read_w: read_x1 - read_x0,
            read_h: read_y1 - read_y0,
        }
    }

    /// Single window covering a whole `width x height` grid.
    pub fn full(width: usize, height: usize) -> Self {
        TileWindow::new(0, 0, width, height, 0, width, height)
    }

    pub fn len(&self) -> usize {
        self.w * self.h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid coordinates `(row, col)` of the core region in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y0 + self.h).flat_map(move |r| (self.x0..self.x0 + self.w).map(move |c| (r, c)))
    }

    /// Copies a row-major core-region buffer into a full-grid buffer.
    pub fn scatter<T: Copy>(&self, tile_values: &[T], out: &mut [T], grid_width: usize) {
        debug_assert_eq!(tile_values.len(), self.len());
        for r in 0..self.h {
            let dst = (self.y0 + r) * grid_width + self.x0;
            out[dst..dst + self.w].copy_from_slice(&tile_values[r * self.w..(r + 1) * self.w]);
        }
    }
}

/// Row-major tiling of a grid into windows of at most `tile x tile` pixels.
pub fn iter_tiles(width: usize, height: usize, tile: usize, halo: usize) -> Result<Vec<TileWindow>> {
    if tile == 0 {
        return Err(Error::InvalidParameter("tile size must be >= 1".to_string()));
    }
    let mut out = Vec::with_capacity(width.div_ceil(tile) * height.div_ceil(tile));
    let mut y0 = 0;
    while y0 < height {
        let h = tile.min(height - y0);
        let mut x0 = 0;
        while x0 < width {
            let w = tile.min(width - x0);
            out.push(TileWindow::new(x0, y0, w, h, halo, width, height));
            x0 += w;
        }
        y0 += h;
    }
    Ok(out)
}

/// Nearest-neighbour resampling of `band` (on `from`) onto `to`. Both grids
/// must share a CRS; target pixels outside the source become nodata.
pub fn resample_nearest(band: &RasterBand, from: &GridGeometry, to: &GridGeometry) -> Result<RasterBand> {
    if from.epsg != to.epsg {
        return Err(Error::InvalidGrid(format!(
            "cannot resample EPSG:{} onto EPSG:{} without reprojection",
            from.epsg, to.epsg
        )));
    }
    if !band.matches_grid(from) {
        return Err(Error::ShapeMismatch(format!("band `{}` does not match its grid", band.name)));
    }
    let nodata = band.nodata.or(band.unit.default_nodata());
    let fill = nodata.unwrap_or(0.0);
    let mut values = Vec::with_capacity(to.len());
    for r in 0..to.height {
        for c in 0..to.width {
            let (x, y) = to.pixel_center(r, c);
            values.push(match from.pixel_at(x, y) {
                Some((sr, sc)) => band.get(sr, sc),
                None => fill,
            });
        }
    }
    RasterBand::new(band.name.clone(), band.unit, nodata, to.width, to.height, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core_tuple(t: &TileWindow) -> (usize, usize, usize, usize) {
        (t.x0, t.y0, t.w, t.h)
    }

    #[test]
    fn tiles_100_by_64() {
        let tiles = iter_tiles(100, 100, 64, 0).unwrap();
        let got: Vec<_> = tiles.iter().map(core_tuple).collect();
        assert_eq!(
            got,
            vec![(0, 0, 64, 64), (64, 0, 36, 64), (0, 64, 64, 36), (64, 64, 36, 36)]
        );
    }

    #[test]
    fn tile_larger_than_grid() {
        let tiles = iter_tiles(100, 100, 256, 0).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(core_tuple(&tiles[0]), (0, 0, 100, 100));
    }

    #[test]
    fn halo_is_clipped() {
        let tiles = iter_tiles(7, 7, 7, 3).unwrap();
        assert_eq!(tiles.len(), 1);
        let t = tiles[0];
        assert_eq!((t.read_x0, t.read_y0, t.read_w, t.read_h), (0, 0, 7, 7));
    }

    #[test]
    fn zero_tile_rejected() {
        assert!(iter_tiles(10, 10, 0, 0).is_err());
    }

    #[test]
    fn grid_rejects_degenerate() {
        assert!(GridGeometry::new(32648, (0.0, 0.0), (30.0, -30.0), 0, 5).is_err());
        assert!(GridGeometry::new(32648, (0.0, 0.0), (0.0, -30.0), 5, 5).is_err());
        let g = GridGeometry::new(32648, (0.0, 0.0), (30.0, -30.0), 5, 5).unwrap();
        assert_eq!(g.pixel_area(), 900.0);
    }

    #[test]
    fn domain_check() {
        let b = RasterBand::new("r", Unit::Reflectance, Some(-9999.0), 2, 1, vec![0.2, 3.7]).unwrap();
        assert!(matches!(b.check_domain(), Err(Error::Domain { .. })));
        let b = RasterBand::new("r", Unit::Reflectance, Some(-9999.0), 2, 1, vec![0.2, -9999.0]).unwrap();
        assert!(b.check_domain().is_ok());
        let b = RasterBand::new("c", Unit::ClassId, None, 1, 1, vec![1.5]).unwrap();
        assert!(b.check_domain().is_err());
    }

    #[test]
    fn band_shape_checked() {
        assert!(RasterBand::new("x", Unit::Db, None, 3, 3, vec![0.0; 8]).is_err());
    }

    #[test]
    fn resample_30m_to_10m() {
        let coarse = GridGeometry::new(32648, (0.0, 90.0), (30.0, -30.0), 3, 3).unwrap();
        let fine = GridGeometry::new(32648, (0.0, 90.0), (10.0, -10.0), 9, 9).unwrap();
        let band = RasterBand::new("b", Unit::ClassId, Some(65535.0), 3, 3, (0..9).map(|v| v as f32).collect()).unwrap();
        let out = resample_nearest(&band, &coarse, &fine).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(2, 2), 0.0);
        assert_eq!(out.get(3, 3), 4.0);
        assert_eq!(out.get(8, 8), 8.0);
        let other_crs = GridGeometry { epsg: 4326, ..fine };
        assert!(resample_nearest(&band, &coarse, &other_crs).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tiles_cover_each_pixel_once(w in 1usize..80, h in 1usize..80, tile in 1usize..40, halo in 0usize..5) {
            let tiles = iter_tiles(w, h, tile, halo).unwrap();
            proptest::prop_assert_eq!(tiles.len(), w.div_ceil(tile) * h.div_ceil(tile));
            let mut seen = vec![0u8; w * h];
            for t in &tiles {
                for (r, c) in t.pixels() {
                    seen[r * w + c] += 1;
                }
                proptest::prop_assert!(t.read_x0 + t.read_w <= w && t.read_y0 + t.read_h <= h);
            }
            proptest::prop_assert!(seen.iter().all(|&n| n == 1));
        }
    }
}
