//! Windowed GLCM sum-average (SAVG) texture.
//!
//! SAVG is `sum_s s * p_sum(s)` where `p_sum` is the distribution of `a + b`
//! over co-occurring gray-level pairs `(a, b)`. Since it only depends on the
//! pair sums, the sliding-window kernel keeps per-offset summed-area tables of
//! pair sums and pair counts instead of materialising a matrix per pixel.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::raster::{RasterBand, TileWindow, Unit, NODATA_F32};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlcmParams {
    pub levels: u16,
    pub radius: usize,
    /// `(dy, dx)` pixel offsets.
    pub offsets: Vec<(i32, i32)>,
    pub symmetric: bool,
}

impl Default for GlcmParams {
    fn default() -> Self {
        GlcmParams {
            levels: 32,
            radius: 3,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1)],
            symmetric: true,
        }
    }
}

impl GlcmParams {
    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.levels) {
            return Err(Error::InvalidParameter(format!("levels {} outside [2, 256]", self.levels)));
        }
        if self.radius == 0 {
            return Err(Error::InvalidParameter("radius must be >= 1".into()));
        }
        if self.offsets.is_empty() || self.offsets.contains(&(0, 0)) {
            return Err(Error::InvalidParameter("offsets must be non-empty and exclude (0, 0)".into()));
        }
        Ok(())
    }
}

/// `floor(v * levels / 256)`.
pub fn quantize_value(v: u8, levels: u16) -> u8 {
    (v as u32 * levels as u32 / 256) as u8
}

pub fn quantize(band: &RasterBand, levels: u16) -> Result<RasterBand> {
    if !(2..=256).contains(&levels) {
        return Err(Error::InvalidParameter(format!("levels {levels} outside [2, 256]")));
    }
    let values = band
        .values()
        .iter()
        .map(|&v| quantize_value(v.clamp(0.0, 255.0) as u8, levels) as f32)
        .collect();
    RasterBand::new(band.name.clone(), Unit::Byte, None, band.width(), band.height(), values)
}

/// Normalised distribution of gray-level pair sums, indexed `0..=2(levels-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SumDistribution {
    pub p_sum: Vec<f64>,
}

/// Counts co-occurring pairs inside a `w x h` window. `None` marks nodata;
/// pairs touching nodata are skipped.
pub fn sum_distribution(
    window: &[Option<u8>],
    w: usize,
    h: usize,
    levels: u16,
    offsets: &[(i32, i32)],
    symmetric: bool,
) -> SumDistribution {
    let mut counts = vec![0u64; 2 * (levels as usize - 1) + 1];
    let mut total = 0u64;
    let per_pair = if symmetric { 2 } else { 1 };
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            for &(dy, dx) in offsets {
                let (y2, x2) = (y + dy as i64, x + dx as i64);
                if y2 < 0 || x2 < 0 || y2 >= h as i64 || x2 >= w as i64 {
                    continue;
                }
                let a = window[(y * w as i64 + x) as usize];
                let b = window[(y2 * w as i64 + x2) as usize];
                if let (Some(a), Some(b)) = (a, b) {
                    counts[a as usize + b as usize] += per_pair;
                    total += per_pair;
                }
            }
        }
    }
    let p_sum = if total == 0 {
        vec![0.0; counts.len()]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    SumDistribution { p_sum }
}

/// Sum average of a pair-sum distribution; `None` for an empty window.
pub fn savg(dist: &SumDistribution) -> Option<f64> {
    if dist.p_sum.iter().all(|&p| p == 0.0) {
        return None;
    }
    Some(dist.p_sum.iter().enumerate().map(|(s, &p)| s as f64 * p).sum())
}

struct PairTable {
    sums: Vec<u64>,
    counts: Vec<u32>,
    stride: usize,
}

impl PairTable {
    fn rect(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> (u64, u32) {
        // inclusive anchor rectangle in read-region coordinates
        let s = self.stride;
        let (a, b, c, d) = (y0 * s + x0, y0 * s + x1 + 1, (y1 + 1) * s + x0, (y1 + 1) * s + x1 + 1);
        (
            self.sums[d] + self.sums[a] - self.sums[b] - self.sums[c],
            self.counts[d] + self.counts[a] - self.counts[b] - self.counts[c],
        )
    }
}

/// SAVG (averaged over offsets) for the core region of `win`, in `f64`.
///
/// `levels` holds quantized gray levels for the whole grid and `valid` its
/// validity. Each pixel uses its `(2r+1)^2` window clipped to the grid, so a
/// halo of at least `radius` reproduces the whole-image result exactly.
pub fn savg_window(
    levels: &[u8],
    valid: &[bool],
    width: usize,
    height: usize,
    params: &GlcmParams,
    win: &TileWindow,
) -> Vec<Option<f64>> {
    let (rx0, ry0, rw, rh) = (win.read_x0, win.read_y0, win.read_w, win.read_h);
    let stride = rw + 1;
    let tables: Vec<(i64, i64, PairTable)> = params
        .offsets
        .iter()
        .map(|&(dy, dx)| {
            let (dy, dx) = (dy as i64, dx as i64);
            let mut sums = vec![0u64; stride * (rh + 1)];
            let mut counts = vec![0u32; stride * (rh + 1)];
            for y in 0..rh {
                let mut row_sum = 0u64;
                let mut row_cnt = 0u32;
                for x in 0..rw {
                    let (y2, x2) = (y as i64 + dy, x as i64 + dx);
                    if y2 >= 0 && x2 >= 0 && (y2 as usize) < rh && (x2 as usize) < rw {
                        let i1 = (ry0 + y) * width + rx0 + x;
                        let i2 = (ry0 + y2 as usize) * width + rx0 + x2 as usize;
                        if valid[i1] && valid[i2] {
                            row_sum += levels[i1] as u64 + levels[i2] as u64;
                            row_cnt += 1;
                        }
                    }
                    let k = (y + 1) * stride + x + 1;
                    sums[k] = sums[k - stride] + row_sum;
                    counts[k] = counts[k - stride] + row_cnt;
                }
            }
            (dy, dx, PairTable { sums, counts, stride })
        })
        .collect();

    let r = params.radius;
    let mut out = Vec::with_capacity(win.len());
    for (py, px) in win.pixels() {
        if !valid[py * width + px] {
            out.push(None);
            continue;
        }
        let wy0 = py.saturating_sub(r) as i64;
        let wy1 = (py + r).min(height - 1) as i64;
        let wx0 = px.saturating_sub(r) as i64;
        let wx1 = (px + r).min(width - 1) as i64;
        let mut acc = 0.0;
        let mut used = 0usize;
        for (dy, dx, table) in &tables {
            let ay0 = wy0 - dy.min(&0);
            let ay1 = wy1 - dy.max(&0);
            let ax0 = wx0 - dx.min(&0);
            let ax1 = wx1 - dx.max(&0);
            if ay0 > ay1 || ax0 > ax1 {
                continue;
            }
            let (sum, cnt) = table.rect(
                (ay0 - ry0 as i64) as usize,
                (ay1 - ry0 as i64) as usize,
                (ax0 - rx0 as i64) as usize,
                (ax1 - rx0 as i64) as usize,
            );
            if cnt > 0 {
                acc += sum as f64 / cnt as f64;
                used += 1;
            }
        }
        out.push((used > 0).then(|| acc / used as f64));
    }
    out
}

/// Prepares quantized levels and validity from a byte band.
pub fn prepare_levels(band: &RasterBand, valid: Option<&[bool]>, levels: u16) -> Result<(Vec<u8>, Vec<bool>)> {
    if let Some(v) = valid {
        if v.len() != band.len() {
            return Err(Error::ShapeMismatch(format!("validity mask length {} != band length {}", v.len(), band.len())));
        }
    }
    let q = quantize(band, levels)?;
    let lv: Vec<u8> = q.values().iter().map(|&v| v as u8).collect();
    let valid: Vec<bool> = (0..band.len())
        .map(|i| band.is_valid(i) && valid.is_none_or(|m| m[i]))
        .collect();
    Ok((lv, valid))
}

/// Whole-image SAVG in full precision.
pub fn savg_values(band: &RasterBand, valid: Option<&[bool]>, params: &GlcmParams) -> Result<Vec<Option<f64>>> {
    params.validate()?;
    let (lv, valid) = prepare_levels(band, valid, params.levels)?;
    let (w, h) = (band.width(), band.height());
    Ok(savg_window(&lv, &valid, w, h, params, &TileWindow::full(w, h)))
}

pub fn savg_to_band(name: &str, values: &[Option<f64>], width: usize, height: usize) -> Result<RasterBand> {
    let v = values.iter().map(|s| s.map_or(NODATA_F32, |s| s as f32)).collect();
    RasterBand::new(name, Unit::GrayLevel, Some(NODATA_F32), width, height, v)
}

/// SAVG texture of a byte band. `valid` optionally masks pixels whose byte
/// value is not meaningful (byte bands carry no nodata of their own).
pub fn savg_map(band: &RasterBand, valid: Option<&[bool]>, params: &GlcmParams) -> Result<RasterBand> {
    let values = savg_values(band, valid, params)?;
    savg_to_band(&format!("savg_{}", band.name), &values, band.width(), band.height())
}
