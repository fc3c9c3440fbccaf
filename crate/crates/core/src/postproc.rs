//! Rule-based clean-up of the voted oil-palm map.

use alloc::vec;
use alloc::vec::Vec;

use crate::raster::{check_same_shape, GridGeometry, RasterBand, TileWindow, Unit, NODATA_F32, NODATA_U16};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PostprocParams {
    pub ndvi_floor: f64,
    /// Slope above which pixels are treated as fillable gaps.
    pub steep_slope_deg: f64,
    pub min_area_m2: f64,
}

impl Default for PostprocParams {
    fn default() -> Self {
        PostprocParams { ndvi_floor: 0.5, steep_slope_deg: 25.0, min_area_m2: 900.0 }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.ndvi_floor) {
            return Err(Error::InvalidParameter(alloc::format!("ndvi_floor {} outside [-1, 1]", self.ndvi_floor)));
        }
        if !(0.0..=90.0).contains(&self.steep_slope_deg) {
            return Err(Error::InvalidParameter(alloc::format!("steep_slope_deg {} outside [0, 90]", self.steep_slope_deg)));
        }
        if !(self.min_area_m2 >= 0.0) {
            return Err(Error::InvalidParameter("min_area_m2 must be >= 0".into()));
        }
        Ok(())
    }
}

fn flag_band(name: &str, width: usize, height: usize, values: Vec<f32>) -> Result<RasterBand> {
    RasterBand::new(name, Unit::Flag, Some(NODATA_U16), width, height, values)
}

fn positive(b: &RasterBand, i: usize) -> bool {
    b.value(i).is_some_and(|v| v > 0.0)
}

/// Clears positives whose NDVI is below `floor` or missing. The floor is
/// inclusive.
pub fn ndvi_filter(mask: &RasterBand, ndvi: &RasterBand, floor: f64) -> Result<RasterBand> {
    check_same_shape(&[mask, ndvi])?;
    let values = (0..mask.len())
        .map(|i| match mask.value(i) {
            None => NODATA_U16,
            Some(v) if v > 0.0 => match ndvi.value(i) {
                Some(n) if n as f64 >= floor => 1.0,
                _ => 0.0,
            },
            Some(_) => 0.0,
        })
        .collect();
    flag_band(&mask.name, mask.width(), mask.height(), values)
}

/// Pixelwise OR of exclusion masks. Nodata counts as not masked.
pub fn union_mask(masks: &[&RasterBand], width: usize, height: usize) -> Result<RasterBand> {
    for m in masks {
        if m.width() != width || m.height() != height {
            return Err(Error::ShapeMismatch(alloc::format!(
                "mask `{}` is {}x{}, expected {width}x{height}",
                m.name,
                m.width(),
                m.height()
            )));
        }
    }
    let values = (0..width * height)
        .map(|i| if masks.iter().any(|m| positive(m, i)) { 1.0 } else { 0.0 })
        .collect();
    flag_band("exclusion_union", width, height, values)
}

/// Clears every positive that lies inside `exclusion`.
pub fn apply_exclusion(mask: &RasterBand, exclusion: &RasterBand) -> Result<RasterBand> {
    check_same_shape(&[mask, exclusion])?;
    let mut out = mask.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        if *v != NODATA_U16 && positive(exclusion, i) {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Horn slope for the core of `win`. Edge neighbours are replicated from the
/// nearest row/column; missing neighbours take the centre value; a missing
/// centre gives nodata.
pub fn slope_window(dem: &RasterBand, dx_m: f64, dy_m: f64, win: &TileWindow) -> Vec<f32> {
    let (w, h) = (dem.width() as isize, dem.height() as isize);
    win.pixels()
        .map(|(r, c)| {
            let Some(center) = dem.value(r * dem.width() + c) else {
                return NODATA_F32;
            };
            let z = |dr: isize, dc: isize| -> f64 {
                let rr = (r as isize + dr).clamp(0, h - 1) as usize;
                let cc = (c as isize + dc).clamp(0, w - 1) as usize;
                dem.value(rr * w as usize + cc).unwrap_or(center) as f64
            };
            let (a, b, cc, d, f, g, hh, i) =
                (z(-1, -1), z(-1, 0), z(-1, 1), z(0, -1), z(0, 1), z(1, -1), z(1, 0), z(1, 1));
            horn_slope_deg([a, b, cc, d, center as f64, f, g, hh, i], dx_m, dy_m) as f32
        })
        .collect()
}

/// Horn slope in degrees from a row-major 3×3 elevation window.
pub fn horn_slope_deg(z: [f64; 9], dx_m: f64, dy_m: f64) -> f64 {
    let [a, b, c, d, _, f, g, h, i] = z;
    let dzdx = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * dx_m);
    let dzdy = ((g + 2.0 * h + i) - (a + 2.0 * b + c)) / (8.0 * dy_m);
    libm::atan(libm::sqrt(dzdx * dzdx + dzdy * dzdy)).to_degrees()
}

pub fn slope_deg(dem: &RasterBand, grid: &GridGeometry) -> Result<RasterBand> {
    if !dem.matches_grid(grid) {
        return Err(Error::ShapeMismatch("DEM does not match grid".into()));
    }
    let (dx, dy) = grid.meters_per_pixel();
    let values = slope_window(dem, dx, dy, &TileWindow::full(dem.width(), dem.height()));
    RasterBand::new("slope", Unit::Degrees, Some(NODATA_F32), dem.width(), dem.height(), values)
}

/// Pixels with slope strictly above `threshold_deg`.
pub fn steep_mask(slope: &RasterBand, threshold_deg: f64) -> Vec<bool> {
    (0..slope.len()).map(|i| slope.value(i).is_some_and(|s| s as f64 > threshold_deg)).collect()
}

/// 3×3 majority (centre included) over valid pixels of the input, clipped at
/// the image border. Ties keep the input value. Nodata pixels are filled
/// only where `fillable` is set; `None` makes every nodata pixel fillable.
pub fn majority_fill_window(mask: &RasterBand, fillable: Option<&[bool]>, win: &TileWindow) -> Vec<f32> {
    let (w, h) = (mask.width(), mask.height());
    win.pixels()
        .map(|(r, c)| {
            let idx = r * w + c;
            let input = mask.value(idx);
            if input.is_none() && !fillable.is_none_or(|f| f[idx]) {
                return NODATA_U16;
            }
            let (mut ones, mut zeros) = (0u32, 0u32);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    match mask.value(rr * w + cc) {
                        Some(v) if v > 0.0 => ones += 1,
                        Some(_) => zeros += 1,
                        None => {}
                    }
                }
            }
            if ones > zeros {
                1.0
            } else if zeros > ones {
                0.0
            } else {
                input.unwrap_or(NODATA_U16)
            }
        })
        .collect()
}

pub fn majority_fill(mask: &RasterBand, fillable: Option<&[bool]>) -> Result<RasterBand> {
    if fillable.is_some_and(|f| f.len() != mask.len()) {
        return Err(Error::ShapeMismatch("fillable mask length differs from raster".into()));
    }
    let values = majority_fill_window(mask, fillable, &TileWindow::full(mask.width(), mask.height()));
    flag_band(&mask.name, mask.width(), mask.height(), values)
}

/// 8-connected labels of `fg` inside the core of one tile: 0 is
/// background, components are numbered 1.. in scan order of first pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct TileLabels {
    pub win: TileWindow,
    pub labels: Vec<u32>,
    pub count: u32,
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

pub fn label_tile(fg: &[bool], width: usize, win: &TileWindow) -> TileLabels {
    let (tw, th) = (win.w, win.h);
    let mut prov = vec![0u32; tw * th];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..th {
        for c in 0..tw {
            if !fg[(win.y0 + r) * width + win.x0 + c] {
                continue;
            }
            let mut label = 0u32;
            let mut neighbours = [0u32; 4];
            if c > 0 {
                neighbours[0] = prov[r * tw + c - 1];
            }
            if r > 0 {
                neighbours[1] = prov[(r - 1) * tw + c];
                if c > 0 {
                    neighbours[2] = prov[(r - 1) * tw + c - 1];
                }
                if c + 1 < tw {
                    neighbours[3] = prov[(r - 1) * tw + c + 1];
                }
            }
            for &n in neighbours.iter().filter(|&&n| n != 0) {
                if label == 0 {
                    label = n;
                } else {
                    union(&mut parent, label, n);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            prov[r * tw + c] = label;
        }
    }
    // compact to 1.. in order of first appearance
    let mut remap = vec![0u32; parent.len()];
    let mut count = 0;
    for l in prov.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            count += 1;
            remap[root] = count;
        }
        *l = remap[root];
    }
    TileLabels { win: *win, labels: prov, count }
}

/// Merges tile-local labels across tile borders into global labels numbered
/// 1.. in raster scan order of each component's first pixel. The result does
/// not depend on the tiling.
pub fn merge_tile_labels(tiles: &[TileLabels], width: usize, height: usize) -> Vec<u32> {
    let mut offsets = Vec::with_capacity(tiles.len());
    let mut total = 0u32;
    for t in tiles {
        offsets.push(total);
        total += t.count;
    }
    let mut global = vec![0u32; width * height];
    for (t, &off) in tiles.iter().zip(&offsets) {
        for (k, (r, c)) in t.win.pixels().enumerate() {
            let l = t.labels[k];
            if l != 0 {
                global[r * width + c] = off + l;
            }
        }
    }
    let mut parent: Vec<u32> = (0..=total).collect();
    for r in 0..height {
        for c in 0..width {
            let a = global[r * width + c];
            if a == 0 {
                continue;
            }
            let mut link = |rr: usize, cc: usize| {
                let b = global[rr * width + cc];
                if b != 0 {
                    union(&mut parent, a, b);
                }
            };
            if c + 1 < width {
                link(r, c + 1);
            }
            if r + 1 < height {
                link(r + 1, c);
                if c + 1 < width {
                    link(r + 1, c + 1);
                }
                if c > 0 {
                    link(r + 1, c - 1);
                }
            }
        }
    }
    let mut remap = vec![0u32; total as usize + 1];
    let mut next = 0;
    for l in global.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    global
}

/// Removes 8-connected positive components with area below `min_area_m2`
/// (a component of exactly `min_area_m2` is kept). `labels` come from
/// [`merge_tile_labels`] over the positives of `mask`.
pub fn enforce_mmu_with_labels(mask: &RasterBand, labels: &[u32], pixel_area_m2: f64, min_area_m2: f64) -> Result<RasterBand> {
    if labels.len() != mask.len() {
        return Err(Error::ShapeMismatch("label buffer length differs from raster".into()));
    }
    let n = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut sizes = vec![0u64; n + 1];
    for &l in labels {
        sizes[l as usize] += 1;
    }
    // relative slack absorbs rounding in geographic pixel areas
    let keep_from = min_area_m2 * (1.0 - 1e-9);
    let mut out = mask.clone();
    for (v, &l) in out.values_mut().iter_mut().zip(labels) {
        if l != 0 && (sizes[l as usize] as f64) * pixel_area_m2 < keep_from {
            *v = 0.0;
        }
    }
    Ok(out)
}

pub fn positives(mask: &RasterBand) -> Vec<bool> {
    (0..mask.len()).map(|i| positive(mask, i)).collect()
}

pub fn enforce_mmu(mask: &RasterBand, grid: &GridGeometry, min_area_m2: f64) -> Result<RasterBand> {
    if !mask.matches_grid(grid) {
        return Err(Error::ShapeMismatch("mask does not match grid".into()));
    }
    let fg = positives(mask);
    let tile = label_tile(&fg, mask.width(), &TileWindow::full(mask.width(), mask.height()));
    let labels = merge_tile_labels(&[tile], mask.width(), mask.height());
    enforce_mmu_with_labels(mask, &labels, grid.pixel_area_m2(), min_area_m2)
}
