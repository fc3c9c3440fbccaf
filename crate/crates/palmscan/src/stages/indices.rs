//! `indices`: per-scene optical index, QA masking and the smoothed monthly
//! series, stored as blocks of `f32` little-endian values laid out
//! `[pixel][month]` with `NaN` for omitted months.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use palmscan_core::optical::{qa_mask, rolling_median_dense, IndexKind, MonthGrid, QaSpec, RollingParams};
use palmscan_core::raster::NODATA_F32;
use palmscan_core::stats::median_in_place;
use palmscan_core::{GridGeometry, RasterBand, TileWindow, Unit};

use crate::config::IndicesBlock;
use crate::exec::Exec;
use crate::geotiff::{read_raster, write_raster, WriteOptions};
use crate::manifest::{load_manifest, ManifestEntry};
use crate::provenance::{Provenance, Staging};
use crate::stages::{require, write_json};

pub const SERIES_FILE: &str = "series.json";

pub fn ndvi_median_name(year: i32) -> String {
    format!("ndvi_median_{year}.tif")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesTile {
    pub file: String,
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesIndex {
    pub index: IndexKind,
    pub grid: GridGeometry,
    pub months: MonthGrid,
    pub rolling: RollingParams,
    pub qa: QaSpec,
    pub n_scenes: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
    pub encoding: String,
    pub tiles: Vec<SeriesTile>,
}

impl SeriesIndex {
    /// Loads `series.json` from a series directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(SERIES_FILE);
        require(&p, "indices")?;
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
    }

    /// Monthly values of one tile, `[pixel][month]`.
    pub fn read_tile(&self, dir: &Path, k: usize) -> Result<Vec<f32>> {
        let t = &self.tiles[k];
        let bytes = fs::read(dir.join(&t.file)).with_context(|| format!("reading series block {}", t.file))?;
        let n = t.w * t.h * self.months.n_months;
        if bytes.len() != n * 4 {
            bail!("series block {} has {} bytes, expected {}", t.file, bytes.len(), n * 4);
        }
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }

    pub fn window(&self, k: usize) -> TileWindow {
        let t = &self.tiles[k];
        TileWindow::new(t.x0, t.y0, t.w, t.h, 0, self.grid.width, self.grid.height)
    }
}

fn band_named<'a>(bands: &'a [RasterBand], name: &str, path: &Path) -> Result<&'a RasterBand> {
    bands.iter().find(|b| b.name == name).with_context(|| format!("{} has no band `{name}`", path.display()))
}

/// Index value per pixel of one scene (`NaN` where masked or undefined).
fn scene_index(e: &ManifestEntry, kind: IndexKind, qa: &QaSpec) -> Result<(GridGeometry, Vec<f32>)> {
    let (grid, bands) = read_raster(&e.path, None)?;
    let inputs: Vec<&RasterBand> =
        kind.bands().iter().map(|n| band_named(&bands, n, &e.path)).collect::<Result<_>>()?;
    for b in &inputs {
        if b.unit != Unit::Reflectance {
            bail!("{}: band `{}` has unit {}, expected reflectance", e.path.display(), b.name, b.unit);
        }
    }
    let qa_band = match &e.qa_band {
        Some(n) => Some(band_named(&bands, n, &e.path)?),
        None => None,
    };
    let mut r = vec![0.0; inputs.len()];
    let values = (0..grid.len())
        .map(|i| {
            if let Some(q) = qa_band {
                match q.value(i) {
                    Some(v) if qa_mask(v as u16, qa) => {}
                    _ => return f32::NAN,
                }
            }
            for (slot, b) in r.iter_mut().zip(&inputs) {
                match b.value(i) {
                    Some(v) => *slot = v as f64,
                    None => return f32::NAN,
                }
            }
            kind.compute(&r).map_or(f32::NAN, |v| v as f32)
        })
        .collect();
    Ok((grid, values))
}

pub struct IndicesOutput {
    pub series_dir: PathBuf,
    pub ndvi_median: Option<PathBuf>,
}

/// Builds the smoothed series of `block.index` and, when `ndvi_year` is
/// set, the annual median NDVI of that year.
pub fn run_indices(
    manifest_path: &Path,
    block: &IndicesBlock,
    ndvi_year: Option<i32>,
    out: &Path,
    opts: &WriteOptions,
    ex: &Exec,
) -> Result<IndicesOutput> {
    block.qa.validate()?;
    if block.series_tile == 0 || block.rolling.min_obs == 0 {
        bail!("series_tile and min_obs must be >= 1");
    }
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<ManifestEntry> = manifest.optical().cloned().collect();
    if entries.is_empty() {
        bail!("manifest has no optical scenes");
    }
    let scenes = ex.try_map(&entries, |e| scene_index(e, block.index, &block.qa))?;
    let grid = scenes[0].0;
    for (e, (g, _)) in entries.iter().zip(&scenes) {
        if *g != grid {
            bail!("{} is not co-registered with {}", e.path.display(), entries[0].path.display());
        }
    }
    let stack: Vec<&[f32]> = scenes.iter().map(|(_, v)| v.as_slice()).collect();
    let days: Vec<i32> = entries.iter().map(|e| e.date.num_days_from_ce()).collect();
    let (first, last) = (entries[0].date, entries[entries.len() - 1].date);
    let months = MonthGrid::spanning(first, last);
    let nm = months.n_months;
    let (w, h) = (grid.width, grid.height);

    let mut st = Staging::new(out, "indices")?;
    let windows = palmscan_core::iter_tiles(w, h, block.series_tile, 0)?;
    let tiles: Vec<SeriesTile> = windows
        .iter()
        .enumerate()
        .map(|(k, win)| SeriesTile { file: format!("series/tile_{k:05}.bin"), x0: win.x0, y0: win.y0, w: win.w, h: win.h })
        .collect();
    let paths: Vec<PathBuf> = tiles.iter().map(|t| st.data(&t.file)).collect();
    let jobs: Vec<usize> = (0..windows.len()).collect();
    ex.try_map(&jobs, |&k| {
        let win = &windows[k];
        let mut buf = vec![f32::NAN; win.len() * nm];
        let mut vals = Vec::with_capacity(stack.len());
        let mut scratch = Vec::new();
        for (p, (r, c)) in win.pixels().enumerate() {
            let i = r * w + c;
            vals.clear();
            vals.extend(stack.iter().map(|s| Some(s[i] as f64).filter(|v| !v.is_nan())));
            rolling_median_dense(&days, &vals, &months, &block.rolling, &mut scratch, &mut buf[p * nm..(p + 1) * nm]);
        }
        let bytes: Vec<u8> = buf.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&paths[k], bytes).with_context(|| format!("writing {}", paths[k].display()))
    })?;
    let index = SeriesIndex {
        index: block.index,
        grid,
        months,
        rolling: block.rolling,
        qa: block.qa.clone(),
        n_scenes: entries.len(),
        first_date: first,
        last_date: last,
        encoding: "f32 little-endian, [pixel][month], NaN = omitted".into(),
        tiles,
    };
    write_json(&st.output(SERIES_FILE), &index)?;

    let mut ndvi_out = None;
    if let Some(year) = ndvi_year {
        let in_year: Vec<&ManifestEntry> = entries.iter().filter(|e| e.date.year() == year).collect();
        if in_year.is_empty() {
            bail!("no optical scenes in {year} for the NDVI median");
        }
        let ndvi: Vec<Vec<f32>> = if block.index == IndexKind::Ndvi {
            entries.iter().zip(&scenes).filter(|(e, _)| e.date.year() == year).map(|(_, (_, v))| v.clone()).collect()
        } else {
            let sel: Vec<ManifestEntry> = in_year.into_iter().cloned().collect();
            ex.try_map(&sel, |e| scene_index(e, IndexKind::Ndvi, &block.qa).map(|(_, v)| v))?
        };
        let med = ex.tiled(w, h, 0, |win| {
            let mut scratch = Vec::with_capacity(ndvi.len());
            win.pixels()
                .map(|(r, c)| {
                    let i = r * w + c;
                    scratch.clear();
                    scratch.extend(ndvi.iter().map(|s| s[i] as f64).filter(|v| !v.is_nan()));
                    median_in_place(&mut scratch).map_or(NODATA_F32, |m| m as f32)
                })
                .collect()
        })?;
        let band = RasterBand::new("ndvi_median", Unit::Index, Some(NODATA_F32), w, h, med)?;
        let name = ndvi_median_name(year);
        write_raster(&st.output(&name), &grid, &[&band], opts)?;
        ndvi_out = Some(out.join(name));
    }

    let mut prov = Provenance::new("indices", &(block, ndvi_year), None)?;
    prov.input(manifest_path)?;
    prov.inputs(entries.iter().map(|e| e.path.as_path()))?;
    st.commit(prov)?;
    Ok(IndicesOutput { series_dir: out.to_path_buf(), ndvi_median: ndvi_out })
}
