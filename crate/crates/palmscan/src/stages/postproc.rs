//! `postproc`: NDVI floor, exclusion masks, gap fill on steep terrain and
//! the minimum mapping unit.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use palmscan_core::postproc::{
    apply_exclusion, enforce_mmu_with_labels, label_tile, majority_fill_window, merge_tile_labels, ndvi_filter,
    positives, slope_window, steep_mask, union_mask,
};
use palmscan_core::raster::{NODATA_F32, NODATA_U16};
use palmscan_core::{RasterBand, Unit};

use crate::config::PostprocBlock;
use crate::exec::Exec;
use crate::geotiff::{read_raster, read_single, write_raster, WriteOptions};
use crate::manifest::SceneManifest;
use crate::provenance::{Provenance, Staging};
use crate::stages::{align, read_layer, require, write_json};

pub const EXTENT_FILE: &str = "final_extent.tif";

#[derive(Debug, Serialize)]
struct StepCount {
    step: &'static str,
    positives: usize,
}

pub fn run_postproc(
    voted: &Path,
    ndvi_median: &Path,
    block: &PostprocBlock,
    manifest: Option<&SceneManifest>,
    out: &Path,
    opts: &WriteOptions,
    ex: &Exec,
) -> Result<PathBuf> {
    block.params.validate()?;
    require(voted, "classify vote")?;
    require(ndvi_median, "indices")?;
    let (grid, mut bands) = read_raster(voted, Some(Unit::Flag))?;
    if bands.len() != 1 {
        bail!("{} should hold one band, found {}", voted.display(), bands.len());
    }
    let mask = bands.remove(0);
    let (ngrid, ndvi) = read_single(ndvi_median, Some(Unit::Index))?;
    let ndvi = align(ndvi, &ngrid, &grid)?;
    let (w, h) = (grid.width, grid.height);
    let mut inputs = vec![voted.to_path_buf(), ndvi_median.to_path_buf()];

    let mut excl = Vec::new();
    for r in &block.exclude {
        let (p, b) = read_layer(r, manifest, &grid)?;
        inputs.push(p);
        excl.push(b);
    }
    let exclusion = if excl.is_empty() { None } else { Some(union_mask(&excl.iter().collect::<Vec<_>>(), w, h)?) };

    let (fillable, slope) = match &block.dem {
        Some(r) => {
            let (p, dem) = read_layer(r, manifest, &grid)?;
            inputs.push(p);
            let (dx, dy) = grid.meters_per_pixel();
            let s = ex.tiled(w, h, 1, |win| slope_window(&dem, dx, dy, win))?;
            let slope = RasterBand::new("slope", Unit::Degrees, Some(NODATA_F32), w, h, s)?;
            (steep_mask(&slope, block.params.steep_slope_deg), Some(slope))
        }
        None => (vec![false; w * h], None),
    };

    let mut counts = vec![StepCount { step: "voted", positives: positives(&mask).iter().filter(|&&p| p).count() }];
    let mut step = |name: &'static str, b: &RasterBand| {
        counts.push(StepCount { step: name, positives: positives(b).iter().filter(|&&p| p).count() });
    };
    let clean = |m: RasterBand| -> Result<RasterBand> {
        let m = ndvi_filter(&m, &ndvi, block.params.ndvi_floor)?;
        Ok(match &exclusion {
            Some(e) => apply_exclusion(&m, e)?,
            None => m,
        })
    };

    let m = clean(mask)?;
    step("ndvi_and_exclusion", &m);
    let filled = ex.tiled(w, h, 1, |win| majority_fill_window(&m, Some(&fillable), win))?;
    let m = RasterBand::new("oilpalm", Unit::Flag, Some(NODATA_U16), w, h, filled)?;
    step("gap_fill", &m);
    // The fill can reintroduce positives, so the filters run again.
    let m = clean(m)?;
    step("ndvi_and_exclusion_after_fill", &m);
    let fg = positives(&m);
    let tiles = ex.tiles(w, h, 0)?;
    let labelled = ex.map(&tiles, |win| label_tile(&fg, w, win));
    let labels = merge_tile_labels(&labelled, w, h);
    let m = enforce_mmu_with_labels(&m, &labels, grid.pixel_area_m2(), block.params.min_area_m2)?.with_name("oilpalm_extent");
    step("minimum_mapping_unit", &m);

    let mut st = Staging::new(out, "postproc")?;
    write_raster(&st.output(EXTENT_FILE), &grid, &[&m], opts)?;
    if let Some(s) = &slope {
        write_raster(&st.output("slope.tif"), &grid, &[s], opts)?;
    }
    write_json(&st.output("postproc_steps.json"), &counts)?;
    let mut prov = Provenance::new("postproc", block, None)?;
    prov.inputs(inputs.iter().map(|p| p.as_path()))?;
    st.commit(prov)?;
    Ok(out.join(EXTENT_FILE))
}
