//! `age`: canopy-closure year and age class for every mapped palm pixel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use palmscan_core::age::{
    age_of, calibrate_threshold, crosscheck_loss, decode_loss_year, detect_closure_dense, expansion_series,
    ClosureResult, ClosureStatus, LossCheck,
};
use palmscan_core::raster::NODATA_U16;
use palmscan_core::{RasterBand, Unit};

use crate::config::AgeBlock;
use crate::exec::Exec;
use crate::geotiff::{read_single, write_raster, WriteOptions};
use crate::manifest::SceneManifest;
use crate::provenance::{Provenance, Staging};
use crate::stages::indices::{SeriesIndex, SERIES_FILE};
use crate::stages::{read_layer, region_list, require, write_csv, write_json};

pub const CLOSURE_FILE: &str = "closure_year.tif";
pub const AGE_CLASS_FILE: &str = "age_class.tif";

#[derive(Debug, Serialize)]
struct ExpansionRow {
    region_id: u32,
    year: i32,
    hectares: f64,
}

#[derive(Debug, Serialize)]
struct ConsistencyRow {
    status: &'static str,
    pixels: u64,
    hectares: f64,
    share: f64,
}

#[derive(Debug, Serialize)]
struct AgeSummary {
    threshold: f64,
    n_calibration_values: usize,
    percentile: f64,
    ref_year: i32,
    closure_age_offset: i32,
    status_pixels: BTreeMap<&'static str, u64>,
}

pub fn run_age(
    extent_path: &Path,
    series_dir: &Path,
    block: &AgeBlock,
    manifest: Option<&SceneManifest>,
    out: &Path,
    opts: &WriteOptions,
    ex: &Exec,
) -> Result<PathBuf> {
    let p = block.params;
    p.validate()?;
    require(extent_path, "postproc")?;
    let series = SeriesIndex::load(series_dir)?;
    let (grid, extent) = read_single(extent_path, Some(Unit::Flag))?;
    if grid != series.grid {
        bail!("{} and the index series are on different grids", extent_path.display());
    }
    let (w, h) = (grid.width, grid.height);
    let in_extent = |i: usize| extent.value(i).is_some_and(|v| v > 0.0);
    let nm = series.months.n_months;
    let ref_months: Vec<bool> = (0..nm).map(|m| series.months.year_month(m).0 == p.ref_year).collect();
    if !ref_months.iter().any(|&b| b) {
        bail!("index series does not cover {}", p.ref_year);
    }

    // Calibration: smoothed reference-year values of every extent pixel.
    let jobs: Vec<usize> = (0..series.tiles.len()).collect();
    let per_tile = ex.try_map(&jobs, |&k| {
        let vals = series.read_tile(series_dir, k)?;
        let win = series.window(k);
        let mut out = Vec::new();
        for (pix, (r, c)) in win.pixels().enumerate() {
            if in_extent(r * w + c) {
                let row = &vals[pix * nm..(pix + 1) * nm];
                out.extend(row.iter().zip(&ref_months).filter(|(v, &m)| m && !v.is_nan()).map(|(&v, _)| v as f64));
            }
        }
        Ok(out)
    })?;
    let calib: Vec<f64> = per_tile.into_iter().flatten().collect();
    let threshold = calibrate_threshold(&calib, p.percentile)?;

    let tiles = ex.try_map(&jobs, |&k| {
        let vals = series.read_tile(series_dir, k)?;
        let win = series.window(k);
        let codes: Vec<f32> = win
            .pixels()
            .enumerate()
            .map(|(pix, (r, c))| {
                if in_extent(r * w + c) {
                    detect_closure_dense(&series.months, &vals[pix * nm..(pix + 1) * nm], threshold, &p).encode()
                } else {
                    NODATA_U16
                }
            })
            .collect();
        Ok(codes)
    })?;
    let mut closure = vec![NODATA_U16; w * h];
    for (k, codes) in tiles.iter().enumerate() {
        series.window(k).scatter(codes, &mut closure, w);
    }
    let decoded: Vec<Option<ClosureResult>> = closure.iter().map(|&v| ClosureResult::decode(v)).collect();
    let classes: Vec<f32> = decoded
        .iter()
        .map(|c| c.and_then(|c| age_of(c, &p)).map_or(NODATA_U16, |a| a.class.code()))
        .collect();
    let closure = RasterBand::new("closure_year", Unit::Year, Some(NODATA_U16), w, h, closure)?;
    let classes = RasterBand::new("age_class", Unit::ClassId, Some(NODATA_U16), w, h, classes)?;

    let mut inputs = vec![extent_path.to_path_buf(), series_dir.join(SERIES_FILE)];
    let regions = match &block.regions {
        Some(r) => {
            let (path, b) = read_layer(r, manifest, &grid)?;
            inputs.push(path);
            Some(b)
        }
        None => None,
    };
    let pixel_ha = grid.pixel_area_m2() / 10_000.0;
    let mut expansion = Vec::new();
    for (id, mask) in region_list(regions.as_ref(), w, h) {
        for (year, ha) in expansion_series(&closure, &mask, grid.pixel_area_m2(), p.archive_start..=p.ref_year)? {
            expansion.push(ExpansionRow { region_id: id, year, hectares: ha });
        }
    }

    let mut status_pixels = BTreeMap::new();
    for s in [ClosureStatus::Dated, ClosureStatus::PreArchive, ClosureStatus::OpenCanopy, ClosureStatus::InsufficientData] {
        status_pixels.insert(s.name(), 0u64);
    }
    for c in decoded.iter().flatten() {
        *status_pixels.entry(c.status().name()).or_default() += 1;
    }

    let mut st = Staging::new(out, "age")?;
    if let Some(r) = &block.loss {
        let (path, loss) = read_layer(r, manifest, &grid)?;
        inputs.push(path);
        let mut counts: BTreeMap<&'static str, u64> =
            [LossCheck::Consistent, LossCheck::EarlyClosure, LossCheck::NoLossRecord].iter().map(|c| (c.name(), 0)).collect();
        for (i, c) in decoded.iter().enumerate() {
            if let Some(ClosureResult::Dated(y)) = c {
                let l = loss.value(i).and_then(decode_loss_year);
                *counts.get_mut(crosscheck_loss(*y, l).name()).expect("all statuses present") += 1;
            }
        }
        let total: u64 = counts.values().sum();
        let rows: Vec<ConsistencyRow> = counts
            .iter()
            .map(|(&status, &n)| ConsistencyRow {
                status,
                pixels: n,
                hectares: n as f64 * pixel_ha,
                share: if total > 0 { n as f64 / total as f64 } else { 0.0 },
            })
            .collect();
        write_csv(&st.output("consistency.csv"), &rows)?;
    }

    write_raster(&st.output(CLOSURE_FILE), &grid, &[&closure], opts)?;
    write_raster(&st.output(AGE_CLASS_FILE), &grid, &[&classes], opts)?;
    write_csv(&st.output("expansion.csv"), &expansion)?;
    let summary = AgeSummary {
        threshold,
        n_calibration_values: calib.len(),
        percentile: p.percentile,
        ref_year: p.ref_year,
        closure_age_offset: p.closure_age_offset,
        status_pixels,
    };
    write_json(&st.output("age_summary.json"), &summary)?;
    let mut prov = Provenance::new("age", block, None)?;
    prov.inputs(inputs.iter().map(|p| p.as_path()))?;
    st.commit(prov)?;
    Ok(out.join(CLOSURE_FILE))
}
