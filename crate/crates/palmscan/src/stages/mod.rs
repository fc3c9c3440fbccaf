//! Pipeline stages. Each stage reads its inputs from files, writes through a
//! [`Staging`](crate::provenance::Staging) directory and leaves a provenance
//! sidecar next to every output.

pub mod age;
pub mod classify;
pub mod composite;
pub mod indices;
pub mod postproc;
pub mod report;
pub mod synth;
pub mod texture;
pub mod validate;

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Result};
use serde::Serialize;

use palmscan_core::raster::resample_nearest;
use palmscan_core::{GridGeometry, RasterBand};

use crate::config::looks_like_path;
use crate::geotiff::read_raster;
use crate::manifest::SceneManifest;

/// An upstream artifact is missing; names the stage that produces it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingArtifact {
    pub stage: &'static str,
    pub path: PathBuf,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing {}: run the `{}` stage first", self.path.display(), self.stage)
    }
}

impl std::error::Error for MissingArtifact {}

pub fn require(path: &Path, stage: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(MissingArtifact { stage, path: path.to_path_buf() }.into())
    }
}

pub fn take_band(bands: &[RasterBand], name: &str, path: &Path) -> Result<RasterBand> {
    bands
        .iter()
        .find(|b| b.name == name)
        .cloned()
        .ok_or_else(|| anyhow!("{} has no band `{name}`", path.display()))
}

/// Resolves a layer reference (`path`, `path#band` or a manifest auxiliary
/// band name) to a file and an optional band name.
pub fn resolve_layer(r: &str, manifest: Option<&SceneManifest>) -> Result<(PathBuf, Option<String>)> {
    if looks_like_path(r) {
        let mut parts = r.splitn(2, '#');
        let file = PathBuf::from(parts.next().unwrap_or(r));
        return Ok((file, parts.next().map(str::to_string)));
    }
    let m = manifest.ok_or_else(|| anyhow!("layer `{r}` needs a manifest to resolve"))?;
    let e = m.auxiliary(r)?;
    Ok((e.path.clone(), Some(r.to_string())))
}

/// Reads one band and aligns it to `grid`: identical grids pass through,
/// other grids in the same CRS are resampled by nearest neighbour.
pub fn read_aligned(path: &Path, band: Option<&str>, grid: &GridGeometry) -> Result<RasterBand> {
    let (g, bands) = read_raster(path, None)?;
    let b = match band {
        Some(name) => take_band(&bands, name, path)?,
        None if bands.len() == 1 => bands.into_iter().next().unwrap(),
        None => bail!("{} has {} bands; name one with `#band`", path.display(), bands.len()),
    };
    align(b, &g, grid)
}

pub fn align(band: RasterBand, from: &GridGeometry, to: &GridGeometry) -> Result<RasterBand> {
    if from == to {
        Ok(band)
    } else {
        Ok(resample_nearest(&band, from, to)?)
    }
}

pub fn read_layer(r: &str, manifest: Option<&SceneManifest>, grid: &GridGeometry) -> Result<(PathBuf, RasterBand)> {
    let (path, band) = resolve_layer(r, manifest)?;
    let b = read_aligned(&path, band.as_deref(), grid)?;
    Ok((path, b))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Distinct positive ids of a region raster, ascending.
pub fn region_ids(regions: &RasterBand) -> Vec<u32> {
    let mut seen = std::collections::BTreeSet::new();
    for i in 0..regions.len() {
        if let Some(v) = regions.value(i) {
            if v > 0.0 {
                seen.insert(v as u32);
            }
        }
    }
    seen.into_iter().collect()
}

/// Flag band selecting one region id.
pub fn region_mask(regions: &RasterBand, id: u32) -> RasterBand {
    let v = regions.values().iter().enumerate().map(|(i, _)| (regions.value(i) == Some(id as f32)) as u8 as f32).collect();
    RasterBand::new(format!("region{id}"), palmscan_core::Unit::Flag, None, regions.width(), regions.height(), v)
        .expect("same shape")
}

/// Region 0 covering the whole grid, followed by each id of `regions`.
pub fn region_list(regions: Option<&RasterBand>, width: usize, height: usize) -> Vec<(u32, RasterBand)> {
    let all = RasterBand::filled("all", palmscan_core::Unit::Flag, None, width, height, 1.0);
    let mut out = vec![(0, all)];
    if let Some(r) = regions {
        out.extend(region_ids(r).into_iter().map(|id| (id, region_mask(r, id))));
    }
    out
}
