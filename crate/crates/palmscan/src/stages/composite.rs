//! `composite`: annual radar composite from the S1 scenes of one year.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use palmscan_core::composite::{
    check_scenes, composite_window, fit_angle_slopes, AnnualComposite, AveragingDomain, CompositeParams, SceneView,
    SlopeTable,
};
use palmscan_core::raster::NODATA_F32;
use palmscan_core::{GridGeometry, RasterBand, Unit};

use crate::exec::Exec;
use crate::geotiff::{read_raster, write_raster, WriteOptions};
use crate::manifest::{load_manifest, ManifestEntry};
use crate::provenance::{Provenance, Staging};
use crate::stages::{take_band, write_json};

pub fn composite_name(year: i32) -> String {
    format!("composite_{year}.tif")
}

struct LoadedScene {
    entry: ManifestEntry,
    grid: GridGeometry,
    vv: RasterBand,
    vh: RasterBand,
    incidence: Option<RasterBand>,
}

fn pick(names: &[String], pol: &str) -> Option<String> {
    names.iter().find(|n| n.eq_ignore_ascii_case(pol)).cloned()
}

fn load_scene(e: &ManifestEntry) -> Result<LoadedScene> {
    let (grid, bands) = read_raster(&e.path, None)?;
    let vv_name = pick(&e.bands, "vv").with_context(|| format!("{}: no VV band listed", e.path.display()))?;
    let vh_name = pick(&e.bands, "vh").with_context(|| format!("{}: no VH band listed", e.path.display()))?;
    let find = |name: &str| take_band(&bands, name, &e.path);
    let vv = find(&vv_name)?;
    let vh = find(&vh_name)?;
    for b in [&vv, &vh] {
        if b.unit != Unit::Db {
            bail!("{}: band `{}` has unit {}, expected dB", e.path.display(), b.name, b.unit);
        }
    }
    let incidence = match &e.incidence_band {
        Some(n) => Some(find(n)?),
        None => None,
    };
    Ok(LoadedScene { entry: e.clone(), grid, vv, vh, incidence })
}

/// Sidecar describing how the composite was built.
#[derive(Debug, Serialize)]
struct CompositeInfo<'a> {
    year: i32,
    n_scenes: usize,
    trim_fraction: f64,
    theta_ref: f64,
    averaging: AveragingDomain,
    difference_band: &'static str,
    byte_ranges: [(&'static str, (f64, f64)); 3],
    slopes: &'a SlopeTable,
}

/// Builds the six-band composite for `year`. Returns the composite path.
pub fn run_composite(
    manifest_path: &Path,
    year: i32,
    params: &CompositeParams,
    out: &Path,
    opts: &WriteOptions,
    ex: &Exec,
) -> Result<PathBuf> {
    params.validate()?;
    let manifest = load_manifest(manifest_path)?;
    let entries: Vec<ManifestEntry> = manifest.radar_in_year(year).cloned().collect();
    if entries.is_empty() {
        bail!("manifest has no S1 scenes in {year}");
    }
    let scenes = ex.try_map(&entries, load_scene)?;
    let grid = scenes[0].grid;
    for s in &scenes {
        if s.grid != grid {
            bail!("{} is not co-registered with {}", s.entry.path.display(), scenes[0].entry.path.display());
        }
    }
    let views: Vec<SceneView<'_>> = scenes
        .iter()
        .map(|s| SceneView { orbit: s.entry.orbit, vv: &s.vv, vh: &s.vh, incidence: s.incidence.as_ref() })
        .collect();
    check_scenes(&views)?;
    let slopes = fit_angle_slopes(&views, params);
    let (w, h) = (grid.width, grid.height);
    let pairs = ex.tiled(w, h, 0, |win| {
        let t = composite_window(&views, &slopes, params, win);
        t.vv.into_iter().zip(t.vh).collect()
    })?;
    let (vv, vh): (Vec<f32>, Vec<f32>) = pairs.into_iter().unzip();
    let vv = RasterBand::new("vv_mean", Unit::Db, Some(NODATA_F32), w, h, vv)?;
    let vh = RasterBand::new("vh_mean", Unit::Db, Some(NODATA_F32), w, h, vh)?;
    let comp = AnnualComposite::from_means(vv, vh, params)?;

    let mut st = Staging::new(out, "composite")?;
    let name = composite_name(year);
    write_raster(&st.output(&name), &grid, &comp.bands(), opts)?;
    let info = CompositeInfo {
        year,
        n_scenes: scenes.len(),
        trim_fraction: params.trim_fraction,
        theta_ref: params.theta_ref,
        averaging: params.averaging,
        difference_band: "vhvv_diff = vh_mean - vv_mean (dB)",
        byte_ranges: [("vv_byte", params.vv_range), ("vh_byte", params.vh_range), ("diff_byte", params.diff_range)],
        slopes: &slopes,
    };
    write_json(&st.output(&format!("composite_{year}.json")), &info)?;

    let mut prov = Provenance::new("composite", params, None)?;
    prov.input(manifest_path)?;
    prov.inputs(entries.iter().map(|e| e.path.as_path()))?;
    st.commit(prov)?;
    Ok(out.join(name))
}
