//! `texture`: GLCM sum-average of the composite byte bands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use palmscan_core::raster::NODATA_F32;
use palmscan_core::texture::{prepare_levels, savg_window};
use palmscan_core::{RasterBand, Unit};

use crate::config::TextureBlock;
use crate::exec::Exec;
use crate::geotiff::{read_raster, write_raster, WriteOptions};
use crate::provenance::{Provenance, Staging};
use crate::stages::{require, take_band};

pub const TEXTURE_FILE: &str = "textures.tif";

/// `vv_byte` becomes `savg_vv`.
pub fn texture_band_name(band: &str) -> String {
    format!("savg_{}", band.strip_suffix("_byte").unwrap_or(band))
}

pub fn run_texture(composite: &Path, block: &TextureBlock, out: &Path, opts: &WriteOptions, ex: &Exec) -> Result<PathBuf> {
    block.glcm.validate()?;
    require(composite, "composite")?;
    let (grid, bands) = read_raster(composite, None)?;
    // Byte bands carry no nodata; validity comes from the dB difference band.
    let valid: Option<Vec<bool>> =
        bands.iter().find(|b| b.name == "vhvv_diff").map(|d| (0..d.len()).map(|i| d.is_valid(i)).collect());
    let (w, h) = (grid.width, grid.height);
    let mut outputs = Vec::new();
    for name in &block.bands {
        let band = take_band(&bands, name, composite)?;
        if band.unit != Unit::Byte {
            bail!("texture input `{name}` has unit {}, expected byte", band.unit);
        }
        let (levels, ok) = prepare_levels(&band, valid.as_deref(), block.glcm.levels)?;
        let values = ex.tiled(w, h, block.glcm.radius, |win| {
            savg_window(&levels, &ok, w, h, &block.glcm, win)
                .into_iter()
                .map(|v| v.map_or(NODATA_F32, |s| s as f32))
                .collect()
        })?;
        outputs.push(RasterBand::new(texture_band_name(name), Unit::GrayLevel, Some(NODATA_F32), w, h, values)?);
    }
    let mut st = Staging::new(out, "texture")?;
    write_raster(&st.output(TEXTURE_FILE), &grid, &outputs.iter().collect::<Vec<_>>(), opts)?;
    let mut prov = Provenance::new("texture", block, None)?;
    prov.input(composite)?;
    st.commit(prov)?;
    Ok(out.join(TEXTURE_FILE))
}
