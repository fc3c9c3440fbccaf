//! `report`: regional area and age tables and the comparison with another
//! oil-palm product.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;

use palmscan_core::age::{expansion_series, AgeClass, AgeParams};
use palmscan_core::validate::{compare_products, regional_stats};
use palmscan_core::{RasterBand, Unit};

use crate::config::ReportBlock;
use crate::geotiff::read_single;
use crate::manifest::SceneManifest;
use crate::provenance::{Provenance, Staging};
use crate::stages::{read_layer, region_list, require, write_csv};

pub const REGIONAL_FILE: &str = "regional_stats.csv";

#[derive(Debug, Serialize)]
struct RegionalRow {
    region_id: u32,
    total_ha: f64,
    young_ha: f64,
    prime_ha: f64,
    old_ha: f64,
    insufficient_ha: f64,
    pre_archive_ha: f64,
    mean_age_with_pre_archive: Option<f64>,
    mean_age_without_pre_archive: Option<f64>,
    closure_age_offset: i32,
}

#[derive(Debug, Serialize)]
struct CompositionRow {
    region_id: u32,
    age_class: &'static str,
    hectares: f64,
    share: f64,
}

#[derive(Debug, Serialize)]
struct ExpansionRow {
    region_id: u32,
    year: i32,
    hectares: f64,
    cumulative_ha: f64,
}

pub fn run_report(
    extent_path: &Path,
    closure_path: &Path,
    params: &AgeParams,
    block: &ReportBlock,
    manifest: Option<&SceneManifest>,
    out: &Path,
) -> Result<PathBuf> {
    require(extent_path, "postproc")?;
    require(closure_path, "age")?;
    let (grid, extent) = read_single(extent_path, Some(Unit::Flag))?;
    let (cgrid, closure) = read_single(closure_path, Some(Unit::Year))?;
    if cgrid != grid {
        bail!("{} and {} are on different grids", extent_path.display(), closure_path.display());
    }
    let (w, h) = (grid.width, grid.height);
    let area = grid.pixel_area_m2();
    let mut inputs = vec![extent_path.to_path_buf(), closure_path.to_path_buf()];
    let mut layer = |r: &Option<String>| -> Result<Option<RasterBand>> {
        match r {
            Some(r) => {
                let (p, b) = read_layer(r, manifest, &grid)?;
                inputs.push(p);
                Ok(Some(b))
            }
            None => Ok(None),
        }
    };
    let regions = layer(&block.regions)?;
    let other = layer(&block.other_product)?;
    let list = region_list(regions.as_ref(), w, h);
    let refs: Vec<(u32, &RasterBand)> = list.iter().map(|(id, b)| (*id, b)).collect();

    let stats = regional_stats(&extent, &closure, &refs, area, params)?;
    let regional: Vec<RegionalRow> = stats
        .iter()
        .map(|s| RegionalRow {
            region_id: s.region_id,
            total_ha: s.total_ha,
            young_ha: s.class_ha[0],
            prime_ha: s.class_ha[1],
            old_ha: s.class_ha[2],
            insufficient_ha: s.insufficient_ha,
            pre_archive_ha: s.pre_archive_ha,
            mean_age_with_pre_archive: s.mean_age_with_pre_archive,
            mean_age_without_pre_archive: s.mean_age_without_pre_archive,
            closure_age_offset: s.closure_age_offset,
        })
        .collect();
    let composition: Vec<CompositionRow> = stats
        .iter()
        .flat_map(|s| {
            AgeClass::ALL.iter().enumerate().map(move |(j, c)| CompositionRow {
                region_id: s.region_id,
                age_class: c.name(),
                hectares: s.class_ha[j],
                share: s.class_share[j],
            })
        })
        .collect();
    let mut expansion = Vec::new();
    for &(id, mask) in &refs {
        let mut cum = 0.0;
        for (year, ha) in expansion_series(&closure, mask, area, params.archive_start..=params.ref_year)? {
            cum += ha;
            expansion.push(ExpansionRow { region_id: id, year, hectares: ha, cumulative_ha: cum });
        }
    }

    let mut st = Staging::new(out, "report")?;
    write_csv(&st.output(REGIONAL_FILE), &regional)?;
    write_csv(&st.output("age_composition.csv"), &composition)?;
    write_csv(&st.output("expansion_long.csv"), &expansion)?;
    if let Some(o) = &other {
        write_csv(&st.output("comparison.csv"), &compare_products(&extent, o, &refs, area)?)?;
    }
    let mut prov = Provenance::new("report", &(params, block), None)?;
    prov.inputs(inputs.iter().map(|p| p.as_path()))?;
    st.commit(prov)?;
    Ok(out.join(REGIONAL_FILE))
}
