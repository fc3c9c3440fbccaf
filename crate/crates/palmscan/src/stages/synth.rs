//! `synth`: writes a complete synthetic scene (manifest, radar and optical
//! stacks, auxiliary layers, truth) plus a ready-to-run config.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use palmscan_core::composite::Orbit;
use palmscan_core::synth::{
    generate_optical_scene, generate_radar_scene, generate_truth, optical_dates, radar_dates, random_layout,
    LayoutParams, NoiseSpec, OpticalConstants, OpticalSensor, Parcel, RadarConstants, SceneSpec,
};
use palmscan_core::{GridGeometry, RasterBand};

use crate::config::{ClassifyBlock, RunConfig, SimulateBlock, ValidateBlock};
use crate::exec::Exec;
use crate::geotiff::{write_raster, WriteOptions};
use crate::manifest::{save_manifest, ManifestEntry, SceneManifest, Sensor};
use crate::provenance::{Provenance, Staging};
use crate::stages::write_json;

/// Synthetic scene description. Parcels are generated from `layout` when
/// not given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub grid: GridGeometry,
    pub seed: u64,
    #[serde(default)]
    pub parcels: Option<Vec<Parcel>>,
    #[serde(default)]
    pub layout: LayoutParams,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_ref_year")]
    pub ref_year: i32,
    #[serde(default = "default_lag")]
    pub closure_lag: i32,
    #[serde(default = "default_loss_lead")]
    pub loss_lead_years: i32,
    /// First year of optical scenes written.
    #[serde(default = "default_archive_start")]
    pub optical_start_year: i32,
    #[serde(default)]
    pub radar: RadarConstants,
    #[serde(default)]
    pub optical: OpticalConstants,
    #[serde(default = "default_hill")]
    pub hill_height_m: f64,
    /// Year of the radar stack; defaults to `ref_year`.
    #[serde(default)]
    pub radar_year: Option<i32>,
    #[serde(default = "default_tiff")]
    pub geotiff: WriteOptions,
    /// Blocks merged into the emitted run config.
    #[serde(default)]
    pub run: Option<SynthRunDefaults>,
}

/// Parts of the emitted run config that depend on the scene size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRunDefaults {
    pub cell_side: Option<f64>,
    pub samples_per_cell: usize,
    pub vote_threshold: Option<usize>,
    pub validate_n_total: usize,
}

impl Default for SynthRunDefaults {
    fn default() -> Self {
        SynthRunDefaults { cell_side: None, samples_per_cell: 50_000, vote_threshold: None, validate_n_total: 1000 }
    }
}

fn default_ref_year() -> i32 {
    2017
}
fn default_lag() -> i32 {
    2
}
fn default_loss_lead() -> i32 {
    5
}
fn default_archive_start() -> i32 {
    1984
}
fn default_hill() -> f64 {
    300.0
}
fn default_tiff() -> WriteOptions {
    WriteOptions { reflectance_as_dn: true, ..WriteOptions::default() }
}

impl SynthSpec {
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let parcels = match &self.parcels {
            Some(p) => p.clone(),
            None => random_layout(self.grid.width, self.grid.height, &self.layout, self.seed)?,
        };
        let spec = SceneSpec {
            grid: self.grid,
            parcels,
            noise: self.noise,
            seed: self.seed,
            ref_year: self.ref_year,
            closure_lag: self.closure_lag,
            loss_lead_years: self.loss_lead_years,
            optical_start_year: self.optical_start_year,
            radar: self.radar,
            optical: self.optical,
            hill_height_m: self.hill_height_m,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing scene spec {}", path.display()))
    }
}

fn sensor_of(s: OpticalSensor) -> Sensor {
    match s {
        OpticalSensor::L5 => Sensor::L5,
        OpticalSensor::L7 => Sensor::L7,
    }
}

fn entry(path: PathBuf, sensor: Sensor, date: NaiveDate, orbit: Orbit, bands: &[&str]) -> ManifestEntry {
    ManifestEntry {
        path,
        sensor,
        date,
        orbit,
        bands: bands.iter().map(|b| b.to_string()).collect(),
        qa_band: None,
        incidence_band: None,
    }
}

/// Writes the scene under `out`. Returns the path of the emitted manifest.
pub fn run_synth(spec_file: &SynthSpec, out: &Path, ex: &Exec) -> Result<PathBuf> {
    let spec = spec_file.scene_spec()?;
    let truth = generate_truth(&spec)?;
    let grid = spec.grid;
    let opts = spec_file.geotiff;
    let radar_year = spec_file.radar_year.unwrap_or(spec.ref_year);
    let mut st = Staging::new(out, "synth")?;
    let mut entries = Vec::new();

    let dates = radar_dates(&spec, radar_year);
    let names: Vec<String> = dates.iter().map(|d| format!("s1/s1_{d}.tif")).collect();
    let paths: Vec<PathBuf> = names.iter().map(|n| st.data(n)).collect();
    let jobs: Vec<(usize, NaiveDate)> = dates.iter().copied().enumerate().collect();
    ex.try_map(&jobs, |&(k, d)| {
        let s = generate_radar_scene(&spec, &truth, d, k);
        write_raster(&paths[k], &grid, &[&s.vv, &s.vh, &s.incidence], &opts)
    })?;
    for (d, n) in dates.iter().zip(&names) {
        let mut e = entry(PathBuf::from(n), Sensor::S1, *d, spec.radar.orbit, &["vv", "vh"]);
        e.incidence_band = Some("incidence".into());
        entries.push(e);
    }

    let odates = optical_dates(&spec);
    let onames: Vec<String> =
        odates.iter().map(|(d, s)| format!("optical/{}_{d}.tif", format!("{s:?}").to_lowercase())).collect();
    let opaths: Vec<PathBuf> = onames.iter().map(|n| st.data(n)).collect();
    let ojobs: Vec<(usize, NaiveDate, OpticalSensor)> =
        odates.iter().enumerate().map(|(k, &(d, s))| (k, d, s)).collect();
    ex.try_map(&ojobs, |&(k, d, s)| {
        let sc = generate_optical_scene(&spec, &truth, d, s, k);
        let [b, r, n, w] = &sc.bands;
        write_raster(&opaths[k], &grid, &[b, r, n, w, &sc.qa], &opts)
    })?;
    for ((d, s), n) in odates.iter().zip(&onames) {
        let mut e = entry(PathBuf::from(n), sensor_of(*s), *d, Orbit::Na, &["blue", "red", "nir", "swir1"]);
        e.qa_band = Some("qa".into());
        entries.push(e);
    }

    let aux_date = NaiveDate::from_ymd_opt(spec.ref_year, 1, 1).context("ref_year out of range")?;
    let [m1, m2, m3] = truth.mangrove_masks();
    let aux: Vec<(&str, Sensor, RasterBand)> = vec![
        ("dem", Sensor::Dem, truth.dem_band(&spec)),
        ("mangrove1", Sensor::Mask, m1),
        ("mangrove2", Sensor::Mask, m2),
        ("mangrove3", Sensor::Mask, m3),
        ("region", Sensor::Mask, truth.region_band()),
        ("other_extent", Sensor::Mask, truth.other_product_band(&spec)),
        ("loss_year", Sensor::LossYear, truth.loss_band(&spec)),
    ];
    for (name, sensor, band) in &aux {
        let n = format!("aux/{name}.tif");
        write_raster(&st.output(&n), &grid, &[band], &opts)?;
        entries.push(entry(PathBuf::from(&n), *sensor, aux_date, Orbit::Na, &[name]));
    }

    let truth_bands = [truth.cover_band(), truth.palm_band(), truth.closure_band(&spec)];
    write_raster(&st.output("truth/truth.tif"), &grid, &truth_bands.iter().collect::<Vec<_>>(), &opts)?;
    write_json(&st.output("truth/scene_spec.json"), &spec)?;

    // Entry paths stay relative to the manifest so the scene directory can
    // be moved.
    save_manifest(&st.output("manifest.json"), &SceneManifest { entries })?;

    let cfg = default_run_config(spec_file, &spec);
    write_json(&st.output("config.json"), &cfg)?;

    let prov = Provenance::new("synth", spec_file, Some(spec.seed))?;
    st.commit(prov)?;
    Ok(out.join("manifest.json"))
}

/// Run config for a synthetic scene: labels and interpretations come from
/// the truth raster.
pub fn default_run_config(spec_file: &SynthSpec, spec: &SceneSpec) -> RunConfig {
    let d = spec_file.run.clone().unwrap_or_default();
    let g = &spec.grid;
    // Default cells: a 3x3 partition of the scene.
    let side = d.cell_side.unwrap_or_else(|| {
        let ext = (g.width as f64 * g.px_size_x.abs()).max(g.height as f64 * g.px_size_y.abs());
        ext / 3.0
    });
    let mut cfg: RunConfig = serde_json::from_value(serde_json::json!({
        "manifest": "manifest.json",
        "out": "run",
        "year": spec_file.radar_year.unwrap_or(spec.ref_year),
    }))
    .expect("minimal config");
    cfg.seed = spec.seed;
    cfg.geotiff = WriteOptions::default();
    cfg.age.params.ref_year = spec.ref_year;
    cfg.classify = ClassifyBlock {
        cell_side: side,
        samples_per_cell: d.samples_per_cell,
        vote_threshold: d.vote_threshold.unwrap_or(5),
        auto_label_from: Some("truth/truth.tif#truth_palm".into()),
        ..ClassifyBlock::default()
    };
    cfg.validate = ValidateBlock {
        n_total: d.validate_n_total,
        simulate: Some(SimulateBlock { reference: "truth/truth.tif#truth_palm".into(), ..SimulateBlock::default() }),
        ..ValidateBlock::default()
    };
    cfg
}
