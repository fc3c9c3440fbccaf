//! Run configuration: one JSON document with a block per stage.
//!
//! Every block deserializes with defaults filled in, and the resolved block
//! (not the raw file) is what provenance sidecars record.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use palmscan_core::age::AgeParams;
use palmscan_core::classify::{partition_grids, KMeansParams};
use palmscan_core::composite::CompositeParams;
use palmscan_core::optical::{IndexKind, QaSpec, RollingParams};
use palmscan_core::postproc::PostprocParams;
use palmscan_core::raster::BBox;
use palmscan_core::texture::GlcmParams;
use palmscan_core::validate::Allocation;

use crate::geotiff::WriteOptions;
use crate::manifest::{load_manifest, Sensor};

/// Stages `run` executes, in dependency order.
pub const PIPELINE: [&str; 8] = ["composite", "texture", "indices", "classify", "postproc", "age", "validate", "report"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureBlock {
    #[serde(flatten)]
    pub glcm: GlcmParams,
    /// Byte bands of the composite to texture.
    pub bands: Vec<String>,
}

impl Default for TextureBlock {
    fn default() -> Self {
        TextureBlock { glcm: GlcmParams::default(), bands: vec!["vv_byte".into(), "vh_byte".into(), "diff_byte".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicesBlock {
    pub index: IndexKind,
    pub qa: QaSpec,
    #[serde(flatten)]
    pub rolling: RollingParams,
    /// Year of the annual NDVI median used by post-processing; defaults to
    /// the run year.
    pub ndvi_year: Option<i32>,
    /// Edge of the square pixel blocks the series is stored in.
    pub series_tile: usize,
}

impl Default for IndicesBlock {
    fn default() -> Self {
        IndicesBlock {
            index: IndexKind::Bsi,
            qa: QaSpec::default(),
            rolling: RollingParams::default(),
            ndvi_year: None,
            series_tile: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyBlock {
    /// Cell side in CRS units (degrees for geographic grids).
    pub cell_side: f64,
    pub samples_per_cell: usize,
    #[serde(flatten)]
    pub kmeans: KMeansParams,
    pub vote_threshold: usize,
    /// Cluster labels CSV (`cell_id,cluster_id,class`).
    pub labels: Option<PathBuf>,
    /// Reference flag raster used to label clusters automatically, as
    /// `path` or `path#band`.
    pub auto_label_from: Option<String>,
    /// Area of interest; defaults to the grid bounds.
    pub aoi: Option<BBox>,
}

impl Default for ClassifyBlock {
    fn default() -> Self {
        ClassifyBlock {
            cell_side: 5.0,
            samples_per_cell: 50_000,
            kmeans: KMeansParams::default(),
            vote_threshold: 7,
            labels: None,
            auto_label_from: None,
            aoi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocBlock {
    #[serde(flatten)]
    pub params: PostprocParams,
    /// Exclusion masks (manifest layer names or file paths) whose union is
    /// removed from the map.
    pub exclude: Vec<String>,
    pub dem: Option<String>,
}

impl Default for PostprocBlock {
    fn default() -> Self {
        PostprocBlock {
            params: PostprocParams::default(),
            exclude: vec!["mangrove1".into(), "mangrove2".into(), "mangrove3".into()],
            dem: Some("dem".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgeBlock {
    #[serde(flatten)]
    pub params: AgeParams,
    pub loss: Option<String>,
    pub regions: Option<String>,
}

impl Default for AgeBlock {
    fn default() -> Self {
        AgeBlock { params: AgeParams::default(), loss: Some("loss_year".into()), regions: Some("region".into()) }
    }
}

/// Simulated photo-interpretation against a reference raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateBlock {
    /// `path` or `path#band` of a reference flag raster.
    pub reference: String,
    pub votes: usize,
    pub error_rate: f64,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock { reference: String::new(), votes: 3, error_rate: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateBlock {
    /// Sample size per region.
    pub n_total: usize,
    pub allocation: Allocation,
    pub level: f64,
    pub regions: Option<String>,
    pub interpretations: Option<PathBuf>,
    pub simulate: Option<SimulateBlock>,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        ValidateBlock {
            n_total: 1000,
            allocation: Allocation::Equal,
            level: 0.95,
            regions: Some("region".into()),
            interpretations: None,
            simulate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportBlock {
    pub regions: Option<String>,
    pub other_product: Option<String>,
}

impl Default for ReportBlock {
    fn default() -> Self {
        ReportBlock { regions: Some("region".into()), other_product: Some("other_extent".into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub year: i32,
    #[serde(default)]
    pub seed: u64,
    /// Worker count; never recorded in provenance since it cannot change
    /// results.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default)]
    pub stages: Option<Vec<String>>,
    #[serde(default)]
    pub geotiff: WriteOptions,
    #[serde(default)]
    pub composite: CompositeParams,
    #[serde(default)]
    pub texture: TextureBlock,
    #[serde(default)]
    pub indices: IndicesBlock,
    #[serde(default)]
    pub classify: ClassifyBlock,
    #[serde(default)]
    pub postproc: PostprocBlock,
    #[serde(default)]
    pub age: AgeBlock,
    #[serde(default)]
    pub validate: ValidateBlock,
    #[serde(default)]
    pub report: ReportBlock,
}

fn default_tile() -> usize {
    crate::exec::DEFAULT_TILE
}

impl RunConfig {
    /// Parses a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.out);
        if let Some(p) = &mut self.classify.labels {
            fix(p);
        }
        if let Some(p) = &mut self.validate.interpretations {
            fix(p);
        }
        let fix_ref = |r: &mut String| {
            if looks_like_path(r) && Path::new(r.as_str()).is_relative() {
                *r = base.join(r.as_str()).display().to_string();
            }
        };
        if let Some(r) = &mut self.classify.auto_label_from {
            fix_ref(r);
        }
        if let Some(s) = &mut self.validate.simulate {
            fix_ref(&mut s.reference);
        }
        for r in self
            .postproc
            .exclude
            .iter_mut()
            .chain(&mut self.postproc.dem)
            .chain(&mut self.age.loss)
            .chain(&mut self.age.regions)
            .chain(&mut self.validate.regions)
            .chain(&mut self.report.regions)
            .chain(&mut self.report.other_product)
        {
            fix_ref(r);
        }
    }

    pub fn ndvi_year(&self) -> i32 {
        self.indices.ndvi_year.unwrap_or(self.year)
    }

    /// Requested stages in pipeline order.
    pub fn selected_stages(&self) -> Vec<&'static str> {
        match &self.stages {
            None => PIPELINE.to_vec(),
            Some(list) => PIPELINE.iter().copied().filter(|s| list.iter().any(|l| l == s)).collect(),
        }
    }
}

/// A layer reference is a file path when it names a GeoTIFF, otherwise the
/// band name of a manifest auxiliary entry.
pub fn looks_like_path(r: &str) -> bool {
    let file = r.split('#').next().unwrap_or(r).to_ascii_lowercase();
    file.ends_with(".tif") || file.ends_with(".tiff")
}

/// Schema and cross-field checks. An empty list means the config is valid.
pub fn validate_config(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg: RunConfig = match serde_json::from_str(&text) {
        Ok(c) => c,
        Err(e) => return Ok(vec![format!("schema: {e}")]),
    };
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(diagnostics(&cfg))
}

pub fn diagnostics(cfg: &RunConfig) -> Vec<String> {
    let mut d = Vec::new();
    let mut check = |what: &str, r: palmscan_core::Result<()>| {
        if let Err(e) = r {
            d.push(format!("{what}: {e}"));
        }
    };
    check("composite", cfg.composite.validate());
    check("texture", cfg.texture.glcm.validate());
    check("indices.qa", cfg.indices.qa.validate());
    check("classify", cfg.classify.kmeans.validate());
    check("postproc", cfg.postproc.params.validate());
    check("age", cfg.age.params.validate());

    if cfg.tile == 0 {
        d.push("tile must be >= 1".into());
    }
    if cfg.workers == Some(0) {
        d.push("workers must be >= 1".into());
    }
    if cfg.geotiff.tile == 0 || cfg.geotiff.tile % 16 != 0 {
        d.push(format!("geotiff.tile {} is not a positive multiple of 16", cfg.geotiff.tile));
    }
    if let Some(list) = &cfg.stages {
        for s in list {
            if !PIPELINE.contains(&s.as_str()) {
                d.push(format!("stages: unknown stage `{s}`"));
            }
        }
    }
    if cfg.texture.bands.is_empty() {
        d.push("texture.bands is empty".into());
    }
    if cfg.texture.bands.len() != 3 {
        d.push(format!("texture.bands lists {} bands; classification expects 3", cfg.texture.bands.len()));
    }
    if cfg.indices.rolling.min_obs == 0 || cfg.indices.rolling.window_days == 0 {
        d.push("indices: window_days and min_obs must be >= 1".into());
    }
    if cfg.indices.series_tile == 0 {
        d.push("indices.series_tile must be >= 1".into());
    }
    let c = &cfg.classify;
    if !(c.cell_side > 0.0) {
        d.push(format!("classify.cell_side {} must be > 0", c.cell_side));
    }
    if c.samples_per_cell < c.kmeans.k_max {
        d.push(format!("classify.samples_per_cell {} < k_max {}", c.samples_per_cell, c.kmeans.k_max));
    }
    if c.vote_threshold == 0 {
        d.push("classify.vote_threshold must be >= 1".into());
    }
    if c.labels.is_none() && c.auto_label_from.is_none() {
        d.push("classify: set labels or auto_label_from".into());
    }
    if let Some(p) = &c.labels {
        if !p.exists() {
            d.push(format!("classify.labels {} does not exist", p.display()));
        }
    }
    if cfg.age.params.ref_year != cfg.year {
        d.push(format!("age.ref_year {} differs from year {}", cfg.age.params.ref_year, cfg.year));
    }
    let v = &cfg.validate;
    if v.n_total < 4 {
        d.push(format!("validate.n_total {} < 4", v.n_total));
    }
    if !(v.level > 0.0 && v.level < 1.0) {
        d.push(format!("validate.level {} outside (0, 1)", v.level));
    }
    match (&v.interpretations, &v.simulate) {
        (None, None) => d.push("validate: set interpretations or simulate".into()),
        (Some(p), _) if !p.exists() => d.push(format!("validate.interpretations {} does not exist", p.display())),
        (_, Some(s)) if !(0.0..=1.0).contains(&s.error_rate) || s.votes == 0 => {
            d.push("validate.simulate: votes >= 1 and error_rate in [0, 1] required".into())
        }
        _ => {}
    }

    match load_manifest(&cfg.manifest) {
        Err(e) => d.push(format!("manifest: {e:#}")),
        Ok(m) => {
            let mut refs: Vec<(&str, &String)> = cfg.postproc.exclude.iter().map(|r| ("postproc.exclude", r)).collect();
            let opt = [
                ("postproc.dem", &cfg.postproc.dem),
                ("age.loss", &cfg.age.loss),
                ("age.regions", &cfg.age.regions),
                ("validate.regions", &cfg.validate.regions),
                ("report.regions", &cfg.report.regions),
                ("report.other_product", &cfg.report.other_product),
            ];
            refs.extend(opt.iter().filter_map(|(k, r)| r.as_ref().map(|r| (*k, r))));
            for (key, r) in refs {
                let ok = if looks_like_path(r) {
                    Path::new(r.split('#').next().unwrap_or(r)).exists()
                } else {
                    m.auxiliary(r).is_ok()
                };
                if !ok {
                    d.push(format!("{key}: layer `{r}` not found"));
                }
            }
            if m.radar_in_year(cfg.year).next().is_none() {
                d.push(format!("manifest has no S1 scenes in {}", cfg.year));
            }
            let n_cells = match c.aoi {
                Some(b) => partition_grids(&b, c.cell_side).ok().map(|v| v.len()),
                None => m
                    .first_of(Sensor::S1)
                    .and_then(|e| crate::geotiff::read_grid(&e.path).ok())
                    .and_then(|g| partition_grids(&g.bbox(), c.cell_side).ok())
                    .map(|v| v.len()),
            };
            if let Some(n) = n_cells {
                if c.vote_threshold > n {
                    d.push(format!("classify.vote_threshold {} exceeds the {n} grid cells", c.vote_threshold));
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg: RunConfig = serde_json::from_str(r#"{"manifest":"m.json","out":"run","year":2017}"#).unwrap();
        assert_eq!(cfg.classify.vote_threshold, 7);
        assert_eq!(cfg.composite.trim_fraction, 0.2);
        assert_eq!(cfg.texture.glcm.radius, 3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"manifest":"m","out":"o","year":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn selected_stages_follow_pipeline_order() {
        let mut cfg: RunConfig = serde_json::from_str(r#"{"manifest":"m.json","out":"run","year":2017}"#).unwrap();
        cfg.stages = Some(vec!["age".into(), "composite".into()]);
        assert_eq!(cfg.selected_stages(), vec!["composite", "age"]);
    }

    #[test]
    fn layer_refs() {
        assert!(looks_like_path("aux/dem.tif"));
        assert!(looks_like_path("truth/truth.tif#truth_palm"));
        assert!(!looks_like_path("mangrove1"));
    }
}
