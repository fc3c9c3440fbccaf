//! `classify`: per-cell clustering (`fit`), cluster maps and labelled
//! oil-palm maps (`predict`), and the cross-cell vote (`vote`).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use palmscan_core::classify::{
    apply_labels, fit_kmeans_auto, label_by_reference, majority_vote, partition_grids, predict_window, sample_features,
    summarize_clusters, ClusterModel, FeatureStack, GridCell, KMeansParams, KScore, LabelTable, LandClass, Sample,
    FEATURE_NAMES, N_FEATURES,
};
use palmscan_core::raster::NODATA_U16;
use palmscan_core::{GridGeometry, RasterBand, Unit};

use crate::config::ClassifyBlock;
use crate::exec::Exec;
use crate::geotiff::{read_raster, write_raster, WriteOptions};
use crate::manifest::SceneManifest;
use crate::provenance::{Provenance, Staging};
use crate::stages::{read_layer, require, take_band, write_csv, write_json};

pub const MODELS_FILE: &str = "models.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABELS_TEMPLATE: &str = "labels_template.csv";
pub const CLASS_MAPS_FILE: &str = "class_maps.tif";
pub const PALM_MAPS_FILE: &str = "palm_maps.tif";
pub const VOTED_FILE: &str = "voted.tif";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub cell_id: u32,
    pub n_samples: usize,
    pub scores: Vec<KScore>,
}

/// Everything `fit` learned; `predict` needs only this file and the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsFile {
    pub grid: GridGeometry,
    pub seed: u64,
    pub cell_side: f64,
    pub kmeans: KMeansParams,
    pub features: Vec<String>,
    pub cells: Vec<GridCell>,
    pub models: Vec<ClusterModel>,
    pub scores: Vec<CellScores>,
    pub skipped: Vec<SkippedCell>,
}

impl ModelsFile {
    pub fn load(path: &Path) -> Result<Self> {
        require(path, "classify fit")?;
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub cell_id: u32,
    pub cluster_id: u32,
    pub class: String,
}

pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading labels {}", path.display()))?;
    let mut t = LabelTable::new();
    for (i, row) in rd.deserialize::<LabelRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let class = LandClass::parse(&row.class)
            .with_context(|| format!("{} row {}: unknown class `{}`", path.display(), i + 1, row.class))?;
        t.insert(row.cell_id, row.cluster_id, class)?;
    }
    Ok(t)
}

fn label_rows(t: &LabelTable) -> Vec<LabelRow> {
    t.rows().map(|(c, k, v)| LabelRow { cell_id: c, cluster_id: k, class: v.name().into() }).collect()
}

/// The six classification inputs, read from the composite and texture files.
pub struct Features {
    pub grid: GridGeometry,
    bands: Vec<RasterBand>,
}

impl Features {
    pub fn load(composite: &Path, textures: &Path) -> Result<Self> {
        require(composite, "composite")?;
        require(textures, "texture")?;
        let (grid, comp) = read_raster(composite, None)?;
        let (tgrid, tex) = read_raster(textures, None)?;
        if tgrid != grid {
            bail!("{} and {} are on different grids", composite.display(), textures.display());
        }
        let bands = FEATURE_NAMES
            .iter()
            .enumerate()
            .map(|(j, n)| if j < 3 { take_band(&comp, n, composite) } else { take_band(&tex, n, textures) })
            .collect::<Result<Vec<_>>>()?;
        Ok(Features { grid, bands })
    }

    pub fn stack(&self) -> Result<FeatureStack<'_>> {
        let refs: [&RasterBand; N_FEATURES] = std::array::from_fn(|j| &self.bands[j]);
        Ok(FeatureStack::new(refs)?)
    }
}

fn cell_seed(seed: u64, cell_id: u32) -> u64 {
    seed ^ (cell_id as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Serialize)]
struct SummaryRow {
    cell_id: u32,
    cluster_id: u32,
    n_samples: usize,
    vv_mean: f64,
    vh_mean: f64,
    vhvv_diff: f64,
    savg_vv: f64,
    savg_vh: f64,
    savg_diff: f64,
}

#[derive(Serialize)]
struct SampleRow {
    cell_id: u32,
    row: usize,
    col: usize,
    cluster_id: u32,
}

pub struct FitOutput {
    pub models: PathBuf,
    /// `labels.csv` when labels were derived from a reference raster,
    /// otherwise the template to fill in.
    pub labels: PathBuf,
}

/// Samples and clusters every cell. Cells that cannot be fitted are listed
/// in `models.json` under `skipped`.
pub fn run_fit(
    features: &Features,
    block: &ClassifyBlock,
    seed: u64,
    manifest: Option<&SceneManifest>,
    inputs: &[&Path],
    out: &Path,
    ex: &Exec,
) -> Result<FitOutput> {
    block.kmeans.validate()?;
    if block.samples_per_cell < block.kmeans.k_max {
        bail!("samples_per_cell {} is below k_max {}", block.samples_per_cell, block.kmeans.k_max);
    }
    let grid = features.grid;
    let stack = features.stack()?;
    let bbox = block.aoi.unwrap_or_else(|| grid.bbox());
    let cells = partition_grids(&bbox, block.cell_side)?;
    let fitted = ex.map(&cells, |cell| -> Result<(ClusterModel, Vec<KScore>, Vec<Sample>)> {
        let s = sample_features(cell, &stack, &grid, block.samples_per_cell, seed)?;
        let pts: Vec<_> = s.iter().map(|x| x.features).collect();
        let (m, scores) = fit_kmeans_auto(&pts, &block.kmeans, cell_seed(seed, cell.cell_id), cell.cell_id)?;
        Ok((m, scores, s))
    });

    let mut models = Vec::new();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let mut samples = Vec::new();
    for (cell, r) in cells.iter().zip(fitted) {
        match r {
            Ok((m, sc, s)) => {
                scores.push(CellScores { cell_id: cell.cell_id, n_samples: s.len(), scores: sc });
                models.push(m);
                samples.push(s);
            }
            Err(e) => skipped.push(SkippedCell { cell_id: cell.cell_id, reason: e.to_string() }),
        }
    }
    if models.is_empty() {
        bail!("no cell could be clustered ({} cells, all skipped)", cells.len());
    }

    let mut st = Staging::new(out, "classify-fit")?;
    let mut summary = Vec::new();
    let mut sample_rows = Vec::new();
    for (m, s) in models.iter().zip(&samples) {
        for c in summarize_clusters(m, s) {
            let f = c.mean;
            summary.push(SummaryRow {
                cell_id: c.cell_id,
                cluster_id: c.cluster_id,
                n_samples: c.n_samples,
                vv_mean: f[0],
                vh_mean: f[1],
                vhvv_diff: f[2],
                savg_vv: f[3],
                savg_vh: f[4],
                savg_diff: f[5],
            });
        }
        sample_rows.extend(s.iter().map(|x| SampleRow {
            cell_id: m.cell_id,
            row: x.pixel / grid.width,
            col: x.pixel % grid.width,
            cluster_id: m.predict(&x.features),
        }));
    }
    write_csv(&st.output("cluster_summary.csv"), &summary)?;
    write_csv(&st.output("samples.csv"), &sample_rows)?;

    let mut prov_inputs: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
    let labels = match &block.auto_label_from {
        Some(r) => {
            let (path, reference) = read_layer(r, manifest, &grid)?;
            prov_inputs.push(path);
            let mut t = LabelTable::new();
            for (m, s) in models.iter().zip(&samples) {
                for (k, class) in label_by_reference(m, s, |p| reference.value(p).map(|v| v == 1.0)) {
                    t.insert(m.cell_id, k, class)?;
                }
            }
            write_csv(&st.output(LABELS_FILE), &label_rows(&t))?;
            out.join(LABELS_FILE)
        }
        None => {
            let rows: Vec<LabelRow> = models
                .iter()
                .flat_map(|m| (0..m.k as u32).map(move |k| LabelRow { cell_id: m.cell_id, cluster_id: k, class: String::new() }))
                .collect();
            write_csv(&st.output(LABELS_TEMPLATE), &rows)?;
            out.join(LABELS_TEMPLATE)
        }
    };

    let file = ModelsFile {
        grid,
        seed,
        cell_side: block.cell_side,
        kmeans: block.kmeans,
        features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        cells,
        models,
        scores,
        skipped,
    };
    write_json(&st.output(MODELS_FILE), &file)?;
    let mut prov = Provenance::new("classify-fit", block, Some(seed))?;
    prov.inputs(prov_inputs.iter().map(|p| p.as_path()))?;
    st.commit(prov)?;
    Ok(FitOutput { models: out.join(MODELS_FILE), labels })
}

/// Writes one cluster map and one labelled oil-palm map per fitted cell.
pub fn run_predict(
    features: &Features,
    models_path: &Path,
    labels_path: &Path,
    inputs: &[&Path],
    out: &Path,
    opts: &WriteOptions,
    ex: &Exec,
) -> Result<PathBuf> {
    let models = ModelsFile::load(models_path)?;
    if models.grid != features.grid {
        bail!("{} was fitted on a different grid", models_path.display());
    }
    require(labels_path, "classify fit")?;
    let labels = load_labels(labels_path)?;
    labels.check_complete(&models.models)?;
    let grid = features.grid;
    let stack = features.stack()?;
    let (w, h) = (grid.width, grid.height);
    let mut class_maps = Vec::new();
    let mut palm_maps = Vec::new();
    for m in &models.models {
        let values = ex.tiled(w, h, 0, |win| predict_window(m, &stack, win))?;
        let cm = RasterBand::new(format!("clusters_cell{}", m.cell_id), Unit::ClassId, Some(NODATA_U16), w, h, values)?;
        palm_maps.push(apply_labels(&cm, &labels, m.cell_id)?);
        class_maps.push(cm);
    }
    let mut st = Staging::new(out, "classify-predict")?;
    write_raster(&st.output(CLASS_MAPS_FILE), &grid, &class_maps.iter().collect::<Vec<_>>(), opts)?;
    write_raster(&st.output(PALM_MAPS_FILE), &grid, &palm_maps.iter().collect::<Vec<_>>(), opts)?;
    let mut prov = Provenance::new("classify-predict", &models.kmeans, Some(models.seed))?;
    prov.inputs(inputs.iter().copied())?;
    prov.input(models_path)?;
    prov.input(labels_path)?;
    st.commit(prov)?;
    Ok(out.join(PALM_MAPS_FILE))
}

/// Per-pixel vote over the per-cell oil-palm maps.
pub fn run_vote(palm_maps: &Path, threshold: usize, out: &Path, opts: &WriteOptions) -> Result<PathBuf> {
    require(palm_maps, "classify predict")?;
    let (grid, maps) = read_raster(palm_maps, Some(Unit::Flag))?;
    let refs: Vec<&RasterBand> = maps.iter().collect();
    let voted = majority_vote(&refs, threshold)?;
    let mut st = Staging::new(out, "classify-vote")?;
    write_raster(&st.output(VOTED_FILE), &grid, &[&voted], opts)?;
    let mut prov = Provenance::new("classify-vote", &serde_json::json!({ "vote_threshold": threshold }), None)?;
    prov.input(palm_maps)?;
    st.commit(prov)?;
    Ok(out.join(VOTED_FILE))
}
