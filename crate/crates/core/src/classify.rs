//! Stratified unsupervised detection: square grid cells, per-cell sampling,
//! k-means with automatic `k`, cluster labelling and majority voting.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raster::{check_same_shape, BBox, GridGeometry, RasterBand, TileWindow, Unit, NODATA_U16};
use crate::{Error, Result};

pub const N_FEATURES: usize = 6;

/// `[vv_mean, vh_mean, vhvv_diff, savg_vv, savg_vh, savg_diff]`.
pub type FeatureVector = [f64; N_FEATURES];

pub const FEATURE_NAMES: [&str; N_FEATURES] = ["vv_mean", "vh_mean", "vhvv_diff", "savg_vv", "savg_vh", "savg_diff"];

/// Square stratification cell in CRS units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: u32,
    pub min_x: f64,
    pub min_y: f64,
    pub side: f64,
}

impl GridCell {
    /// Half-open containment `[min, min + side)` on both axes.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x < self.min_x + self.side && y >= self.min_y && y < self.min_y + self.side
    }
}

/// Covers `bbox` (edges snapped outward to multiples of `side`) with square
/// cells, ordered row-major from the northern row, west to east.
pub fn partition_grids(bbox: &BBox, side: f64) -> Result<Vec<GridCell>> {
    if !(side > 0.0) || !side.is_finite() {
        return Err(Error::InvalidParameter(format!("cell side {side} must be positive")));
    }
    if !(bbox.max_x > bbox.min_x && bbox.max_y > bbox.min_y) {
        return Err(Error::InvalidParameter("empty bounding box".into()));
    }
    let x0 = libm::floor(bbox.min_x / side);
    let x1 = libm::ceil(bbox.max_x / side);
    let y0 = libm::floor(bbox.min_y / side);
    let y1 = libm::ceil(bbox.max_y / side);
    let (nx, ny) = ((x1 - x0) as i64, (y1 - y0) as i64);
    let mut cells = Vec::with_capacity((nx * ny) as usize);
    for row in 0..ny {
        for col in 0..nx {
            cells.push(GridCell {
                cell_id: cells.len() as u32,
                min_x: (x0 + col as f64) * side,
                min_y: (y1 - 1.0 - row as f64) * side,
                side,
            });
        }
    }
    Ok(cells)
}

/// The six co-registered feature bands.
#[derive(Debug, Clone, Copy)]
pub struct FeatureStack<'a> {
    pub bands: [&'a RasterBand; N_FEATURES],
}

impl<'a> FeatureStack<'a> {
    pub fn new(bands: [&'a RasterBand; N_FEATURES]) -> Result<Self> {
        check_same_shape(&bands)?;
        Ok(FeatureStack { bands })
    }

    pub fn width(&self) -> usize {
        self.bands[0].width()
    }

    pub fn height(&self) -> usize {
        self.bands[0].height()
    }

    /// Feature vector at flat index `i` if every band is valid there.
    pub fn feature(&self, i: usize) -> Option<FeatureVector> {
        let mut f = [0.0; N_FEATURES];
        for (slot, b) in f.iter_mut().zip(self.bands.iter()) {
            let v = b.value(i)? as f64;
            if !v.is_finite() {
                return None;
            }
            *slot = v;
        }
        Some(f)
    }
}

/// Pixel indices whose centre falls in `cell`, ascending.
pub fn cell_pixels(cell: &GridCell, grid: &GridGeometry) -> Vec<usize> {
    let mut out = Vec::new();
    for r in 0..grid.height {
        for c in 0..grid.width {
            let (x, y) = grid.pixel_center(r, c);
            if cell.contains(x, y) {
                out.push(r * grid.width + c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub pixel: usize,
    pub features: FeatureVector,
}

/// Uniform sample without replacement of `n` valid pixels in `cell`
/// (all of them when fewer are valid). Deterministic for a seed.
pub fn sample_features(
    cell: &GridCell,
    stack: &FeatureStack<'_>,
    grid: &GridGeometry,
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    let frame: Vec<Sample> = cell_pixels(cell, grid)
        .into_iter()
        .filter_map(|p| stack.feature(p).map(|features| Sample { pixel: p, features }))
        .collect();
    if frame.is_empty() {
        return Err(Error::InsufficientData(format!("cell {} has no valid pixels", cell.cell_id)));
    }
    if frame.len() <= n {
        return Ok(frame);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((cell.cell_id as u64) << 32));
    let picks = rand::seq::index::sample(&mut rng, frame.len(), n);
    Ok(picks.into_iter().map(|i| frame[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansParams {
    pub k_min: usize,
    pub k_max: usize,
    pub max_iter: usize,
    /// Stop when the relative inertia decrease falls below this.
    pub tol: f64,
    /// Independent k-means++ starts per `k`; the lowest inertia is kept.
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { k_min: 10, k_max: 16, max_iter: 100, tol: 1e-4, restarts: 3 }
    }
}

impl KMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::InvalidParameter(format!("invalid k range [{}, {}]", self.k_min, self.k_max)));
        }
        if self.max_iter == 0 || self.restarts == 0 || !(self.tol >= 0.0) {
            return Err(Error::InvalidParameter("max_iter and restarts must be >= 1, tol >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub cell_id: u32,
    pub k: usize,
    /// Centroids in standardized feature space.
    pub centroids: Vec<FeatureVector>,
    pub feature_means: FeatureVector,
    pub feature_sds: FeatureVector,
    pub seed: u64,
}

impl ClusterModel {
    pub fn standardize(&self, x: &FeatureVector) -> FeatureVector {
        standardize_with(x, &self.feature_means, &self.feature_sds)
    }

    /// Nearest centroid in standardized space; ties go to the lowest id.
    pub fn predict(&self, x: &FeatureVector) -> u32 {
        nearest(&self.centroids, &self.standardize(x)).0 as u32
    }
}

fn standardize_with(x: &FeatureVector, means: &FeatureVector, sds: &FeatureVector) -> FeatureVector {
    let mut z = [0.0; N_FEATURES];
    for j in 0..N_FEATURES {
        z[j] = (x[j] - means[j]) / sds[j];
    }
    z
}

fn dist2(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let mut s = 0.0;
    for j in 0..N_FEATURES {
        let d = a[j] - b[j];
        s += d * d;
    }
    s
}

fn nearest(centroids: &[FeatureVector], x: &FeatureVector) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Column means and population standard deviations; a zero deviation is
/// replaced by 1 so constant features pass through centred.
pub fn feature_moments(points: &[FeatureVector]) -> (FeatureVector, FeatureVector) {
    let n = points.len().max(1) as f64;
    let mut mean = [0.0; N_FEATURES];
    for p in points {
        for j in 0..N_FEATURES {
            mean[j] += p[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = [0.0; N_FEATURES];
    for p in points {
        for j in 0..N_FEATURES {
            sd[j] += (p[j] - mean[j]) * (p[j] - mean[j]);
        }
    }
    for s in sd.iter_mut() {
        *s = libm::sqrt(*s / n);
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    (mean, sd)
}

/// Result of one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<FeatureVector>,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

fn kmeans_pp_init(points: &[FeatureVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start.
pub fn kmeans(points: &[FeatureVector], k: usize, max_iter: usize, tol: f64, rng: &mut ChaCha8Rng) -> KMeansRun {
    let mut centroids = kmeans_pp_init(points, k, rng);
    let mut assignments = vec![0u32; points.len()];
    let mut trace = Vec::new();
    let mut dists = vec![0.0; points.len()];
    for _ in 0..max_iter {
        let mut inertia = 0.0;
        for ((a, d), p) in assignments.iter_mut().zip(dists.iter_mut()).zip(points) {
            let (c, dd) = nearest(&centroids, p);
            *a = c as u32;
            *d = dd;
            inertia += dd;
        }
        let prev = trace.last().copied();
        trace.push(inertia);
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - inertia) / prev < tol {
                break;
            }
        }
        let mut sums = vec![[0.0; N_FEATURES]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a as usize] += 1;
            for j in 0..N_FEATURES {
                sums[a as usize][j] += p[j];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-fitted point
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
                centroids[c] = points[far];
                dists[far] = 0.0;
            } else {
                for j in 0..N_FEATURES {
                    centroids[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    KMeansRun { centroids, assignments, inertia, inertia_trace: trace }
}

/// Calinski–Harabasz index `[B/(k-1)] / [W/(n-k)]`.
pub fn calinski_harabasz(points: &[FeatureVector], run: &KMeansRun) -> f64 {
    let n = points.len();
    let k = run.centroids.len();
    if k < 2 || n <= k {
        return 0.0;
    }
    let (mean, _) = feature_moments(points);
    let mut counts = vec![0usize; k];
    for &a in &run.assignments {
        counts[a as usize] += 1;
    }
    let between: f64 = run
        .centroids
        .iter()
        .zip(&counts)
        .map(|(c, &m)| m as f64 * dist2(c, &mean))
        .sum();
    let within: f64 = points
        .iter()
        .zip(&run.assignments)
        .map(|(p, &a)| dist2(p, &run.centroids[a as usize]))
        .sum();
    if within <= 0.0 {
        return f64::INFINITY;
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

fn count_distinct(points: &[FeatureVector]) -> usize {
    let mut sorted: Vec<&FeatureVector> = points.iter().collect();
    let cmp = |a: &&FeatureVector, b: &&FeatureVector| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    };
    sorted.sort_by(cmp);
    sorted.dedup_by(|a, b| cmp(&&**a, &&**b).is_eq());
    sorted.len()
}

/// Per-`k` diagnostics from [`fit_kmeans_auto`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub inertia: f64,
    pub calinski_harabasz: f64,
}

/// Standardizes the samples, runs seeded k-means++ for every `k` in the
/// range and keeps the `k` with the highest Calinski–Harabasz index (ties
/// resolved to the smaller `k`).
pub fn fit_kmeans_auto(
    samples: &[FeatureVector],
    params: &KMeansParams,
    seed: u64,
    cell_id: u32,
) -> Result<(ClusterModel, Vec<KScore>)> {
    params.validate()?;
    let distinct = count_distinct(samples);
    if distinct < params.k_min {
        return Err(Error::InsufficientData(format!(
            "{distinct} distinct feature vectors, need at least {}",
            params.k_min
        )));
    }
    let k_max = params.k_max.min(distinct);
    let (means, sds) = feature_moments(samples);
    let z: Vec<FeatureVector> = samples.iter().map(|x| standardize_with(x, &means, &sds)).collect();

    let mut scores = Vec::new();
    let mut best: Option<(f64, KMeansRun)> = None;
    for k in params.k_min..=k_max {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
        let mut run = kmeans(&z, k, params.max_iter, params.tol, &mut rng);
        for _ in 1..params.restarts {
            let other = kmeans(&z, k, params.max_iter, params.tol, &mut rng);
            if other.inertia < run.inertia {
                run = other;
            }
        }
        let ch = calinski_harabasz(&z, &run);
        scores.push(KScore { k, inertia: run.inertia, calinski_harabasz: ch });
        if best.as_ref().is_none_or(|(b, _)| ch > *b) {
            best = Some((ch, run));
        }
    }
    let (_, run) = best.ok_or_else(|| Error::InsufficientData("no k could be fitted".into()))?;
    let model = ClusterModel {
        cell_id,
        k: run.centroids.len(),
        centroids: run.centroids,
        feature_means: means,
        feature_sds: sds,
        seed,
    };
    Ok((model, scores))
}

/// Cluster ids for the core region of `win` (`NODATA_U16` where any feature
/// is missing).
pub fn predict_window(model: &ClusterModel, stack: &FeatureStack<'_>, win: &TileWindow) -> Vec<f32> {
    let width = stack.width();
    win.pixels()
        .map(|(r, c)| match stack.feature(r * width + c) {
            Some(f) => model.predict(&f) as f32,
            None => NODATA_U16,
        })
        .collect()
}

pub fn predict_map(model: &ClusterModel, stack: &FeatureStack<'_>) -> Result<RasterBand> {
    let (w, h) = (stack.width(), stack.height());
    let values = predict_window(model, stack, &TileWindow::full(w, h));
    RasterBand::new(format!("clusters_cell{}", model.cell_id), Unit::ClassId, Some(NODATA_U16), w, h, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandClass {
    #[serde(rename = "oilpalm")]
    OilPalm,
    Other,
}

impl LandClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "oilpalm" | "oil_palm" | "palm" => Some(LandClass::OilPalm),
            "other" => Some(LandClass::Other),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LandClass::OilPalm => "oilpalm",
            LandClass::Other => "other",
        }
    }
}

/// Human-supplied mapping `(cell_id, cluster_id) -> class`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    rows: BTreeMap<(u32, u32), LandClass>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a row; a duplicate key is an error.
    pub fn insert(&mut self, cell_id: u32, cluster_id: u32, class: LandClass) -> Result<()> {
        if self.rows.insert((cell_id, cluster_id), class).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate label for cell {cell_id} cluster {cluster_id}"
            )));
        }
        Ok(())
    }

    pub fn get(&self, cell_id: u32, cluster_id: u32) -> Option<LandClass> {
        self.rows.get(&(cell_id, cluster_id)).copied()
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, u32, LandClass)> + '_ {
        self.rows.iter().map(|(&(c, k), &v)| (c, k, v))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every cluster of every model has exactly one row and no row refers to
    /// an unknown cluster.
    pub fn check_complete(&self, models: &[ClusterModel]) -> Result<()> {
        for m in models {
            for k in 0..m.k as u32 {
                if self.get(m.cell_id, k).is_none() {
                    return Err(Error::MissingLabel { cell_id: m.cell_id, cluster_id: k });
                }
            }
        }
        for &(cell, k) in self.rows.keys() {
            if !models.iter().any(|m| m.cell_id == cell && (k as usize) < m.k) {
                return Err(Error::InvalidParameter(format!("label row for unknown cell {cell} cluster {k}")));
            }
        }
        Ok(())
    }
}

/// Binary oil-palm map from a cluster map: 1 where the cluster is labelled
/// oil palm, 0 otherwise, nodata where the cluster map is nodata.
pub fn apply_labels(class_map: &RasterBand, labels: &LabelTable, cell_id: u32) -> Result<RasterBand> {
    let mut out = Vec::with_capacity(class_map.len());
    for i in 0..class_map.len() {
        out.push(match class_map.value(i) {
            None => NODATA_U16,
            Some(c) => match labels.get(cell_id, c as u32) {
                Some(LandClass::OilPalm) => 1.0,
                Some(LandClass::Other) => 0.0,
                None => return Err(Error::MissingLabel { cell_id, cluster_id: c as u32 }),
            },
        });
    }
    RasterBand::new(format!("oilpalm_cell{cell_id}"), Unit::Flag, Some(NODATA_U16), class_map.width(), class_map.height(), out)
}

/// Per-pixel vote: 1 when at least `threshold` maps say oil palm, 0 when
/// enough maps are valid but too few agree, nodata when fewer than
/// `threshold` maps are valid.
pub fn majority_vote(maps: &[&RasterBand], threshold: usize) -> Result<RasterBand> {
    let first = maps.first().ok_or_else(|| Error::InvalidParameter("no maps to vote".into()))?;
    if threshold == 0 || threshold > maps.len() {
        return Err(Error::InvalidParameter(format!(
            "vote threshold {threshold} outside [1, {}]",
            maps.len()
        )));
    }
    check_same_shape(maps)?;
    let values = (0..first.len())
        .map(|i| {
            let (mut valid, mut yes) = (0usize, 0usize);
            for m in maps {
                if let Some(v) = m.value(i) {
                    valid += 1;
                    if v == 1.0 {
                        yes += 1;
                    }
                }
            }
            if valid < threshold {
                NODATA_U16
            } else if yes >= threshold {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    RasterBand::new("oilpalm_voted", Unit::Flag, Some(NODATA_U16), first.width(), first.height(), values)
}

/// Labels each cluster by the majority reference class of its sample points,
/// standing in for the visual interpretation step when a reference raster
/// exists. Clusters without reference points are labelled `Other`.
pub fn label_by_reference(
    model: &ClusterModel,
    samples: &[Sample],
    mut reference: impl FnMut(usize) -> Option<bool>,
) -> Vec<(u32, LandClass)> {
    let mut votes = vec![(0usize, 0usize); model.k];
    for s in samples {
        if let Some(is_palm) = reference(s.pixel) {
            let c = model.predict(&s.features) as usize;
            if is_palm {
                votes[c].0 += 1;
            } else {
                votes[c].1 += 1;
            }
        }
    }
    votes
        .iter()
        .enumerate()
        .map(|(c, &(p, o))| (c as u32, if p > o { LandClass::OilPalm } else { LandClass::Other }))
        .collect()
}

/// Per-cluster preview statistics (original feature units) to support the
/// manual labelling step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cell_id: u32,
    pub cluster_id: u32,
    pub n_samples: usize,
    pub mean: FeatureVector,
}

pub fn summarize_clusters(model: &ClusterModel, samples: &[Sample]) -> Vec<ClusterSummary> {
    let mut acc = vec![(0usize, [0.0; N_FEATURES]); model.k];
    for s in samples {
        let c = model.predict(&s.features) as usize;
        acc[c].0 += 1;
        for j in 0..N_FEATURES {
            acc[c].1[j] += s.features[j];
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(c, (n, mut sum))| {
            if n > 0 {
                sum.iter_mut().for_each(|v| *v /= n as f64);
            }
            ClusterSummary { cell_id: model.cell_id, cluster_id: c as u32, n_samples: n, mean: sum }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn bbox(w: f64, h: f64) -> BBox {
        BBox { min_x: 0.0, min_y: 0.0, max_x: w, max_y: h }
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_grids(&bbox(15.0, 10.0), 5.0).unwrap().len(), 6);
        assert_eq!(partition_grids(&bbox(5.0, 5.0), 5.0).unwrap().len(), 1);
        assert_eq!(partition_grids(&bbox(30.0, 10.0), 5.0).unwrap().len(), 12);
        assert!(partition_grids(&bbox(0.0, 10.0), 5.0).is_err());
        let snapped = partition_grids(&BBox { min_x: 91.3, min_y: -7.2, max_x: 102.0, max_y: 4.9 }, 5.0).unwrap();
        assert_eq!(snapped.len(), 3 * 3);
        assert_eq!((snapped[0].min_x, snapped[0].min_y), (90.0, 0.0));
    }

    fn blobs(k: usize, per: usize, sigma: f64, seed: u64) -> (Vec<FeatureVector>, Vec<FeatureVector>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let centers: Vec<FeatureVector> = (0..k)
            .map(|i| {
                let mut c = [0.0; N_FEATURES];
                for (j, v) in c.iter_mut().enumerate() {
                    *v = 10.0 * (((i * 7 + j * 3) % 11) as f64) + if j == i % N_FEATURES { 25.0 } else { 0.0 };
                }
                c[i % N_FEATURES] += 15.0 * (i / N_FEATURES) as f64;
                c
            })
            .collect();
        let mut pts = Vec::new();
        for c in &centers {
            for _ in 0..per {
                let mut p = *c;
                p.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                pts.push(p);
            }
        }
        (centers, pts)
    }

    #[test]
    fn recovers_twelve_blobs() {
        let (centers, pts) = blobs(12, 80, 0.3, 11);
        let (model, _) = fit_kmeans_auto(&pts, &KMeansParams::default(), 5, 0).unwrap();
        assert_eq!(model.k, 12);
        let bound = 3.0 * 0.3 / libm::sqrt(80.0) * 3.0;
        for c in &centers {
            let z = model.standardize(c);
            let (i, _) = nearest(&model.centroids, &z);
            for j in 0..N_FEATURES {
                let back = model.centroids[i][j] * model.feature_sds[j] + model.feature_means[j];
                assert!((back - c[j]).abs() < bound, "feature {j}: {back} vs {}", c[j]);
            }
        }
    }

    #[test]
    fn identical_points_rejected() {
        let pts = vec![[1.0; N_FEATURES]; 100];
        assert!(fit_kmeans_auto(&pts, &KMeansParams::default(), 1, 0).is_err());
    }

    #[test]
    fn predict_ties_go_low() {
        let model = ClusterModel {
            cell_id: 0,
            k: 2,
            centroids: vec![[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
            feature_means: [0.0; N_FEATURES],
            feature_sds: [1.0; N_FEATURES],
            seed: 0,
        };
        assert_eq!(model.predict(&[0.0; N_FEATURES]), 0);
        assert_eq!(model.predict(&[-1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1);
    }

    fn flag(vals: &[f32]) -> RasterBand {
        RasterBand::new("m", Unit::Flag, Some(NODATA_U16), vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn vote_thresholds() {
        let mut maps = Vec::new();
        for i in 0..12 {
            maps.push(flag(&[1.0, if i < 7 { 1.0 } else { 0.0 }, if i < 6 { 1.0 } else { 0.0 }, if i < 5 { 1.0 } else { NODATA_U16 }]));
        }
        let refs: Vec<&RasterBand> = maps.iter().collect();
        let v = majority_vote(&refs, 7).unwrap();
        assert_eq!(v.values(), &[1.0, 1.0, 0.0, NODATA_U16]);
        assert!(majority_vote(&refs, 13).is_err());
        assert!(majority_vote(&[], 1).is_err());
    }

    #[test]
    fn labels_applied() {
        let cm = RasterBand::new("c", Unit::ClassId, Some(NODATA_U16), 4, 1, vec![0.0, 1.0, 2.0, NODATA_U16]).unwrap();
        let mut lt = LabelTable::new();
        for k in 0..3 {
            lt.insert(4, k, if k == 1 { LandClass::OilPalm } else { LandClass::Other }).unwrap();
        }
        let m = apply_labels(&cm, &lt, 4).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0, 0.0, NODATA_U16]);
        let mut partial = LabelTable::new();
        partial.insert(4, 0, LandClass::Other).unwrap();
        assert_eq!(apply_labels(&cm, &partial, 4), Err(Error::MissingLabel { cell_id: 4, cluster_id: 1 }));
        assert!(lt.insert(4, 0, LandClass::Other).is_err());
    }
}
