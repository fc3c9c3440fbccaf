//! `validate`: stratified sample of the final extent, interpretation votes
//! and accuracy / area estimates per region.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use palmscan_core::synth::simulate_interpretations;
use palmscan_core::validate::{
    adjusted_area_ci, aggregate_votes, balanced_accuracy_ci, stratified_sample, ConfusionMatrix, Decision,
    StratumCounts, StratumSample, Stratum, Vote, AREA_METHOD, BALANCED_ACCURACY_METHOD,
};
use palmscan_core::Unit;

use crate::config::ValidateBlock;
use crate::geotiff::read_single;
use crate::manifest::SceneManifest;
use crate::provenance::{Provenance, Staging};
use crate::stages::{read_layer, region_list, require, write_csv};

pub const ACCURACY_FILE: &str = "accuracy.csv";
pub const AREA_FILE: &str = "area.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub location_id: u64,
    pub region_id: u32,
    pub stratum: Stratum,
    pub row: usize,
    pub col: usize,
    pub weight: f64,
    pub stratum_size: usize,
}

/// One interpretation vote; a location may have several rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRow {
    pub location_id: u64,
    pub row: usize,
    pub col: usize,
    pub stratum: String,
    pub vote: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub region_id: u32,
    pub n_samples: u64,
    pub undecided: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub balanced_accuracy: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub level: f64,
    pub method: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaRow {
    pub region_id: u32,
    pub region_ha: f64,
    pub mapped_ha: f64,
    pub proportion: Option<f64>,
    pub se: Option<f64>,
    pub adjusted_ha: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub level: f64,
    pub method: String,
    pub note: String,
}

pub fn load_votes(path: &Path) -> Result<BTreeMap<u64, Vec<Vote>>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<u64, Vec<Vote>> = BTreeMap::new();
    for (i, row) in rd.deserialize::<VoteRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let v = Vote::parse(&row.vote)
            .with_context(|| format!("{} row {}: unknown vote `{}`", path.display(), i + 1, row.vote))?;
        out.entry(row.location_id).or_default().push(v);
    }
    Ok(out)
}

fn vote_name(v: Vote) -> &'static str {
    match v {
        Vote::Palm => "palm",
        Vote::NotPalm => "not_palm",
        Vote::Unsure => "unsure",
    }
}

fn location_id(region_id: u32, k: usize) -> u64 {
    (region_id as u64) * 1_000_000 + k as u64
}

pub fn run_validate(
    extent_path: &Path,
    block: &ValidateBlock,
    seed: u64,
    manifest: Option<&SceneManifest>,
    out: &Path,
) -> Result<PathBuf> {
    require(extent_path, "postproc")?;
    if block.n_total < 4 {
        bail!("n_total must be >= 4");
    }
    let (grid, extent) = read_single(extent_path, Some(Unit::Flag))?;
    let (w, h) = (grid.width, grid.height);
    let ha = grid.pixel_area_m2() / 10_000.0;
    let mut inputs = vec![extent_path.to_path_buf()];
    let regions = match &block.regions {
        Some(r) => {
            let (p, b) = read_layer(r, manifest, &grid)?;
            inputs.push(p);
            Some(b)
        }
        None => None,
    };
    let reference = match (&block.interpretations, &block.simulate) {
        (Some(_), _) => None,
        (None, Some(sim)) => {
            let (p, b) = read_layer(&sim.reference, manifest, &grid)?;
            inputs.push(p);
            Some((sim, b))
        }
        (None, None) => bail!("validate needs `interpretations` or `simulate`"),
    };
    let supplied = match &block.interpretations {
        Some(p) => {
            inputs.push(p.clone());
            Some(load_votes(p)?)
        }
        None => None,
    };

    let mut samples = Vec::new();
    let mut vote_rows = Vec::new();
    let mut accuracy = Vec::new();
    let mut area = Vec::new();
    for (region_id, mask) in region_list(regions.as_ref(), w, h) {
        let region = if region_id == 0 { None } else { Some(&mask) };
        let in_region = |i: usize| region.is_none_or(|r| r.value(i).is_some_and(|v| v > 0.0));
        let valid = (0..extent.len()).filter(|&i| in_region(i) && extent.is_valid(i)).count();
        let mapped = (0..extent.len()).filter(|&i| in_region(i) && extent.value(i).is_some_and(|v| v > 0.0)).count();
        let mut acc = AccuracyRow {
            region_id,
            n_samples: 0,
            undecided: 0,
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            balanced_accuracy: None,
            lo: None,
            hi: None,
            level: block.level,
            method: BALANCED_ACCURACY_METHOD.into(),
            note: String::new(),
        };
        let mut ar = AreaRow {
            region_id,
            region_ha: valid as f64 * ha,
            mapped_ha: mapped as f64 * ha,
            proportion: None,
            se: None,
            adjusted_ha: None,
            lo: None,
            hi: None,
            level: block.level,
            method: AREA_METHOD.into(),
            note: String::new(),
        };
        let strata: Vec<StratumSample> =
            match stratified_sample(&extent, region, region_id, block.n_total, block.allocation, seed) {
                Ok(s) => s,
                Err(e) => {
                    acc.note = e.to_string();
                    ar.note = e.to_string();
                    accuracy.push(acc);
                    area.push(ar);
                    continue;
                }
            };

        let mut cm = ConfusionMatrix::default();
        let mut counts = Vec::new();
        let mut k = 0usize;
        for s in &strata {
            let votes: Vec<Vec<Vote>> = match &reference {
                Some((sim, refb)) => simulate_interpretations(
                    &s.locations,
                    |r, c| refb.value(r * w + c).is_some_and(|v| v > 0.0),
                    sim.votes,
                    sim.error_rate,
                    seed ^ ((region_id as u64) << 40) ^ ((s.stratum as u64) << 56),
                ),
                None => (0..s.locations.len())
                    .map(|j| {
                        let id = location_id(region_id, k + j);
                        supplied.as_ref().and_then(|m| m.get(&id)).cloned().unwrap_or_default()
                    })
                    .collect(),
            };
            let mapped_palm = s.stratum == Stratum::MappedPalm;
            let (mut n, mut palm) = (0u64, 0u64);
            for (&(r, c), v) in s.locations.iter().zip(&votes) {
                let id = location_id(region_id, k);
                k += 1;
                samples.push(SampleRow {
                    location_id: id,
                    region_id,
                    stratum: s.stratum,
                    row: r,
                    col: c,
                    weight: s.weight,
                    stratum_size: s.size,
                });
                if reference.is_some() {
                    vote_rows.extend(v.iter().map(|&x| VoteRow {
                        location_id: id,
                        row: r,
                        col: c,
                        stratum: s.stratum.name().into(),
                        vote: vote_name(x).into(),
                    }));
                }
                acc.n_samples += 1;
                match aggregate_votes(v) {
                    Decision::Undecided => acc.undecided += 1,
                    d => {
                        let is_palm = d == Decision::Palm;
                        cm.add(is_palm, mapped_palm);
                        n += 1;
                        palm += is_palm as u64;
                    }
                }
            }
            counts.push(StratumCounts { weight: s.weight, n, palm });
        }
        (acc.tp, acc.fp, acc.fn_, acc.tn) = (cm.tp, cm.fp, cm.fn_, cm.tn);
        match balanced_accuracy_ci(&cm, block.level) {
            Ok(i) => (acc.balanced_accuracy, acc.lo, acc.hi) = (Some(i.estimate), Some(i.lo), Some(i.hi)),
            Err(e) => acc.note = e.to_string(),
        }
        match adjusted_area_ci(&counts, ar.region_ha, block.level) {
            Ok(a) => {
                (ar.proportion, ar.se) = (Some(a.proportion), Some(a.se));
                (ar.adjusted_ha, ar.lo, ar.hi) = (Some(a.area.estimate), Some(a.area.lo), Some(a.area.hi));
            }
            Err(e) => ar.note = e.to_string(),
        }
        accuracy.push(acc);
        area.push(ar);
    }

    let mut st = Staging::new(out, "validate")?;
    write_csv(&st.output("samples.csv"), &samples)?;
    if reference.is_some() {
        write_csv(&st.output("interpretations.csv"), &vote_rows)?;
    }
    write_csv(&st.output(ACCURACY_FILE), &accuracy)?;
    write_csv(&st.output(AREA_FILE), &area)?;
    let mut prov = Provenance::new("validate", block, Some(seed))?;
    prov.inputs(inputs.iter().map(|p| p.as_path()))?;
    st.commit(prov)?;
    Ok(out.join(ACCURACY_FILE))
}
