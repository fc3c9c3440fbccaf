//! Scene manifest: one JSON file listing every input raster.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use palmscan_core::composite::Orbit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sensor {
    S1,
    S2,
    L5,
    L7,
    #[serde(rename = "DEM")]
    Dem,
    #[serde(rename = "MASK")]
    Mask,
    #[serde(rename = "LOSSYEAR")]
    LossYear,
}

impl Sensor {
    pub fn is_optical(self) -> bool {
        matches!(self, Sensor::S2 | Sensor::L5 | Sensor::L7)
    }

    /// Static layers whose date is informational only.
    pub fn is_auxiliary(self) -> bool {
        matches!(self, Sensor::Dem | Sensor::Mask | Sensor::LossYear)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub sensor: Sensor,
    pub date: NaiveDate,
    pub orbit: Orbit,
    pub bands: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_band: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence_band: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawManifest {
    entries: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    path: PathBuf,
    sensor: Sensor,
    date: String,
    #[serde(default)]
    orbit: Option<Orbit>,
    #[serde(default)]
    bands: Vec<String>,
    #[serde(default)]
    qa_band: Option<String>,
    #[serde(default)]
    incidence_band: Option<String>,
}

fn parse_entry(i: usize, v: serde_json::Value, base: &Path) -> Result<ManifestEntry> {
    let raw: RawEntry = serde_json::from_value(v).map_err(|e| anyhow!("manifest entry {i}: {e}"))?;
    let date = NaiveDate::parse_from_str(&raw.date, "%Y-%m-%d")
        .map_err(|e| anyhow!("manifest entry {i}: date `{}`: {e}", raw.date))?;
    let orbit = raw.orbit.unwrap_or(Orbit::Na);
    if raw.sensor == Sensor::S1 && orbit == Orbit::Na {
        bail!("manifest entry {i}: S1 scene needs orbit ASC or DESC");
    }
    if raw.sensor != Sensor::S1 && raw.incidence_band.is_some() {
        bail!("manifest entry {i}: incidence_band only applies to S1");
    }
    for b in raw.qa_band.iter().chain(&raw.incidence_band) {
        if raw.bands.contains(b) {
            bail!("manifest entry {i}: `{b}` listed both as data and auxiliary band");
        }
    }
    let path = if raw.path.is_absolute() { raw.path } else { base.join(raw.path) };
    if !path.exists() {
        bail!("manifest entry {i}: {} does not exist", path.display());
    }
    Ok(ManifestEntry {
        path,
        sensor: raw.sensor,
        date,
        orbit,
        bands: raw.bands,
        qa_band: raw.qa_band,
        incidence_band: raw.incidence_band,
    })
}

/// Loads and validates a manifest. Relative paths resolve against the
/// manifest's directory; entries are sorted by date, stably.
pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let raw: RawManifest =
        serde_json::from_str(&text).with_context(|| format!("manifest {} schema", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = raw
        .entries
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_entry(i, v, base))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.date);
    Ok(SceneManifest { entries })
}

/// Writes a manifest with paths relative to its own directory where
/// possible.
pub fn save_manifest(path: &Path, manifest: &SceneManifest) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut m = manifest.clone();
    for e in &mut m.entries {
        if let Ok(rel) = e.path.strip_prefix(base) {
            e.path = rel.to_path_buf();
        }
    }
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    crate::fsutil::write_atomic(path, text.as_bytes())
}

impl SceneManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn radar_in_year(&self, year: i32) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.sensor == Sensor::S1 && chrono::Datelike::year(&e.date) == year)
    }

    pub fn optical(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.sensor.is_optical())
    }

    /// The auxiliary entry carrying band `name`.
    pub fn auxiliary(&self, name: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.sensor.is_auxiliary() && e.bands.iter().any(|b| b == name))
            .ok_or_else(|| anyhow!("manifest has no auxiliary layer `{name}`"))
    }

    pub fn first_of(&self, sensor: Sensor) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.sensor == sensor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.json");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn sorted_by_date_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.tif", "b.tif", "c.tif"] {
            fs::write(dir.path().join(n), b"").unwrap();
        }
        let p = write(
            dir.path(),
            r#"{"entries":[
              {"path":"a.tif","sensor":"L5","date":"1990-01-05","bands":["red"]},
              {"path":"b.tif","sensor":"L5","date":"1990-02-10","bands":["red"]},
              {"path":"c.tif","sensor":"L5","date":"1990-01-20","bands":["red"],"qa_band":"qa"}]}"#,
        );
        let m = load_manifest(&p).unwrap();
        let dates: Vec<String> = m.entries.iter().map(|e| e.date.to_string()).collect();
        assert_eq!(dates, ["1990-01-05", "1990-01-20", "1990-02-10"]);
        assert_eq!(m.entries[1].path, dir.path().join("c.tif"));
        assert_eq!(m.entries[0].orbit, Orbit::Na);

        let out = dir.path().join("copy.json");
        save_manifest(&out, &m).unwrap();
        assert_eq!(load_manifest(&out).unwrap(), m);
        assert!(fs::read_to_string(&out).unwrap().contains("\"a.tif\""));
    }

    #[test]
    fn errors_name_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s.tif"), b"").unwrap();
        let p = write(
            dir.path(),
            r#"{"entries":[
              {"path":"s.tif","sensor":"S1","date":"2017-01-03","orbit":"DESC","bands":["vv","vh"]},
              {"path":"s.tif","sensor":"S1","date":"2017-01-15","orbit":"NA","bands":["vv","vh"]}]}"#,
        );
        let e = load_manifest(&p).unwrap_err().to_string();
        assert!(e.contains("entry 1"), "{e}");

        let p = write(dir.path(), r#"{"entries":[{"path":"s.tif","sensor":"L7","date":"2017-13-01"}]}"#);
        assert!(load_manifest(&p).unwrap_err().to_string().contains("entry 0"));
        let p = write(dir.path(), r#"{"entries":[{"path":"missing.tif","sensor":"L7","date":"2017-01-01"}]}"#);
        assert!(load_manifest(&p).unwrap_err().to_string().contains("entry 0"));
        let p = write(dir.path(), r#"{"entries":[{"path":"s.tif","sensor":"X9","date":"2017-01-01"}]}"#);
        assert!(load_manifest(&p).unwrap_err().to_string().contains("entry 0"));
        assert!(load_manifest(&dir.path().join("nope.json")).is_err());
    }

    #[test]
    fn empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), r#"{"entries":[]}"#);
        assert!(load_manifest(&p).unwrap().is_empty());
    }
}
