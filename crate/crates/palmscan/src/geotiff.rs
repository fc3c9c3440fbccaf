//! Tiled GeoTIFF reading and writing, one image directory per band.
//!
//! Each band records its name and unit as a small JSON object in
//! `ImageDescription`, its nodata value in `GDAL_NODATA`, and the grid in
//! `ModelTransformationTag` plus a minimal GeoKey directory.

use std::fs;
use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use flate2::write::ZlibEncoder;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::TiffEncoder;
use tiff::tags::Tag;

use palmscan_core::raster::{check_same_shape, SampleType};
use palmscan_core::{GridGeometry, RasterBand, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WriteOptions {
    /// Tile edge in pixels; a multiple of 16.
    pub tile: u32,
    pub deflate: bool,
    /// Store reflectance bands as 16-bit integers scaled by 10000.
    pub reflectance_as_dn: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { tile: 256, deflate: true, reflectance_as_dn: false }
    }
}

pub const REFLECTANCE_SCALE: f64 = 1e-4;
const DN_NODATA: u16 = u16::MAX;

#[derive(Debug, Serialize, Deserialize)]
struct BandMeta {
    name: String,
    unit: Unit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
}

const GEOKEY_MODEL_TYPE: u16 = 1024;
const GEOKEY_RASTER_TYPE: u16 = 1025;
const GEOKEY_GEOGRAPHIC_TYPE: u16 = 2048;
const GEOKEY_PROJECTED_CS_TYPE: u16 = 3072;

fn geokeys(epsg: u32) -> Vec<u16> {
    let geographic = epsg == 4326 || (4000..5000).contains(&epsg);
    let (model, key) = if geographic { (2, GEOKEY_GEOGRAPHIC_TYPE) } else { (1, GEOKEY_PROJECTED_CS_TYPE) };
    vec![
        1, 1, 0, 3,
        GEOKEY_MODEL_TYPE, 0, 1, model,
        GEOKEY_RASTER_TYPE, 0, 1, 1,
        key, 0, 1, epsg as u16,
    ]
}

enum Stored {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl Stored {
    fn bits(&self) -> u16 {
        match self {
            Stored::U8(_) => 8,
            Stored::U16(_) => 16,
            Stored::F32(_) => 32,
        }
    }

    fn sample_format(&self) -> u16 {
        match self {
            Stored::F32(_) => 3,
            _ => 1,
        }
    }

    fn bytes_per_sample(&self) -> usize {
        self.bits() as usize / 8
    }

    /// Little-endian bytes of samples `[start, start + n)`.
    fn extend_le(&self, out: &mut Vec<u8>, start: usize, n: usize) {
        match self {
            Stored::U8(v) => out.extend_from_slice(&v[start..start + n]),
            Stored::U16(v) => v[start..start + n].iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Stored::F32(v) => v[start..start + n].iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

fn encode_band(band: &RasterBand, opts: &WriteOptions) -> Result<(Stored, Option<String>, Option<f64>)> {
    let nodata = band.nodata;
    let nodata_text = |v: f32| format!("{v}");
    if band.unit == Unit::Reflectance && opts.reflectance_as_dn {
        let vals = band
            .values()
            .iter()
            .map(|&v| {
                if band.is_nodata_value(v) {
                    DN_NODATA
                } else {
                    (v as f64 / REFLECTANCE_SCALE).round().clamp(0.0, (DN_NODATA - 1) as f64) as u16
                }
            })
            .collect();
        return Ok((Stored::U16(vals), nodata.map(|_| DN_NODATA.to_string()), Some(REFLECTANCE_SCALE)));
    }
    let stored = match band.unit.sample_type() {
        SampleType::F32 => Stored::F32(band.values().to_vec()),
        SampleType::U8 => Stored::U8(band.values().iter().map(|&v| v.clamp(0.0, 255.0) as u8).collect()),
        SampleType::U16 => Stored::U16(band.values().iter().map(|&v| v.clamp(0.0, 65535.0) as u16).collect()),
    };
    Ok((stored, nodata.map(nodata_text), None))
}

/// Encodes bands into an in-memory GeoTIFF. Identical inputs give identical
/// bytes.
pub fn encode_raster(grid: &GridGeometry, bands: &[&RasterBand], opts: &WriteOptions) -> Result<Vec<u8>> {
    if bands.is_empty() {
        bail!("no bands to write");
    }
    check_same_shape(bands)?;
    if !bands[0].matches_grid(grid) {
        bail!("bands are {}x{}, grid is {}x{}", bands[0].width(), bands[0].height(), grid.width, grid.height);
    }
    if opts.tile == 0 || opts.tile % 16 != 0 {
        bail!("tile size {} is not a positive multiple of 16", opts.tile);
    }
    let (w, h) = (grid.width, grid.height);
    let t = opts.tile as usize;
    let transform = [
        grid.px_size_x, 0.0, 0.0, grid.origin_x,
        0.0, grid.px_size_y, 0.0, grid.origin_y,
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
    ];
    let keys = geokeys(grid.epsg);

    let mut cursor = Cursor::new(Vec::new());
    let mut enc = TiffEncoder::new(&mut cursor)?;
    for band in bands {
        let (stored, nodata, scale) = encode_band(band, opts)?;
        let bps = stored.bytes_per_sample();
        let meta = serde_json::to_string(&BandMeta { name: band.name.clone(), unit: band.unit, scale })?;
        let mut dir = enc.image_directory()?;
        let (mut offsets, mut counts) = (Vec::new(), Vec::new());
        let mut raw = Vec::with_capacity(t * t * bps);
        for ty in (0..h).step_by(t) {
            for tx in (0..w).step_by(t) {
                raw.clear();
                let cw = t.min(w - tx);
                for r in 0..t {
                    if ty + r < h {
                        stored.extend_le(&mut raw, (ty + r) * w + tx, cw);
                        raw.resize(raw.len() + (t - cw) * bps, 0);
                    } else {
                        raw.resize(raw.len() + t * bps, 0);
                    }
                }
                let chunk = if opts.deflate {
                    let mut z = ZlibEncoder::new(Vec::new(), flate2::Compression::new(6));
                    z.write_all(&raw)?;
                    z.finish()?
                } else {
                    raw.clone()
                };
                offsets.push(u32::try_from(dir.write_data(chunk.as_slice())?).context("file exceeds 4 GiB")?);
                counts.push(chunk.len() as u32);
            }
        }
        dir.write_tag(Tag::ImageWidth, w as u32)?;
        dir.write_tag(Tag::ImageLength, h as u32)?;
        dir.write_tag(Tag::BitsPerSample, stored.bits())?;
        dir.write_tag(Tag::Compression, if opts.deflate { 8u16 } else { 1u16 })?;
        dir.write_tag(Tag::PhotometricInterpretation, 1u16)?;
        dir.write_tag(Tag::ImageDescription, meta.as_str())?;
        dir.write_tag(Tag::SamplesPerPixel, 1u16)?;
        dir.write_tag(Tag::PlanarConfiguration, 1u16)?;
        dir.write_tag(Tag::TileWidth, opts.tile)?;
        dir.write_tag(Tag::TileLength, opts.tile)?;
        dir.write_tag(Tag::TileOffsets, offsets.as_slice())?;
        dir.write_tag(Tag::TileByteCounts, counts.as_slice())?;
        dir.write_tag(Tag::SampleFormat, stored.sample_format())?;
        dir.write_tag(Tag::ModelTransformationTag, &transform[..])?;
        dir.write_tag(Tag::GeoKeyDirectoryTag, keys.as_slice())?;
        if let Some(nd) = nodata {
            dir.write_tag(Tag::GdalNodata, nd.as_str())?;
        }
        dir.finish()?;
    }
    drop(enc);
    Ok(cursor.into_inner())
}

/// Writes bands to `path` atomically (temporary file then rename). Shape
/// errors are reported before anything touches the filesystem.
pub fn write_raster(path: &Path, grid: &GridGeometry, bands: &[&RasterBand], opts: &WriteOptions) -> Result<()> {
    let bytes = encode_raster(grid, bands, opts).with_context(|| format!("encoding {}", path.display()))?;
    crate::fsutil::write_atomic(path, &bytes)
}

fn grid_from_tags<R: Read + Seek>(dec: &mut Decoder<R>, width: usize, height: usize) -> Result<GridGeometry> {
    let (px_x, px_y, ox, oy) = if let Some(v) = dec.find_tag(Tag::ModelTransformationTag)? {
        let m = v.into_f64_vec()?;
        if m.len() < 8 {
            bail!("malformed ModelTransformationTag");
        }
        if m[1] != 0.0 || m[4] != 0.0 {
            bail!("rotated geotransforms are not supported");
        }
        (m[0], m[5], m[3], m[7])
    } else if let (Some(scale), Some(tie)) =
        (dec.find_tag(Tag::ModelPixelScaleTag)?, dec.find_tag(Tag::ModelTiepointTag)?)
    {
        let s = scale.into_f64_vec()?;
        let tp = tie.into_f64_vec()?;
        if s.len() < 2 || tp.len() < 6 {
            bail!("malformed pixel-scale/tiepoint tags");
        }
        (s[0], -s[1], tp[3] - tp[0] * s[0], tp[4] + tp[1] * s[1])
    } else {
        bail!("missing geotransform");
    };
    let mut epsg = 0u32;
    if let Some(keys) = dec.find_tag(Tag::GeoKeyDirectoryTag)? {
        let k = keys.into_u16_vec()?;
        for entry in k.get(4..).unwrap_or_default().chunks_exact(4) {
            if (entry[0] == GEOKEY_PROJECTED_CS_TYPE || entry[0] == GEOKEY_GEOGRAPHIC_TYPE) && entry[1] == 0 {
                epsg = entry[3] as u32;
            }
        }
    }
    Ok(GridGeometry::new(epsg, (ox, oy), (px_x, px_y), width, height)?)
}

fn decode_values(result: DecodingResult, scale: Option<f64>, nodata: Option<f32>) -> Result<(Vec<f32>, SampleType)> {
    Ok(match result {
        DecodingResult::U8(v) => (v.into_iter().map(f32::from).collect(), SampleType::U8),
        DecodingResult::U16(v) => match scale {
            Some(s) => (
                v.into_iter()
                    .map(|x| if Some(x as f32) == nodata { f32::NAN } else { (x as f64 * s) as f32 })
                    .collect(),
                SampleType::F32,
            ),
            None => (v.into_iter().map(f32::from).collect(), SampleType::U16),
        },
        DecodingResult::F32(v) => (v, SampleType::F32),
        DecodingResult::I16(v) => (v.into_iter().map(f32::from).collect(), SampleType::F32),
        DecodingResult::F64(v) => (v.into_iter().map(|x| x as f32).collect(), SampleType::F32),
        _ => bail!("unsupported sample type"),
    })
}

fn infer_unit(st: SampleType) -> Unit {
    match st {
        SampleType::F32 => Unit::Index,
        SampleType::U8 => Unit::Byte,
        SampleType::U16 => Unit::ClassId,
    }
}

/// Reads every band of a GeoTIFF. When `expected` is given, each band's
/// recorded unit must match it; values are checked against the unit domain.
pub fn read_raster(path: &Path, expected: Option<Unit>) -> Result<(GridGeometry, Vec<RasterBand>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_raster(&bytes, expected).with_context(|| format!("decoding {}", path.display()))
}

pub fn decode_raster(bytes: &[u8], expected: Option<Unit>) -> Result<(GridGeometry, Vec<RasterBand>)> {
    let mut dec = Decoder::new(Cursor::new(bytes))?.with_limits(Limits::unlimited());
    let mut grid: Option<GridGeometry> = None;
    let mut bands = Vec::new();
    loop {
        let (w, h) = dec.dimensions()?;
        let (w, h) = (w as usize, h as usize);
        let g = grid_from_tags(&mut dec, w, h)?;
        if let Some(first) = &grid {
            if first != &g {
                bail!("image directories disagree on the grid");
            }
        }
        let meta: Option<BandMeta> = match dec.find_tag(Tag::ImageDescription)? {
            Some(v) => serde_json::from_str(&v.into_string()?).ok(),
            None => None,
        };
        let nodata_raw: Option<f32> = match dec.find_tag(Tag::GdalNodata)? {
            Some(v) => Some(v.into_string()?.trim_end_matches('\0').trim().parse().context("bad GDAL_NODATA")?),
            None => None,
        };
        let scale = meta.as_ref().and_then(|m| m.scale);
        let (mut values, st) = decode_values(dec.read_image()?, scale, nodata_raw)?;
        let unit = meta.as_ref().map_or_else(|| expected.unwrap_or(infer_unit(st)), |m| m.unit);
        let nodata = if scale.is_some() {
            let nd = nodata_raw.map(|_| unit.default_nodata().unwrap_or(palmscan_core::raster::NODATA_F32));
            if let Some(nd) = nd {
                values.iter_mut().filter(|v| v.is_nan()).for_each(|v| *v = nd);
            }
            nd
        } else {
            nodata_raw
        };
        if let Some(e) = expected {
            if e != unit {
                bail!("band {} has unit {}, expected {}", bands.len(), unit.name(), e.name());
            }
        }
        if st != unit.sample_type() {
            bail!("unit {} cannot be stored as {:?}", unit.name(), st);
        }
        let name = meta.map_or_else(|| format!("band{}", bands.len() + 1), |m| m.name);
        let band = RasterBand::new(name, unit, nodata, w, h, values)?;
        band.check_domain()?;
        bands.push(band);
        grid = Some(g);
        if !dec.more_images() {
            break;
        }
        dec.next_image()?;
    }
    Ok((grid.ok_or_else(|| anyhow!("no image directories"))?, bands))
}

/// Reads only the grid of the first image directory.
pub fn read_grid(path: &Path) -> Result<GridGeometry> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut dec = Decoder::new(std::io::BufReader::new(f))?;
    let (w, h) = dec.dimensions()?;
    grid_from_tags(&mut dec, w as usize, h as usize).with_context(|| format!("reading grid of {}", path.display()))
}

/// Reads one named band.
pub fn read_band(path: &Path, name: &str) -> Result<(GridGeometry, RasterBand)> {
    let (grid, bands) = read_raster(path, None)?;
    let band = bands
        .into_iter()
        .find(|b| b.name == name)
        .ok_or_else(|| anyhow!("{} has no band `{name}`", path.display()))?;
    Ok((grid, band))
}

/// Reads the first band of a single-band file.
pub fn read_single(path: &Path, expected: Option<Unit>) -> Result<(GridGeometry, RasterBand)> {
    let (grid, mut bands) = read_raster(path, expected)?;
    Ok((grid, bands.swap_remove(0)))
}
