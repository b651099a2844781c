//! Geotoken files (CSV, GeoJSON), model checkpoints and atomic writes.
//!
//! CSV layout: a header `id,lat_deg,lon_deg,f0,...,f{d-1}` followed by one
//! row per token. The header fixes `d`; every row must have `3 + d` fields.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attention::{Block, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::geo::{GeoPosition, Geotoken};

pub const CHECKPOINT_VERSION: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_geotokens_csv(path: impl AsRef<Path>) -> Result<Vec<Geotoken>> {
    let path = path.as_ref();
    read_geotokens_csv(&read_file(path)?[..])
}

pub fn read_geotokens_csv<R: Read>(reader: R) -> Result<Vec<Geotoken>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let dim = check_header(&header)?;
    let mut tokens = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 3 {
            return Err(Error::Csv {
                line,
                message: format!("expected {} fields, found {}", dim + 3, record.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|_| Error::Csv {
                line,
                message: format!("field {} ({:?}) is not a number", &header[i], &record[i]),
            })
        };
        let id = record[0].to_string();
        let (lat, lon) = (num(1)?, num(2)?);
        let position = GeoPosition::from_degrees(lat, lon).map_err(|e| Error::Token {
            id: id.clone(),
            message: e.to_string(),
        })?;
        let features = (3..dim + 3).map(num).collect::<Result<Vec<_>>>()?;
        tokens.push(Geotoken::with_dim(id, position, features, dim)?);
    }
    Ok(tokens)
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let bad = |message: String| Error::Csv { line: 1, message };
    if header.len() < 3 || &header[0] != "id" || &header[1] != "lat_deg" || &header[2] != "lon_deg" {
        return Err(bad("header must start with id,lat_deg,lon_deg".into()));
    }
    for (k, name) in header.iter().skip(3).enumerate() {
        if name != format!("f{k}") {
            return Err(bad(format!("expected column f{k}, found {name:?}")));
        }
    }
    Ok(header.len() - 3)
}

/// Writes tokens with their features replaced by `features[i]`.
pub fn write_geotokens_csv<W: Write>(writer: W, tokens: &[Geotoken], features: &[Vec<f64>]) -> Result<()> {
    let dim = features.first().map_or_else(|| tokens.first().map_or(0, |t| t.dim()), |f| f.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "lat_deg".into(), "lon_deg".into()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    let to_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(to_err)?;
    for (t, f) in tokens.iter().zip(features) {
        let mut row = vec![
            t.id().to_string(),
            t.position().lat_deg().to_string(),
            t.position().lon_deg().to_string(),
        ];
        row.extend(f.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn load_geojson_points(path: impl AsRef<Path>) -> Result<Vec<Geotoken>> {
    let path = path.as_ref();
    read_geojson_points(&read_file(path)?)
}

/// Parses a FeatureCollection of Point features. Coordinates are `[lon, lat]`
/// in degrees; the feature vector lives in the `features` property.
pub fn read_geojson_points(bytes: &[u8]) -> Result<Vec<Geotoken>> {
    let root: Value = serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("invalid JSON: {e}")))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Format("expected a GeoJSON FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format("FeatureCollection without a features array".into()))?;
    let mut tokens = Vec::with_capacity(features.len());
    let mut dim = None;
    for (index, feature) in features.iter().enumerate() {
        let fail = |message: String| Error::GeoJson { index, message };
        let geometry = feature.get("geometry").ok_or_else(|| fail("missing geometry".into()))?;
        let gtype = geometry.get("type").and_then(Value::as_str).unwrap_or("null");
        if gtype != "Point" {
            return Err(fail(format!("Point required, found {gtype}")));
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .filter(|c| c.len() >= 2)
            .ok_or_else(|| fail("Point needs [lon, lat] coordinates".into()))?;
        let lon = coords[0].as_f64().ok_or_else(|| fail("non-numeric longitude".into()))?;
        let lat = coords[1].as_f64().ok_or_else(|| fail("non-numeric latitude".into()))?;
        let props = feature.get("properties");
        let values = props
            .and_then(|p| p.get("features"))
            .and_then(Value::as_array)
            .ok_or_else(|| fail("missing numeric \"features\" property".into()))?;
        let values = values
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| fail("\"features\" must hold numbers".into())))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(fail(format!("expected {d} features, found {}", values.len())))
            }
            _ => {}
        }
        let id = feature
            .get("id")
            .or_else(|| props.and_then(|p| p.get("id")))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("feature{index}"));
        let position = GeoPosition::from_degrees(lat, lon).map_err(|e| fail(e.to_string()))?;
        tokens.push(Geotoken::new(id, position, values)?);
    }
    Ok(tokens)
}

/// Loads `.geojson`/`.json` as GeoJSON and anything else as CSV.
pub fn load_geotokens(path: impl AsRef<Path>) -> Result<Vec<Geotoken>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("geojson") | Some("json") => load_geojson_points(path),
        _ => load_geotokens_csv(path),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub encoder: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub blocks: Vec<Block>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let config = *model.config();
        Self {
            format_version: CHECKPOINT_VERSION,
            encoder: config.encoder.name().to_string(),
            seed: config.seed,
            config,
            blocks: model.blocks().to_vec(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        Model::from_parts(self.config, self.blocks)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let json = Checkpoint::from_model(model).to_json()?;
    write_atomic(path.as_ref(), json.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format("checkpoint is not UTF-8".into()))?;
    Checkpoint::from_json(&text)?.into_model()
}
