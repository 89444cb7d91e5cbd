use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CameraModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Day,
    Twilight,
    Night,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsPosition {
    pub lat: f64,
    pub lon: f64,
}

/// File references of a record. Relative paths are resolved against the
/// manifest's directory when the manifest is parsed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordPaths {
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_map: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_mask: Option<PathBuf>,
}

/// One line of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub role: Role,
    pub gps: GpsPosition,
    pub paths: RecordPaths,
    /// Needed only by the warping refinement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
}

impl ManifestRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !(-90.0..=90.0).contains(&self.gps.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.gps.lat));
        }
        if !(-180.0..=180.0).contains(&self.gps.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.gps.lon));
        }
        if let Some(cam) = &self.camera {
            cam.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.image);
        for p in [
            &mut self.paths.soft_map,
            &mut self.paths.depth,
            &mut self.paths.gt_label,
            &mut self.paths.invalid_mask,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }
}

/// Parses JSON-lines text. Blank lines are skipped; `path` only labels
/// errors.
pub fn parse_manifest_str(text: &str, path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::SchemaError {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let record: ManifestRecord = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        record.validate().map_err(schema)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Reads a manifest and resolves relative paths against its directory.
pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = parse_manifest_str(&text, path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for r in &mut records {
        r.resolve(base);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
