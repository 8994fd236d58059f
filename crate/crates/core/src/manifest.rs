//! Image records and dataset manifests.
//!
//! # File format (schema `fer-manifest`, version 1)
//!
//! A manifest is a UTF-8 text file with one JSON object per line. An
//! optional first line carries the header:
//!
//! ```text
//! {"schema":"fer-manifest","version":1,"name":"KDEF_OL"}
//! ```
//!
//! Every other non-empty line is a record:
//!
//! | field       | type            | notes                                             |
//! |-------------|-----------------|---------------------------------------------------|
//! | `id`        | string          | unique within a manifest                          |
//! | `path`      | string          | absolute, relative to the manifest, or `$FER_DATA_ROOT/...` |
//! | `dataset`   | string          | `KDEF`, `CK+`, `JAFFE`, `GEOM_AUG`, `GAN_Q`, `GAN_PFA`, `ACTOR` |
//! | `label`     | string / number | expression; dataset loaders accept codes and aliases |
//! | `angle`     | string, opt.    | KDEF camera angle (`S` = straight)                |
//! | `subject`   | string, opt.    |                                                   |
//! | `session`   | string, opt.    | KDEF photo session (`A`/`B`)                      |
//! | `parent_id` | string, opt.    | lineage of geometric augmentations                |
//!
//! Lines starting with `#` are comments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;

pub const SCHEMA_NAME: &str = "fer-manifest";
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable substituted for a leading `$FER_DATA_ROOT` in paths.
pub const DATA_ROOT_ENV: &str = "FER_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "KDEF")]
    Kdef,
    #[serde(rename = "CK+")]
    CkPlus,
    #[serde(rename = "JAFFE")]
    Jaffe,
    #[serde(rename = "GEOM_AUG")]
    GeomAug,
    #[serde(rename = "GAN_Q")]
    GanQ,
    #[serde(rename = "GAN_PFA")]
    GanPfa,
    #[serde(rename = "ACTOR")]
    Actor,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Kdef => "KDEF",
            Source::CkPlus => "CK+",
            Source::Jaffe => "JAFFE",
            Source::GeomAug => "GEOM_AUG",
            Source::GanQ => "GAN_Q",
            Source::GanPfa => "GAN_PFA",
            Source::Actor => "ACTOR",
        }
    }

    pub fn is_generated(self) -> bool {
        matches!(self, Source::GanQ | Source::GanPfa)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Ok(match upper.as_str() {
            "KDEF" => Source::Kdef,
            "CK+" | "CKPLUS" | "CK" => Source::CkPlus,
            "JAFFE" => Source::Jaffe,
            "GEOM_AUG" => Source::GeomAug,
            "GAN_Q" => Source::GanQ,
            "GAN_PFA" => Source::GanPfa,
            "ACTOR" => Source::Actor,
            _ => return Err(format!("unknown dataset `{s}`")),
        })
    }
}

/// One labeled face image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    #[serde(rename = "dataset")]
    pub source: Source,
    pub label: EmotionLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>, source: Source, label: EmotionLabel) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            source,
            label,
            angle: None,
            subject: None,
            session: None,
            parent_id: None,
        }
    }

    /// Checks the lineage rules: augmented records point at a parent,
    /// generated records do not.
    pub fn check_lineage(&self) -> std::result::Result<(), String> {
        match self.source {
            Source::GeomAug if self.parent_id.is_none() => {
                Err(format!("augmented record `{}` has no parent_id", self.id))
            }
            s if s.is_generated() && self.parent_id.is_some() => {
                Err(format!("generated record `{}` must not carry a parent_id", self.id))
            }
            _ => Ok(()),
        }
    }
}

/// An ordered, duplicate-free collection of records with per-label counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    name: String,
    records: Vec<ImageRecord>,
    counts: BTreeMap<EmotionLabel, usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    #[serde(default)]
    name: Option<String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if !seen.insert(record.id.as_str()) {
                return Err(Error::InvalidManifest {
                    name,
                    reason: format!("duplicate record id `{}`", record.id),
                });
            }
            record.check_lineage().map_err(|reason| Error::InvalidManifest {
                name: name.clone(),
                reason,
            })?;
        }
        let counts = count_labels(&records);
        Ok(Self { name, records, counts })
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            records: Vec::new(),
            counts: count_labels(&[]),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts for all seven labels, including zeros.
    pub fn counts_by_label(&self) -> &BTreeMap<EmotionLabel, usize> {
        &self.counts
    }

    pub fn count(&self, label: EmotionLabel) -> usize {
        self.counts[&label]
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn filter(&self, name: impl Into<String>, mut keep: impl FnMut(&ImageRecord) -> bool) -> Self {
        let records: Vec<_> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let counts = count_labels(&records);
        Self {
            name: name.into(),
            records,
            counts,
        }
    }

    /// Subset by record index, preserving the given order.
    pub fn select(&self, name: impl Into<String>, indices: &[usize]) -> Self {
        let records: Vec<_> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let counts = count_labels(&records);
        Self {
            name: name.into(),
            records,
            counts,
        }
    }

    /// Reads a manifest whose labels are already canonical (or aliases).
    ///
    /// Relative paths are resolved against the manifest's directory and a
    /// leading `$FER_DATA_ROOT` is substituted from the environment.
    pub fn read(path: &Path) -> Result<Self> {
        let rows = read_raw_rows(path)?;
        let data_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::with_capacity(rows.rows.len());
        for row in rows.rows {
            let label = row.label_string();
            let label: EmotionLabel = label.parse().map_err(|_| Error::Label {
                id: row.id.clone(),
                value: label.clone(),
            })?;
            let source: Source = row.dataset.parse().map_err(|reason| Error::Ingestion {
                id: row.id.clone(),
                reason,
            })?;
            records.push(ImageRecord {
                path: resolve_path(&row.path, base, data_root.as_deref()),
                id: row.id,
                source,
                label,
                angle: row.angle,
                subject: row.subject,
                session: row.session,
                parent_id: row.parent_id,
            });
        }
        let name = rows.name.unwrap_or_else(|| default_name(path));
        Self::new(name, records)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = Header {
            schema: SCHEMA_NAME.to_string(),
            version: SCHEMA_VERSION,
            name: Some(self.name.clone()),
        };
        let write_err = |e: std::io::Error| Error::io(path, e);
        writeln!(out, "{}", serde_json::to_string(&header)?).map_err(write_err)?;
        for record in &self.records {
            // Readers resolve relative paths against the manifest's directory,
            // so paths relative to the working directory are made absolute.
            let line = if record.path.is_relative() {
                let abs = std::path::absolute(&record.path).map_err(|e| Error::io(&record.path, e))?;
                serde_json::to_string(&ImageRecord {
                    path: abs,
                    ..record.clone()
                })?
            } else {
                serde_json::to_string(record)?
            };
            writeln!(out, "{line}").map_err(write_err)?;
        }
        out.flush().map_err(write_err)
    }
}

/// Concatenates manifests in order and recomputes the counts.
pub fn compose(name: &str, parts: &[&DatasetManifest]) -> Result<DatasetManifest> {
    let total = parts.iter().map(|p| p.len()).sum();
    let mut records = Vec::with_capacity(total);
    let mut seen = HashSet::with_capacity(total);
    for part in parts {
        for record in part.records() {
            if !seen.insert(record.id.clone()) {
                return Err(Error::Composition {
                    name: name.to_string(),
                    id: record.id.clone(),
                });
            }
            records.push(record.clone());
        }
    }
    let counts = count_labels(&records);
    Ok(DatasetManifest {
        name: name.to_string(),
        records,
        counts,
    })
}

fn count_labels(records: &[ImageRecord]) -> BTreeMap<EmotionLabel, usize> {
    let mut counts: BTreeMap<_, _> = EmotionLabel::ALL.iter().map(|&l| (l, 0)).collect();
    for record in records {
        *counts.get_mut(&record.label).expect("all labels present") += 1;
    }
    counts
}

fn default_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "manifest".to_string())
}

/// Resolves a manifest path entry.
pub fn resolve_path(raw: &str, base: &Path, data_root: Option<&Path>) -> PathBuf {
    for token in ["${FER_DATA_ROOT}", "$FER_DATA_ROOT"] {
        if let Some(rest) = raw.strip_prefix(token) {
            let rest = rest.trim_start_matches(['/', '\\']);
            return match data_root {
                Some(root) => root.join(rest),
                None => base.join(rest),
            };
        }
    }
    let p = Path::new(raw);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A manifest line before label/dataset validation.
#[derive(Clone, Debug, Deserialize)]
pub(crate) struct RawRow {
    pub id: String,
    pub path: String,
    #[serde(default)]
    pub dataset: String,
    pub label: serde_json::Value,
    #[serde(default)]
    pub angle: Option<String>,
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
}

impl RawRow {
    pub fn label_string(&self) -> String {
        match &self.label {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

pub(crate) struct RawManifest {
    pub name: Option<String>,
    pub rows: Vec<RawRow>,
}

pub(crate) fn read_raw_rows(path: &Path) -> Result<RawManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut name = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::ManifestFormat {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        if value.get("schema").is_some() {
            let header: Header = serde_json::from_value(value).map_err(|e| Error::ManifestFormat {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            if header.schema != SCHEMA_NAME || header.version != SCHEMA_VERSION {
                return Err(Error::ManifestFormat {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: format!(
                        "unsupported schema {} v{} (expected {SCHEMA_NAME} v{SCHEMA_VERSION})",
                        header.schema, header.version
                    ),
                });
            }
            name = header.name;
            continue;
        }
        let row: RawRow = serde_json::from_value(value).map_err(|e| Error::ManifestFormat {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(RawManifest { name, rows })
}

/// Replaces characters that are unsafe in file names.
pub fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}
