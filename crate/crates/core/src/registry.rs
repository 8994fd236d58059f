//! Dataset ingestion, filtering and the named training-set compositions.
//!
//! | name         | parts                                             | size |
//! |--------------|---------------------------------------------------|------|
//! | `KDEF_OL`    | KDEF + KDEF_DA_OL (geometric ×5)                  | 5880 |
//! | `KDEF_PFA`   | KDEF_OL + KDEF_GAN_PFA                            | 6860 |
//! | `KDEF_Q`     | KDEF_OL + KDEF_GAN_Q (7 × 150 DCGAN samples)      | 6930 |
//! | `KDEF_PFA_Q` | KDEF_OL + KDEF_GAN_PFA + KDEF_GAN_Q               | 7910 |
//! | `UNION`      | all of the above plus CK+ and JAFFE               | 9025 |

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{EmotionLabel, ParsedExpression};
use crate::manifest::{
    compose, read_raw_rows, resolve_path, DatasetManifest, ImageRecord, RawRow, Source, DATA_ROOT_ENV,
};

pub const KDEF: &str = "KDEF";
pub const CKPLUS: &str = "CK+";
pub const JAFFE: &str = "JAFFE";
pub const KDEF_DA_OL: &str = "KDEF_DA_OL";
pub const KDEF_GAN_PFA: &str = "KDEF_GAN_PFA";
pub const KDEF_GAN_Q: &str = "KDEF_GAN_Q";

/// Number of actor images added to each per-emotion GAN training group.
pub const ACTORS_PER_EMOTION: usize = 4;

/// Images sampled from each emotion's pinned generator.
pub const GAN_Q_PER_EMOTION: usize = 150;

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Replaces a leading `$FER_DATA_ROOT` in manifest paths. Falls back to the
    /// environment variable of the same name.
    pub data_root: Option<PathBuf>,
    /// Fail when a kept record's file does not exist.
    pub verify_files: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            data_root: std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from),
            verify_files: true,
        }
    }
}

impl LoadOptions {
    pub fn unchecked() -> Self {
        Self {
            verify_files: false,
            ..Self::default()
        }
    }
}

/// The training sets built from KDEF and its augmentations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainSet {
    #[serde(rename = "KDEF_OL")]
    KdefOl,
    #[serde(rename = "KDEF_PFA")]
    KdefPfa,
    #[serde(rename = "KDEF_Q")]
    KdefQ,
    #[serde(rename = "KDEF_PFA_Q")]
    KdefPfaQ,
    #[serde(rename = "UNION")]
    Union,
}

impl TrainSet {
    pub const CROSS_DATABASE: [TrainSet; 4] =
        [TrainSet::KdefOl, TrainSet::KdefPfa, TrainSet::KdefQ, TrainSet::KdefPfaQ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainSet::KdefOl => "KDEF_OL",
            TrainSet::KdefPfa => "KDEF_PFA",
            TrainSet::KdefQ => "KDEF_Q",
            TrainSet::KdefPfaQ => "KDEF_PFA_Q",
            TrainSet::Union => "UNION",
        }
    }

    pub fn needs_gan_pfa(self) -> bool {
        matches!(self, TrainSet::KdefPfa | TrainSet::KdefPfaQ | TrainSet::Union)
    }

    pub fn needs_gan_q(self) -> bool {
        matches!(self, TrainSet::KdefQ | TrainSet::KdefPfaQ | TrainSet::Union)
    }
}

impl fmt::Display for TrainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "KDEF_OL" => TrainSet::KdefOl,
            "KDEF_PFA" => TrainSet::KdefPfa,
            "KDEF_Q" => TrainSet::KdefQ,
            "KDEF_PFA_Q" => TrainSet::KdefPfaQ,
            "UNION" => TrainSet::Union,
            _ => return Err(format!("unknown train set `{s}`")),
        })
    }
}

/// Loads KDEF, keeping only straight-angle photographs.
pub fn load_kdef(manifest_path: &Path, opts: &LoadOptions) -> Result<DatasetManifest> {
    load_filtered(manifest_path, opts, Source::Kdef, KDEF, |row, id| {
        let angle = row.angle.as_deref().ok_or_else(|| Error::Ingestion {
            id: id.to_string(),
            reason: "missing `angle` field".into(),
        })?;
        Ok(is_straight(angle))
    })
}

/// Loads CK+, dropping contempt frames.
pub fn load_ckplus(manifest_path: &Path, opts: &LoadOptions) -> Result<DatasetManifest> {
    load_filtered(manifest_path, opts, Source::CkPlus, CKPLUS, |_, _| Ok(true))
}

pub fn load_jaffe(manifest_path: &Path, opts: &LoadOptions) -> Result<DatasetManifest> {
    load_filtered(manifest_path, opts, Source::Jaffe, JAFFE, |_, _| Ok(true))
}

/// Loads an externally supplied manifest (GAN-PFA images, actor images)
/// as-is, tagging every record with `source`.
pub fn load_external(manifest_path: &Path, opts: &LoadOptions, source: Source, name: &str) -> Result<DatasetManifest> {
    load_filtered(manifest_path, opts, source, name, |_, _| Ok(true))
}

fn is_straight(angle: &str) -> bool {
    matches!(
        angle.trim().to_ascii_lowercase().as_str(),
        "s" | "straight" | "front" | "frontal"
    )
}

fn load_filtered(
    manifest_path: &Path,
    opts: &LoadOptions,
    source: Source,
    name: &str,
    mut keep_row: impl FnMut(&RawRow, &str) -> Result<bool>,
) -> Result<DatasetManifest> {
    let raw = read_raw_rows(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for row in raw.rows {
        let id = row.id.clone();
        let expression = parse_row_label(&row, source)?;
        if !row.dataset.is_empty() {
            let declared: Source = row
                .dataset
                .parse()
                .map_err(|reason| Error::Ingestion { id: id.clone(), reason })?;
            if declared != source {
                return Err(Error::Ingestion {
                    id,
                    reason: format!("dataset `{declared}` listed in a {source} manifest"),
                });
            }
        }
        if !keep_row(&row, &id)? {
            continue;
        }
        let label = match expression {
            ParsedExpression::Label(label) => label,
            ParsedExpression::Contempt if source == Source::CkPlus => continue,
            ParsedExpression::Contempt => {
                return Err(Error::Label {
                    id,
                    value: row.label_string(),
                })
            }
        };
        let path = resolve_path(&row.path, base, opts.data_root.as_deref());
        if opts.verify_files && !path.is_file() {
            return Err(Error::Ingestion {
                id,
                reason: format!("file not found: {}", path.display()),
            });
        }
        records.push(ImageRecord {
            id: row.id,
            path,
            source,
            label,
            angle: row.angle,
            subject: row.subject,
            session: row.session,
            parent_id: row.parent_id,
        });
    }
    let manifest = DatasetManifest::new(name, records)?;
    tracing::info!(
        stage = "ingest",
        dataset = name,
        manifest = %manifest_path.display(),
        records = manifest.len(),
        "loaded manifest"
    );
    Ok(manifest)
}

fn parse_row_label(row: &RawRow, source: Source) -> Result<ParsedExpression> {
    let parsed = match &row.label {
        serde_json::Value::Number(n) if source == Source::CkPlus => {
            n.as_u64().and_then(|c| EmotionLabel::from_ckplus_code(c as u32))
        }
        serde_json::Value::String(s) if source == Source::CkPlus && s.trim().parse::<u32>().is_ok() => {
            EmotionLabel::from_ckplus_code(s.trim().parse().unwrap())
        }
        serde_json::Value::String(s) => EmotionLabel::parse_expression(s),
        _ => None,
    };
    parsed.ok_or_else(|| Error::Label {
        id: row.id.clone(),
        value: row.label_string(),
    })
}

/// The per-emotion DCGAN training set: every KDEF image of `label` plus the
/// first four actor images with that label.
pub fn gan_training_group(
    kdef: &DatasetManifest,
    actors: &DatasetManifest,
    label: EmotionLabel,
) -> Result<DatasetManifest> {
    let kdef_part = kdef.filter("kdef", |r| r.label == label && r.source == Source::Kdef);
    if kdef_part.is_empty() {
        return Err(Error::Config(format!(
            "no KDEF images labeled {label}; refusing to train a GAN on actor images alone"
        )));
    }
    let actor_records: Vec<_> = actors.records().iter().filter(|r| r.label == label).collect();
    if actor_records.len() < ACTORS_PER_EMOTION {
        return Err(Error::Config(format!(
            "actor manifest provides {} {label} images, {ACTORS_PER_EMOTION} required",
            actor_records.len()
        )));
    }
    if actor_records.len() > ACTORS_PER_EMOTION {
        tracing::warn!(
            stage = "gan_group",
            %label,
            available = actor_records.len(),
            "using the first {ACTORS_PER_EMOTION} actor images only"
        );
    }
    let actor_part = DatasetManifest::new(
        "actors",
        actor_records.into_iter().take(ACTORS_PER_EMOTION).cloned().collect(),
    )?;
    compose(
        &format!("GAN_GROUP_{}", label.as_str().to_ascii_uppercase()),
        &[&kdef_part, &actor_part],
    )
}

/// Id of the `index`-th image sampled for `label`.
pub fn gan_q_id(label: EmotionLabel, index: usize) -> String {
    format!("ganq_{}_{index:04}", label.as_str())
}

/// The KDEF_GAN_Q manifest for `per_emotion` samples of every emotion stored
/// under `dir/<emotion>/`.
pub fn gan_q_plan(per_emotion: usize, dir: &Path) -> Result<DatasetManifest> {
    let records = EmotionLabel::ALL
        .iter()
        .flat_map(|&label| {
            (0..per_emotion).map(move |i| {
                let id = gan_q_id(label, i);
                let path = dir.join(label.as_str()).join(format!("{id}.png"));
                ImageRecord::new(id, path, Source::GanQ, label)
            })
        })
        .collect();
    DatasetManifest::new(KDEF_GAN_Q, records)
}

pub fn kdef_ol(kdef: &DatasetManifest, geom_aug: &DatasetManifest) -> Result<DatasetManifest> {
    compose(TrainSet::KdefOl.as_str(), &[kdef, geom_aug])
}

pub fn kdef_pfa(kdef_ol: &DatasetManifest, gan_pfa: &DatasetManifest) -> Result<DatasetManifest> {
    compose(TrainSet::KdefPfa.as_str(), &[kdef_ol, gan_pfa])
}

pub fn kdef_q(kdef_ol: &DatasetManifest, gan_q: &DatasetManifest) -> Result<DatasetManifest> {
    compose(TrainSet::KdefQ.as_str(), &[kdef_ol, gan_q])
}

pub fn kdef_pfa_q(
    kdef_ol: &DatasetManifest,
    gan_pfa: &DatasetManifest,
    gan_q: &DatasetManifest,
) -> Result<DatasetManifest> {
    compose(TrainSet::KdefPfaQ.as_str(), &[kdef_ol, gan_pfa, gan_q])
}

pub fn union_set(
    kdef: &DatasetManifest,
    geom_aug: &DatasetManifest,
    gan_pfa: &DatasetManifest,
    gan_q: &DatasetManifest,
    ckplus: &DatasetManifest,
    jaffe: &DatasetManifest,
) -> Result<DatasetManifest> {
    compose(
        TrainSet::Union.as_str(),
        &[kdef, geom_aug, gan_pfa, gan_q, ckplus, jaffe],
    )
}

/// Every component a training set can be built from.
pub struct Components<'a> {
    pub kdef: &'a DatasetManifest,
    pub geom_aug: &'a DatasetManifest,
    pub gan_pfa: Option<&'a DatasetManifest>,
    pub gan_q: Option<&'a DatasetManifest>,
    pub ckplus: Option<&'a DatasetManifest>,
    pub jaffe: Option<&'a DatasetManifest>,
}

impl<'a> Components<'a> {
    pub fn build(&self, set: TrainSet) -> Result<DatasetManifest> {
        let need = |m: Option<&'a DatasetManifest>, what: &str| {
            m.ok_or_else(|| Error::Config(format!("{set} requires the {what} manifest")))
        };
        let ol = kdef_ol(self.kdef, self.geom_aug)?;
        match set {
            TrainSet::KdefOl => Ok(ol),
            TrainSet::KdefPfa => kdef_pfa(&ol, need(self.gan_pfa, KDEF_GAN_PFA)?),
            TrainSet::KdefQ => kdef_q(&ol, need(self.gan_q, KDEF_GAN_Q)?),
            TrainSet::KdefPfaQ => kdef_pfa_q(&ol, need(self.gan_pfa, KDEF_GAN_PFA)?, need(self.gan_q, KDEF_GAN_Q)?),
            TrainSet::Union => union_set(
                self.kdef,
                self.geom_aug,
                need(self.gan_pfa, KDEF_GAN_PFA)?,
                need(self.gan_q, KDEF_GAN_Q)?,
                need(self.ckplus, CKPLUS)?,
                need(self.jaffe, JAFFE)?,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::io::Write;

    use super::*;

    fn write_lines(path: &Path, lines: &[String]) {
        let mut f = fs::File::create(path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
    }

    fn kdef_row(id: &str, angle: &str, label: &str) -> String {
        format!(
            r#"{{"id":"{id}","path":"img/{id}.jpg","dataset":"KDEF","label":"{label}","angle":"{angle}","subject":"F01","session":"A"}}"#
        )
    }

    #[test]
    fn kdef_keeps_straight_rows_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kdef.jsonl");
        write_lines(
            &path,
            &[
                kdef_row("a", "S", "HA"),
                kdef_row("b", "FL", "HA"),
                kdef_row("c", "straight", "happy"),
                kdef_row("d", "HR", "SA"),
            ],
        );
        let m = load_kdef(&path, &LoadOptions::unchecked()).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.count(EmotionLabel::Happy), 2);
        assert_eq!(m.records()[0].path, dir.path().join("img/a.jpg"));
    }

    #[test]
    fn empty_manifest_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let m = load_kdef(&path, &LoadOptions::default()).unwrap();
        assert!(m.is_empty());
        assert!(m.counts_by_label().values().all(|&c| c == 0));
        assert!(load_jaffe(&path, &LoadOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn missing_file_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kdef.jsonl");
        write_lines(&path, &[kdef_row("AF01HAS", "S", "HA")]);
        match load_kdef(&path, &LoadOptions::default()) {
            Err(Error::Ingestion { id, .. }) => assert_eq!(id, "AF01HAS"),
            other => panic!("unexpected {other:?}"),
        }
        fs::create_dir_all(dir.path().join("img")).unwrap();
        fs::write(dir.path().join("img/AF01HAS.jpg"), b"").unwrap();
        assert_eq!(load_kdef(&path, &LoadOptions::default()).unwrap().len(), 1);
    }

    #[test]
    fn unknown_expression_is_label_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kdef.jsonl");
        write_lines(&path, &[kdef_row("x", "S", "XX")]);
        assert!(matches!(
            load_kdef(&path, &LoadOptions::unchecked()),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn ckplus_drops_contempt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.jsonl");
        let labels = [
            "contempt", "happy", "2", "sadness", "Contempt", "7", "anger", "fear", "disgust", "neutral",
        ];
        let rows: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!(r#"{{"id":"ck{i}","path":"ck{i}.png","dataset":"CK+","label":"{l}"}}"#))
            .collect();
        write_lines(&path, &rows);
        let m = load_ckplus(&path, &LoadOptions::unchecked()).unwrap();
        assert_eq!(m.len(), 7);
        assert_eq!(m.count(EmotionLabel::Surprise), 1);
    }

    #[test]
    fn wrong_dataset_tag_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jaffe.jsonl");
        write_lines(
            &path,
            &[r#"{"id":"j","path":"j.png","dataset":"KDEF","label":"HA"}"#.to_string()],
        );
        assert!(matches!(
            load_jaffe(&path, &LoadOptions::unchecked()),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn data_root_substitution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jaffe.jsonl");
        write_lines(
            &path,
            &[r#"{"id":"j","path":"$FER_DATA_ROOT/jaffe/j.png","label":"HA"}"#.to_string()],
        );
        let opts = LoadOptions {
            data_root: Some(PathBuf::from("/mnt/datasets")),
            verify_files: false,
        };
        let m = load_jaffe(&path, &opts).unwrap();
        assert_eq!(m.records()[0].path, PathBuf::from("/mnt/datasets/jaffe/j.png"));
    }

    fn manifest(source: Source, prefix: &str, per_label: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for label in EmotionLabel::ALL {
            for i in 0..per_label {
                records.push(ImageRecord::new(
                    format!("{prefix}_{label}_{i}"),
                    "/x.png",
                    source,
                    label,
                ));
            }
        }
        DatasetManifest::new(prefix, records).unwrap()
    }

    #[test]
    fn gan_group_has_144_records() {
        let kdef = manifest(Source::Kdef, "kdef", 140);
        let actors = manifest(Source::Actor, "actor", 4);
        for label in [EmotionLabel::Happy, EmotionLabel::Neutral] {
            let g = gan_training_group(&kdef, &actors, label).unwrap();
            assert_eq!(g.len(), 144);
            assert_eq!(g.count(label), 144);
            assert_eq!(g.records().iter().filter(|r| r.source == Source::Actor).count(), 4);
        }
    }

    #[test]
    fn gan_group_errors() {
        let kdef = manifest(Source::Kdef, "kdef", 140);
        let actors = manifest(Source::Actor, "actor", 3);
        assert!(matches!(
            gan_training_group(&kdef, &actors, EmotionLabel::Sad),
            Err(Error::Config(_))
        ));
        let empty = DatasetManifest::empty("KDEF");
        let actors = manifest(Source::Actor, "actor", 4);
        assert!(matches!(
            gan_training_group(&empty, &actors, EmotionLabel::Sad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn components_require_optional_parts() {
        let kdef = manifest(Source::Kdef, "kdef", 1);
        let geom = DatasetManifest::empty("geom");
        let c = Components {
            kdef: &kdef,
            geom_aug: &geom,
            gan_pfa: None,
            gan_q: None,
            ckplus: None,
            jaffe: None,
        };
        assert_eq!(c.build(TrainSet::KdefOl).unwrap().len(), 7);
        assert!(matches!(c.build(TrainSet::KdefQ), Err(Error::Config(_))));
    }

    #[test]
    fn train_set_names_round_trip() {
        for set in [
            TrainSet::KdefOl,
            TrainSet::KdefPfa,
            TrainSet::KdefQ,
            TrainSet::KdefPfaQ,
            TrainSet::Union,
        ] {
            assert_eq!(set.as_str().parse::<TrainSet>(), Ok(set));
        }
    }
}
