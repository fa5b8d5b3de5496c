//! Checks an emitted pack on disk: document structure, cross-references,
//! and the same schedule and dialogue rules the generator enforces.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::configgen::{validate_config, RawConfig, ViolationReport};
use crate::emit::{
    is_semver, CONTENT_FILE, CONTENT_PATCHER_ID, DIALOGUES_FILE, GIFT_DIALOGUES_KEY, MANIFEST_FILE, SCHEDULES_FILE,
};
use crate::grammar::Whitelist;
use crate::model::{Birthday, GiftPreferences, Manner, Optimism, SocialAnxiety};

/// The pack could not be read well enough to check it.
#[derive(Debug, Error)]
pub enum PackError {
    #[error("{path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },
    #[error("pack has no {0}")]
    MissingDocument(&'static str),
    #[error("{file} is not a JSON object: {detail}")]
    BadDocument { file: &'static str, detail: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PackReport {
    /// Schedule and dialogue rule violations.
    pub config: ViolationReport,
    /// Manifest, content and cross-reference problems.
    pub problems: Vec<String>,
}

impl PackReport {
    pub fn is_clean(&self) -> bool {
        self.config.is_clean() && self.problems.is_empty()
    }
}

/// File name to bytes, from a directory or a zip archive. Archive entries
/// are taken relative to their top-level folder.
pub fn read_pack_files(path: &Path) -> Result<BTreeMap<String, Vec<u8>>, PackError> {
    let unreadable = |e: &dyn std::fmt::Display| PackError::Unreadable {
        path: path.to_owned(),
        detail: e.to_string(),
    };
    if path.is_dir() {
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(path).map_err(|e| unreadable(&e))? {
            let entry = entry.map_err(|e| unreadable(&e))?;
            if entry.file_type().map_err(|e| unreadable(&e))?.is_file() {
                let bytes = std::fs::read(entry.path()).map_err(|e| unreadable(&e))?;
                files.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
            }
        }
        return Ok(files);
    }
    let file = std::fs::File::open(path).map_err(|e| unreadable(&e))?;
    let mut archive = zip::ZipArchive::new(file).map_err(|e| unreadable(&e))?;
    let mut files = BTreeMap::new();
    for i in 0..archive.len() {
        let mut entry = archive.by_index(i).map_err(|e| unreadable(&e))?;
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().rsplit('/').next().unwrap_or_default().to_owned();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes).map_err(|e| unreadable(&e))?;
        files.insert(name, bytes);
    }
    Ok(files)
}

fn document(files: &BTreeMap<String, Vec<u8>>, file: &'static str) -> Result<Value, PackError> {
    let bytes = files.get(file).ok_or(PackError::MissingDocument(file))?;
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| PackError::BadDocument {
        file,
        detail: e.to_string(),
    })?;
    if !doc.is_object() {
        return Err(PackError::BadDocument {
            file,
            detail: "top level is not an object".into(),
        });
    }
    Ok(doc)
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?
        .iter()
        .map(|s| s.as_str().map(str::to_owned))
        .collect()
}

/// Reads the schedule and dialogue documents back into the generator's
/// reply shape.
pub fn raw_config_of(schedules: &Value, dialogues: &Value) -> RawConfig {
    let text = |v: &Value| v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string());
    let empty = serde_json::Map::new();
    let dialogue_obj = dialogues.as_object().unwrap_or(&empty);
    RawConfig {
        schedule: schedules
            .as_object()
            .unwrap_or(&empty)
            .iter()
            .map(|(k, v)| (k.clone(), text(v)))
            .collect(),
        dialogues: dialogue_obj
            .iter()
            .filter(|(k, _)| k.as_str() != GIFT_DIALOGUES_KEY)
            .map(|(k, v)| (k.clone(), text(v)))
            .collect(),
        gift_dialogues: dialogue_obj
            .get(GIFT_DIALOGUES_KEY)
            .and_then(Value::as_object)
            .map(|g| g.iter().map(|(k, v)| (k.clone(), text(v))).collect())
            .unwrap_or_default(),
    }
}

/// Checks the pack at `path`. `catalog`, when given, is the set of item
/// names gift lists may use.
pub fn check_pack(
    path: &Path,
    whitelist: &Whitelist,
    catalog: Option<&BTreeSet<String>>,
) -> Result<PackReport, PackError> {
    let files = read_pack_files(path)?;
    let manifest = document(&files, MANIFEST_FILE)?;
    let content = document(&files, CONTENT_FILE)?;
    let dialogues = document(&files, DIALOGUES_FILE)?;
    let schedules = document(&files, SCHEDULES_FILE)?;
    let mut problems = Vec::new();

    let version = manifest["Version"].as_str().unwrap_or_default();
    if !is_semver(version) {
        problems.push(format!("manifest: version {version:?} is not MAJOR.MINOR.PATCH"));
    }
    if manifest["ContentPackFor"]["UniqueID"] != CONTENT_PATCHER_ID {
        problems.push(format!("manifest: ContentPackFor must name {CONTENT_PATCHER_ID}"));
    }
    for field in ["Name", "Author", "UniqueID"] {
        if manifest[field].as_str().is_none_or(|s| s.trim().is_empty()) {
            problems.push(format!("manifest: {field} is missing"));
        }
    }

    let character = &content["Character"];
    if character["Name"].as_str().is_none_or(|s| s.trim().is_empty()) {
        problems.push("content: Character.Name is missing".into());
    }
    let text = |v: &Value| v.as_str().unwrap_or_default().to_owned();
    if text(&character["Birthday"]).parse::<Birthday>().is_err() {
        problems.push(format!("content: bad Birthday {}", character["Birthday"]));
    }
    if text(&character["Manner"]).parse::<Manner>().is_err() {
        problems.push(format!("content: bad Manner {}", character["Manner"]));
    }
    if text(&character["SocialAnxiety"]).parse::<SocialAnxiety>().is_err() {
        problems.push(format!("content: bad SocialAnxiety {}", character["SocialAnxiety"]));
    }
    if text(&character["Optimism"]).parse::<Optimism>().is_err() {
        problems.push(format!("content: bad Optimism {}", character["Optimism"]));
    }

    let mut referenced: Vec<String> = content["Files"]
        .as_object()
        .map(|f| f.values().map(text).collect())
        .unwrap_or_default();
    if let Some(changes) = content["Changes"].as_array() {
        referenced.extend(changes.iter().map(|c| text(&c["FromFile"])));
    }
    if referenced.is_empty() {
        problems.push("content: no file references".into());
    }
    for path in referenced {
        if !files.contains_key(&path) {
            problems.push(format!("content: {path:?} is not in the pack"));
        }
    }

    let tastes = &content["GiftTastes"];
    let list = |key: &str| string_list(&tastes[key]);
    match (list("Love"), list("Like"), list("Dislike"), list("Hate")) {
        (Some(love), Some(like), Some(dislike), Some(hate)) => {
            let prefs = GiftPreferences {
                love,
                like,
                dislike,
                hate,
            };
            if !prefs.is_disjoint() {
                problems.push("content: gift taste lists overlap".into());
            }
            if let Some(catalog) = catalog {
                for (_, items) in prefs.lists() {
                    for item in items.iter().filter(|i| !catalog.contains(*i)) {
                        problems.push(format!("content: gift item {item:?} is not in the catalog"));
                    }
                }
            }
        }
        _ => problems.push("content: GiftTastes needs Love, Like, Dislike and Hate lists".into()),
    }

    Ok(PackReport {
        config: validate_config(&raw_config_of(&schedules, &dialogues), whitelist),
        problems,
    })
}
