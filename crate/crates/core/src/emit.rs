//! Content-pack documents, assets and packaging.
//!
//! The exact layout is pinned in `docs/format.md`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::configgen::ConfigBundle;
use crate::grammar::format_route;
use crate::model::{CharacterExpansion, DailySchedule, DialogueSet, GiftDialogues, GiftPreferences};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONTENT_FILE: &str = "content.json";
pub const DIALOGUES_FILE: &str = "dialogues.json";
pub const SCHEDULES_FILE: &str = "schedules.json";
pub const PORTRAIT_FILE: &str = "portrait.png";
pub const SPRITE_FILE: &str = "sprite.png";

/// Every file of a pack, in archive order.
pub const PACK_FILES: [&str; 6] = [
    MANIFEST_FILE,
    CONTENT_FILE,
    DIALOGUES_FILE,
    SCHEDULES_FILE,
    PORTRAIT_FILE,
    SPRITE_FILE,
];

pub const CONTENT_PATCHER_ID: &str = "Pathoschild.ContentPatcher";
pub const DEFAULT_CONTENT_FORMAT: &str = "2.0.0";
pub const GIFT_DIALOGUES_KEY: &str = "giftDialogues";

pub const PORTRAIT_PNG: &[u8] = include_bytes!("../resources/portrait.png");
pub const SPRITE_PNG: &[u8] = include_bytes!("../resources/sprite.png");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmitError {
    #[error("version {0:?} is not MAJOR.MINOR.PATCH")]
    BadVersion(String),
    #[error("content refers to {0:?}, which is not part of the pack")]
    DanglingReference(String),
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("{path}: {detail}")]
    IoFailure { path: PathBuf, detail: String },
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> EmitError {
    EmitError::IoFailure {
        path: path.to_owned(),
        detail: e.to_string(),
    }
}

pub fn is_semver(version: &str) -> bool {
    let parts: Vec<&str> = version.split('.').collect();
    parts.len() == 3
        && parts.iter().all(|p| {
            !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()) && (p.len() == 1 || !p.starts_with('0'))
        })
}

fn id_part(s: &str) -> String {
    s.chars().filter(|c| c.is_ascii_alphanumeric()).collect()
}

/// Hands out pack identifiers `<author>.<Name>`, adding a numeric suffix
/// (`2`, `3`, ...) when the same author and name come up again.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UniqueIdAllocator {
    issued: HashMap<String, u32>,
}

impl UniqueIdAllocator {
    pub fn allocate(&mut self, author: &str, character: &str) -> String {
        let base = unique_id_base(author, character);
        let n = self.issued.entry(base.clone()).or_insert(0);
        *n += 1;
        if *n == 1 {
            base
        } else {
            format!("{base}{n}")
        }
    }
}

pub fn unique_id_base(author: &str, character: &str) -> String {
    let author = id_part(author);
    let character = id_part(character);
    format!(
        "{}.{}",
        if author.is_empty() { "npcsmith" } else { &author },
        if character.is_empty() { "Character" } else { &character }
    )
}

pub fn emit_manifest(
    name: &str,
    author: &str,
    description: &str,
    version: &str,
    unique_id: &str,
) -> Result<Value, EmitError> {
    if !is_semver(version) {
        return Err(EmitError::BadVersion(version.to_owned()));
    }
    if name.trim().is_empty() {
        return Err(EmitError::Empty("Name"));
    }
    Ok(json!({
        "Name": name,
        "Author": author,
        "Version": version,
        "Description": description,
        "UniqueID": unique_id,
        "UpdateKeys": [],
        "ContentPackFor": {"UniqueID": CONTENT_PATCHER_ID},
    }))
}

/// Relative paths the content document points at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetPaths {
    pub schedule: String,
    pub dialogue: String,
    pub portrait: String,
    pub sprite: String,
}

impl Default for AssetPaths {
    fn default() -> Self {
        Self {
            schedule: SCHEDULES_FILE.into(),
            dialogue: DIALOGUES_FILE.into(),
            portrait: PORTRAIT_FILE.into(),
            sprite: SPRITE_FILE.into(),
        }
    }
}

pub fn emit_content(
    expansion: &CharacterExpansion,
    gifts: &GiftPreferences,
    paths: &AssetPaths,
    content_format: &str,
) -> Result<Value, EmitError> {
    for path in [&paths.schedule, &paths.dialogue, &paths.portrait, &paths.sprite] {
        if !PACK_FILES[2..].contains(&path.as_str()) {
            return Err(EmitError::DanglingReference(path.clone()));
        }
    }
    let name = &expansion.name;
    let p = &expansion.personality;
    Ok(json!({
        "Format": content_format,
        "Character": {
            "Name": name,
            "Birthday": expansion.birthday.to_string(),
            "Gender": expansion.gender,
            "Manner": p.manners.as_str(),
            "SocialAnxiety": p.social_anxiety.as_str(),
            "Optimism": p.optimism.as_str(),
        },
        "Files": {
            "Schedule": paths.schedule,
            "Dialogue": paths.dialogue,
            "Portrait": paths.portrait,
            "Sprite": paths.sprite,
        },
        "GiftTastes": {
            "Love": gifts.love,
            "Like": gifts.like,
            "Dislike": gifts.dislike,
            "Hate": gifts.hate,
        },
        "Changes": [
            {"Action": "Load", "Target": format!("Characters/Dialogue/{name}"), "FromFile": paths.dialogue},
            {"Action": "Load", "Target": format!("Characters/schedules/{name}"), "FromFile": paths.schedule},
            {"Action": "Load", "Target": format!("Portraits/{name}"), "FromFile": paths.portrait},
            {"Action": "Load", "Target": format!("Characters/{name}"), "FromFile": paths.sprite},
        ],
    }))
}

pub fn emit_dialogues(dialogues: &DialogueSet, gifts: &GiftDialogues) -> Value {
    let mut doc: Map<String, Value> = dialogues
        .iter()
        .map(|(k, v)| (k.to_string(), Value::String(v.clone())))
        .collect();
    doc.insert(
        GIFT_DIALOGUES_KEY.into(),
        json!({
            "love": gifts.love,
            "like": gifts.like,
            "dislike": gifts.dislike,
            "hate": gifts.hate,
            "neutral": gifts.neutral,
        }),
    );
    Value::Object(doc)
}

pub fn emit_schedules(schedule: &DailySchedule) -> Value {
    Value::Object(
        schedule
            .iter()
            .map(|(day, entries)| (day.to_string(), Value::String(format_route(entries))))
            .collect(),
    )
}

/// Pretty-printed with two-space indent and a final newline.
pub fn render_document(doc: &Value) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("JSON values serialize");
    out.push(b'\n');
    out
}

mod base64_map {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(map: &BTreeMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        let engine = base64::engine::general_purpose::STANDARD;
        map.iter()
            .map(|(k, v)| (k, engine.encode(v)))
            .collect::<BTreeMap<_, _>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let engine = base64::engine::general_purpose::STANDARD;
        BTreeMap::<String, String>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                engine
                    .decode(v)
                    .map(|bytes| (k, bytes))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

/// A finished content pack held in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModPack {
    pub manifest: Value,
    pub content: Value,
    pub dialogues: Value,
    pub schedules: Value,
    #[serde(with = "base64_map")]
    pub assets: BTreeMap<String, Vec<u8>>,
}

/// Pack metadata the user controls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackOptions {
    pub author: String,
    pub version: String,
    pub content_format: String,
}

impl Default for PackOptions {
    fn default() -> Self {
        Self {
            author: "npcsmith".into(),
            version: "1.0.0".into(),
            content_format: DEFAULT_CONTENT_FORMAT.into(),
        }
    }
}

impl ModPack {
    pub fn build(
        expansion: &CharacterExpansion,
        bundle: &ConfigBundle,
        gifts: &GiftPreferences,
        options: &PackOptions,
        unique_id: &str,
    ) -> Result<Self, EmitError> {
        let description = if expansion.summary.trim().is_empty() {
            expansion.title.clone()
        } else {
            expansion.summary.clone()
        };
        let pack = Self {
            manifest: emit_manifest(
                &format!("{} NPC", expansion.name),
                &options.author,
                &description,
                &options.version,
                unique_id,
            )?,
            content: emit_content(expansion, gifts, &AssetPaths::default(), &options.content_format)?,
            dialogues: emit_dialogues(&bundle.dialogues, &bundle.gift_dialogues),
            schedules: emit_schedules(&bundle.schedule),
            assets: [
                (PORTRAIT_FILE.to_owned(), PORTRAIT_PNG.to_vec()),
                (SPRITE_FILE.to_owned(), SPRITE_PNG.to_vec()),
            ]
            .into(),
        };
        pack.validate()?;
        Ok(pack)
    }

    /// Every file name referenced from the content document.
    pub fn referenced_paths(&self) -> Vec<String> {
        let mut out: Vec<String> = self.content["Files"]
            .as_object()
            .map(|files| files.values().filter_map(Value::as_str).map(str::to_owned).collect())
            .unwrap_or_default();
        if let Some(changes) = self.content["Changes"].as_array() {
            out.extend(changes.iter().filter_map(|c| c["FromFile"].as_str()).map(str::to_owned));
        }
        out
    }

    pub fn validate(&self) -> Result<(), EmitError> {
        if self.assets.len() < 2 {
            return Err(EmitError::Empty("assets"));
        }
        for path in self.referenced_paths() {
            let resolves = [DIALOGUES_FILE, SCHEDULES_FILE].contains(&path.as_str()) || self.assets.contains_key(&path);
            if !resolves {
                return Err(EmitError::DanglingReference(path));
            }
        }
        Ok(())
    }

    pub fn character_name(&self) -> &str {
        self.content["Character"]["Name"].as_str().unwrap_or("Character")
    }

    /// File name and bytes of every file, in archive order.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = vec![
            (MANIFEST_FILE.to_owned(), render_document(&self.manifest)),
            (CONTENT_FILE.to_owned(), render_document(&self.content)),
            (DIALOGUES_FILE.to_owned(), render_document(&self.dialogues)),
            (SCHEDULES_FILE.to_owned(), render_document(&self.schedules)),
        ];
        out.extend(self.assets.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    /// Top-level folder name inside archives.
    pub fn folder_name(&self) -> String {
        let name: String = self
            .character_name()
            .chars()
            .filter(|c| c.is_alphanumeric() || *c == ' ' || *c == '-' || *c == '_')
            .collect();
        format!("[CP] {}", name.trim())
    }

    /// The pack as a zip archive. Equal packs give identical bytes.
    pub fn archive_bytes(&self) -> Result<Vec<u8>, EmitError> {
        use zip::write::SimpleFileOptions;
        let options = SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated)
            .last_modified_time(zip::DateTime::default())
            .unix_permissions(0o644);
        let folder = self.folder_name();
        let mut writer = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let fail = |e: &dyn std::fmt::Display| io_failure(Path::new("<archive>"), e);
        for (name, bytes) in self.files() {
            writer
                .start_file(format!("{folder}/{name}"), options)
                .map_err(|e| fail(&e))?;
            writer.write_all(&bytes).map_err(|e| fail(&e))?;
        }
        Ok(writer.finish().map_err(|e| fail(&e))?.into_inner())
    }
}

/// Where [`package_modpack`] writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PackageTarget {
    /// A directory holding the six files.
    Directory(PathBuf),
    /// A single zip file.
    Archive(PathBuf),
}

/// Writes the pack. Concurrent packaging into the same directory is
/// serialized by an exclusive lock on that directory.
pub fn package_modpack(pack: &ModPack, target: &PackageTarget) -> Result<PathBuf, EmitError> {
    pack.validate()?;
    match target {
        PackageTarget::Directory(dir) => {
            fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
            let handle = fs::File::open(dir).map_err(|e| io_failure(dir, e))?;
            handle.lock().map_err(|e| io_failure(dir, e))?;
            for (name, bytes) in pack.files() {
                let path = dir.join(&name);
                crate::llm::fixtures::write_atomic(&path, &bytes).map_err(|e| io_failure(&path, e))?;
            }
            handle.unlock().map_err(|e| io_failure(dir, e))?;
            Ok(dir.clone())
        }
        PackageTarget::Archive(path) => {
            let bytes = pack.archive_bytes()?;
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_failure(parent, e))?;
            }
            crate::llm::fixtures::write_atomic(path, &bytes).map_err(|e| io_failure(path, e))?;
            Ok(path.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn semver_syntax() {
        for ok in ["1.0.0", "0.10.3", "12.0.99"] {
            assert!(is_semver(ok), "{ok}");
        }
        for bad in ["1.0", "1.0.0.0", "01.0.0", "1.a.0", "", "1..0", "v1.0.0"] {
            assert!(!is_semver(bad), "{bad}");
        }
        assert_eq!(
            emit_manifest("x", "a", "d", "1.0", "a.X"),
            Err(EmitError::BadVersion("1.0".into()))
        );
    }

    #[test]
    fn manifest_fields() {
        let m = emit_manifest("Larry NPC", "starcharm", "A photographer.", "1.0.0", "starcharm.Larry").unwrap();
        assert_eq!(m["Version"], "1.0.0");
        assert_eq!(m["ContentPackFor"]["UniqueID"], CONTENT_PATCHER_ID);
        let keys: Vec<&str> = m.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["Name", "Author", "Version", "Description", "UniqueID", "UpdateKeys", "ContentPackFor"]
        );
    }

    #[test]
    fn unique_ids_get_suffixes() {
        let mut ids = UniqueIdAllocator::default();
        assert_eq!(ids.allocate("starcharm", "Larry"), "starcharm.Larry");
        assert_eq!(ids.allocate("starcharm", "Larry"), "starcharm.Larry2");
        assert_eq!(ids.allocate("star charm!", "Larry"), "starcharm.Larry3");
        assert_eq!(ids.allocate("starcharm", "Jake"), "starcharm.Jake");
    }

    #[test]
    fn documents_end_with_newline() {
        let bytes = render_document(&json!({"a": 1}));
        assert_eq!(bytes, b"{\n  \"a\": 1\n}\n");
    }
}
