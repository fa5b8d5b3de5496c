//! Record/replay of provider traffic.
//!
//! A fixture store is a directory with one file per request. The file name is
//! the hex SHA-256 of the canonical request, the content is the raw provider
//! reply. A `provider.json` beside them records the embedding fingerprint of
//! the provider the fixtures came from.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ChatRequest, Provider, ProviderError, ProviderHandle, ProviderResult};

const META_FILE: &str = "provider.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixtureMode {
    Record,
    Replay,
    Live,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("fixture store {0} does not exist")]
    MissingStore(PathBuf),
    #[error("provider credential missing: set {0}")]
    MissingCredential(&'static str),
    #[error("fixture store {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    fingerprint: String,
}

/// Canonical key for a chat request: only the two prompts take part, so
/// editing a template invalidates its fixtures.
pub fn chat_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_string(&("chat", &request.system_prompt, &request.user_prompt))
        .expect("strings serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn embed_key(texts: &[String]) -> String {
    let canonical = serde_json::to_string(&("embed", texts)).expect("strings serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// A directory of stored replies.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    dir: PathBuf,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(ConfigError::MissingStore(dir));
        }
        Ok(Self { dir })
    }

    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| ConfigError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, key: &str) -> Option<String> {
        fs::read_to_string(self.dir.join(key)).ok()
    }

    pub fn put(&self, key: &str, value: &str) -> std::io::Result<()> {
        write_atomic(&self.dir.join(key), value.as_bytes())
    }

    /// Request hashes currently stored.
    pub fn keys(&self) -> std::io::Result<Vec<String>> {
        let mut keys: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| name.len() == 64 && name.bytes().all(|b| b.is_ascii_hexdigit()))
            .collect();
        keys.sort();
        Ok(keys)
    }

    fn fingerprint(&self) -> Option<String> {
        let text = fs::read_to_string(self.dir.join(META_FILE)).ok()?;
        serde_json::from_str::<StoreMeta>(&text).ok().map(|m| m.fingerprint)
    }

    fn set_fingerprint(&self, fingerprint: &str) -> std::io::Result<()> {
        let meta = StoreMeta {
            fingerprint: fingerprint.to_owned(),
        };
        let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        text.push('\n');
        write_atomic(&self.dir.join(META_FILE), text.as_bytes())
    }
}

/// Writes through a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile_in(dir, path)?;
    tmp.1.write_all(bytes)?;
    tmp.1.sync_all()?;
    drop(tmp.1);
    fs::rename(&tmp.0, path)
}

fn tempfile_in(dir: &Path, target: &Path) -> std::io::Result<(PathBuf, fs::File)> {
    let stem = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for n in 0..1000u32 {
        let candidate = dir.join(format!(".{stem}.{}.{n}.tmp", std::process::id()));
        match fs::OpenOptions::new().write(true).create_new(true).open(&candidate) {
            Ok(file) => return Ok((candidate, file)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    Err(std::io::Error::other("could not create a temporary file"))
}

/// Passes requests to a live provider and stores every successful reply.
pub struct Recorder {
    inner: ProviderHandle,
    store: FixtureStore,
}

impl Recorder {
    pub fn new(inner: ProviderHandle, store: FixtureStore) -> Result<Self, ConfigError> {
        store
            .set_fingerprint(&inner.fingerprint())
            .map_err(|source| ConfigError::Io {
                path: store.dir.clone(),
                source,
            })?;
        Ok(Self { inner, store })
    }

    fn persist(&self, key: &str, value: &str) {
        if let Err(e) = self.store.put(key, value) {
            log::warn!("could not record fixture {key}: {e}");
        }
    }
}

impl Provider for Recorder {
    fn chat(&self, request: &ChatRequest) -> ProviderResult {
        let reply = self.inner.chat(request)?;
        self.persist(&chat_key(request), &reply);
        Ok(reply)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let vectors = self.inner.embed(texts)?;
        let text = serde_json::to_string(&vectors).expect("vectors serialize");
        self.persist(&embed_key(texts), &text);
        Ok(vectors)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

/// Serves stored replies and fails on anything not recorded.
pub struct Replayer {
    store: FixtureStore,
    fingerprint: String,
}

impl Replayer {
    pub fn new(store: FixtureStore) -> Self {
        let fingerprint = store.fingerprint().unwrap_or_else(|| "replay".into());
        Self { store, fingerprint }
    }
}

impl Provider for Replayer {
    fn chat(&self, request: &ChatRequest) -> ProviderResult {
        let key = chat_key(request);
        self.store.get(&key).ok_or(ProviderError::FixtureMiss(key))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let key = embed_key(texts);
        let text = self
            .store
            .get(&key)
            .ok_or_else(|| ProviderError::FixtureMiss(key.clone()))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::FixtureMiss(format!("{key} (unreadable: {e})")))
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Builds the provider handle for a run. `live` is only invoked for Record
/// and Live modes, so Replay never needs a credential.
pub fn record_replay(
    mode: FixtureMode,
    store: Option<&Path>,
    live: impl FnOnce() -> Result<ProviderHandle, ConfigError>,
) -> Result<ProviderHandle, ConfigError> {
    match mode {
        FixtureMode::Live => live(),
        FixtureMode::Replay => {
            let dir = store.ok_or_else(|| ConfigError::Invalid("replay mode needs a fixture directory".into()))?;
            Ok(std::sync::Arc::new(Replayer::new(FixtureStore::open(dir)?)))
        }
        FixtureMode::Record => {
            let dir = store.ok_or_else(|| ConfigError::Invalid("record mode needs a fixture directory".into()))?;
            let inner = live()?;
            let store = FixtureStore::create(dir)?;
            Ok(std::sync::Arc::new(Recorder::new(inner, store)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::embedders::LetterBag;
    use crate::llm::scripted::ScriptedProvider;
    use std::sync::Arc;

    #[test]
    fn record_then_replay_returns_the_same_reply() {
        let dir = tempfile::tempdir().unwrap();
        let live: ProviderHandle = Arc::new(ScriptedProvider::new(vec![Ok("{\"a\":1}".into())]));
        let recorder = record_replay(FixtureMode::Record, Some(dir.path()), || Ok(live)).unwrap();
        let req = ChatRequest::new("describe Larry");
        let recorded = recorder.chat(&req).unwrap();
        let texts = vec!["tea".to_string()];
        let vectors = recorder.embed(&texts).unwrap();

        let replayer = record_replay(FixtureMode::Replay, Some(dir.path()), || unreachable!()).unwrap();
        assert_eq!(replayer.chat(&req).unwrap(), recorded);
        assert_eq!(replayer.embed(&texts).unwrap(), vectors);
        assert_eq!(replayer.fingerprint(), LetterBag.fingerprint());
        let stored = fs::read_to_string(dir.path().join(chat_key(&req))).unwrap();
        assert_eq!(stored, recorded);
    }

    #[test]
    fn replay_miss_is_loud() {
        let dir = tempfile::tempdir().unwrap();
        let replayer = record_replay(FixtureMode::Replay, Some(dir.path()), || unreachable!()).unwrap();
        let req = ChatRequest::new("never recorded");
        assert_eq!(replayer.chat(&req), Err(ProviderError::FixtureMiss(chat_key(&req))));
    }

    #[test]
    fn replay_needs_an_existing_store() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(
            record_replay(FixtureMode::Replay, Some(&missing), || unreachable!()),
            Err(ConfigError::MissingStore(_))
        ));
    }

    #[test]
    fn record_without_credential_fails_at_construction() {
        let dir = tempfile::tempdir().unwrap();
        let result = record_replay(FixtureMode::Record, Some(dir.path()), || {
            Err(ConfigError::MissingCredential("NPCSMITH_API_KEY"))
        });
        assert!(matches!(result, Err(ConfigError::MissingCredential(_))));
    }

    #[test]
    fn failed_calls_are_not_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let live: ProviderHandle = Arc::new(ScriptedProvider::new(vec![]));
        let recorder = record_replay(FixtureMode::Record, Some(dir.path()), || Ok(live)).unwrap();
        assert!(recorder.chat(&ChatRequest::new("x")).is_err());
        assert!(FixtureStore::open(dir.path()).unwrap().keys().unwrap().is_empty());
    }

    #[test]
    fn key_depends_on_both_prompts_only() {
        let a = ChatRequest::new("p");
        let mut b = a.clone();
        b.temperature_hint = Some(0.3);
        assert_eq!(chat_key(&a), chat_key(&b));
        b.system_prompt.push('!');
        assert_ne!(chat_key(&a), chat_key(&b));
    }
}
