//! In-process providers with scripted replies, for tests and fixture
//! authoring.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::embedders::LetterBag;
use super::{ChatRequest, Provider, ProviderError, ProviderHandle, ProviderResult};

/// Replays a fixed queue of chat results in order, then reports connection
/// errors once the queue is empty. Embeddings are delegated.
pub struct ScriptedProvider {
    script: Mutex<VecDeque<ProviderResult>>,
    embedder: ProviderHandle,
    chat_calls: AtomicUsize,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<ProviderResult>) -> Self {
        Self::with_embedder(script, Arc::new(LetterBag))
    }

    pub fn with_embedder(script: Vec<ProviderResult>, embedder: ProviderHandle) -> Self {
        Self {
            script: Mutex::new(script.into()),
            embedder,
            chat_calls: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn chat(&self, request: &ChatRequest) -> ProviderResult {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.requests.lock().unwrap().push(request.clone());
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Connection("script exhausted".into())))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.embedder.embed(texts)
    }

    fn fingerprint(&self) -> String {
        self.embedder.fingerprint()
    }
}

/// Which pipeline prompt a request carries, judged from its text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Highlights,
    Augment,
    Birthday,
    Expansion,
    TraitFix,
    Config,
    Other,
}

impl PromptKind {
    pub fn of(request: &ChatRequest) -> Self {
        let p = &request.user_prompt;
        if p.starts_with("You are creating a character") {
            PromptKind::Highlights
        } else if p.starts_with("Here is the beginning of a description") {
            PromptKind::Augment
        } else if p.contains("needs a birthday") {
            PromptKind::Birthday
        } else if p.starts_with("Expand the following character description") {
            PromptKind::Expansion
        } else if p.contains("has an invalid value") {
            PromptKind::TraitFix
        } else if p.starts_with("I want to extract the characteristics") {
            PromptKind::Config
        } else {
            PromptKind::Other
        }
    }
}

type Responder = dyn Fn(PromptKind, &ChatRequest) -> ProviderResult + Send + Sync;

/// Answers each request with a function of its prompt kind. Counts calls
/// per kind.
pub struct FnProvider {
    respond: Box<Responder>,
    embedder: ProviderHandle,
    calls: Mutex<Vec<PromptKind>>,
}

impl FnProvider {
    pub fn new(
        embedder: ProviderHandle,
        respond: impl Fn(PromptKind, &ChatRequest) -> ProviderResult + Send + Sync + 'static,
    ) -> Self {
        Self {
            respond: Box::new(respond),
            embedder,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<PromptKind> {
        self.calls.lock().unwrap().clone()
    }

    pub fn count(&self, kind: PromptKind) -> usize {
        self.calls.lock().unwrap().iter().filter(|k| **k == kind).count()
    }
}

impl Provider for FnProvider {
    fn chat(&self, request: &ChatRequest) -> ProviderResult {
        let kind = PromptKind::of(request);
        self.calls.lock().unwrap().push(kind);
        (self.respond)(kind, request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.embedder.embed(texts)
    }

    fn fingerprint(&self) -> String {
        self.embedder.fingerprint()
    }
}

/// Hand-written replies for one character, keyed by prompt kind. Used to
/// author fixture stores without a live model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuthoredScript {
    pub description: String,
    pub replies: AuthoredReplies,
}

/// A reply is either a JSON value, sent pretty-printed, or a string sent
/// verbatim.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct AuthoredReplies {
    pub highlights: serde_json::Value,
    #[serde(default)]
    pub augment: Option<serde_json::Value>,
    #[serde(default)]
    pub regenerated_highlights: Option<serde_json::Value>,
    #[serde(default)]
    pub birthday_repair: Option<serde_json::Value>,
    pub expansion: serde_json::Value,
    #[serde(default)]
    pub trait_fix: Option<serde_json::Value>,
    pub config: serde_json::Value,
}

fn reply_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => serde_json::to_string_pretty(other).expect("values serialize"),
    }
}

impl AuthoredScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// A provider answering from this script. Highlight prompts that carry
    /// the augmentation details get the regenerated cards.
    pub fn provider(&self, embedder: ProviderHandle) -> FnProvider {
        self.build(embedder, false)
    }

    /// Like [`Self::provider`], but every highlight reply gets a fresh take
    /// number appended to each card title, so regenerated cards always
    /// differ from the ones they replace.
    pub fn varying_provider(&self, embedder: ProviderHandle) -> FnProvider {
        self.build(embedder, true)
    }

    fn build(&self, embedder: ProviderHandle, vary: bool) -> FnProvider {
        let replies = self.replies.clone();
        let details = replies
            .augment
            .as_ref()
            .and_then(|a| a.get("details"))
            .and_then(|d| d.as_str())
            .map(str::to_owned);
        let takes = AtomicUsize::new(0);
        FnProvider::new(embedder, move |kind, request| {
            let missing = |what: &str| Err(ProviderError::Refusal(format!("script has no {what} reply")));
            let pick = |v: &Option<serde_json::Value>, what: &str| v.as_ref().map(reply_text).map_or_else(|| missing(what), Ok);
            match kind {
                PromptKind::Highlights => {
                    let cards = match (&details, &replies.regenerated_highlights) {
                        (Some(d), Some(r)) if request.user_prompt.contains(d.as_str()) => r,
                        _ => &replies.highlights,
                    };
                    if !vary {
                        return Ok(reply_text(cards));
                    }
                    let take = takes.fetch_add(1, Ordering::SeqCst) + 1;
                    let mut cards = match cards {
                        serde_json::Value::String(s) => super::coerce_structured(s).unwrap_or_default(),
                        other => other.clone(),
                    };
                    if let Some(items) = cards.as_array_mut() {
                        for card in items.iter_mut().filter_map(|c| c.as_object_mut()) {
                            let title = card.get("title").and_then(|t| t.as_str()).unwrap_or_default();
                            let title = format!("{title} (take {take})");
                            card.insert("title".into(), title.into());
                        }
                    }
                    Ok(reply_text(&cards))
                }
                PromptKind::Augment => pick(&replies.augment, "augment"),
                PromptKind::Birthday => pick(&replies.birthday_repair, "birthday"),
                PromptKind::Expansion => Ok(reply_text(&replies.expansion)),
                PromptKind::TraitFix => pick(&replies.trait_fix, "trait fix"),
                PromptKind::Config => Ok(reply_text(&replies.config)),
                PromptKind::Other => missing("matching"),
            }
        })
    }
}
