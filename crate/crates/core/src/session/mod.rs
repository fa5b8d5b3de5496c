//! Wizard sessions: the stage state machine, pinning, edits, history and
//! persistence.

mod store;

pub use store::{AtomicFileWriter, Snapshot, SnapshotStore, SnapshotWriter, StoreError, SNAPSHOT_VERSION};

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emit::{EmitError, UniqueIdAllocator};
use crate::expansion::{apply_trait_edit, expand_highlight, EditError};
use crate::highlight::{generate_highlights, regenerate_highlight, HIGHLIGHT_COUNT};
use crate::llm::Gateway;
use crate::model::{CharacterDescription, CharacterExpansion, Highlight, ModelError};
use crate::pipeline::{finalize_character, Finalized, PipelineError, Resources};

/// Idle sessions older than this are dropped.
pub const DEFAULT_TTL_DAYS: i64 = 7;

/// Back-navigation keeps at most this many cleared states.
const HISTORY_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionStage {
    Describe,
    Highlights,
    Expansion,
    Generated,
}

impl fmt::Display for SessionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for SessionStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Self::Describe, Self::Highlights, Self::Expansion, Self::Generated]
            .into_iter()
            .find(|st| st.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Artifacts cleared by a backward jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryEntry {
    pub left: SessionStage,
    pub description: CharacterDescription,
    pub highlights: Vec<Highlight>,
    pub expansion: Option<CharacterExpansion>,
    pub finalized: Option<Finalized>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionState {
    pub id: String,
    pub stage: SessionStage,
    pub description: CharacterDescription,
    pub highlights: Vec<Highlight>,
    pub pinned: BTreeSet<usize>,
    pub selected: Option<usize>,
    pub expansion: Option<CharacterExpansion>,
    pub finalized: Option<Finalized>,
    pub unique_id: Option<String>,
    pub history: Vec<HistoryEntry>,
    pub updated_at: DateTime<Utc>,
}

impl SessionState {
    fn new(id: String, description: CharacterDescription, now: DateTime<Utc>) -> Self {
        Self {
            id,
            stage: SessionStage::Describe,
            description,
            highlights: Vec::new(),
            pinned: BTreeSet::new(),
            selected: None,
            expansion: None,
            finalized: None,
            unique_id: None,
            history: Vec::new(),
            updated_at: now,
        }
    }

    /// Checks that the fields agree with the stage.
    pub fn check_invariants(&self) -> Result<(), String> {
        use SessionStage::*;
        let has_cards = self.highlights.len() == HIGHLIGHT_COUNT;
        if self.pinned.iter().any(|s| *s >= HIGHLIGHT_COUNT) {
            return Err("pinned slot out of range".into());
        }
        if !self.highlights.is_empty() && !has_cards {
            return Err(format!("{} highlight cards", self.highlights.len()));
        }
        if self.stage == Describe && (has_cards || !self.pinned.is_empty()) {
            return Err("Describe stage holds highlights".into());
        }
        if self.stage >= Highlights && !has_cards {
            return Err("highlights missing".into());
        }
        if (self.stage >= Expansion) != self.expansion.is_some() {
            return Err("expansion does not match stage".into());
        }
        if (self.stage >= Expansion) != self.selected.is_some() {
            return Err("selection does not match stage".into());
        }
        if (self.stage == Generated) != self.finalized.is_some() {
            return Err("pack does not match stage".into());
        }
        if let Some(e) = &self.expansion {
            e.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn push_history(&mut self, entry: HistoryEntry) {
        self.history.push(entry);
        if self.history.len() > HISTORY_LIMIT {
            self.history.remove(0);
        }
    }
}

/// One state-machine step.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Describe(String),
    Pin(usize),
    Unpin(usize),
    Regenerate(usize),
    RegenerateAll,
    Select(usize),
    Edit { path: String, value: String },
    Finalize,
    Back(SessionStage),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Describe(_) => "describe",
            Op::Pin(_) => "pin",
            Op::Unpin(_) => "unpin",
            Op::Regenerate(_) => "regenerate",
            Op::RegenerateAll => "regenerate-all",
            Op::Select(_) => "select",
            Op::Edit { .. } => "edit",
            Op::Finalize => "finalize",
            Op::Back(_) => "back",
        }
    }

    /// Whether the op calls the model and may take seconds.
    pub fn is_long(&self) -> bool {
        matches!(
            self,
            Op::Describe(_) | Op::Regenerate(_) | Op::RegenerateAll | Op::Select(_) | Op::Finalize
        )
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no session {0}")]
    NotFound(String),
    #[error(transparent)]
    Description(#[from] ModelError),
    #[error("{op} is not allowed at stage {stage}")]
    WrongStage { op: &'static str, stage: SessionStage },
    #[error("slot {0} is out of range")]
    BadSlot(usize),
    #[error("slot {0} is pinned")]
    PinnedSlot(usize),
    #[error("cannot go from {from} to {to}")]
    WrongDirection { from: SessionStage, to: SessionStage },
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("session {0} is busy")]
    Busy(String),
    #[error("session is not finished")]
    NotGenerated,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Emit(#[from] EmitError),
}

/// Time source, replaceable in tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionStatus {
    pub stage: SessionStage,
    pub busy: bool,
    pub last_error: Option<String>,
}

#[derive(Debug)]
struct SessionCell {
    state: RwLock<SessionState>,
    busy: AtomicBool,
    last_error: Mutex<Option<String>>,
}

impl SessionCell {
    fn new(state: SessionState) -> Self {
        Self {
            state: RwLock::new(state),
            busy: AtomicBool::new(false),
            last_error: Mutex::new(None),
        }
    }

    fn read(&self) -> SessionState {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn set_error(&self, e: Option<String>) {
        *self.last_error.lock().unwrap_or_else(|e| e.into_inner()) = e;
    }
}

/// Exclusive right to mutate one session. Dropping it frees the session.
#[derive(Debug)]
pub struct Reservation {
    id: String,
    cell: Arc<SessionCell>,
}

impl Reservation {
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl Drop for Reservation {
    fn drop(&mut self) {
        self.cell.busy.store(false, Ordering::Release);
    }
}

/// All sessions of one process.
pub struct SessionService {
    sessions: RwLock<HashMap<String, Arc<SessionCell>>>,
    gateway: Gateway,
    resources: Arc<Resources>,
    unique_ids: Mutex<UniqueIdAllocator>,
    clock: Arc<dyn Clock>,
    store: Option<SnapshotStore>,
    store_lock: Mutex<()>,
    ttl: Duration,
}

impl fmt::Debug for SessionService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionService")
            .field("sessions", &self.len())
            .field("store", &self.store)
            .finish()
    }
}

impl SessionService {
    pub fn new(gateway: Gateway, resources: Arc<Resources>) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            gateway,
            resources,
            unique_ids: Mutex::new(UniqueIdAllocator::default()),
            clock: Arc::new(SystemClock),
            store: None,
            store_lock: Mutex::new(()),
            ttl: Duration::days(DEFAULT_TTL_DAYS),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ttl(mut self, ttl: std::time::Duration) -> Self {
        self.ttl = Duration::from_std(ttl).unwrap_or(Duration::MAX);
        self
    }

    /// Attaches a store and loads the sessions it holds, dropping expired
    /// ones.
    pub fn with_store(mut self, store: SnapshotStore) -> Result<Self, StoreError> {
        let snapshot = store.load()?;
        let now = self.clock.now();
        {
            let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
            for s in snapshot.sessions {
                if now - s.updated_at <= self.ttl {
                    sessions.insert(s.id.clone(), Arc::new(SessionCell::new(s)));
                }
            }
        }
        self.unique_ids = Mutex::new(snapshot.unique_ids);
        self.store = Some(store);
        Ok(self)
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cell(&self, id: &str) -> Result<Arc<SessionCell>, SessionError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_owned()))
    }

    pub fn get(&self, id: &str) -> Result<SessionState, SessionError> {
        Ok(self.cell(id)?.read())
    }

    pub fn status(&self, id: &str) -> Result<SessionStatus, SessionError> {
        let cell = self.cell(id)?;
        let stage = cell.read().stage;
        let last_error = cell.last_error.lock().unwrap_or_else(|e| e.into_inner()).clone();
        Ok(SessionStatus {
            stage,
            busy: cell.busy.load(Ordering::Acquire),
            last_error,
        })
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Creates a session at the Describe stage. Nothing is stored when the
    /// description is invalid.
    pub fn open(&self, text: &str) -> Result<SessionState, SessionError> {
        let description = CharacterDescription::new(text)?;
        self.expire_idle();
        let id = uuid::Uuid::new_v4().simple().to_string();
        let state = SessionState::new(id.clone(), description, self.clock.now());
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(SessionCell::new(state.clone())));
        self.persist();
        Ok(state)
    }

    /// Opens a session and generates its highlight cards. A session whose
    /// cards could not be generated is discarded.
    pub fn create(&self, text: &str) -> Result<SessionState, SessionError> {
        let opened = self.open(text)?;
        let result = self.run(&opened.id, Op::Describe(text.to_owned()));
        if result.is_err() {
            self.remove(&opened.id);
        }
        result
    }

    pub fn remove(&self, id: &str) -> bool {
        let removed = self
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(id)
            .is_some();
        if removed {
            self.persist();
        }
        removed
    }

    /// Claims a session for one mutation, failing with `Busy` while another
    /// one is running.
    pub fn reserve(&self, id: &str) -> Result<Reservation, SessionError> {
        let cell = self.cell(id)?;
        cell.busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| SessionError::Busy(id.to_owned()))?;
        cell.set_error(None);
        Ok(Reservation {
            id: id.to_owned(),
            cell,
        })
    }

    /// Reserves the session and applies `op`.
    pub fn run(&self, id: &str, op: Op) -> Result<SessionState, SessionError> {
        let reservation = self.reserve(id)?;
        self.apply(reservation, op)
    }

    /// Applies `op` under a reservation obtained from [`Self::reserve`].
    pub fn apply(&self, reservation: Reservation, op: Op) -> Result<SessionState, SessionError> {
        let current = reservation.cell.read();
        match self.transition(&current, op) {
            Ok(mut next) => {
                next.updated_at = self.clock.now();
                debug_assert_eq!(next.check_invariants(), Ok(()));
                *reservation.cell.state.write().unwrap_or_else(|e| e.into_inner()) = next.clone();
                drop(reservation);
                self.persist();
                Ok(next)
            }
            Err(e) => {
                reservation.cell.set_error(Some(e.to_string()));
                Err(e)
            }
        }
    }

    pub fn pin(&self, id: &str, slot: usize) -> Result<SessionState, SessionError> {
        self.run(id, Op::Pin(slot))
    }

    pub fn unpin(&self, id: &str, slot: usize) -> Result<SessionState, SessionError> {
        self.run(id, Op::Unpin(slot))
    }

    pub fn regenerate(&self, id: &str, slot: usize) -> Result<SessionState, SessionError> {
        self.run(id, Op::Regenerate(slot))
    }

    pub fn regenerate_all(&self, id: &str) -> Result<SessionState, SessionError> {
        self.run(id, Op::RegenerateAll)
    }

    pub fn select(&self, id: &str, slot: usize) -> Result<SessionState, SessionError> {
        self.run(id, Op::Select(slot))
    }

    pub fn edit(&self, id: &str, path: &str, value: &str) -> Result<SessionState, SessionError> {
        self.run(
            id,
            Op::Edit {
                path: path.to_owned(),
                value: value.to_owned(),
            },
        )
    }

    pub fn finalize(&self, id: &str) -> Result<SessionState, SessionError> {
        self.run(id, Op::Finalize)
    }

    pub fn go_back(&self, id: &str, target: SessionStage) -> Result<SessionState, SessionError> {
        self.run(id, Op::Back(target))
    }

    /// The pack of a finished session as a zip archive.
    pub fn download(&self, id: &str) -> Result<(String, Vec<u8>), SessionError> {
        let state = self.get(id)?;
        let finalized = state.finalized.as_ref().ok_or(SessionError::NotGenerated)?;
        let name = format!("{}.zip", finalized.pack.folder_name());
        Ok((name, finalized.pack.archive_bytes()?))
    }

    fn transition(&self, s: &SessionState, op: Op) -> Result<SessionState, SessionError> {
        use SessionStage::*;
        let wrong = |op: &Op| SessionError::WrongStage {
            op: op.name(),
            stage: s.stage,
        };
        let slot_ok = |slot: usize| {
            if slot < HIGHLIGHT_COUNT {
                Ok(slot)
            } else {
                Err(SessionError::BadSlot(slot))
            }
        };
        let required = match &op {
            Op::Describe(_) => Describe,
            Op::Pin(_) | Op::Unpin(_) | Op::Regenerate(_) | Op::RegenerateAll | Op::Select(_) => Highlights,
            Op::Edit { .. } | Op::Finalize => Expansion,
            Op::Back(_) => s.stage,
        };
        if s.stage != required {
            return Err(wrong(&op));
        }
        let mut next = s.clone();
        match op {
            Op::Describe(text) => {
                let description = CharacterDescription::new(&text)?;
                next.highlights = generate_highlights(&description, &self.gateway).map_err(PipelineError::from)?;
                next.description = description;
                next.pinned.clear();
                next.stage = Highlights;
            }
            Op::Pin(slot) => {
                next.pinned.insert(slot_ok(slot)?);
            }
            Op::Unpin(slot) => {
                next.pinned.remove(&slot_ok(slot)?);
            }
            Op::Regenerate(slot) => {
                let slot = slot_ok(slot)?;
                if s.pinned.contains(&slot) {
                    return Err(SessionError::PinnedSlot(slot));
                }
                next.highlights[slot] =
                    regenerate_highlight(&s.description, slot, &self.gateway).map_err(PipelineError::from)?;
            }
            Op::RegenerateAll => {
                for slot in (0..HIGHLIGHT_COUNT).filter(|i| !s.pinned.contains(i)) {
                    next.highlights[slot] =
                        regenerate_highlight(&s.description, slot, &self.gateway).map_err(PipelineError::from)?;
                }
            }
            Op::Select(slot) => {
                let slot = slot_ok(slot)?;
                let expansion = expand_highlight(&s.highlights[slot], &self.gateway).map_err(PipelineError::from)?;
                next.expansion = Some(expansion);
                next.selected = Some(slot);
                next.stage = Expansion;
            }
            Op::Edit { path, value } => {
                let current = s.expansion.as_ref().expect("Expansion stage has an expansion");
                next.expansion = Some(apply_trait_edit(current, &path, &value)?);
            }
            Op::Finalize => {
                let expansion = s.expansion.as_ref().expect("Expansion stage has an expansion");
                let unique_id = s.unique_id.clone().unwrap_or_else(|| {
                    self.unique_ids
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .allocate(&self.resources.pack.author, &expansion.name)
                });
                next.finalized = Some(finalize_character(expansion, &self.gateway, &self.resources, &unique_id)?);
                next.unique_id = Some(unique_id);
                next.stage = Generated;
            }
            Op::Back(target) => {
                if target >= s.stage {
                    return Err(SessionError::WrongDirection { from: s.stage, to: target });
                }
                next.push_history(HistoryEntry {
                    left: s.stage,
                    description: s.description.clone(),
                    highlights: if target == Describe { s.highlights.clone() } else { Vec::new() },
                    expansion: if target < Expansion { s.expansion.clone() } else { None },
                    finalized: s.finalized.clone(),
                });
                next.finalized = None;
                if target < Expansion {
                    next.expansion = None;
                    next.selected = None;
                }
                if target == Describe {
                    next.highlights.clear();
                    next.pinned.clear();
                }
                next.stage = target;
            }
        }
        Ok(next)
    }

    /// Drops sessions idle for longer than the TTL.
    pub fn expire_idle(&self) -> usize {
        let now = self.clock.now();
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let before = sessions.len();
        sessions.retain(|_, cell| {
            cell.busy.load(Ordering::Acquire) || now - cell.read().updated_at <= self.ttl
        });
        before - sessions.len()
    }

    /// Writes every session to the store, if one is attached.
    pub fn snapshot(&self) -> Result<(), StoreError> {
        let Some(store) = &self.store else {
            return Ok(());
        };
        let _guard = self.store_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut sessions: Vec<SessionState> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .map(|c| c.read())
            .collect();
        sessions.sort_by(|a, b| a.id.cmp(&b.id));
        let unique_ids = self.unique_ids.lock().unwrap_or_else(|e| e.into_inner()).clone();
        store.save(&Snapshot { sessions, unique_ids })
    }

    fn persist(&self) {
        if let Err(e) = self.snapshot() {
            log::error!("could not write session snapshot: {e}");
        }
    }
}
