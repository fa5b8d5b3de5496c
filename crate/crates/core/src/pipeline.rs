//! The full chain, description to pack, shared by the CLI and the session
//! service.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configgen::{generate_config, ConfigBundle};
use crate::emit::{EmitError, ModPack, PackOptions};
use crate::expansion::{expand_highlight, ExpansionError};
use crate::gifts::{bundled_item_names, match_gifts, GiftError, ItemCatalog};
use crate::grammar::Whitelist;
use crate::highlight::generate_highlights;
use crate::llm::{Gateway, GatewayError, ProviderError};
use crate::model::{CharacterDescription, CharacterExpansion, GiftPreferences, Highlight, Lint, ModelError};
use crate::stage::{Stage, StageFailure};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Description(#[from] ModelError),
    #[error("no highlight card in slot {0}")]
    BadSlot(usize),
    #[error(transparent)]
    Stage(#[from] StageFailure),
    #[error("expansion stage failed: {field}: value {value:?} is not one of {allowed}")]
    Trait {
        field: &'static str,
        value: String,
        allowed: String,
    },
    #[error("gifts stage failed: {0}")]
    Gifts(GiftError),
    #[error("emit failed: {0}")]
    Emit(#[from] EmitError),
}

impl From<ExpansionError> for PipelineError {
    fn from(e: ExpansionError) -> Self {
        match e {
            ExpansionError::Stage(s) => PipelineError::Stage(s),
            ExpansionError::EnumOutOfRange { field, value, allowed } => PipelineError::Trait { field, value, allowed },
        }
    }
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage(s) => Some(s.stage),
            PipelineError::Trait { .. } => Some(Stage::Expansion),
            PipelineError::Gifts(_) => Some(Stage::Gifts),
            _ => None,
        }
    }

    /// True when the failure comes from the environment (missing fixtures,
    /// unreachable provider) rather than from the content.
    pub fn is_environmental(&self) -> bool {
        let gateway = match self {
            PipelineError::Stage(s) => &s.cause,
            PipelineError::Gifts(GiftError::Gateway(g)) => g,
            _ => return false,
        };
        match gateway {
            GatewayError::Provider(ProviderError::FixtureMiss(_)) => true,
            GatewayError::ExhaustedRetries { last_error, .. } => last_error.starts_with("connection error"),
            _ => false,
        }
    }
}

/// Static inputs of a run: the stop whitelist, item catalog and pack
/// metadata. Catalog embeddings are computed once per embedding provider.
pub struct Resources {
    pub whitelist: Whitelist,
    pub item_names: Vec<String>,
    pub pack: PackOptions,
    /// Directory for embedding cache files, if any.
    pub cache_dir: Option<PathBuf>,
    catalogs: Mutex<HashMap<String, Arc<ItemCatalog>>>,
}

impl std::fmt::Debug for Resources {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Resources")
            .field("whitelist", &self.whitelist.len())
            .field("items", &self.item_names.len())
            .field("pack", &self.pack)
            .finish()
    }
}

impl Default for Resources {
    fn default() -> Self {
        Self::new(Whitelist::bundled(), bundled_item_names())
    }
}

impl Resources {
    pub fn new(whitelist: Whitelist, item_names: Vec<String>) -> Self {
        Self {
            whitelist,
            item_names,
            pack: PackOptions::default(),
            cache_dir: None,
            catalogs: Mutex::new(HashMap::new()),
        }
    }

    pub fn catalog(&self, gateway: &Gateway) -> Result<Arc<ItemCatalog>, GiftError> {
        let fingerprint = gateway.fingerprint();
        let mut catalogs = self.catalogs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(c) = catalogs.get(&fingerprint) {
            return Ok(c.clone());
        }
        let names = self.item_names.clone();
        let catalog = match &self.cache_dir {
            Some(dir) => {
                let file: String = fingerprint
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
                    .collect();
                ItemCatalog::load_or_embed(names, gateway, &dir.join(format!("items-{file}.emb")))?
            }
            None => ItemCatalog::embed(names, gateway)?,
        };
        let catalog = Arc::new(catalog);
        catalogs.insert(fingerprint, catalog.clone());
        Ok(catalog)
    }
}

/// Output of the last two stages and the emitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalized {
    pub bundle: ConfigBundle,
    pub gifts: GiftPreferences,
    pub pack: ModPack,
    /// Non-fatal findings worth showing to the user.
    pub notices: Vec<Lint>,
}

/// Config generation, gift matching and emission for an expansion.
pub fn finalize_character(
    expansion: &CharacterExpansion,
    gateway: &Gateway,
    resources: &Resources,
    unique_id: &str,
) -> Result<Finalized, PipelineError> {
    let bundle = generate_config(expansion, &resources.whitelist, gateway)?;
    let mut notices = bundle.lints();
    let catalog = resources.catalog(gateway).map_err(PipelineError::Gifts)?;
    let gifts = match match_gifts(&expansion.personality, &catalog, gateway) {
        Ok(g) => g,
        Err(GiftError::EmptyKeywordSet) => {
            notices.push(Lint {
                location: "personality".into(),
                message: GiftError::EmptyKeywordSet.to_string(),
            });
            GiftPreferences::default()
        }
        Err(e) => return Err(PipelineError::Gifts(e)),
    };
    let pack = ModPack::build(expansion, &bundle, &gifts, &resources.pack, unique_id)?;
    Ok(Finalized {
        bundle,
        gifts,
        pack,
        notices,
    })
}

/// Everything a headless run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub highlights: Vec<Highlight>,
    pub selected: usize,
    pub expansion: CharacterExpansion,
    pub finalized: Finalized,
}

/// Runs every stage without user interaction, expanding card `select`.
pub fn run_pipeline(
    description: &str,
    select: usize,
    gateway: &Gateway,
    resources: &Resources,
    unique_id: Option<&str>,
) -> Result<PipelineRun, PipelineError> {
    let description = CharacterDescription::new(description)?;
    let highlights = generate_highlights(&description, gateway)?;
    let card = highlights.get(select).ok_or(PipelineError::BadSlot(select))?;
    let expansion = expand_highlight(card, gateway)?;
    let id = unique_id
        .map(str::to_owned)
        .unwrap_or_else(|| crate::emit::unique_id_base(&resources.pack.author, &expansion.name));
    let finalized = finalize_character(&expansion, gateway, resources, &id)?;
    Ok(PipelineRun {
        highlights,
        selected: select,
        expansion,
        finalized,
    })
}
