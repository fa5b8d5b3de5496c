//! Flags shared by several subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use npcsmith_core::emit::PackOptions;
use npcsmith_core::gifts::{bundled_item_names, parse_item_names};
use npcsmith_core::grammar::Whitelist;
use npcsmith_core::llm::embedders::HashedNgram;
use npcsmith_core::llm::fixtures::{record_replay, ConfigError, FixtureMode};
use npcsmith_core::llm::openai::{OpenAiConfig, OpenAiProvider, BASE_URL_VAR};
use npcsmith_core::llm::scripted::AuthoredScript;
use npcsmith_core::llm::ProviderHandle;
use npcsmith_core::Resources;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "npcsmith", version, about = "Generate Stardew Valley NPC content packs from a short description")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the whole chain without interaction and write a pack.
    Generate(GenerateArgs),
    /// Check a pack directory or archive.
    Validate(ValidateArgs),
    /// Run the chain against a live provider and store every reply.
    Record(RecordArgs),
    /// Start the HTTP service used by the wizard.
    Serve(ServeArgs),
}

/// Where the description text comes from.
#[derive(Debug, Clone, Args)]
pub struct DescriptionArgs {
    /// File holding the description, or `-` for standard input.
    #[arg(value_name = "FILE", required_unless_present = "text", conflicts_with = "text")]
    pub source: Option<PathBuf>,
    /// The description itself.
    #[arg(long)]
    pub text: Option<String>,
}

impl DescriptionArgs {
    pub fn read(&self) -> Result<String, Failure> {
        if let Some(text) = &self.text {
            return Ok(text.clone());
        }
        let source = self.source.as_deref().expect("clap requires a source");
        if source == Path::new("-") {
            let mut text = String::new();
            std::io::Read::read_to_string(&mut std::io::stdin(), &mut text)
                .context("reading standard input")
                .map_err(Failure::environment)?;
            return Ok(text);
        }
        std::fs::read_to_string(source)
            .with_context(|| format!("reading {}", source.display()))
            .map_err(Failure::environment)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ProviderArgs {
    /// Answer from a recorded fixture store; no network needed.
    #[arg(long, visible_alias = "fixtures", value_name = "DIR", conflicts_with_all = ["record", "live"])]
    pub replay: Option<PathBuf>,
    /// Call the live provider and store every reply in DIR.
    #[arg(long, value_name = "DIR", conflicts_with = "live")]
    pub record: Option<PathBuf>,
    /// Call the live provider without recording.
    #[arg(long)]
    pub live: bool,
    /// Use a hand-written reply script as the live provider.
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    pub script: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long, env = BASE_URL_VAR, value_name = "URL")]
    pub base_url: Option<String>,
}

impl ProviderArgs {
    pub fn mode(&self) -> Option<FixtureMode> {
        if self.replay.is_some() {
            Some(FixtureMode::Replay)
        } else if self.record.is_some() {
            Some(FixtureMode::Record)
        } else if self.live || self.script.is_some() {
            Some(FixtureMode::Live)
        } else {
            None
        }
    }

    /// Builds the provider. Must be called outside an async runtime.
    pub fn provider(&self) -> Result<ProviderHandle, Failure> {
        let mode = self.mode().ok_or_else(|| {
            Failure::environment(anyhow::anyhow!(
                "no model provider: pass --replay DIR, --record DIR, --live or --script FILE"
            ))
        })?;
        let store = self.replay.as_deref().or(self.record.as_deref());
        record_replay(mode, store, || live_provider(self.script.as_deref(), self.base_url.as_deref()))
            .map_err(Failure::environment)
    }
}

/// The provider Record and Live modes talk to.
pub fn live_provider(script: Option<&Path>, base_url: Option<&str>) -> Result<ProviderHandle, ConfigError> {
    match script {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_owned(),
                source,
            })?;
            let script = AuthoredScript::from_json(&text)
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(script.provider(Arc::new(HashedNgram::default()))))
        }
        None => Ok(Arc::new(OpenAiProvider::new(OpenAiConfig::from_env(base_url)?)?)),
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ResourceArgs {
    /// Stop whitelist, one `Location x y facing` per line.
    #[arg(long, value_name = "FILE")]
    pub whitelist: Option<PathBuf>,
    /// Gift item catalog, one item name per line.
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Directory for cached catalog embeddings.
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Author written to the manifest.
    #[arg(long, default_value = "npcsmith")]
    pub author: String,
    /// Pack version, MAJOR.MINOR.PATCH.
    #[arg(long = "pack-version", default_value = "1.0.0")]
    pub pack_version: String,
    /// Content Patcher format version written to content.json.
    #[arg(long, default_value = npcsmith_core::emit::DEFAULT_CONTENT_FORMAT)]
    pub content_format: String,
}

impl ResourceArgs {
    pub fn whitelist(&self) -> Result<Whitelist, Failure> {
        match &self.whitelist {
            None => Ok(Whitelist::bundled()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(Failure::environment)?;
                Whitelist::parse(&text)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(Failure::environment)
            }
        }
    }

    pub fn item_names(&self) -> Result<Vec<String>, Failure> {
        match &self.catalog {
            None => Ok(bundled_item_names()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .map_err(Failure::environment)?;
                parse_item_names(&text)
                    .with_context(|| format!("parsing {}", path.display()))
                    .map_err(Failure::environment)
            }
        }
    }

    pub fn resources(&self) -> Result<Resources, Failure> {
        if !npcsmith_core::emit::is_semver(&self.pack_version) {
            return Err(Failure::environment(anyhow::anyhow!(
                "--pack-version {:?} is not MAJOR.MINOR.PATCH",
                self.pack_version
            )));
        }
        if !npcsmith_core::emit::is_semver(&self.content_format) {
            return Err(Failure::environment(anyhow::anyhow!(
                "--content-format {:?} is not MAJOR.MINOR.PATCH",
                self.content_format
            )));
        }
        let mut resources = Resources::new(self.whitelist()?, self.item_names()?);
        resources.pack = PackOptions {
            author: self.author.clone(),
            version: self.pack_version.clone(),
            content_format: self.content_format.clone(),
        };
        resources.cache_dir = self.cache_dir.clone();
        Ok(resources)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub description: DescriptionArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
    /// Directory to write the pack into.
    #[arg(long, value_name = "DIR", required_unless_present = "zip")]
    pub out: Option<PathBuf>,
    /// Also, or instead, write the pack as a zip archive.
    #[arg(long, value_name = "FILE")]
    pub zip: Option<PathBuf>,
    /// Highlight card to expand, 0 to 2.
    #[arg(long, default_value_t = 0, conflicts_with = "interactive_select")]
    pub select: usize,
    /// Show the cards and ask which one to expand.
    #[arg(long)]
    pub interactive_select: bool,
    /// Manifest UniqueID; derived from author and name when omitted.
    #[arg(long)]
    pub unique_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Pack directory or zip archive.
    pub pack: PathBuf,
    #[command(flatten)]
    pub resources: ResourceArgs,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[command(flatten)]
    pub description: DescriptionArgs,
    /// Fixture store to fill.
    #[arg(long, value_name = "DIR")]
    pub fixtures: PathBuf,
    /// Use a hand-written reply script instead of the live API.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    #[arg(long, env = BASE_URL_VAR, value_name = "URL")]
    pub base_url: Option<String>,
    #[command(flatten)]
    pub resources: ResourceArgs,
    /// Highlight card to expand, 0 to 2.
    #[arg(long, default_value_t = 0)]
    pub select: usize,
    /// Also write the resulting pack here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub resources: ResourceArgs,
    /// Session snapshot file; sessions are kept in memory only when omitted.
    #[arg(long, value_name = "FILE")]
    pub snapshot: Option<PathBuf>,
    /// Directory of built wizard assets to serve at `/`.
    #[arg(long, value_name = "DIR")]
    pub ui: Option<PathBuf>,
    /// Days an idle session is kept.
    #[arg(long, default_value_t = npcsmith_core::session::DEFAULT_TTL_DAYS)]
    pub ttl_days: i64,
}
