//! Inputs shared by the benchmarks, built from the bundled fixtures.

use std::path::PathBuf;
use std::sync::Arc;

use npcsmith_core::configgen::RawConfig;
use npcsmith_core::llm::coerce_structured;
use npcsmith_core::llm::fixtures::{FixtureStore, Replayer};
use npcsmith_core::llm::scripted::AuthoredScript;
use npcsmith_core::{run_pipeline, Gateway, ModPack, Resources};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn script(name: &str) -> AuthoredScript {
    let path = fixtures_dir().join("scripts").join(format!("{name}.json"));
    AuthoredScript::from_json(&std::fs::read_to_string(path).expect("script")).expect("script parses")
}

/// The config reply of an authored script, as the generator reads it.
pub fn raw_config(name: &str) -> RawConfig {
    let reply = script(name).replies.config;
    let doc = match reply.as_str() {
        Some(text) => coerce_structured(text).expect("config reply is JSON"),
        None => reply,
    };
    RawConfig::from_json(&doc).expect("config reply has the expected shape")
}

pub fn replay_gateway(name: &str) -> Gateway {
    let store = FixtureStore::open(fixtures_dir().join(name)).expect("fixture store");
    Gateway::new(Arc::new(Replayer::new(store)))
}

/// The pack a replayed run of fixture `name` produces.
pub fn pack(name: &str) -> ModPack {
    let description = std::fs::read_to_string(fixtures_dir().join(name).join("description.txt")).expect("description");
    run_pipeline(&description, 0, &replay_gateway(name), &Resources::default(), None)
        .expect("fixture replays")
        .finalized
        .pack
}
