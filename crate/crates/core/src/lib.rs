//! Turns a short NPC description into a Stardew Valley content pack through
//! a chain of model prompts: highlight cards, a character expansion, then
//! schedules, dialogue and gift tastes.

pub mod configgen;
pub mod emit;
pub mod expansion;
pub mod gifts;
pub mod grammar;
pub mod highlight;
pub mod llm;
pub mod model;
pub mod packcheck;
pub mod pipeline;
pub mod prompts;
pub mod session;
pub mod stage;

pub use configgen::{ConfigBundle, ViolationKind, ViolationReport};
pub use emit::{ModPack, PackOptions, PackageTarget};
pub use llm::{Gateway, GatewayError};
pub use model::{
    Birthday, CharacterDescription, CharacterExpansion, DailySchedule, DialogueKey, GiftPreferences, Highlight,
    PersonalityProfile,
};
pub use pipeline::{run_pipeline, PipelineError, Resources};
pub use session::{Op, SessionError, SessionService, SessionStage, SessionState};
pub use stage::{Stage, StageFailure};
