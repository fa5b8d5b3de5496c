use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::GatewayError;

/// A step of the prompt chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Highlights,
    Augment,
    Expansion,
    Config,
    Gifts,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Highlights => "highlights",
            Stage::Augment => "augment",
            Stage::Expansion => "expansion",
            Stage::Config => "config",
            Stage::Gifts => "gifts",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{stage} stage failed: {cause}")]
pub struct StageFailure {
    pub stage: Stage,
    pub cause: GatewayError,
}

impl StageFailure {
    pub fn new(stage: Stage, cause: GatewayError) -> Self {
        Self { stage, cause }
    }
}
