//! Prompt templates, compiled into the binary.
//!
//! Slots use `${name}` syntax: `${prompt}`, `${highlight}` and `${expansion}`
//! for the three stage prompts, plus `${field}`, `${value}` and `${allowed}`
//! for the trait fix-up prompt.

use crate::grammar::Whitelist;
use crate::llm::{render_template, ChatRequest};

/// Bumped whenever a template changes; recorded fixtures stop matching anyway
/// because request hashes cover the rendered prompt.
pub const PROMPT_VERSION: u32 = 1;

pub const HIGHLIGHTS: &str = include_str!("../resources/prompts/highlights.txt");
pub const EXPANSION: &str = include_str!("../resources/prompts/expansion.txt");
pub const CONFIG: &str = include_str!("../resources/prompts/config.txt");
pub const AUGMENT: &str = include_str!("../resources/prompts/augment.txt");
pub const BIRTHDAY: &str = include_str!("../resources/prompts/birthday.txt");
pub const TRAIT_FIX: &str = include_str!("../resources/prompts/trait_fix.txt");

pub fn highlights(description: &str) -> ChatRequest {
    ChatRequest::new(render_template(HIGHLIGHTS, &[("prompt", description)]))
}

pub fn augment(partial_description: &str) -> ChatRequest {
    ChatRequest::new(render_template(AUGMENT, &[("prompt", partial_description)]))
}

pub fn birthday(highlight_json: &str) -> ChatRequest {
    ChatRequest::new(render_template(BIRTHDAY, &[("highlight", highlight_json)]))
}

pub fn expansion(highlight_json: &str) -> ChatRequest {
    ChatRequest::new(render_template(EXPANSION, &[("highlight", highlight_json)]))
}

pub fn trait_fix(expansion_json: &str, field: &str, value: &str, allowed: &str) -> ChatRequest {
    ChatRequest::new(render_template(
        TRAIT_FIX,
        &[
            ("expansion", expansion_json),
            ("field", field),
            ("value", value),
            ("allowed", allowed),
        ],
    ))
}

pub fn config(expansion_json: &str) -> ChatRequest {
    ChatRequest::new(render_template(CONFIG, &[("expansion", expansion_json)]))
}

/// The config prompt with `whitelist` in place of the bundled stop list.
pub fn config_for(expansion_json: &str, whitelist: &Whitelist) -> ChatRequest {
    let mut request = config(expansion_json);
    let bundled = Whitelist::bundled().to_text();
    let custom = whitelist.to_text();
    if custom != bundled {
        request.user_prompt = request.user_prompt.replacen(&bundled, &custom, 1);
    }
    request
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::WhitelistEntry;
    use crate::llm::scripted::PromptKind;

    #[test]
    fn every_template_has_its_slot() {
        assert!(HIGHLIGHTS.contains("${prompt}"));
        assert!(EXPANSION.contains("${highlight}"));
        assert!(CONFIG.contains("${expansion}"));
        assert!(AUGMENT.contains("${prompt}"));
        assert!(!highlights("x").user_prompt.contains("${"));
        assert!(!config("{}").user_prompt.contains("${"));
    }

    #[test]
    fn config_prompt_lists_exactly_the_whitelist() {
        let listed: String = CONFIG
            .split("only from the following list:")
            .nth(1)
            .unwrap()
            .split("Only print schedules")
            .next()
            .unwrap()
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(listed, Whitelist::bundled().to_text());
    }

    #[test]
    fn prompt_kinds_are_recognized() {
        assert_eq!(PromptKind::of(&highlights("d")), PromptKind::Highlights);
        assert_eq!(PromptKind::of(&augment("d")), PromptKind::Augment);
        assert_eq!(PromptKind::of(&birthday("{}")), PromptKind::Birthday);
        assert_eq!(PromptKind::of(&expansion("{}")), PromptKind::Expansion);
        assert_eq!(PromptKind::of(&trait_fix("{}", "manners", "Grumpy", "a")), PromptKind::TraitFix);
        assert_eq!(PromptKind::of(&config("{}")), PromptKind::Config);
    }

    #[test]
    fn custom_whitelist_replaces_the_listed_stops() {
        let custom = Whitelist::from_entries(vec![WhitelistEntry {
            location: "Town".into(),
            x: 1,
            y: 2,
            direction: 3,
        }]);
        let prompt = config_for("{}", &custom).user_prompt;
        assert!(prompt.contains("following list:\n\nTown 1 2 3\n"));
        assert!(!prompt.contains("Caldera 23 24 2"));
        assert_eq!(config_for("{}", &Whitelist::bundled()), config("{}"));
    }
}
