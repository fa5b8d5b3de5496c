//! First stage: three highlight cards from a description, and single-card
//! regeneration from an augmented description.

use serde_json::{json, Value};

use crate::emit::PORTRAIT_FILE;
use crate::llm::Gateway;
use crate::model::{Birthday, CharacterDescription, Highlight, HIGHLIGHT_BULLETS};
use crate::prompts;
use crate::stage::{Stage, StageFailure};

/// Cards shown to the user at once.
pub const HIGHLIGHT_COUNT: usize = 3;

/// The card in the wire format the prompts use.
pub fn highlight_to_prompt_json(h: &Highlight) -> Value {
    json!({
        "image": h.image,
        "name": h.name,
        "age": h.age,
        "birthday": h.birthday.to_string(),
        "gender": h.gender,
        "title": h.title,
        "highlights": h.bullets,
        "description_qoute": h.quote,
        "description": h.description,
    })
}

enum CardIssue {
    Invalid(String),
    Birthday(String),
}

fn text_field(obj: &serde_json::Map<String, Value>, keys: &[&str]) -> Result<String, CardIssue> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| CardIssue::Invalid(format!("missing text field {:?}", keys[0])))
}

fn age_field(v: Option<&Value>) -> Result<u32, CardIssue> {
    let age = match v {
        Some(Value::Number(n)) => n.as_u64(),
        Some(Value::String(s)) => s.trim().parse().ok(),
        _ => None,
    };
    age.filter(|a| *a > 0 && *a < 1000)
        .map(|a| a as u32)
        .ok_or_else(|| CardIssue::Invalid("age must be a positive whole number".into()))
}

fn parse_card(
    value: &Value,
    description: &CharacterDescription,
    birthday_override: Option<Birthday>,
) -> Result<Highlight, CardIssue> {
    let obj = value
        .as_object()
        .ok_or_else(|| CardIssue::Invalid("card is not an object".into()))?;
    let bullets: Vec<String> = obj
        .get("highlights")
        .or_else(|| obj.get("bullets"))
        .and_then(Value::as_array)
        .ok_or_else(|| CardIssue::Invalid("missing highlights array".into()))?
        .iter()
        .map(|b| b.as_str().map(|s| s.trim().to_owned()))
        .collect::<Option<_>>()
        .ok_or_else(|| CardIssue::Invalid("highlights must be strings".into()))?;
    if bullets.len() != HIGHLIGHT_BULLETS || bullets.iter().any(String::is_empty) {
        return Err(CardIssue::Invalid(format!(
            "expected {HIGHLIGHT_BULLETS} bullets, got {}",
            bullets.len()
        )));
    }
    let name = text_field(obj, &["name"])?;
    let age = age_field(obj.get("age"))?;
    let gender = text_field(obj, &["gender"])?;
    let title = text_field(obj, &["title"])?;
    let quote = text_field(obj, &["description_qoute", "description_quote", "quote"])?;
    let birthday = match birthday_override {
        Some(b) => b,
        None => obj
            .get("birthday")
            .and_then(Value::as_str)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CardIssue::Birthday(format!("bad birthday {:?}", obj.get("birthday"))))?,
    };
    let card = Highlight {
        image: PORTRAIT_FILE.to_owned(),
        name,
        age,
        birthday,
        gender,
        title,
        bullets,
        quote,
        description: description.as_str().to_owned(),
    };
    card.validate().map_err(|e| CardIssue::Invalid(e.to_string()))?;
    Ok(card)
}

fn card_items(doc: &Value) -> Result<&[Value], String> {
    match doc {
        Value::Array(items) => Ok(items),
        Value::Object(obj) => match obj.get("highlights").or_else(|| obj.get("cards")) {
            Some(Value::Array(items)) if items.iter().all(Value::is_object) => Ok(items),
            _ => Ok(std::slice::from_ref(doc)),
        },
        _ => Err("expected a JSON array of highlight objects".into()),
    }
}

/// Asks once for a birthday for a card whose birthday is missing or invalid.
fn repair_birthday(card: &Value, gateway: &Gateway) -> Option<Birthday> {
    let request = prompts::birthday(&card.to_string());
    gateway
        .request_structured(&request, |doc| {
            doc.get("birthday")
                .and_then(Value::as_str)
                .and_then(|s| s.parse::<Birthday>().ok())
                .ok_or_else(|| "no valid birthday in reply".to_string())
        })
        .ok()
}

/// Reads up to `max` valid cards from a reply, requiring at least `min`.
fn collect_cards(
    doc: &Value,
    description: &CharacterDescription,
    gateway: &Gateway,
    min: usize,
    max: usize,
) -> Result<Vec<Highlight>, String> {
    let mut cards = Vec::new();
    let mut problems = Vec::new();
    for (i, item) in card_items(doc)?.iter().enumerate() {
        if cards.len() == max {
            break;
        }
        let parsed = match parse_card(item, description, None) {
            Err(CardIssue::Birthday(why)) => match repair_birthday(item, gateway) {
                Some(b) => parse_card(item, description, Some(b)),
                None => Err(CardIssue::Invalid(why)),
            },
            other => other,
        };
        match parsed {
            Ok(card) => cards.push(card),
            Err(CardIssue::Invalid(why)) | Err(CardIssue::Birthday(why)) => problems.push(format!("card {i}: {why}")),
        }
    }
    if cards.len() < min {
        return Err(format!(
            "{} valid cards, {min} required; {}",
            cards.len(),
            problems.join("; ")
        ));
    }
    Ok(cards)
}

/// Produces exactly three cards. Extra cards in the reply are ignored; too
/// few valid cards cause a resend.
pub fn generate_highlights(
    description: &CharacterDescription,
    gateway: &Gateway,
) -> Result<Vec<Highlight>, StageFailure> {
    let request = prompts::highlights(description.as_str());
    gateway
        .request_structured(&request, |doc| {
            collect_cards(&doc, description, gateway, HIGHLIGHT_COUNT, HIGHLIGHT_COUNT)
        })
        .map_err(|e| StageFailure::new(Stage::Highlights, e))
}

/// Char index of the whitespace nearest the middle of `text`, earlier one on
/// ties. `None` when the text has no whitespace.
pub fn midpoint_boundary(text: &str) -> Option<usize> {
    let chars: Vec<char> = text.chars().collect();
    let mid = chars.len() / 2;
    (0..chars.len())
        .filter(|&i| chars[i].is_whitespace())
        .min_by_key(|&i| (i.abs_diff(mid), i))
}

/// The first half of a description, cut at a word boundary.
pub fn first_half(text: &str) -> &str {
    match midpoint_boundary(text) {
        Some(cut) => {
            let byte = text.char_indices().nth(cut).map(|(b, _)| b).unwrap_or(text.len());
            text[..byte].trim_end()
        }
        None => text,
    }
}

/// Asks for new details from the first half of the description and appends
/// them to the full description.
pub fn augment_for_regeneration(
    description: &CharacterDescription,
    gateway: &Gateway,
) -> Result<String, StageFailure> {
    let request = prompts::augment(first_half(description.as_str()));
    let details = gateway
        .request_structured(&request, |doc| {
            let details = match &doc {
                Value::String(s) => Some(s.as_str()),
                other => other.get("details").and_then(Value::as_str),
            };
            details
                .map(str::trim)
                .filter(|d| !d.is_empty())
                .map(str::to_owned)
                .ok_or_else(|| "reply has no details".to_string())
        })
        .map_err(|e| StageFailure::new(Stage::Augment, e))?;
    Ok(format!("{} {}", description.as_str(), details))
}

/// One new card for `slot`, generated from an augmented description.
pub fn regenerate_highlight(
    description: &CharacterDescription,
    slot: usize,
    gateway: &Gateway,
) -> Result<Highlight, StageFailure> {
    let augmented = augment_for_regeneration(description, gateway)?;
    let request = prompts::highlights(&augmented);
    let mut cards = gateway
        .request_structured(&request, |doc| collect_cards(&doc, description, gateway, 1, slot + 1))
        .map_err(|e| StageFailure::new(Stage::Highlights, e))?;
    let pick = slot.min(cards.len() - 1);
    Ok(cards.swap_remove(pick))
}
