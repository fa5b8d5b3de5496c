//! Second stage: a full trait sheet from a chosen highlight card, plus the
//! user-facing trait editor.

use serde_json::{Map, Value};
use thiserror::Error;

use crate::highlight::highlight_to_prompt_json;
use crate::llm::Gateway;
use crate::model::{
    CharacterExpansion, Highlight, Manner, ModelError, Optimism, PersonalityProfile, ScheduleSummary,
    SocialAnxiety,
};
use crate::prompts;
use crate::stage::{Stage, StageFailure};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExpansionError {
    #[error(transparent)]
    Stage(#[from] StageFailure),
    #[error("{field}: value {value:?} is not one of {allowed}")]
    EnumOutOfRange {
        field: &'static str,
        value: String,
        allowed: String,
    },
}

/// Reply fields before the three trait enums are checked.
struct Draft {
    portraits: Vec<String>,
    summary: String,
    description: String,
    texts: [String; 8],
    enums: [String; 3],
    dialogues: Vec<String>,
    schedules: Vec<ScheduleSummary>,
}

const TEXT_FIELDS: [&str; 8] = [
    "characteristics",
    "job",
    "hobbies",
    "foodAndDrinks",
    "others",
    "mannersDescription",
    "socialAnxietyDescription",
    "optimismDescription",
];

fn string_of(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
}

fn strings_of(v: Option<&Value>) -> Option<Vec<String>> {
    v?.as_array()?
        .iter()
        .map(|s| s.as_str().map(|s| s.trim().to_owned()))
        .filter(|s| s.as_ref().is_none_or(|s| !s.is_empty()))
        .collect()
}

fn parse_draft(doc: &Value, highlight: &Highlight) -> Result<Draft, String> {
    let obj = match doc {
        Value::Array(items) => items.first().and_then(Value::as_object),
        other => other.as_object(),
    }
    .ok_or("expected a JSON object")?;
    let personality = obj
        .get("personality")
        .and_then(Value::as_object)
        .ok_or("missing personality object")?;
    let mut texts: [String; 8] = Default::default();
    for (slot, key) in texts.iter_mut().zip(TEXT_FIELDS) {
        *slot = string_of(personality, key).ok_or_else(|| format!("personality.{key} missing"))?;
    }
    let mut enums: [String; 3] = Default::default();
    for (slot, key) in enums.iter_mut().zip([Manner::FIELD, SocialAnxiety::FIELD, Optimism::FIELD]) {
        *slot = personality
            .get(key)
            .map(|v| v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string()))
            .unwrap_or_default();
    }
    let dialogues = strings_of(obj.get("dialogues").or_else(|| obj.get("sampleDialogues")))
        .filter(|d| !d.is_empty())
        .ok_or("missing dialogues array")?;
    let schedules = obj
        .get("schedules")
        .or_else(|| obj.get("scheduleSummaries"))
        .and_then(Value::as_array)
        .ok_or("missing schedules array")?
        .iter()
        .map(|s| {
            let s = s.as_object()?;
            Some(ScheduleSummary {
                title: string_of(s, "title")?,
                description: string_of(s, "description")?,
            })
        })
        .collect::<Option<Vec<_>>>()
        .filter(|s| !s.is_empty())
        .ok_or("schedules must be objects with title and description")?;
    let portraits = strings_of(obj.get("portraits").or_else(|| obj.get("portraitPaths")))
        .filter(|p| !p.is_empty())
        .unwrap_or_else(|| vec![highlight.image.clone()]);
    Ok(Draft {
        portraits,
        summary: string_of(obj, "summary").unwrap_or_default(),
        description: string_of(obj, "description").unwrap_or_else(|| highlight.description.clone()),
        texts,
        enums,
        dialogues,
        schedules,
    })
}

/// Resolves one trait enum, asking the model once for a replacement when the
/// reply holds a value outside the allowed set.
fn resolve_enum<T: std::str::FromStr>(
    raw: &str,
    field: &'static str,
    allowed: String,
    context: &Value,
    gateway: &Gateway,
) -> Result<T, ExpansionError> {
    if let Ok(v) = raw.parse() {
        return Ok(v);
    }
    let request = prompts::trait_fix(&context.to_string(), field, raw, &allowed);
    let fixed = gateway.request_structured(&request, |doc| {
        doc.get(field)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| format!("reply has no {field}"))
    });
    match fixed {
        Ok(value) => value.parse().map_err(|_| ExpansionError::EnumOutOfRange {
            field,
            value,
            allowed,
        }),
        Err(_) => Err(ExpansionError::EnumOutOfRange {
            field,
            value: raw.to_owned(),
            allowed,
        }),
    }
}

/// Expands a highlight card. Identity fields always come from the card.
pub fn expand_highlight(highlight: &Highlight, gateway: &Gateway) -> Result<CharacterExpansion, ExpansionError> {
    let card = highlight_to_prompt_json(highlight);
    let request = prompts::expansion(&card.to_string());
    let draft = gateway
        .request_structured(&request, |doc| parse_draft(&doc, highlight))
        .map_err(|e| StageFailure::new(Stage::Expansion, e))?;
    let [characteristics, job, hobbies, food_and_drinks, others, manners_description, social_anxiety_description, optimism_description] =
        draft.texts;
    let context = serde_json::json!({
        "name": highlight.name,
        "title": highlight.title,
        "characteristics": characteristics,
        "mannersDescription": manners_description,
        "socialAnxietyDescription": social_anxiety_description,
        "optimismDescription": optimism_description,
    });
    let manners = resolve_enum(&draft.enums[0], Manner::FIELD, Manner::allowed(), &context, gateway)?;
    let social_anxiety =
        resolve_enum(&draft.enums[1], SocialAnxiety::FIELD, SocialAnxiety::allowed(), &context, gateway)?;
    let optimism = resolve_enum(&draft.enums[2], Optimism::FIELD, Optimism::allowed(), &context, gateway)?;
    let expansion = CharacterExpansion {
        portrait_paths: draft.portraits,
        name: highlight.name.clone(),
        gender: highlight.gender.clone(),
        age: highlight.age,
        birthday: highlight.birthday,
        title: highlight.title.clone(),
        bullets: highlight.bullets.clone(),
        quote: highlight.quote.clone(),
        summary: draft.summary,
        description: draft.description,
        personality: PersonalityProfile {
            characteristics,
            job,
            hobbies,
            food_and_drinks,
            others,
            manners,
            manners_description,
            social_anxiety,
            social_anxiety_description,
            optimism,
            optimism_description,
        },
        sample_dialogues: draft.dialogues,
        schedule_summaries: draft.schedules,
    };
    debug_assert!(expansion.validate().is_ok());
    Ok(expansion)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("{0:?} is not an editable field")]
    UnknownPath(String),
    #[error("{path}: index out of range")]
    IndexOutOfRange { path: String },
    #[error("a character needs at least one sample dialogue")]
    LastDialogue,
    #[error(transparent)]
    Invalid(#[from] ModelError),
}

const EDITABLE_TEXT: [&str; 4] = ["title", "quote", "summary", "description"];

/// Applies one edit addressed by a dotted path such as `personality.manners`,
/// `sampleDialogues.2` or `scheduleSummaries.0.title`. An empty value removes
/// a list item; an index equal to the list length appends.
pub fn apply_trait_edit(expansion: &CharacterExpansion, path: &str, value: &str) -> Result<CharacterExpansion, EditError> {
    let unknown = || EditError::UnknownPath(path.to_owned());
    let segments: Vec<&str> = path.split('.').collect();
    let mut next = expansion.clone();
    let value = value.trim();
    match segments.as_slice() {
        [field] if EDITABLE_TEXT.contains(field) => {
            let slot = match *field {
                "title" => &mut next.title,
                "quote" => &mut next.quote,
                "summary" => &mut next.summary,
                _ => &mut next.description,
            };
            *slot = value.to_owned();
        }
        ["personality", field] => {
            let p = &mut next.personality;
            match *field {
                "manners" => p.manners = value.parse()?,
                "socialAnxiety" => p.social_anxiety = value.parse()?,
                "optimism" => p.optimism = value.parse()?,
                other => {
                    let slot = match other {
                        "characteristics" => &mut p.characteristics,
                        "job" => &mut p.job,
                        "hobbies" => &mut p.hobbies,
                        "foodAndDrinks" => &mut p.food_and_drinks,
                        "others" => &mut p.others,
                        "mannersDescription" => &mut p.manners_description,
                        "socialAnxietyDescription" => &mut p.social_anxiety_description,
                        "optimismDescription" => &mut p.optimism_description,
                        _ => return Err(unknown()),
                    };
                    *slot = value.to_owned();
                }
            }
        }
        ["sampleDialogues", index] => {
            let i: usize = index.parse().map_err(|_| unknown())?;
            edit_list(&mut next.sample_dialogues, i, value, path)?;
            if next.sample_dialogues.is_empty() {
                return Err(EditError::LastDialogue);
            }
        }
        ["bullets", index] => {
            let i: usize = index.parse().map_err(|_| unknown())?;
            let slot = next
                .bullets
                .get_mut(i)
                .ok_or_else(|| EditError::IndexOutOfRange { path: path.to_owned() })?;
            if value.is_empty() {
                return Err(ModelError::Empty(path.to_owned()).into());
            }
            *slot = value.to_owned();
        }
        ["scheduleSummaries", index, field @ ("title" | "description")] => {
            let i: usize = index.parse().map_err(|_| unknown())?;
            let summary = next
                .schedule_summaries
                .get_mut(i)
                .ok_or_else(|| EditError::IndexOutOfRange { path: path.to_owned() })?;
            if *field == "title" {
                summary.title = value.to_owned();
            } else {
                summary.description = value.to_owned();
            }
        }
        _ => return Err(unknown()),
    }
    if value.is_empty() && !path.starts_with("sampleDialogues.") {
        return Err(ModelError::Empty(path.to_owned()).into());
    }
    next.validate()?;
    Ok(next)
}

fn edit_list(list: &mut Vec<String>, i: usize, value: &str, path: &str) -> Result<(), EditError> {
    match (i.cmp(&list.len()), value.is_empty()) {
        (std::cmp::Ordering::Less, true) => {
            list.remove(i);
        }
        (std::cmp::Ordering::Less, false) => list[i] = value.to_owned(),
        (std::cmp::Ordering::Equal, false) => list.push(value.to_owned()),
        _ => return Err(EditError::IndexOutOfRange { path: path.to_owned() }),
    }
    Ok(())
}
