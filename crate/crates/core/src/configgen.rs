//! Third stage: schedules, keyed dialogues and gift dialogues, with
//! validation against the grammar and whitelist and a deterministic repair
//! pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::grammar::{format_route, parse_dialogue_key, parse_entry, Strictness, Whitelist};
use crate::llm::Gateway;
use crate::model::{
    CharacterExpansion, DailySchedule, DialogueKey, DialogueSet, GiftDialogues, Lint, ScheduleEntry, Weekday,
};
use crate::prompts;
use crate::stage::{Stage, StageFailure};

pub const MIN_DIALOGUES: usize = 15;
pub const MAX_DIALOGUES: usize = 20;

/// Fewest valid stops a day must keep for invalid ones to be dropped
/// instead of replaced.
const MIN_KEPT_STOPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    BadScheduleSyntax,
    OffWhitelist,
    BadDialogueKey,
    DayRuleViolation,
    DialogueCountOutOfRange,
    MissingGiftCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn kinds(&self) -> BTreeSet<ViolationKind> {
        self.violations.iter().map(|v| v.kind).collect()
    }

    fn push(&mut self, kind: ViolationKind, location: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            location: location.into(),
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{:?} at {}: {}", v.kind, v.location, v.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("configuration cannot be repaired: {0}")]
pub struct Unrepairable(pub ViolationReport);

/// The third-stage reply as the model wrote it, before any checks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConfig {
    pub schedule: BTreeMap<String, String>,
    /// In reply order.
    pub dialogues: Vec<(String, String)>,
    pub gift_dialogues: BTreeMap<String, String>,
}

fn text_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .map(text_value)
            .collect::<Vec<_>>()
            .join("/"),
        other => other.to_string(),
    }
}

impl RawConfig {
    /// Reads the reply shape. Fails only when the top-level objects are
    /// missing; content problems are left to [`validate_config`].
    pub fn from_json(doc: &Value) -> Result<Self, String> {
        let obj = match doc {
            Value::Array(items) => items.first().and_then(Value::as_object),
            other => other.as_object(),
        }
        .ok_or("expected a JSON object")?;
        let schedule = obj
            .get("schedule")
            .or_else(|| obj.get("schedules"))
            .and_then(Value::as_object)
            .ok_or("missing schedule object")?
            .iter()
            .map(|(k, v)| (k.trim().to_owned(), text_value(v)))
            .collect();
        let dialogue_obj = obj
            .get("dialogues")
            .and_then(Value::as_object)
            .ok_or("missing dialogues object")?;
        let dialogues = dialogue_obj
            .iter()
            .filter(|(k, _)| k.as_str() != "giftDialogues")
            .map(|(k, v)| (k.trim().to_owned(), text_value(v)))
            .collect();
        let gift_dialogues = obj
            .get("giftDialogues")
            .or_else(|| dialogue_obj.get("giftDialogues"))
            .and_then(Value::as_object)
            .map(|g: &Map<String, Value>| {
                g.iter()
                    .map(|(k, v)| (k.trim().to_ascii_lowercase(), text_value(v)))
                    .collect()
            })
            .unwrap_or_default();
        Ok(Self {
            schedule,
            dialogues,
            gift_dialogues,
        })
    }
}

/// One parsed route segment with its position.
enum Stop {
    Good(ScheduleEntry),
    OffList(ScheduleEntry),
    Bad(String),
}

fn classify_route(route: &str, whitelist: &Whitelist) -> Vec<Stop> {
    route
        .split('/')
        .map(|seg| match parse_entry(seg, Strictness::Strict) {
            Ok(e) if whitelist.contains(&e) => Stop::Good(e),
            Ok(e) => Stop::OffList(e),
            Err(err) => Stop::Bad(err.to_string()),
        })
        .collect()
}

/// Normalized route for day comparison; unparsable segments compare by
/// their trimmed text.
fn route_signature(route: &str) -> Vec<String> {
    route
        .split('/')
        .map(|seg| match parse_entry(seg, Strictness::Lenient) {
            Ok(e) => format_route(std::slice::from_ref(&e)),
            Err(_) => seg.split_whitespace().collect::<Vec<_>>().join(" "),
        })
        .collect()
}

/// Checks every rule and reports all violations at once.
pub fn validate_config(raw: &RawConfig, whitelist: &Whitelist) -> ViolationReport {
    use ViolationKind::*;
    let mut report = ViolationReport::default();
    for key in raw.schedule.keys() {
        if Weekday::from_exact(key).is_none() {
            report.push(BadScheduleSyntax, format!("schedule.{key}"), "not a day of the week");
        }
    }
    for day in Weekday::ALL {
        let at = format!("schedule.{day}");
        let Some(route) = raw.schedule.get(day.as_str()) else {
            report.push(BadScheduleSyntax, at, "day is missing");
            continue;
        };
        let stops = classify_route(route, whitelist);
        let mut last_time = None;
        for (i, stop) in stops.iter().enumerate() {
            match stop {
                Stop::Bad(why) => report.push(BadScheduleSyntax, format!("{at}.{i}"), why.clone()),
                Stop::OffList(e) => report.push(
                    OffWhitelist,
                    format!("{at}.{i}"),
                    format!("{} {} {} {} is not an allowed stop", e.location, e.x, e.y, e.direction),
                ),
                Stop::Good(_) => {}
            }
            if let Stop::Good(e) | Stop::OffList(e) = stop {
                if last_time.is_some_and(|t| t >= e.time) {
                    report.push(BadScheduleSyntax, format!("{at}.{i}"), format!("time {} is not after the previous stop", e.time));
                }
                last_time = Some(e.time);
            }
        }
    }
    let sig = |d: Weekday| raw.schedule.get(d.as_str()).map(|r| route_signature(r));
    if let Some(mon) = sig(Weekday::Mon) {
        for day in [Weekday::Wed, Weekday::Fri] {
            if sig(day).is_some_and(|s| s != mon) {
                report.push(DayRuleViolation, format!("schedule.{day}"), "must match Mon");
            }
        }
        for day in [Weekday::Tue, Weekday::Thu] {
            if sig(day).is_some_and(|s| s == mon) {
                report.push(DayRuleViolation, format!("schedule.{day}"), "must differ from Mon");
            }
        }
    }
    for (key, line) in &raw.dialogues {
        let at = format!("dialogues.{key}");
        match parse_dialogue_key(key) {
            Err(e) => report.push(BadDialogueKey, at, e.to_string()),
            Ok(DialogueKey::Location { location, x, y }) if !whitelist.contains_tile(&location, x, y) => {
                report.push(OffWhitelist, at, "dialogue tile is not an allowed stop")
            }
            Ok(_) if line.trim().is_empty() => report.push(BadDialogueKey, at, "empty dialogue line"),
            Ok(_) => {}
        }
    }
    let n = raw.dialogues.len();
    if !(MIN_DIALOGUES..=MAX_DIALOGUES).contains(&n) {
        report.push(
            DialogueCountOutOfRange,
            "dialogues",
            format!("{n} dialogues, expected {MIN_DIALOGUES} to {MAX_DIALOGUES}"),
        );
    }
    for category in GiftDialogues::CATEGORIES {
        if raw.gift_dialogues.get(category).is_none_or(|s| s.trim().is_empty()) {
            report.push(MissingGiftCategory, format!("giftDialogues.{category}"), "missing");
        }
    }
    report
}

fn dialogue_ok(key: &str, line: &str, whitelist: &Whitelist) -> Option<DialogueKey> {
    match parse_dialogue_key(key).ok()? {
        DialogueKey::Location { ref location, x, y } if !whitelist.contains_tile(location, x, y) => None,
        _ if line.trim().is_empty() => None,
        k => Some(k),
    }
}

fn repair_route(route: &str, whitelist: &Whitelist) -> Vec<ScheduleEntry> {
    let stops = classify_route(route, whitelist);
    let good = stops.iter().filter(|s| matches!(s, Stop::Good(_))).count();
    let mut kept: Vec<ScheduleEntry> = stops
        .into_iter()
        .filter_map(|stop| match stop {
            Stop::Good(e) => Some(e),
            Stop::OffList(e) if good < MIN_KEPT_STOPS => whitelist
                .nearest_in_location(&e.location, e.x, e.y)
                .map(|w| w.to_schedule_entry(e.time)),
            _ => None,
        })
        .collect();
    kept.sort_by_key(|e| e.time);
    kept.dedup_by_key(|e| e.time);
    kept
}

/// Deterministic fix-ups. Returns the repaired config, which passes
/// [`validate_config`], or the violations that could not be fixed.
pub fn repair_config(raw: &RawConfig, whitelist: &Whitelist) -> Result<RawConfig, Unrepairable> {
    use ViolationKind::*;
    let mut fatal = ViolationReport::default();
    let mut schedule = BTreeMap::new();
    for day in Weekday::ALL {
        if matches!(day, Weekday::Wed | Weekday::Fri) {
            continue;
        }
        let at = format!("schedule.{day}");
        match raw.schedule.get(day.as_str()) {
            None => fatal.push(BadScheduleSyntax, at, "day is missing"),
            Some(route) => {
                let entries = repair_route(route, whitelist);
                if entries.is_empty() {
                    fatal.push(OffWhitelist, at, "no usable stops");
                } else {
                    schedule.insert(day.as_str().to_owned(), format_route(&entries));
                }
            }
        }
    }
    if let Some(mon) = schedule.get("Mon").cloned() {
        schedule.insert("Wed".into(), mon.clone());
        schedule.insert("Fri".into(), mon.clone());
        for day in ["Tue", "Thu"] {
            if schedule.get(day) == Some(&mon) {
                fatal.push(DayRuleViolation, format!("schedule.{day}"), "must differ from Mon");
            }
        }
    }

    let mut valid: Vec<(DialogueKey, &String, &String)> = raw
        .dialogues
        .iter()
        .filter_map(|(k, line)| dialogue_ok(k, line, whitelist).map(|key| (key, k, line)))
        .collect();
    if valid.len() < MIN_DIALOGUES {
        fatal.push(
            DialogueCountOutOfRange,
            "dialogues",
            format!("only {} usable dialogues", valid.len()),
        );
    }
    if valid.len() > MAX_DIALOGUES {
        valid.sort_by(|a, b| a.0.cmp(&b.0));
        valid.truncate(MAX_DIALOGUES);
        let keep: BTreeSet<&String> = valid.iter().map(|(_, k, _)| *k).collect();
        valid = raw
            .dialogues
            .iter()
            .filter(|(k, _)| keep.contains(k))
            .filter_map(|(k, line)| dialogue_ok(k, line, whitelist).map(|key| (key, k, line)))
            .collect();
    }
    let dialogues = valid
        .into_iter()
        .map(|(_, k, line)| (k.clone(), line.clone()))
        .collect();

    for category in GiftDialogues::CATEGORIES {
        if raw.gift_dialogues.get(category).is_none_or(|s| s.trim().is_empty()) {
            fatal.push(MissingGiftCategory, format!("giftDialogues.{category}"), "missing");
        }
    }
    if !fatal.is_clean() {
        return Err(Unrepairable(fatal));
    }
    let repaired = RawConfig {
        schedule,
        dialogues,
        gift_dialogues: GiftDialogues::CATEGORIES
            .iter()
            .map(|c| (c.to_string(), raw.gift_dialogues[*c].clone()))
            .collect(),
    };
    let report = validate_config(&repaired, whitelist);
    if report.is_clean() {
        Ok(repaired)
    } else {
        Err(Unrepairable(report))
    }
}

/// A validated third-stage result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigBundle {
    pub schedule: DailySchedule,
    pub dialogues: DialogueSet,
    pub gift_dialogues: GiftDialogues,
    /// True when the repair pass changed the reply.
    pub repaired: bool,
}

impl ConfigBundle {
    /// Converts a config with no violations. Anything else is refused.
    pub fn from_raw(raw: &RawConfig, whitelist: &Whitelist) -> Result<Self, ViolationReport> {
        let report = validate_config(raw, whitelist);
        if !report.is_clean() {
            return Err(report);
        }
        let days = Weekday::ALL
            .iter()
            .map(|d| {
                let entries = crate::grammar::parse_route(&raw.schedule[d.as_str()], Strictness::Strict)
                    .expect("validated route parses");
                (*d, entries)
            })
            .collect();
        let schedule = DailySchedule::new(days).expect("validated schedule is well formed");
        let dialogues = raw
            .dialogues
            .iter()
            .map(|(k, v)| (parse_dialogue_key(k).expect("validated key"), v.trim().to_owned()))
            .collect();
        let g = |c: &str| raw.gift_dialogues[c].trim().to_owned();
        Ok(Self {
            schedule,
            dialogues,
            gift_dialogues: GiftDialogues {
                love: g("love"),
                like: g("like"),
                dislike: g("dislike"),
                hate: g("hate"),
                neutral: g("neutral"),
            },
            repaired: false,
        })
    }

    /// Validates, repairing when needed.
    pub fn build(raw: &RawConfig, whitelist: &Whitelist) -> Result<Self, Unrepairable> {
        match Self::from_raw(raw, whitelist) {
            Ok(bundle) => Ok(bundle),
            Err(_) => {
                let fixed = repair_config(raw, whitelist)?;
                let mut bundle = Self::from_raw(&fixed, whitelist).map_err(Unrepairable)?;
                bundle.repaired = true;
                Ok(bundle)
            }
        }
    }

    /// Route strings by day, Mon to Sun.
    pub fn schedule_strings(&self) -> Vec<(Weekday, String)> {
        self.schedule.iter().map(|(d, e)| (d, format_route(e))).collect()
    }

    /// Location dialogue keys on a tile the schedule never visits.
    pub fn lints(&self) -> Vec<Lint> {
        let visited: BTreeSet<(&str, u32, u32)> = self
            .schedule
            .entries()
            .map(|e| (e.location.as_str(), e.x, e.y))
            .collect();
        self.dialogues
            .keys()
            .filter_map(|k| match k {
                DialogueKey::Location { location, x, y } if !visited.contains(&(location.as_str(), *x, *y)) => Some(Lint {
                    location: format!("dialogues.{k}"),
                    message: "the schedule never visits this tile".into(),
                }),
                _ => None,
            })
            .collect()
    }
}

/// Runs the third stage. Replies that fail validation are repaired; replies
/// that cannot be repaired are resent within the attempt budget.
pub fn generate_config(
    expansion: &CharacterExpansion,
    whitelist: &Whitelist,
    gateway: &Gateway,
) -> Result<ConfigBundle, StageFailure> {
    let character = serde_json::to_string(expansion).expect("expansion serializes");
    let request = prompts::config_for(&character, whitelist);
    gateway
        .request_structured(&request, |doc| {
            let raw = RawConfig::from_json(&doc)?;
            ConfigBundle::build(&raw, whitelist).map_err(|e| e.to_string())
        })
        .map_err(|e| StageFailure::new(Stage::Config, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const MON: &str = "900 SeedShop 21 19 2 /1300 Saloon 39 18 2 /1700 Town 88 103 2";
    const TUE: &str = "800 Forest 34 96 0 /1200 Beach 81 12 2 /1800 Saloon 33 17 0";
    const THU: &str = "1000 Mountain 76 14 2 /1500 Blacksmith 12 13 0";
    const SAT: &str = "1100 Town 82 89 3 /1900 Saloon 7 15 0";

    fn dialogues(n: usize) -> Vec<(String, String)> {
        let keys = [
            "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun",
            "Mine_26_8", "Beach_81_12", "Saloon_39_18", "Town_88_103", "Forest_34_96",
        ];
        keys.iter().take(n).map(|k| (k.to_string(), format!("Line for {k}."))).collect()
    }

    fn clean() -> RawConfig {
        let schedule = [
            ("Mon", MON),
            ("Tue", TUE),
            ("Wed", MON),
            ("Thu", THU),
            ("Fri", MON),
            ("Sat", SAT),
            ("Sun", SAT),
        ]
        .iter()
        .map(|(d, r)| (d.to_string(), r.to_string()))
        .collect();
        RawConfig {
            schedule,
            dialogues: dialogues(22).into_iter().skip(5).collect(),
            gift_dialogues: GiftDialogues::CATEGORIES
                .iter()
                .map(|c| (c.to_string(), format!("{c}!")))
                .collect(),
        }
    }

    fn wl() -> Whitelist {
        Whitelist::bundled()
    }

    #[test]
    fn clean_config_has_no_violations() {
        let report = validate_config(&clean(), &wl());
        assert!(report.is_clean(), "{report}");
        let bundle = ConfigBundle::build(&clean(), &wl()).unwrap();
        assert!(!bundle.repaired);
        assert_eq!(bundle.dialogues.len(), 17);
        assert_eq!(bundle.schedule_strings()[0], (Weekday::Mon, MON.to_string()));
    }

    #[test]
    fn each_rule_reports_its_category() {
        let wl = wl();
        let mut raw = clean();
        raw.schedule.insert("Tue".into(), "800 Forest 34 96 0 /1200 Beach 81 12 /1800 Saloon 33 17 0".into());
        assert_eq!(validate_config(&raw, &wl).kinds(), [ViolationKind::BadScheduleSyntax].into());

        let mut raw = clean();
        raw.schedule.insert("Thu".into(), "1000 Mountain 76 14 2 /1500 Blacksmith 99 99 0".into());
        assert_eq!(validate_config(&raw, &wl).kinds(), [ViolationKind::OffWhitelist].into());

        let mut raw = clean();
        raw.dialogues[0].0 = "Mountain_76_14_2".into();
        assert_eq!(validate_config(&raw, &wl).kinds(), [ViolationKind::BadDialogueKey].into());

        let mut raw = clean();
        raw.schedule.insert("Wed".into(), TUE.into());
        assert_eq!(validate_config(&raw, &wl).count(ViolationKind::DayRuleViolation), 1);

        let mut raw = clean();
        raw.dialogues = dialogues(14);
        assert_eq!(validate_config(&raw, &wl).kinds(), [ViolationKind::DialogueCountOutOfRange].into());

        let mut raw = clean();
        raw.gift_dialogues.remove("neutral");
        assert_eq!(validate_config(&raw, &wl).kinds(), [ViolationKind::MissingGiftCategory].into());
    }

    #[test]
    fn off_list_stop_is_dropped_when_enough_remain() {
        let mut raw = clean();
        raw.schedule.insert("Tue".into(), format!("{TUE} /2000 Mine 99 99 1"));
        let fixed = repair_config(&raw, &wl()).unwrap();
        assert_eq!(fixed.schedule["Tue"], TUE);
    }

    #[test]
    fn off_list_stop_is_snapped_when_day_is_thin() {
        let mut raw = clean();
        raw.schedule.insert("Sat".into(), "1100 Mine 99 99 1 /1900 Saloon 7 15 0".into());
        let fixed = repair_config(&raw, &wl()).unwrap();
        assert_eq!(fixed.schedule["Sat"], "1100 Mine 26 8 1 /1900 Saloon 7 15 0");
    }

    #[test]
    fn wed_and_fri_copy_mon() {
        let mut raw = clean();
        raw.schedule.insert("Wed".into(), TUE.into());
        raw.schedule.remove("Fri");
        let fixed = repair_config(&raw, &wl()).unwrap();
        assert_eq!(fixed.schedule["Wed"], MON);
        assert_eq!(fixed.schedule["Fri"], MON);
    }

    #[test]
    fn too_many_dialogues_are_truncated_in_key_order() {
        let mut raw = clean();
        raw.dialogues = dialogues(22);
        raw.dialogues.reverse();
        let fixed = repair_config(&raw, &wl()).unwrap();
        assert_eq!(fixed.dialogues.len(), MAX_DIALOGUES);
        let kept: BTreeSet<&str> = fixed.dialogues.iter().map(|(k, _)| k.as_str()).collect();
        // location keys sort last, by name
        assert!(!kept.contains("Town_88_103") && !kept.contains("Saloon_39_18"));
        assert!(kept.contains("Mine_26_8") && kept.contains("Forest_34_96"));
    }

    #[test]
    fn unrepairable_cases() {
        let mut raw = clean();
        raw.schedule.remove("Sun");
        assert!(repair_config(&raw, &wl()).is_err());

        let mut raw = clean();
        raw.gift_dialogues.remove("love");
        assert!(repair_config(&raw, &wl()).is_err());

        let mut raw = clean();
        raw.dialogues = dialogues(15);
        raw.dialogues[3].0 = "Nowhere_1_1".into();
        let err = repair_config(&raw, &wl()).unwrap_err();
        assert_eq!(err.0.count(ViolationKind::DialogueCountOutOfRange), 1);
    }

    #[test]
    fn bad_keys_are_dropped_when_enough_remain() {
        let mut raw = clean();
        raw.dialogues.push(("Mountain_76_14_2".into(), "Too many numbers.".into()));
        let fixed = repair_config(&raw, &wl()).unwrap();
        assert_eq!(fixed.dialogues.len(), 17);
    }

    #[test]
    fn reads_the_reply_shape() {
        let doc = json!({
            "schedule": {"Mon": MON},
            "dialogues": {"Mon": "Hi.", "giftDialogues": {"Love": "Wow!"}}
        });
        let raw = RawConfig::from_json(&doc).unwrap();
        assert_eq!(raw.dialogues, vec![("Mon".to_string(), "Hi.".to_string())]);
        assert_eq!(raw.gift_dialogues["love"], "Wow!");
        assert!(RawConfig::from_json(&json!({"dialogues": {}})).is_err());
    }

    #[test]
    fn unvisited_location_key_is_only_a_lint() {
        let bundle = ConfigBundle::build(&clean(), &wl()).unwrap();
        let lints = bundle.lints();
        assert!(lints.iter().any(|l| l.location == "dialogues.Mine_26_8"));
        assert!(!lints.iter().any(|l| l.location == "dialogues.Beach_81_12"));
    }
}
