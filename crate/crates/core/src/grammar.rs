//! Grammar for the game's schedule strings and dialogue keys, plus the
//! location whitelist schedules are checked against.
//!
//! A day's route is a `/`-separated list of segments, each
//! `TIME Location X Y D`:
//!
//! ```text
//! 900 SeedShop 21 19 2 /1300 Saloon 39 18 2
//! ```
//!
//! Dialogue keys are one of `1`..`10` (day of month), `Mon`..`Sun` (day of
//! week) or `Location_X_Y` (a tile, with no facing direction).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{DialogueKey, ScheduleEntry, Weekday};

pub const EARLIEST_TIME: u16 = 600;
pub const LATEST_TIME: u16 = 2600;
pub const MAX_DIRECTION: u8 = 3;
pub const MAX_DAY_OF_MONTH: u8 = 10;

/// Separator written between schedule segments.
pub const SEGMENT_SEPARATOR: &str = " /";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("segment {segment:?}: expected 'TIME Location X Y D', found {found} fields")]
    FieldCount { segment: String, found: usize },
    #[error("segment {segment:?}: {field} {value:?} is not a number")]
    NotANumber {
        segment: String,
        field: &'static str,
        value: String,
    },
    #[error("segment {segment:?}: bad location name {location:?}")]
    BadLocation { segment: String, location: String },
    #[error("segment {segment:?}: time {time} outside {EARLIEST_TIME}..={LATEST_TIME} or not a multiple of 10")]
    BadTime { segment: String, time: u16 },
    #[error("segment {segment:?}: direction {direction} outside 0..={MAX_DIRECTION}")]
    BadDirection { segment: String, direction: u8 },
    #[error("empty route")]
    EmptyRoute,
    #[error("route is not in increasing time order at {0}")]
    NotIncreasing(u16),
    #[error("bad dialogue key {0:?}")]
    BadDialogueKey(String),
}

/// Whether game-clock and facing bounds are errors or only reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    Lenient,
}

fn is_location_name(s: &str) -> bool {
    !s.is_empty()
        && s.split('_').all(|seg| {
            seg.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                && seg.chars().all(|c| c.is_ascii_alphanumeric())
        })
}

/// Parses an unsigned decimal with no sign and no leading zeros.
fn canonical_u32(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return None;
    }
    s.parse().ok()
}

fn number<T: FromStr>(segment: &str, field: &'static str, value: &str) -> Result<T, GrammarError> {
    let digits_only = !value.is_empty() && value.bytes().all(|b| b.is_ascii_digit());
    digits_only
        .then(|| value.parse().ok())
        .flatten()
        .ok_or_else(|| GrammarError::NotANumber {
            segment: segment.to_owned(),
            field,
            value: value.to_owned(),
        })
}

/// Bounds checks for an entry that parsed syntactically.
pub fn check_entry_bounds(entry: &ScheduleEntry) -> Result<(), GrammarError> {
    let segment = || format_entry(entry);
    if !(EARLIEST_TIME..=LATEST_TIME).contains(&entry.time) || !entry.time.is_multiple_of(10) {
        return Err(GrammarError::BadTime {
            segment: segment(),
            time: entry.time,
        });
    }
    if entry.direction > MAX_DIRECTION {
        return Err(GrammarError::BadDirection {
            segment: segment(),
            direction: entry.direction,
        });
    }
    Ok(())
}

/// Parses one `TIME Location X Y D` segment. Any run of whitespace separates
/// fields.
pub fn parse_entry(segment: &str, strictness: Strictness) -> Result<ScheduleEntry, GrammarError> {
    let fields: Vec<&str> = segment.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(GrammarError::FieldCount {
            segment: segment.trim().to_owned(),
            found: fields.len(),
        });
    }
    let seg = segment.trim();
    if !is_location_name(fields[1]) {
        return Err(GrammarError::BadLocation {
            segment: seg.to_owned(),
            location: fields[1].to_owned(),
        });
    }
    let entry = ScheduleEntry {
        time: number(seg, "time", fields[0])?,
        location: fields[1].to_owned(),
        x: number(seg, "x", fields[2])?,
        y: number(seg, "y", fields[3])?,
        direction: number(seg, "direction", fields[4])?,
    };
    if strictness == Strictness::Strict {
        check_entry_bounds(&entry)?;
    }
    Ok(entry)
}

/// Parses a whole day's route. Times must strictly increase.
pub fn parse_route(route: &str, strictness: Strictness) -> Result<Vec<ScheduleEntry>, GrammarError> {
    if route.trim().is_empty() {
        return Err(GrammarError::EmptyRoute);
    }
    let entries = route
        .split('/')
        .map(|seg| parse_entry(seg, strictness))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(w) = entries.windows(2).find(|w| w[0].time >= w[1].time) {
        return Err(GrammarError::NotIncreasing(w[1].time));
    }
    Ok(entries)
}

pub fn format_entry(entry: &ScheduleEntry) -> String {
    format!(
        "{} {} {} {} {}",
        entry.time, entry.location, entry.x, entry.y, entry.direction
    )
}

pub fn format_route(entries: &[ScheduleEntry]) -> String {
    entries
        .iter()
        .map(format_entry)
        .collect::<Vec<_>>()
        .join(SEGMENT_SEPARATOR)
}

impl FromStr for DialogueKey {
    type Err = GrammarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_dialogue_key(s)
    }
}

impl fmt::Display for DialogueKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DialogueKey::DayOfMonth(n) => write!(f, "{n}"),
            DialogueKey::DayOfWeek(d) => f.write_str(d.as_str()),
            DialogueKey::Location { location, x, y } => write!(f, "{location}_{x}_{y}"),
        }
    }
}

impl serde::Serialize for DialogueKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for DialogueKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a dialogue key. The three syntaxes are disjoint: all digits, an
/// exact weekday abbreviation, or a location name followed by exactly two
/// coordinates. A trailing direction (`Mountain_76_14_2`) is rejected because
/// location name segments may not be numeric.
pub fn parse_dialogue_key(s: &str) -> Result<DialogueKey, GrammarError> {
    let bad = || GrammarError::BadDialogueKey(s.to_owned());
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return canonical_u32(s)
            .filter(|n| (1..=u32::from(MAX_DAY_OF_MONTH)).contains(n))
            .map(|n| DialogueKey::DayOfMonth(n as u8))
            .ok_or_else(bad);
    }
    if let Some(day) = Weekday::from_exact(s) {
        return Ok(DialogueKey::DayOfWeek(day));
    }
    let mut parts = s.rsplitn(3, '_');
    let (y, x, location) = match (parts.next(), parts.next(), parts.next()) {
        (Some(y), Some(x), Some(loc)) => (y, x, loc),
        _ => return Err(bad()),
    };
    match (canonical_u32(x), canonical_u32(y)) {
        (Some(x), Some(y)) if is_location_name(location) => Ok(DialogueKey::Location {
            location: location.to_owned(),
            x,
            y,
        }),
        _ => Err(bad()),
    }
}

/// One allowed schedule stop.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WhitelistEntry {
    pub location: String,
    pub x: u32,
    pub y: u32,
    pub direction: u8,
}

impl WhitelistEntry {
    pub fn to_schedule_entry(&self, time: u16) -> ScheduleEntry {
        ScheduleEntry {
            time,
            location: self.location.clone(),
            x: self.x,
            y: self.y,
            direction: self.direction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("whitelist line {line}: {detail}")]
pub struct WhitelistError {
    pub line: usize,
    pub detail: String,
}

/// The fixed set of (location, x, y, direction) stops a schedule may use.
#[derive(Debug, Clone)]
pub struct Whitelist {
    entries: Vec<WhitelistEntry>,
    stops: HashSet<(String, u32, u32, u8)>,
    tiles: HashSet<(String, u32, u32)>,
}

const BUNDLED_WHITELIST: &str = include_str!("../resources/whitelist.txt");

impl Whitelist {
    /// The list shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_WHITELIST).expect("bundled whitelist is well formed")
    }

    /// Parses `Location X Y D` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, WhitelistError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_entry(&format!("{EARLIEST_TIME} {line}"), Strictness::Strict).map_err(|e| {
                WhitelistError {
                    line: i + 1,
                    detail: e.to_string(),
                }
            })?;
            entries.push(WhitelistEntry {
                location: entry.location,
                x: entry.x,
                y: entry.y,
                direction: entry.direction,
            });
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: Vec<WhitelistEntry>) -> Self {
        let stops = entries
            .iter()
            .map(|e| (e.location.clone(), e.x, e.y, e.direction))
            .collect();
        let tiles = entries.iter().map(|e| (e.location.clone(), e.x, e.y)).collect();
        Self {
            entries,
            stops,
            tiles,
        }
    }

    pub fn entries(&self) -> &[WhitelistEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, entry: &ScheduleEntry) -> bool {
        self.stops
            .contains(&(entry.location.clone(), entry.x, entry.y, entry.direction))
    }

    pub fn contains_tile(&self, location: &str, x: u32, y: u32) -> bool {
        self.tiles.contains(&(location.to_owned(), x, y))
    }

    /// The stop in `location` closest to (`x`, `y`), first in list order on
    /// ties.
    pub fn nearest_in_location(&self, location: &str, x: u32, y: u32) -> Option<&WhitelistEntry> {
        let dist = |e: &WhitelistEntry| {
            let dx = i64::from(e.x) - i64::from(x);
            let dy = i64::from(e.y) - i64::from(y);
            dx * dx + dy * dy
        };
        self.entries
            .iter()
            .filter(|e| e.location == location)
            .min_by_key(|e| dist(e))
    }

    /// Renders the list in its file format.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{} {} {} {}\n", e.location, e.x, e.y, e.direction))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_example_route() {
        let route = "900 SeedShop 21 19 2 /1300 Saloon 39 18 2 /1500 Blacksmith 12 13 0 /1700 Town 88 103 2 /2000 SeedShop 21 19 2";
        let entries = parse_route(route, Strictness::Strict).unwrap();
        assert_eq!(entries.len(), 5);
        assert_eq!(
            entries[0],
            ScheduleEntry {
                time: 900,
                location: "SeedShop".into(),
                x: 21,
                y: 19,
                direction: 2
            }
        );
        assert_eq!(format_route(&entries), route);
    }

    #[test]
    fn single_entry_has_no_separator() {
        let entries = parse_route("610 Town 82 89 3", Strictness::Strict).unwrap();
        assert_eq!(format_route(&entries), "610 Town 82 89 3");
    }

    #[test]
    fn whitespace_is_normalized() {
        let entries = parse_route("  900   SeedShop 21 19 2/1300 Saloon\t39 18 2 ", Strictness::Strict).unwrap();
        assert_eq!(format_route(&entries), "900 SeedShop 21 19 2 /1300 Saloon 39 18 2");
    }

    #[test]
    fn rejects_bad_segments() {
        assert!(matches!(
            parse_route("900 SeedShop 21 19", Strictness::Strict),
            Err(GrammarError::FieldCount { found: 4, .. })
        ));
        assert!(matches!(
            parse_route("900 SeedShop 21 -19 2", Strictness::Strict),
            Err(GrammarError::NotANumber { field: "y", .. })
        ));
        assert!(matches!(
            parse_route("905 SeedShop 21 19 2", Strictness::Strict),
            Err(GrammarError::BadTime { time: 905, .. })
        ));
        assert!(matches!(
            parse_route("2700 SeedShop 21 19 2", Strictness::Strict),
            Err(GrammarError::BadTime { .. })
        ));
        assert!(matches!(
            parse_route("900 Mine 99 99 9", Strictness::Strict),
            Err(GrammarError::BadDirection { direction: 9, .. })
        ));
        assert!(parse_route("900 Mine 99 99 9", Strictness::Lenient).is_ok());
        assert!(matches!(
            parse_route("1300 Town 1 1 1 /900 Town 1 1 1", Strictness::Strict),
            Err(GrammarError::NotIncreasing(900))
        ));
        assert!(matches!(
            parse_route("900 7Eleven 1 1 1", Strictness::Strict),
            Err(GrammarError::BadLocation { .. })
        ));
        assert_eq!(parse_route(" ", Strictness::Strict), Err(GrammarError::EmptyRoute));
    }

    #[test]
    fn dialogue_keys() {
        assert_eq!(
            parse_dialogue_key("Mountain_76_14").unwrap(),
            DialogueKey::Location {
                location: "Mountain".into(),
                x: 76,
                y: 14
            }
        );
        assert_eq!(
            parse_dialogue_key("BathHouse_Entry_5_4").unwrap(),
            DialogueKey::Location {
                location: "BathHouse_Entry".into(),
                x: 5,
                y: 4
            }
        );
        assert_eq!(parse_dialogue_key("10").unwrap(), DialogueKey::DayOfMonth(10));
        assert_eq!(parse_dialogue_key("Sun").unwrap(), DialogueKey::DayOfWeek(Weekday::Sun));
        for bad in [
            "Mountain_76_14_2",
            "11",
            "0",
            "01",
            "",
            "mon",
            "Mountain_76",
            "Mountain__76_14",
            "_76_14",
            "Mountain_076_14",
            "Mountain_76_-14",
        ] {
            assert!(parse_dialogue_key(bad).is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn bundled_whitelist() {
        let wl = Whitelist::bundled();
        assert_eq!(wl.len(), 67);
        let seed = parse_entry("900 SeedShop 21 19 2", Strictness::Strict).unwrap();
        assert!(wl.contains(&seed));
        assert!(wl.contains_tile("Mountain", 76, 14));
        assert!(!wl.contains_tile("Mountain", 76, 15));
        assert_eq!(Whitelist::parse(&wl.to_text()).unwrap().entries(), wl.entries());
    }

    #[test]
    fn nearest_prefers_closest_then_list_order() {
        let wl = Whitelist::bundled();
        // (26,8): 73²+91² = 13610 beats (14,10): 85²+89² = 15146
        let near = wl.nearest_in_location("Mine", 99, 99).unwrap();
        assert_eq!((near.x, near.y), (26, 8));
        let near = wl.nearest_in_location("Mine", 26, 8).unwrap();
        assert_eq!((near.x, near.y, near.direction), (26, 8, 1));
        assert!(wl.nearest_in_location("Moon", 1, 1).is_none());
    }

    fn location_name() -> impl Strategy<Value = String> {
        proptest::collection::vec("[A-Za-z][A-Za-z0-9]{0,8}", 1..3).prop_map(|segs| segs.join("_"))
    }

    fn dialogue_key() -> impl Strategy<Value = DialogueKey> {
        prop_oneof![
            (1u8..=10).prop_map(DialogueKey::DayOfMonth),
            (0usize..7).prop_map(|i| DialogueKey::DayOfWeek(Weekday::ALL[i])),
            (location_name(), any::<u32>(), any::<u32>())
                .prop_map(|(location, x, y)| DialogueKey::Location { location, x, y }),
        ]
    }

    proptest! {
        #[test]
        fn dialogue_key_round_trips(key in dialogue_key()) {
            prop_assert_eq!(parse_dialogue_key(&key.to_string()).unwrap(), key);
        }

        #[test]
        fn parsed_keys_reserialize_identically(s in "[A-Za-z0-9_]{0,16}") {
            if let Ok(key) = parse_dialogue_key(&s) {
                prop_assert_eq!(key.to_string(), s);
            }
        }
    }
}
