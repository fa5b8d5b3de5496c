//! Domain types shared by every stage of the character pipeline.
//!
//! Everything here is an immutable value once constructed. Constructors and
//! `validate` methods enforce the invariants; the stages never hand out a
//! value that fails them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum length, in characters after trimming, of a character description.
pub const MIN_DESCRIPTION_CHARS: usize = 50;

/// Highest valid birthday day; one game season has 28 days.
pub const DAYS_PER_SEASON: u8 = 28;

/// Number of bullet points on a highlight card.
pub const HIGHLIGHT_BULLETS: usize = 4;

/// Bullets longer than this many words are reported as lints.
pub const MAX_BULLET_WORDS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("description is too short: {actual} characters, at least {MIN_DESCRIPTION_CHARS} required")]
    TooShort { actual: usize },
    #[error("unknown season {0:?}")]
    BadSeason(String),
    #[error("invalid birthday {0:?}, expected '<Season> <day>' with day 1..=28")]
    BadBirthday(String),
    #[error("{field}: value {value:?} is not one of {allowed}")]
    EnumOutOfRange {
        field: &'static str,
        value: String,
        allowed: String,
    },
    #[error("unknown day of week {0:?}")]
    BadWeekday(String),
    #[error("{0} must not be empty")]
    Empty(String),
    #[error("highlight must have exactly {HIGHLIGHT_BULLETS} bullets, got {0}")]
    BulletCount(usize),
    #[error("age must be positive")]
    ZeroAge,
}

/// The free-form text a user writes to describe the character they want.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CharacterDescription(String);

impl CharacterDescription {
    pub fn new(text: &str) -> Result<Self, ModelError> {
        let trimmed = text.trim();
        let actual = trimmed.chars().count();
        if actual < MIN_DESCRIPTION_CHARS {
            return Err(ModelError::TooShort { actual });
        }
        Ok(Self(trimmed.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CharacterDescription {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(&value)
    }
}

impl From<CharacterDescription> for String {
    fn from(value: CharacterDescription) -> Self {
        value.0
    }
}

impl fmt::Display for CharacterDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks a raw description, failing with [`ModelError::TooShort`] when the
/// trimmed text has fewer than [`MIN_DESCRIPTION_CHARS`] characters.
pub fn validate_description(text: &str) -> Result<CharacterDescription, ModelError> {
    CharacterDescription::new(text)
}

/// Declares a closed, case-insensitively parsed enum that serializes as its
/// capitalized variant name.
macro_rules! closed_enum {
    ($(#[$meta:meta])* $name:ident, $field:literal, [$($variant:ident),+ $(,)?]) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
            pub const FIELD: &'static str = $field;

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => stringify!($variant)),+
                }
            }

            /// Allowed values, comma separated, for error messages and prompts.
            pub fn allowed() -> String {
                Self::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
            }
        }

        impl FromStr for $name {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let wanted = s.trim();
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(wanted))
                    .ok_or_else(|| ModelError::EnumOutOfRange {
                        field: $field,
                        value: s.to_owned(),
                        allowed: Self::allowed(),
                    })
            }
        }

        impl TryFrom<String> for $name {
            type Error = ModelError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                value.parse()
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> Self {
                value.as_str().to_owned()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

closed_enum!(Season, "season", [Spring, Summer, Fall, Winter]);
closed_enum!(
    /// How courteous the character is.
    Manner, "manners", [Polite, Rude, Neutral]
);
closed_enum!(
    /// How comfortable the character is around other people.
    SocialAnxiety, "socialAnxiety", [Outgoing, Shy, Neutral]
);
closed_enum!(
    /// The character's general outlook.
    Optimism, "optimism", [Positive, Negative, Neutral]
);

/// A birthday in game format, e.g. `Fall 15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Birthday {
    season: Season,
    day: u8,
}

impl Birthday {
    pub fn new(season: Season, day: u8) -> Result<Self, ModelError> {
        if !(1..=DAYS_PER_SEASON).contains(&day) {
            return Err(ModelError::BadBirthday(format!("{season} {day}")));
        }
        Ok(Self { season, day })
    }

    pub fn season(self) -> Season {
        self.season
    }

    pub fn day(self) -> u8 {
        self.day
    }
}

impl FromStr for Birthday {
    type Err = ModelError;

    /// Accepts `Fall 15`, `Fall, 15`, `fall 05` and similar spellings.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadBirthday(s.to_owned());
        let text = s.trim();
        let split = text
            .find(|c: char| !c.is_ascii_alphabetic())
            .ok_or_else(bad)?;
        let (season, rest) = text.split_at(split);
        let season: Season = season.parse().map_err(|_| bad())?;
        let digits = rest.trim_start_matches([',', ' ', '\t']);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 2 {
            return Err(bad());
        }
        let day: u8 = digits.parse().map_err(|_| bad())?;
        Self::new(season, day).map_err(|_| bad())
    }
}

impl TryFrom<String> for Birthday {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Birthday> for String {
    fn from(value: Birthday) -> Self {
        value.to_string()
    }
}

impl fmt::Display for Birthday {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.season, self.day)
    }
}

/// Non-fatal quality findings. They are surfaced to the user but never block
/// the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lint {
    pub location: String,
    pub message: String,
}

/// A compact character card produced by the first stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub image: String,
    pub name: String,
    pub age: u32,
    pub birthday: Birthday,
    pub gender: String,
    pub title: String,
    pub bullets: Vec<String>,
    pub quote: String,
    pub description: String,
}

impl Highlight {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.trim().is_empty() {
            return Err(ModelError::Empty("name".into()));
        }
        if self.age == 0 {
            return Err(ModelError::ZeroAge);
        }
        if self.bullets.len() != HIGHLIGHT_BULLETS {
            return Err(ModelError::BulletCount(self.bullets.len()));
        }
        Ok(())
    }

    pub fn lints(&self) -> Vec<Lint> {
        self.bullets
            .iter()
            .enumerate()
            .filter(|(_, b)| b.split_whitespace().count() > MAX_BULLET_WORDS)
            .map(|(i, b)| Lint {
                location: format!("bullets.{i}"),
                message: format!("bullet {b:?} has more than {MAX_BULLET_WORDS} words"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PersonalityProfile {
    pub characteristics: String,
    pub job: String,
    pub hobbies: String,
    pub food_and_drinks: String,
    pub others: String,
    pub manners: Manner,
    pub manners_description: String,
    pub social_anxiety: SocialAnxiety,
    pub social_anxiety_description: String,
    pub optimism: Optimism,
    pub optimism_description: String,
}

impl PersonalityProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        let texts = [
            ("personality.characteristics", &self.characteristics),
            ("personality.job", &self.job),
            ("personality.hobbies", &self.hobbies),
            ("personality.foodAndDrinks", &self.food_and_drinks),
            ("personality.others", &self.others),
            ("personality.mannersDescription", &self.manners_description),
            ("personality.socialAnxietyDescription", &self.social_anxiety_description),
            ("personality.optimismDescription", &self.optimism_description),
        ];
        for (field, text) in texts {
            if text.trim().is_empty() {
                return Err(ModelError::Empty(field.into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub title: String,
    pub description: String,
}

/// The full trait sheet produced by the second stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CharacterExpansion {
    pub portrait_paths: Vec<String>,
    pub name: String,
    pub gender: String,
    pub age: u32,
    pub birthday: Birthday,
    pub title: String,
    pub bullets: Vec<String>,
    pub quote: String,
    pub summary: String,
    pub description: String,
    pub personality: PersonalityProfile,
    pub sample_dialogues: Vec<String>,
    pub schedule_summaries: Vec<ScheduleSummary>,
}

impl CharacterExpansion {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.trim().is_empty() {
            return Err(ModelError::Empty("name".into()));
        }
        if self.age == 0 {
            return Err(ModelError::ZeroAge);
        }
        self.personality.validate()?;
        if self.sample_dialogues.is_empty() {
            return Err(ModelError::Empty("sampleDialogues".into()));
        }
        if self.schedule_summaries.is_empty() {
            return Err(ModelError::Empty("scheduleSummaries".into()));
        }
        for (i, s) in self.schedule_summaries.iter().enumerate() {
            if s.title.trim().is_empty() || s.description.trim().is_empty() {
                return Err(ModelError::Empty(format!("scheduleSummaries.{i}")));
            }
        }
        Ok(())
    }
}

closed_enum!(
    /// Day-of-week key used by schedules and dialogues.
    Weekday, "day", [Mon, Tue, Wed, Thu, Fri, Sat, Sun]
);

impl Weekday {
    /// Case-sensitive parse used by the dialogue-key grammar.
    pub fn from_exact(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|d| d.as_str() == s)
    }
}

/// One stop on a daily route: at `time` walk to tile (`x`, `y`) in
/// `location` and face `direction`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub time: u16,
    pub location: String,
    pub x: u32,
    pub y: u32,
    pub direction: u8,
}

/// Routes for all seven days of the week.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailySchedule {
    days: BTreeMap<Weekday, Vec<ScheduleEntry>>,
}

impl DailySchedule {
    /// Builds a schedule from per-day routes. Callers are expected to have
    /// checked entry-level invariants with the grammar module; this checks
    /// that every day is present and times strictly increase.
    pub fn new(days: BTreeMap<Weekday, Vec<ScheduleEntry>>) -> Result<Self, ScheduleShapeError> {
        for day in Weekday::ALL {
            let entries = days.get(day).ok_or(ScheduleShapeError::MissingDay(*day))?;
            if entries.is_empty() {
                return Err(ScheduleShapeError::EmptyDay(*day));
            }
            if let Some(w) = entries.windows(2).find(|w| w[0].time >= w[1].time) {
                return Err(ScheduleShapeError::NotIncreasing {
                    day: *day,
                    time: w[1].time,
                });
            }
        }
        Ok(Self { days })
    }

    pub fn day(&self, day: Weekday) -> &[ScheduleEntry] {
        self.days.get(&day).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (Weekday, &[ScheduleEntry])> {
        self.days.iter().map(|(d, e)| (*d, e.as_slice()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &ScheduleEntry> {
        self.days.values().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleShapeError {
    #[error("schedule has no route for {0}")]
    MissingDay(Weekday),
    #[error("route for {0} is empty")]
    EmptyDay(Weekday),
    #[error("route for {day} is not in increasing time order at {time}")]
    NotIncreasing { day: Weekday, time: u16 },
}

/// Addresses a dialogue line. The variant order is the canonical order in
/// emitted dialogue documents.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DialogueKey {
    DayOfMonth(u8),
    DayOfWeek(Weekday),
    Location { location: String, x: u32, y: u32 },
}

/// Keyed dialogue lines, in canonical key order.
pub type DialogueSet = BTreeMap<DialogueKey, String>;

/// Lines spoken when receiving a gift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiftDialogues {
    pub love: String,
    pub like: String,
    pub dislike: String,
    pub hate: String,
    pub neutral: String,
}

impl GiftDialogues {
    pub const CATEGORIES: [&'static str; 5] = ["love", "like", "dislike", "hate", "neutral"];
}

/// Item names the character reacts to, by gift taste.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GiftPreferences {
    pub love: Vec<String>,
    pub like: Vec<String>,
    pub dislike: Vec<String>,
    pub hate: Vec<String>,
}

impl GiftPreferences {
    pub fn is_empty(&self) -> bool {
        self.love.is_empty() && self.like.is_empty() && self.dislike.is_empty() && self.hate.is_empty()
    }

    pub fn lists(&self) -> [(&'static str, &[String]); 4] {
        [
            ("love", &self.love),
            ("like", &self.like),
            ("dislike", &self.dislike),
            ("hate", &self.hate),
        ]
    }

    /// True when no item appears in two lists.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.lists()
            .iter()
            .all(|(_, items)| {
                let mut local = std::collections::HashSet::new();
                items.iter().all(|i| local.insert(i.as_str()))
                    && local.iter().all(|i| seen.insert(*i))
            })
    }
}
