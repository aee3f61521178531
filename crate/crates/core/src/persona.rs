//! Persona domain model: categories, attributes, personas and dialogue history.
//!
//! A [`Persona`] is an ordered set of [`PersonaAttribute`]s. Agent attributes
//! start out *adaptable* and become *inadaptable* once they have been
//! manifested in an utterance; that transition is one-way.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sentinel line produced by [`Persona::render_profile`] for an empty persona.
pub const EMPTY_PROFILE: &str = "No persona information.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersonaError {
    #[error("attribute text is empty")]
    EmptyText,
    #[error("attribute {0} not found")]
    NotFound(AttrId),
    #[error("duplicate attribute id {0}")]
    DuplicateId(AttrId),
    #[error("duplicate attribute ({category}, {text:?})")]
    DuplicateAttribute { category: PersonaCategory, text: String },
    #[error("attribute {0}: manifested_turn must be set iff status is inadaptable")]
    ManifestMismatch(AttrId),
    #[error("unknown persona category {0:?}")]
    UnknownCategory(String),
    #[error("turn {index}: {reason}")]
    InvalidTurn { index: usize, reason: String },
}

/// The closed set of persona categories, in canonical rendering order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PersonaCategory {
    Gender,
    Age,
    Location,
    Occupation,
    Education,
    FamilyRelationships,
    RoutinesOrHabits,
    GoalsOrPlans,
    SocialRelationships,
    PersonalityTraits,
    OtherExperiences,
}

impl PersonaCategory {
    pub const ALL: [PersonaCategory; 11] = [
        PersonaCategory::Gender,
        PersonaCategory::Age,
        PersonaCategory::Location,
        PersonaCategory::Occupation,
        PersonaCategory::Education,
        PersonaCategory::FamilyRelationships,
        PersonaCategory::RoutinesOrHabits,
        PersonaCategory::GoalsOrPlans,
        PersonaCategory::SocialRelationships,
        PersonaCategory::PersonalityTraits,
        PersonaCategory::OtherExperiences,
    ];

    /// Identifier used in JSON payloads.
    pub fn key(self) -> &'static str {
        match self {
            PersonaCategory::Gender => "Gender",
            PersonaCategory::Age => "Age",
            PersonaCategory::Location => "Location",
            PersonaCategory::Occupation => "Occupation",
            PersonaCategory::Education => "Education",
            PersonaCategory::FamilyRelationships => "FamilyRelationships",
            PersonaCategory::RoutinesOrHabits => "RoutinesOrHabits",
            PersonaCategory::GoalsOrPlans => "GoalsOrPlans",
            PersonaCategory::SocialRelationships => "SocialRelationships",
            PersonaCategory::PersonalityTraits => "PersonalityTraits",
            PersonaCategory::OtherExperiences => "OtherExperiences",
        }
    }

    /// Human-readable header used in rendered profiles.
    pub fn label(self) -> &'static str {
        match self {
            PersonaCategory::Gender => "Gender",
            PersonaCategory::Age => "Age",
            PersonaCategory::Location => "Location",
            PersonaCategory::Occupation => "Occupation",
            PersonaCategory::Education => "Education",
            PersonaCategory::FamilyRelationships => "Family Relationships",
            PersonaCategory::RoutinesOrHabits => "Routines or Habits",
            PersonaCategory::GoalsOrPlans => "Goals or Plans",
            PersonaCategory::SocialRelationships => "Social Relationships",
            PersonaCategory::PersonalityTraits => "Personality Traits",
            PersonaCategory::OtherExperiences => "Other Experiences",
        }
    }

    /// Lenient lookup used on model output: unknown names fall back to
    /// [`PersonaCategory::OtherExperiences`].
    pub fn coerce(name: &str) -> PersonaCategory {
        name.parse().unwrap_or(PersonaCategory::OtherExperiences)
    }
}

impl FromStr for PersonaCategory {
    type Err = PersonaError;

    /// Accepts either the key or the label, ignoring case, spacing and
    /// punctuation ("routines or habits", "Routines_or_Habits", ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        PersonaCategory::ALL
            .into_iter()
            .find(|c| c.key().to_lowercase() == squashed)
            .ok_or_else(|| PersonaError::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for PersonaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttrId(pub u64);

impl fmt::Display for AttrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeStatus {
    Adaptable,
    Inadaptable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeOrigin {
    Initial,
    Detected,
    AttrMatch,
    ProfileRefine,
    Annotation,
}

/// Either side of a conversation; also the owner of a persona.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Agent,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::User => Role::Agent,
            Role::Agent => Role::User,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaAttribute {
    pub id: AttrId,
    pub category: PersonaCategory,
    pub text: String,
    pub status: AttributeStatus,
    pub origin: AttributeOrigin,
    pub created_turn: u32,
    pub manifested_turn: Option<u32>,
}

impl PersonaAttribute {
    pub fn is_inadaptable(&self) -> bool {
        self.status == AttributeStatus::Inadaptable
    }

    pub fn normalized(&self) -> String {
        normalize_text(&self.text)
    }
}

/// Normalization used for attribute identity: lowercase, collapse internal
/// whitespace, trim, and strip terminal punctuation.
pub fn normalize_text(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .trim_start()
        .to_string()
}

/// An ordered, categorized set of attributes describing one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PersonaRepr")]
pub struct Persona {
    owner: Role,
    attributes: Vec<PersonaAttribute>,
    next_id: u64,
}

#[derive(Deserialize)]
struct PersonaRepr {
    owner: Role,
    #[serde(default)]
    attributes: Vec<PersonaAttribute>,
    #[serde(default)]
    next_id: Option<u64>,
}

impl TryFrom<PersonaRepr> for Persona {
    type Error = PersonaError;

    fn try_from(repr: PersonaRepr) -> Result<Self, Self::Error> {
        let max_id = repr.attributes.iter().map(|a| a.id.0 + 1).max().unwrap_or(1);
        let next_id = repr.next_id.unwrap_or(max_id).max(max_id);
        Persona::from_parts(repr.owner, repr.attributes, next_id)
    }
}

impl Persona {
    pub fn new(owner: Role) -> Self {
        Persona {
            owner,
            attributes: Vec::new(),
            next_id: 1,
        }
    }

    /// Builds a persona from already-identified attributes, checking every
    /// structural invariant.
    pub fn from_parts(
        owner: Role,
        attributes: Vec<PersonaAttribute>,
        next_id: u64,
    ) -> Result<Self, PersonaError> {
        let mut ids = HashSet::new();
        let mut keys = HashSet::new();
        for attr in &attributes {
            let norm = attr.normalized();
            if norm.is_empty() {
                return Err(PersonaError::EmptyText);
            }
            if !ids.insert(attr.id) {
                return Err(PersonaError::DuplicateId(attr.id));
            }
            if !keys.insert((attr.category, norm)) {
                return Err(PersonaError::DuplicateAttribute {
                    category: attr.category,
                    text: attr.text.clone(),
                });
            }
            if attr.is_inadaptable() != attr.manifested_turn.is_some() {
                return Err(PersonaError::ManifestMismatch(attr.id));
            }
        }
        let floor = attributes.iter().map(|a| a.id.0 + 1).max().unwrap_or(1);
        Ok(Persona {
            owner,
            attributes,
            next_id: next_id.max(floor),
        })
    }

    /// Convenience constructor from `(category, text)` pairs, all adaptable.
    pub fn from_pairs<'a, I>(owner: Role, origin: AttributeOrigin, pairs: I) -> Result<Self, PersonaError>
    where
        I: IntoIterator<Item = (PersonaCategory, &'a str)>,
    {
        let mut persona = Persona::new(owner);
        for (category, text) in pairs {
            persona.add_attribute(category, text, origin, 0)?;
        }
        Ok(persona)
    }

    pub fn owner(&self) -> Role {
        self.owner
    }

    pub fn attributes(&self) -> &[PersonaAttribute] {
        &self.attributes
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn get(&self, id: AttrId) -> Option<&PersonaAttribute> {
        self.attributes.iter().find(|a| a.id == id)
    }

    pub fn find(&self, category: PersonaCategory, text: &str) -> Option<&PersonaAttribute> {
        let norm = normalize_text(text);
        self.attributes
            .iter()
            .find(|a| a.category == category && a.normalized() == norm)
    }

    pub fn in_category(&self, category: PersonaCategory) -> impl Iterator<Item = &PersonaAttribute> {
        self.attributes.iter().filter(move |a| a.category == category)
    }

    /// Appends an adaptable attribute. Re-adding an existing
    /// `(category, normalized text)` returns the existing id unchanged.
    pub fn add_attribute(
        &mut self,
        category: PersonaCategory,
        text: &str,
        origin: AttributeOrigin,
        turn: u32,
    ) -> Result<AttrId, PersonaError> {
        let text = text.trim();
        if normalize_text(text).is_empty() {
            return Err(PersonaError::EmptyText);
        }
        if let Some(existing) = self.find(category, text) {
            return Ok(existing.id);
        }
        let id = AttrId(self.next_id);
        self.next_id += 1;
        self.attributes.push(PersonaAttribute {
            id,
            category,
            text: text.to_string(),
            status: AttributeStatus::Adaptable,
            origin,
            created_turn: turn,
            manifested_turn: None,
        });
        Ok(id)
    }

    /// Freezes an attribute. Returns `true` when the status actually changed;
    /// repeated calls keep the earliest manifestation turn.
    pub fn mark_inadaptable(&mut self, id: AttrId, turn: u32) -> Result<bool, PersonaError> {
        let attr = self
            .attributes
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or(PersonaError::NotFound(id))?;
        match attr.manifested_turn {
            Some(prev) => {
                attr.manifested_turn = Some(prev.min(turn));
                Ok(false)
            }
            None => {
                attr.status = AttributeStatus::Inadaptable;
                attr.manifested_turn = Some(turn);
                Ok(true)
            }
        }
    }

    /// Inadaptable attributes ordered by manifestation turn (stable on ties).
    pub fn inadaptable_set(&self) -> Vec<PersonaAttribute> {
        let mut out: Vec<_> = self
            .attributes
            .iter()
            .filter(|a| a.is_inadaptable())
            .cloned()
            .collect();
        out.sort_by_key(|a| a.manifested_turn);
        out
    }

    pub fn render_profile(&self) -> String {
        render_attributes(&self.attributes)
    }

    /// Texts only, in insertion order.
    pub fn texts(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.text.as_str()).collect()
    }
}

/// Canonical profile text: one header per non-empty category in enum order,
/// one `- ` bullet per attribute in insertion order.
pub fn render_attributes<'a, I>(attributes: I) -> String
where
    I: IntoIterator<Item = &'a PersonaAttribute>,
{
    let attributes: Vec<&PersonaAttribute> = attributes.into_iter().collect();
    if attributes.is_empty() {
        return EMPTY_PROFILE.to_string();
    }
    let mut lines = Vec::new();
    for category in PersonaCategory::ALL {
        let mut members = attributes.iter().filter(|a| a.category == category).peekable();
        if members.peek().is_none() {
            continue;
        }
        lines.push(format!("{}:", category.label()));
        lines.extend(members.map(|a| format!("- {}", a.text)));
    }
    lines.join("\n")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfileParseError {
    #[error("profile text contains no attribute bullets")]
    NoAttributes,
    #[error("line {line}: bullet appears before any category header")]
    OrphanBullet { line: usize },
}

/// Inverse of [`render_attributes`]. Tolerates blank lines, `*` bullets,
/// markdown emphasis around headers and unknown headers (filed under
/// `OtherExperiences`). Lines that are neither headers nor bullets are ignored.
pub fn parse_profile(text: &str) -> Result<Vec<(PersonaCategory, String)>, ProfileParseError> {
    if normalize_text(text) == normalize_text(EMPTY_PROFILE) {
        return Ok(Vec::new());
    }
    let mut current: Option<PersonaCategory> = None;
    let mut out = Vec::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(item) = line.strip_prefix("- ").or_else(|| line.strip_prefix("* ")) {
            let category = current.ok_or(ProfileParseError::OrphanBullet { line: line_no + 1 })?;
            let item = item.trim();
            if !normalize_text(item).is_empty() {
                out.push((category, item.to_string()));
            }
            continue;
        }
        let header = line.trim_matches(|c| c == '*' || c == '#' || c == ' ');
        if let Some(name) = header.strip_suffix(':') {
            if !name.trim().is_empty() {
                current = Some(PersonaCategory::coerce(name.trim()));
            }
        }
    }
    if out.is_empty() {
        return Err(ProfileParseError::NoAttributes);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub index: usize,
    pub speaker: Role,
    pub text: String,
    #[serde(default)]
    pub strategy: Option<String>,
}

/// Append-only, strictly alternating list of turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DialogueTurn>", into = "Vec<DialogueTurn>")]
pub struct DialogueHistory {
    turns: Vec<DialogueTurn>,
}

impl TryFrom<Vec<DialogueTurn>> for DialogueHistory {
    type Error = PersonaError;

    fn try_from(turns: Vec<DialogueTurn>) -> Result<Self, Self::Error> {
        let mut history = DialogueHistory::default();
        for (pos, turn) in turns.into_iter().enumerate() {
            if let Some(last) = history.turns.last() {
                if turn.index <= last.index {
                    return Err(PersonaError::InvalidTurn {
                        index: pos,
                        reason: "turn indices must strictly increase".into(),
                    });
                }
            }
            history.check_next(pos, turn.speaker, &turn.text)?;
            history.turns.push(turn);
        }
        Ok(history)
    }
}

impl From<DialogueHistory> for Vec<DialogueTurn> {
    fn from(history: DialogueHistory) -> Self {
        history.turns
    }
}

impl DialogueHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last(&self) -> Option<&DialogueTurn> {
        self.turns.last()
    }

    fn check_next(&self, pos: usize, speaker: Role, text: &str) -> Result<(), PersonaError> {
        if text.trim().is_empty() {
            return Err(PersonaError::InvalidTurn {
                index: pos,
                reason: "empty utterance".into(),
            });
        }
        if self.turns.last().is_some_and(|t| t.speaker == speaker) {
            return Err(PersonaError::InvalidTurn {
                index: pos,
                reason: format!("{speaker:?} spoke twice in a row"),
            });
        }
        Ok(())
    }

    pub fn push(&mut self, speaker: Role, text: &str, strategy: Option<String>) -> Result<&DialogueTurn, PersonaError> {
        let index = self.turns.last().map_or(0, |t| t.index + 1);
        self.check_next(self.turns.len(), speaker, text)?;
        self.turns.push(DialogueTurn {
            index,
            speaker,
            text: text.trim().to_string(),
            strategy,
        });
        Ok(self.turns.last().expect("just pushed"))
    }

    /// Texts of every turn spoken by `speaker`, in order.
    pub fn utterances(&self, speaker: Role) -> Vec<&str> {
        self.turns
            .iter()
            .filter(|t| t.speaker == speaker)
            .map(|t| t.text.as_str())
            .collect()
    }

    /// One JSON turn object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for turn in &self.turns {
            out.push_str(&serde_json::to_string(turn).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ConversationParseError> {
        let mut turns = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let turn: DialogueTurn = serde_json::from_str(line).map_err(|e| ConversationParseError::Json {
                line: line_no + 1,
                message: e.to_string(),
            })?;
            turns.push(turn);
        }
        DialogueHistory::try_from(turns).map_err(ConversationParseError::Invalid)
    }
}

#[derive(Debug, Error)]
pub enum ConversationParseError {
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error(transparent)]
    Invalid(PersonaError),
}
