//! Value types shared by every stage of a run.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Opaque agent identifier, unique within a run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    Participant,
    Supervisor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PetKind {
    Parrot,
    Lizard,
    Cat,
}

impl PetKind {
    pub const ALL: [PetKind; 3] = [PetKind::Parrot, PetKind::Lizard, PetKind::Cat];

    pub fn as_str(self) -> &'static str {
        match self {
            PetKind::Parrot => "parrot",
            PetKind::Lizard => "lizard",
            PetKind::Cat => "cat",
        }
    }

    /// Case-insensitive keyword match; the first pet named in the text wins.
    pub fn find_in(text: &str) -> Option<PetKind> {
        let lower = text.to_lowercase();
        PetKind::ALL
            .iter()
            .filter_map(|&p| lower.find(p.as_str()).map(|at| (at, p)))
            .min_by_key(|&(at, _)| at)
            .map(|(_, p)| p)
    }
}

impl fmt::Display for PetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PetKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "parrot" => Ok(PetKind::Parrot),
            "lizard" => Ok(PetKind::Lizard),
            "cat" => Ok(PetKind::Cat),
            other => Err(CoreError::InvalidProfile(format!("unknown pet kind `{other}`"))),
        }
    }
}

/// Time, place and contact person for handing over one kind of pet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DealDetails {
    pub time: String,
    pub place: String,
    pub person: String,
}

/// The ground truth a participant has to get across.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretPayload {
    Number(u32),
    Pet(PetKind),
    /// A seller knows the deal for every pet kind it offers.
    Deals(BTreeMap<PetKind, DealDetails>),
    Stance(String),
}

impl SecretPayload {
    /// Human-readable statement used when the agent cross-checks interviews.
    pub fn describe(&self) -> String {
        match self {
            SecretPayload::Number(n) => format!("your number is {n}"),
            SecretPayload::Pet(p) => format!("you want to buy a {p}"),
            SecretPayload::Deals(deals) => deals
                .iter()
                .map(|(pet, d)| format!("{pet}: time {}, place {}, person {}", d.time, d.place, d.person))
                .collect::<Vec<_>>()
                .join("; "),
            SecretPayload::Stance(s) => format!("your stance is {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub agent_id: AgentId,
    pub display_name: String,
    pub role_kind: RoleKind,
    pub background: String,
    pub secret_payload: Option<SecretPayload>,
}

impl AgentProfile {
    pub fn participant(
        agent_id: impl Into<AgentId>,
        display_name: impl Into<String>,
        background: impl Into<String>,
        payload: SecretPayload,
    ) -> Result<Self, CoreError> {
        let profile = Self {
            agent_id: agent_id.into(),
            display_name: display_name.into(),
            role_kind: RoleKind::Participant,
            background: background.into(),
            secret_payload: Some(payload),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn supervisor(
        agent_id: impl Into<AgentId>,
        display_name: impl Into<String>,
        background: impl Into<String>,
    ) -> Result<Self, CoreError> {
        let profile = Self {
            agent_id: agent_id.into(),
            display_name: display_name.into(),
            role_kind: RoleKind::Supervisor,
            background: background.into(),
            secret_payload: None,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.agent_id.as_str().trim().is_empty() {
            return Err(CoreError::InvalidProfile("empty agent id".into()));
        }
        if self.background.trim().is_empty() {
            return Err(CoreError::InvalidProfile(format!("agent `{}` has an empty background", self.agent_id)));
        }
        match (self.role_kind, &self.secret_payload) {
            (RoleKind::Participant, None) => {
                Err(CoreError::InvalidProfile(format!("participant `{}` has no secret payload", self.agent_id)))
            }
            (RoleKind::Supervisor, Some(_)) => Err(CoreError::InvalidProfile(format!(
                "supervisor `{}` must not carry a secret payload",
                self.agent_id
            ))),
            _ => Ok(()),
        }
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

/// Maps agent ids to display names for rendering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster(BTreeMap<AgentId, String>);

impl Roster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: AgentId, name: impl Into<String>) {
        self.0.insert(id, name.into());
    }

    /// Falls back to the raw id for unknown agents.
    pub fn name_of<'a>(&'a self, id: &'a AgentId) -> &'a str {
        self.0.get(id).map(String::as_str).unwrap_or(id.as_str())
    }
}

impl<'a> FromIterator<&'a AgentProfile> for Roster {
    fn from_iter<T: IntoIterator<Item = &'a AgentProfile>>(iter: T) -> Self {
        let mut roster = Roster::new();
        for p in iter {
            roster.insert(p.agent_id.clone(), p.display_name.clone());
        }
        roster
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author_id: AgentId,
    /// Position of the message within its round; strictly increasing.
    pub turn_index: u32,
    pub body: String,
    /// Forum mode only: rejected by the supervisor and hidden from the public record.
    #[serde(default)]
    pub censored: bool,
    /// Produced by memory compression rather than spoken by the author.
    #[serde(default)]
    pub summary: bool,
}

impl Message {
    pub fn new(author_id: AgentId, turn_index: u32, body: impl Into<String>) -> Result<Self, CoreError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(CoreError::EmptyMessage { author: author_id.to_string() });
        }
        Ok(Self { author_id, turn_index, body, censored: false, summary: false })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub round_index: u32,
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn new(round_index: u32) -> Self {
        Self { round_index, messages: Vec::new() }
    }

    pub fn push(&mut self, message: Message) -> Result<(), CoreError> {
        if let Some(last) = self.messages.last() {
            if message.turn_index <= last.turn_index {
                return Err(CoreError::TurnOrder { previous: last.turn_index, next: message.turn_index });
            }
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Messages that made it into the public record.
    pub fn public(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(|m| !m.censored)
    }

    pub fn next_turn_index(&self) -> u32 {
        self.messages.last().map_or(0, |m| m.turn_index + 1)
    }
}

/// One line per message, `<display_name>: <body>`. Newlines inside a body are
/// folded into spaces so that the line count equals the message count.
pub fn render_transcript(t: &Transcript, roster: &Roster, include_censored: bool) -> String {
    render_messages(t.messages.iter().filter(|m| include_censored || !m.censored), roster)
}

pub fn render_messages<'a>(messages: impl IntoIterator<Item = &'a Message>, roster: &Roster) -> String {
    messages
        .into_iter()
        .map(|m| {
            let name = if m.summary { "Summary" } else { roster.name_of(&m.author_id) };
            format!("{name}: {}", one_line(&m.body))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStage {
    Keyword,
    LlmReview,
}

impl fmt::Display for ReviewStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewStage::Keyword => "keyword",
            ReviewStage::LlmReview => "llm_review",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub round_index: u32,
    pub offending_text: String,
    pub rationale: String,
    pub stage: ReviewStage,
}

/// A log entry is either a single detection or a summary standing in for a
/// compressed run of older detections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum ViolationEntry {
    Record(ViolationRecord),
    Summary { through_round: u32, folded: usize, text: String },
}

impl ViolationEntry {
    fn round_index(&self) -> u32 {
        match self {
            ViolationEntry::Record(r) => r.round_index,
            ViolationEntry::Summary { through_round, .. } => *through_round,
        }
    }

    fn weight(&self) -> usize {
        match self {
            ViolationEntry::Record(_) => 1,
            ViolationEntry::Summary { folded, .. } => *folded,
        }
    }

    fn render(&self) -> String {
        match self {
            ViolationEntry::Record(r) => format!(
                "Round {}: flagged ({}) \"{}\". Reason: {}",
                r.round_index,
                r.stage,
                one_line(&r.offending_text),
                one_line(&r.rationale)
            ),
            ViolationEntry::Summary { through_round, folded, text } => {
                format!("Summary of {folded} earlier violations (through round {through_round}): {}", one_line(text))
            }
        }
    }
}

/// One line per entry.
pub fn render_violation_entries(entries: &[ViolationEntry]) -> String {
    entries.iter().map(ViolationEntry::render).collect::<Vec<_>>().join("\n")
}

/// Long-term memory of supervisor detections. Entries are only appended, or
/// a prefix is replaced by a summary that remembers how many records it folds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationLog {
    entries: Vec<ViolationEntry>,
}

impl ViolationLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: ViolationRecord) -> Result<(), CoreError> {
        if record.rationale.trim().is_empty() {
            return Err(CoreError::InvalidViolation("empty rationale".into()));
        }
        if let Some(last) = self.entries.last() {
            if record.round_index < last.round_index() {
                return Err(CoreError::InvalidViolation(format!(
                    "round {} recorded after round {}",
                    record.round_index,
                    last.round_index()
                )));
            }
        }
        self.entries.push(ViolationEntry::Record(record));
        Ok(())
    }

    /// Number of detections ever recorded, counting those folded into summaries.
    pub fn len(&self) -> usize {
        self.entries.iter().map(ViolationEntry::weight).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ViolationEntry] {
        &self.entries
    }

    pub fn records(&self) -> impl Iterator<Item = &ViolationRecord> {
        self.entries.iter().filter_map(|e| match e {
            ViolationEntry::Record(r) => Some(r),
            ViolationEntry::Summary { .. } => None,
        })
    }

    pub fn render(&self) -> String {
        render_violation_entries(&self.entries)
    }

    /// Replaces the first `count` entries with one summary entry.
    pub fn fold_prefix(&mut self, count: usize, text: impl Into<String>) {
        let count = count.min(self.entries.len());
        if count == 0 {
            return;
        }
        let folded: usize = self.entries[..count].iter().map(ViolationEntry::weight).sum();
        let through_round = self.entries[count - 1].round_index();
        self.entries.splice(..count, [ViolationEntry::Summary { through_round, folded, text: text.into() }]);
    }
}
