//! Scenario definitions and the run configuration file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::domain::{AgentId, AgentProfile, DealDetails, PetKind, SecretPayload};
use crate::participant::MemoryLimits;
use crate::provider::{HttpConfig, RetryPolicy, Sampling};
use crate::supervisor::Guideline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    GuessNumber,
    PetTrading,
    ForumDiscussion,
}

impl ScenarioKind {
    /// Halt mode stops a round at the first violation; forum mode censors
    /// the offending post and carries on.
    pub fn is_halt_mode(self) -> bool {
        !matches!(self, ScenarioKind::ForumDiscussion)
    }
}

/// A validated scenario with every payload resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub participants: Vec<AgentProfile>,
    pub guideline: Guideline,
    pub turns_per_round: u32,
    pub target_replies: Option<u32>,
    pub evolution_rounds: u32,
    pub reflection_threshold: usize,
}

/// The two sides of a pet-trading scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PetTruth {
    pub buyer: AgentId,
    pub seller: AgentId,
    pub pet: PetKind,
    pub deal: DealDetails,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidScenario(msg));
        if self.evolution_rounds == 0 {
            return bad("evolution_rounds must be positive".into());
        }
        if self.reflection_threshold == 0 {
            return bad("reflection_threshold must be positive".into());
        }
        self.guideline.validate().map_err(|e| EngineError::InvalidScenario(e.to_string()))?;
        let mut seen = BTreeSet::new();
        for p in &self.participants {
            p.validate().map_err(|e| EngineError::InvalidScenario(e.to_string()))?;
            if p.role_kind != crate::domain::RoleKind::Participant {
                return bad(format!("`{}` is not a participant", p.agent_id));
            }
            if !seen.insert(p.agent_id.clone()) {
                return bad(format!("duplicate agent id `{}`", p.agent_id));
            }
        }
        if self.kind.is_halt_mode() && self.turns_per_round == 0 {
            return bad("turns_per_round must be positive".into());
        }
        match self.kind {
            ScenarioKind::GuessNumber => {
                if self.participants.len() != 2 {
                    return bad("guess_number needs exactly two participants".into());
                }
                for p in &self.participants {
                    match p.secret_payload {
                        Some(SecretPayload::Number(n)) if (1..=100).contains(&n) => {}
                        _ => return bad(format!("`{}` needs a number in 1..=100", p.agent_id)),
                    }
                }
            }
            ScenarioKind::PetTrading => {
                self.pet_truth()?;
            }
            ScenarioKind::ForumDiscussion => {
                if self.participants.len() < 2 {
                    return bad("forum_discussion needs at least two participants".into());
                }
                if !self.participants.iter().all(|p| matches!(p.secret_payload, Some(SecretPayload::Stance(_)))) {
                    return bad("every forum participant needs a stance payload".into());
                }
                if self.target_replies.unwrap_or(0) == 0 {
                    return bad("forum_discussion needs a positive target_replies".into());
                }
            }
        }
        Ok(())
    }

    pub fn numbers(&self) -> BTreeMap<AgentId, u32> {
        self.participants
            .iter()
            .filter_map(|p| match p.secret_payload {
                Some(SecretPayload::Number(n)) => Some((p.agent_id.clone(), n)),
                _ => None,
            })
            .collect()
    }

    pub fn pet_truth(&self) -> Result<PetTruth, EngineError> {
        let bad = |msg: &str| EngineError::InvalidScenario(msg.to_string());
        if self.participants.len() != 2 {
            return Err(bad("pet_trading needs exactly a buyer and a seller"));
        }
        let buyer = self
            .participants
            .iter()
            .find_map(|p| match p.secret_payload {
                Some(SecretPayload::Pet(pet)) => Some((p.agent_id.clone(), pet)),
                _ => None,
            })
            .ok_or_else(|| bad("pet_trading needs a buyer with a pet payload"))?;
        let seller = self
            .participants
            .iter()
            .find_map(|p| match &p.secret_payload {
                Some(SecretPayload::Deals(deals)) => Some((p.agent_id.clone(), deals)),
                _ => None,
            })
            .ok_or_else(|| bad("pet_trading needs a seller with a deals payload"))?;
        if let Some(missing) = PetKind::ALL.iter().find(|k| !seller.1.contains_key(k)) {
            return Err(EngineError::InvalidScenario(format!("seller has no deal for {missing}")));
        }
        Ok(PetTruth { buyer: buyer.0, seller: seller.0, pet: buyer.1, deal: seller.1[&buyer.1].clone() })
    }

    pub fn stances(&self) -> BTreeMap<AgentId, String> {
        self.participants
            .iter()
            .filter_map(|p| match &p.secret_payload {
                Some(SecretPayload::Stance(s)) => Some((p.agent_id.clone(), s.clone())),
                _ => None,
            })
            .collect()
    }

    /// Distinct stance labels in declaration order.
    pub fn stance_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for p in &self.participants {
            if let Some(SecretPayload::Stance(s)) = &p.secret_payload {
                if !labels.iter().any(|l| l.eq_ignore_ascii_case(s)) {
                    labels.push(s.clone());
                }
            }
        }
        labels
    }
}

/// Tuning knobs that are not part of the scenario itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub supervisor_id: String,
    pub memory: MemoryLimits,
    pub participant_sampling: Sampling,
    pub supervisor_sampling: Sampling,
    pub judge_sampling: Sampling,
    /// Review the whole round so far instead of only the newest turn.
    pub cumulative_review: bool,
    /// Forum rounds fail after `attempt_cap_factor * target_replies` attempts.
    pub attempt_cap_factor: u32,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            supervisor_id: "supervisor".into(),
            memory: MemoryLimits::default(),
            participant_sampling: Sampling::PARTICIPANT,
            supervisor_sampling: Sampling::SUPERVISOR,
            judge_sampling: Sampling::SUPERVISOR,
            cumulative_review: false,
            attempt_cap_factor: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    /// Script book path, relative to the config file.
    pub script: Option<PathBuf>,
    pub http: Option<HttpConfig>,
    /// Alternative model for the supervisor, e.g. to vary supervision strength.
    pub supervisor_model: Option<String>,
    pub judge_model: Option<String>,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadConfig {
    Number(u32),
    /// A pet name, or `random` to draw one from the run seed.
    Pet(String),
    Deals(BTreeMap<PetKind, DealDetails>),
    Stance(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantConfig {
    pub id: String,
    pub name: String,
    pub background: String,
    pub payload: PayloadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub evolution_rounds: u32,
    #[serde(default = "default_turns")]
    pub turns_per_round: u32,
    #[serde(default)]
    pub target_replies: Option<u32>,
    #[serde(default = "default_threshold")]
    pub reflection_threshold: usize,
    pub guideline: Guideline,
    pub participants: Vec<ParticipantConfig>,
}

fn default_turns() -> u32 {
    4
}

fn default_threshold() -> usize {
    1
}

/// Contents of a scenario config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub engine: EngineSettings,
    #[serde(default)]
    pub provider: ProviderSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, EngineError> {
        toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EngineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(script), Some(dir)) = (cfg.provider.script.as_mut(), path.parent()) {
            if script.is_relative() {
                *script = dir.join(&*script);
            }
        }
        Ok(cfg)
    }

    /// Resolves payloads (drawing `random` pets from the seed) and validates.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec, EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = &self.scenario;
        let mut participants = Vec::with_capacity(s.participants.len());
        for p in &s.participants {
            let payload = match &p.payload {
                PayloadConfig::Number(n) => SecretPayload::Number(*n),
                PayloadConfig::Pet(name) if name.eq_ignore_ascii_case("random") => {
                    SecretPayload::Pet(*PetKind::ALL.choose(&mut rng).expect("non-empty"))
                }
                PayloadConfig::Pet(name) => SecretPayload::Pet(
                    name.parse().map_err(|e: crate::error::CoreError| EngineError::InvalidScenario(e.to_string()))?,
                ),
                PayloadConfig::Deals(d) => SecretPayload::Deals(d.clone()),
                PayloadConfig::Stance(st) => SecretPayload::Stance(st.clone()),
            };
            let background = render_background(&p.background, &payload);
            participants.push(
                AgentProfile::participant(p.id.as_str(), p.name.as_str(), background, payload)
                    .map_err(|e| EngineError::InvalidScenario(e.to_string()))?,
            );
        }
        let spec = ScenarioSpec {
            kind: s.kind,
            participants,
            guideline: s.guideline.clone(),
            turns_per_round: s.turns_per_round,
            target_replies: s.target_replies,
            evolution_rounds: s.evolution_rounds,
            reflection_threshold: s.reflection_threshold,
        };
        spec.validate()?;
        if spec.participants.iter().any(|p| p.agent_id.as_str() == self.engine.supervisor_id) {
            return Err(EngineError::InvalidScenario(format!(
                "participant id `{}` collides with the supervisor id",
                self.engine.supervisor_id
            )));
        }
        Ok(spec)
    }
}

/// Fills `{payload}` placeholders in a background template.
fn render_background(template: &str, payload: &SecretPayload) -> String {
    let value = match payload {
        SecretPayload::Number(n) => n.to_string(),
        SecretPayload::Pet(p) => p.to_string(),
        SecretPayload::Deals(_) => payload.describe(),
        SecretPayload::Stance(s) => s.clone(),
    };
    template.replace("{payload}", &value)
}
