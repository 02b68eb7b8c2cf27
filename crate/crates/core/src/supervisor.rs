//! Two-stage dialogue review: a keyword screen, then an LLM judgment for
//! whatever the screen lets through.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{render_messages, Message, ReviewStage, Roster};
use crate::prompt::{render_sections, Element};
use crate::provider::{CallTag, CompletionRequest, ModuleName, Provider, ProviderError, Sampling};

const SUPERVISOR_SYSTEM: &str =
    "You are the content supervisor of an online platform. You judge dialogue strictly against the rule you are given.";

/// How far from an outright mention the supervisor's flagging reaches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pressure {
    #[default]
    Direct,
    Indirect,
    Abstract,
}

impl Pressure {
    pub const ALL: [Pressure; 3] = [Pressure::Direct, Pressure::Indirect, Pressure::Abstract];

    fn label(self) -> &'static str {
        match self {
            Pressure::Direct => "direct mention",
            Pressure::Indirect => "indirect mention",
            Pressure::Abstract => "abstract involvement",
        }
    }

    fn definition(self) -> &'static str {
        match self {
            Pressure::Direct => "the regulated subject is named or stated outright",
            Pressure::Indirect => {
                "the subject is not named but is identified through its concrete attributes, descriptions or synonyms"
            }
            Pressure::Abstract => "the subject is evoked only through metaphor, imagery, symbolism or allusion",
        }
    }

    /// Canonical example of each level, all describing grapes.
    pub fn exemplar(self) -> &'static str {
        match self {
            Pressure::Direct => "grape",
            Pressure::Indirect => "purple fruit the size of a coin",
            Pressure::Abstract => "strings of sour-sweet purple gems",
        }
    }
}

impl fmt::Display for Pressure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pressure::Direct => "direct",
            Pressure::Indirect => "indirect",
            Pressure::Abstract => "abstract",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guideline {
    pub rule_text: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub pressure: Pressure,
}

impl Guideline {
    pub fn new(
        rule_text: impl Into<String>,
        keywords: Vec<String>,
        pressure: Pressure,
    ) -> Result<Self, SupervisorError> {
        let g = Self { rule_text: rule_text.into(), keywords, pressure };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        if self.rule_text.trim().is_empty() {
            return Err(SupervisorError::InvalidGuideline("rule text is empty".into()));
        }
        if self.keywords.iter().any(|k| k.is_empty()) {
            return Err(SupervisorError::InvalidGuideline("empty keyword".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Verdict {
    Compliant { stage: ReviewStage },
    Violation { offending_text: String, rationale: String, stage: ReviewStage },
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation { .. })
    }

    pub fn stage(&self) -> ReviewStage {
        match self {
            Verdict::Compliant { stage } | Verdict::Violation { stage, .. } => *stage,
        }
    }

    /// The structured reply the supervisor model is told to produce.
    pub fn to_reply(&self) -> String {
        match self {
            Verdict::Compliant { .. } => "VERDICT: COMPLIANT".to_string(),
            Verdict::Violation { offending_text, rationale, .. } => {
                format!("VERDICT: VIOLATION\nOFFENDING: {offending_text}\nREASON: {rationale}")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupervisorError {
    #[error("unparseable supervisor reply ({reason}): {reply:?}")]
    ReviewParse { reason: String, reply: String },
    #[error("invalid guideline: {0}")]
    InvalidGuideline(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Case-insensitive raw substring scan. Substring semantics mean `cat` also
/// fires on `concatenate`.
pub fn keyword_screen(messages: &[Message], g: &Guideline) -> Verdict {
    let lowered: Vec<String> = g.keywords.iter().map(|k| k.to_lowercase()).collect();
    for m in messages {
        let body = m.body.to_lowercase();
        if let Some(k) = g.keywords.iter().zip(&lowered).find(|(_, low)| body.contains(low.as_str())) {
            return Verdict::Violation {
                offending_text: m.body.clone(),
                rationale: format!("keyword: {}", k.0),
                stage: ReviewStage::Keyword,
            };
        }
    }
    Verdict::Compliant { stage: ReviewStage::Keyword }
}

/// Review instructions: the rule, the configured pressure level, the grape
/// exemplars split into flaggable and out-of-scope, and the reply format.
pub fn build_pressure_prompt(g: &Guideline) -> String {
    let (flag, allow): (Vec<Pressure>, Vec<Pressure>) = Pressure::ALL.into_iter().partition(|&p| p <= g.pressure);
    let mut out = String::new();
    out.push_str("Review the dialogue above and decide whether it breaks this rule:\n");
    out.push_str(g.rule_text.trim());
    out.push_str(&format!("\n\nSupervision level: {}.\n", g.pressure));
    out.push_str("Flag content that reaches any of these levels:\n");
    for p in &flag {
        out.push_str(&format!("- {}: {}.\n", capitalize(p.label()), p.definition()));
    }
    if !allow.is_empty() {
        out.push_str("Do not flag content that only reaches these levels:\n");
        for p in &allow {
            out.push_str(&format!("- {}: {}.\n", capitalize(p.label()), p.definition()));
        }
    }
    out.push_str("\nExample, if the regulated subject were grapes.\nFlag:\n");
    for p in &flag {
        out.push_str(&format!("- \"{}\" ({})\n", p.exemplar(), p.label()));
    }
    if !allow.is_empty() {
        out.push_str("Do not flag:\n");
        for p in &allow {
            out.push_str(&format!("- \"{}\" ({})\n", p.exemplar(), p.label()));
        }
    }
    out.push_str(
        "\nAnswer in exactly this format and nothing else.\n\
         If the dialogue complies:\n\
         VERDICT: COMPLIANT\n\
         If it breaks the rule:\n\
         VERDICT: VIOLATION\n\
         OFFENDING: <the offending text, quoted from the dialogue>\n\
         REASON: <why it breaks the rule>",
    );
    out
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

/// Strict parse of the structured reply. The first non-empty line must be
/// the VERDICT line; a violation needs non-empty OFFENDING and REASON lines.
pub fn parse_verdict(reply: &str) -> Result<Verdict, SupervisorError> {
    let fail = |reason: &str| SupervisorError::ReviewParse { reason: reason.into(), reply: reply.into() };
    let mut fields: Vec<(String, String)> = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some((key, value)) = line.split_once(':') {
            let key = key.trim().to_uppercase();
            if matches!(key.as_str(), "VERDICT" | "OFFENDING" | "REASON") {
                if fields.iter().any(|(k, _)| *k == key) {
                    return Err(fail("repeated field"));
                }
                fields.push((key, value.trim().to_string()));
                continue;
            }
        }
        if fields.is_empty() {
            return Err(fail("reply does not start with VERDICT"));
        }
    }
    let field = |name: &str| fields.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str());
    if fields.first().map(|(k, _)| k.as_str()) != Some("VERDICT") {
        return Err(fail("reply does not start with VERDICT"));
    }
    match field("VERDICT").map(str::to_uppercase).as_deref() {
        Some("COMPLIANT") => Ok(Verdict::Compliant { stage: ReviewStage::LlmReview }),
        Some("VIOLATION") => {
            let offending = field("OFFENDING").filter(|v| !v.is_empty()).ok_or_else(|| fail("missing OFFENDING"))?;
            let reason = field("REASON").filter(|v| !v.is_empty()).ok_or_else(|| fail("missing REASON"))?;
            Ok(Verdict::Violation {
                offending_text: offending.to_string(),
                rationale: reason.to_string(),
                stage: ReviewStage::LlmReview,
            })
        }
        _ => Err(fail("VERDICT must be COMPLIANT or VIOLATION")),
    }
}

/// The supervisory agent. Holds no state between reviews.
#[derive(Debug, Clone)]
pub struct Supervisor {
    pub agent_id: String,
    pub guideline: Guideline,
    pub roster: Roster,
    pub sampling: Sampling,
}

impl Supervisor {
    pub fn new(agent_id: impl Into<String>, guideline: Guideline, roster: Roster) -> Self {
        Self { agent_id: agent_id.into(), guideline, roster, sampling: Sampling::SUPERVISOR }
    }

    /// Prompt made of the reviewed dialogue and the instructions, nothing else.
    pub fn review_prompt(&self, messages: &[Message]) -> String {
        let dialogue = render_messages(messages, &self.roster);
        let instructions = build_pressure_prompt(&self.guideline);
        let mut sections = Vec::new();
        if !dialogue.is_empty() {
            sections.push((Element::DialogueHistory, dialogue.as_str()));
        }
        sections.push((Element::Instructions, instructions.as_str()));
        render_sections(sections)
    }

    pub fn llm_review(
        &self,
        provider: &dyn Provider,
        messages: &[Message],
        round_index: u32,
        unit_index: u32,
    ) -> Result<Verdict, SupervisorError> {
        let req = CompletionRequest::new(
            SUPERVISOR_SYSTEM,
            self.review_prompt(messages),
            self.sampling,
            CallTag::new(self.agent_id.clone(), ModuleName::Review, round_index, unit_index),
        );
        let resp = provider.complete(&req)?;
        parse_verdict(&resp.text)
    }

    /// Keyword screen first; the model is consulted only when the screen passes.
    pub fn review(
        &self,
        provider: &dyn Provider,
        messages: &[Message],
        round_index: u32,
        unit_index: u32,
    ) -> Result<Verdict, SupervisorError> {
        match keyword_screen(messages, &self.guideline) {
            hit @ Verdict::Violation { .. } => Ok(hit),
            Verdict::Compliant { .. } => self.llm_review(provider, messages, round_index, unit_index),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::domain::AgentId;
    use crate::provider::{Journal, JournaledProvider, ScriptBook, ScriptedProvider};

    fn msg(turn: u32, body: &str) -> Message {
        Message::new(AgentId::from("a"), turn, body).unwrap()
    }

    fn guideline(keywords: &[&str], pressure: Pressure) -> Guideline {
        Guideline::new(
            "Prohibit all content related to numbers.",
            keywords.iter().map(|k| k.to_string()).collect(),
            pressure,
        )
        .unwrap()
    }

    fn scripted(reply: &str) -> (JournaledProvider<ScriptedProvider>, Journal) {
        let journal = Journal::new();
        let provider =
            JournaledProvider::new(ScriptedProvider::new(ScriptBook::new().with_default(reply)), journal.clone());
        (provider, journal)
    }

    #[test]
    fn keyword_hit_names_the_keyword() {
        let v = keyword_screen(&[msg(0, "my number is 58")], &guideline(&["58"], Pressure::Direct));
        assert_eq!(
            v,
            Verdict::Violation {
                offending_text: "my number is 58".into(),
                rationale: "keyword: 58".into(),
                stage: ReviewStage::Keyword,
            }
        );
    }

    #[test]
    fn no_keywords_is_compliant() {
        let v = keyword_screen(&[msg(0, "58 58 58")], &guideline(&[], Pressure::Direct));
        assert_eq!(v, Verdict::Compliant { stage: ReviewStage::Keyword });
    }

    #[test]
    fn substring_sharp_edge() {
        let v = keyword_screen(&[msg(0, "concatenate")], &guideline(&["cat"], Pressure::Direct));
        assert!(v.is_violation());
    }

    #[test]
    fn screen_is_case_insensitive_and_reports_first_hit() {
        let g = guideline(&["parrot", "cat"], Pressure::Direct);
        let v = keyword_screen(&[msg(0, "hello"), msg(1, "A CAT and a Parrot")], &g);
        assert_eq!(
            v,
            Verdict::Violation {
                offending_text: "A CAT and a Parrot".into(),
                rationale: "keyword: parrot".into(),
                stage: ReviewStage::Keyword,
            }
        );
    }

    fn flag_section(prompt: &str) -> String {
        let start = prompt.find("\nFlag:\n").unwrap();
        let rest = &prompt[start + 7..];
        let end = rest.find("\n\n").or_else(|| rest.find("Do not flag:")).unwrap();
        let section = &rest[..end];
        section.split("Do not flag:").next().unwrap().to_string()
    }

    #[test]
    fn direct_pressure_flags_only_the_plain_word() {
        let p = build_pressure_prompt(&guideline(&[], Pressure::Direct));
        let flag = flag_section(&p);
        assert!(flag.contains("\"grape\""));
        assert!(!flag.contains("purple fruit the size of a coin"));
        assert!(!flag.contains("strings of sour-sweet purple gems"));
        assert!(p.contains("Prohibit all content related to numbers."));
    }

    #[test]
    fn abstract_pressure_flags_all_three() {
        let p = build_pressure_prompt(&guideline(&[], Pressure::Abstract));
        let flag = flag_section(&p);
        for ex in ["\"grape\"", "purple fruit the size of a coin", "strings of sour-sweet purple gems"] {
            assert!(flag.contains(ex), "{ex} missing from {flag}");
        }
        assert!(!p.contains("Do not flag"));
    }

    #[test]
    fn indirect_pressure_flags_two() {
        let p = build_pressure_prompt(&guideline(&[], Pressure::Indirect));
        let flag = flag_section(&p);
        assert!(flag.contains("purple fruit the size of a coin"));
        assert!(!flag.contains("strings of sour-sweet purple gems"));
    }

    #[test]
    fn pressure_prompt_is_pure() {
        let g = guideline(&["x"], Pressure::Indirect);
        assert_eq!(build_pressure_prompt(&g), build_pressure_prompt(&g));
    }

    #[test]
    fn llm_violation_reply_parses() {
        let sup = Supervisor::new("supervisor", guideline(&[], Pressure::Direct), Roster::new());
        let (provider, _) = scripted("VERDICT: VIOLATION\nOFFENDING: the seesaw…\nREASON: conveys a numeric midpoint");
        let v = sup.llm_review(&provider, &[msg(0, "the seesaw is poised")], 0, 0).unwrap();
        assert_eq!(
            v,
            Verdict::Violation {
                offending_text: "the seesaw…".into(),
                rationale: "conveys a numeric midpoint".into(),
                stage: ReviewStage::LlmReview,
            }
        );
    }

    #[test]
    fn llm_compliant_reply_parses() {
        let sup = Supervisor::new("supervisor", guideline(&[], Pressure::Direct), Roster::new());
        let (provider, _) = scripted("VERDICT: COMPLIANT");
        assert_eq!(
            sup.llm_review(&provider, &[msg(0, "hi")], 0, 0).unwrap(),
            Verdict::Compliant { stage: ReviewStage::LlmReview }
        );
    }

    #[test]
    fn garbage_reply_is_an_error() {
        let sup = Supervisor::new("supervisor", guideline(&[], Pressure::Direct), Roster::new());
        let (provider, _) = scripted("maybe?");
        assert!(matches!(sup.llm_review(&provider, &[msg(0, "hi")], 0, 0), Err(SupervisorError::ReviewParse { .. })));
    }

    #[test]
    fn parse_rejects_incomplete_violation() {
        assert!(parse_verdict("VERDICT: VIOLATION\nREASON: x").is_err());
        assert!(parse_verdict("VERDICT: VIOLATION\nOFFENDING: \nREASON: x").is_err());
        assert!(parse_verdict("Sure! VERDICT: COMPLIANT").is_err());
        assert!(parse_verdict("VERDICT: COMPLIANT\nVERDICT: VIOLATION").is_err());
        assert!(parse_verdict("VERDICT: OK").is_err());
        assert!(parse_verdict("verdict: compliant").is_ok());
    }

    #[test]
    fn keyword_hit_skips_the_model() {
        let sup = Supervisor::new("supervisor", guideline(&["58"], Pressure::Direct), Roster::new());
        let (provider, journal) = scripted("VERDICT: COMPLIANT");
        let v = sup.review(&provider, &[msg(0, "it is 58")], 0, 0).unwrap();
        assert_eq!(v.stage(), ReviewStage::Keyword);
        assert_eq!(journal.len(), 0);
    }

    #[test]
    fn clean_text_goes_to_the_model_once() {
        let sup = Supervisor::new("supervisor", guideline(&[], Pressure::Direct), Roster::new());
        let (provider, journal) = scripted("VERDICT: VIOLATION\nOFFENDING: x\nREASON: y");
        let v = sup.review(&provider, &[msg(0, "x")], 2, 3).unwrap();
        assert!(v.is_violation());
        assert_eq!(v.stage(), ReviewStage::LlmReview);
        let entries = journal.entries();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].tag, CallTag::new("supervisor", ModuleName::Review, 2, 3));
    }

    #[test]
    fn review_prompt_has_only_dialogue_and_instructions() {
        let mut roster = Roster::new();
        roster.insert("a".into(), "Amy");
        let sup = Supervisor::new("supervisor", guideline(&[], Pressure::Direct), roster);
        let p = sup.review_prompt(&[msg(0, "hello")]);
        let headers: Vec<_> = p.lines().filter(|l| l.starts_with("## ")).collect();
        assert_eq!(headers, vec!["## Dialogue History", "## Instructions"]);
        assert!(p.contains("Amy: hello"));
    }

    fn field_text() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 ,.'!?-]{0,40}".prop_map(|s| s.trim().to_string()).prop_filter("non-empty", |s| !s.is_empty())
    }

    proptest! {
        #[test]
        fn accepted_replies_round_trip(offending in field_text(), reason in field_text(), violation in any::<bool>()) {
            let v = if violation {
                Verdict::Violation { offending_text: offending, rationale: reason, stage: ReviewStage::LlmReview }
            } else {
                Verdict::Compliant { stage: ReviewStage::LlmReview }
            };
            let parsed = parse_verdict(&v.to_reply()).unwrap();
            prop_assert_eq!(&parsed, &v);
            prop_assert_eq!(parsed.to_reply(), v.to_reply());
        }
    }
}
