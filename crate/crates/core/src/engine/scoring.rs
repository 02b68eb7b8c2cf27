//! Per-round scores. All functions here are pure and total.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scenario::PetTruth;
use crate::domain::AgentId;
use crate::participant::{InterviewAnswer, ParsedValue, QuestionKind};

/// Width of the 1..=100 range; a guess at the far end scores zero.
const GUESS_SPAN: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreSet {
    GuessNumber { turns_survived: u32, accuracy_per_agent: BTreeMap<AgentId, f64> },
    PetTrading { turns_survived: u32, success_count: u8 },
    Forum { attempts: u32, expressed_count: u32 },
}

/// Accuracy of the counterpart's guess of each agent's number:
/// `1 - |guess - truth| / 99`, clamped to [0, 1]. Missing or unparsed
/// guesses score 0.
pub fn score_guess_number(interviews: &[InterviewAnswer], truths: &BTreeMap<AgentId, u32>) -> BTreeMap<AgentId, f64> {
    truths
        .iter()
        .map(|(agent, &truth)| {
            let guess = interviews.iter().find_map(|a| match a.parsed_value {
                Some(ParsedValue::Number(g))
                    if a.subject_agent == *agent && a.question_kind == QuestionKind::CounterpartNumber =>
                {
                    Some(g)
                }
                _ => None,
            });
            let accuracy = guess
                .map_or(0.0, |g| (1.0 - (g - i64::from(truth)).unsigned_abs() as f64 / GUESS_SPAN).clamp(0.0, 1.0));
            (agent.clone(), accuracy)
        })
        .collect()
}

fn normalized(s: &str) -> String {
    s.trim().to_lowercase()
}

/// One point for the seller naming the buyer's pet, plus one each for the
/// buyer's time, place and person matching the deal.
pub fn score_pet_trading(interviews: &[InterviewAnswer], truth: &PetTruth) -> u8 {
    let answer = |respondent: &AgentId, kind: QuestionKind| {
        interviews
            .iter()
            .find(|a| a.respondent == *respondent && a.question_kind == kind)
            .and_then(|a| a.parsed_value.as_ref())
    };
    let pet_ok = matches!(answer(&truth.seller, QuestionKind::PetKind), Some(ParsedValue::Pet(p)) if *p == truth.pet);
    let detail_ok = |kind: QuestionKind, expected: &str| matches!(answer(&truth.buyer, kind), Some(ParsedValue::Text(t)) if normalized(t) == normalized(expected));
    [
        pet_ok,
        detail_ok(QuestionKind::DealTime, &truth.deal.time),
        detail_ok(QuestionKind::DealPlace, &truth.deal.place),
        detail_ok(QuestionKind::DealPerson, &truth.deal.person),
    ]
    .into_iter()
    .filter(|&ok| ok)
    .count() as u8
}

/// Number of participants whose judged stance equals their assigned one.
/// `readings` are the judge's stance answers, one per subject agent.
pub fn score_forum(readings: &[InterviewAnswer], stances: &BTreeMap<AgentId, String>) -> u32 {
    stances
        .iter()
        .filter(|(agent, stance)| {
            readings.iter().any(|r| {
                r.subject_agent == **agent
                    && r.question_kind == QuestionKind::Stance
                    && matches!(&r.parsed_value, Some(ParsedValue::Text(t)) if normalized(t) == normalized(stance))
            })
        })
        .count() as u32
}
