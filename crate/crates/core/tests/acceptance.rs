//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Criterion 10 talks to a live endpoint and
//! only runs when EVOSIM_API_KEY is set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use evosim_core::domain::{AgentProfile, Message, SecretPayload, Transcript};
use evosim_core::engine::{
    score_guess_number, Backends, EngineError, EngineSettings, ProviderKind, RunConfig, ScoreSet, Simulation,
};
use evosim_core::participant::{
    AgentContext, InterviewAnswer, MemoryLimits, ParsedValue, ParticipantState, QuestionKind,
};
use evosim_core::provider::{
    HttpConfig, Journal, JournaledProvider, ModuleName, Sampling, ScriptBook, ScriptPattern, ScriptedProvider,
    API_KEY_ENV,
};
use evosim_core::report::{cli_main, run_config, RunReport, CSV_FILE, RECORD_FILE, SVG_FILE};
use evosim_core::{AgentId, Roster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&fixture(name)).expect("fixture config loads")
}

fn run(cfg: &RunConfig) -> Result<RunReport, String> {
    run_config(cfg).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_scenario_one() -> Outcome {
    let cfg = load("scenario1.toml");
    let started = Instant::now();
    let report = run(&cfg)?;
    let elapsed = started.elapsed();
    ensure(report.complete, || format!("run incomplete: {:?}", report.error))?;
    let turns = &report.series_named("turns_survived").ok_or("no turns_survived series")?.values;
    ensure(*turns == [0.0, 0.0, 4.0, 4.0], || format!("turns_survived = {turns:?}"))?;
    for agent in ["a", "b"] {
        let acc = &report.series_named(&format!("accuracy_{agent}")).ok_or("missing accuracy series")?.values;
        ensure(*acc == [0.0, 0.0, 1.0, 1.0], || format!("accuracy_{agent} = {acc:?}"))?;
    }
    ensure(elapsed.as_secs_f64() < 1.0, || format!("took {elapsed:?}"))?;
    Ok(format!("turns [0,0,4,4], accuracies [0,0,1,1], {} ms", elapsed.as_millis()))
}

/// Counts the unit steps between guess and truth, then applies the formula
/// with explicit branches instead of abs/clamp.
#[allow(clippy::manual_clamp)]
fn oracle_accuracy(guess: i64, truth: i64) -> f64 {
    let mut steps = 0i64;
    let mut g = guess;
    while g != truth {
        g += if g < truth { 1 } else { -1 };
        steps += 1;
    }
    let raw = 1.0 - steps as f64 / 99.0;
    if raw < 0.0 {
        0.0
    } else if raw > 1.0 {
        1.0
    } else {
        raw
    }
}

fn c2_accuracy_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let guess: i64 = rng.random_range(1..=100);
        let truth: u32 = rng.random_range(1..=100);
        let interviews = vec![InterviewAnswer {
            respondent: "b".into(),
            subject_agent: "a".into(),
            question_kind: QuestionKind::CounterpartNumber,
            answer_text: guess.to_string(),
            parsed_value: Some(ParsedValue::Number(guess)),
        }];
        let truths = [(AgentId::from("a"), truth)].into_iter().collect();
        let got = score_guess_number(&interviews, &truths)[&AgentId::from("a")];
        let want = oracle_accuracy(guess, i64::from(truth));
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("guess {guess}, truth {truth}: got {got}, oracle {want}"))?;
    }
    Ok(format!("20 pairs, max |error| = {worst:e}"))
}

fn c3_pet_trimodality() -> Outcome {
    let report = run(&load("scenario2.toml"))?;
    ensure(report.complete, || format!("run incomplete: {:?}", report.error))?;
    let counts: Vec<u8> = report
        .round_results
        .iter()
        .map(|r| match r.scores {
            ScoreSet::PetTrading { success_count, .. } => success_count,
            _ => u8::MAX,
        })
        .collect();
    ensure(counts == [0, 3, 4], || format!("success counts {counts:?}"))?;
    Ok("success counts [0, 3, 4]".into())
}

fn c4_forum_attempts() -> Outcome {
    let report = run(&load("scenario3.toml"))?;
    ensure(report.complete, || format!("run incomplete: {:?}", report.error))?;
    let first = &report.round_results[0];
    ensure(first.attempts == 27, || format!("round 0 attempts = {}", first.attempts))?;
    ensure(first.violations.len() == 17, || format!("{} rejections", first.violations.len()))?;
    ensure(first.transcript.public().count() == 10, || "public replies != 10".into())?;

    let mut cfg = load("scenario3.toml");
    cfg.provider.script = Some(fixture("scenario3_reject_all_script.toml"));
    let spec = cfg.scenario_spec().map_err(|e| e.to_string())?;
    let book = ScriptBook::load(&fixture("scenario3_reject_all_script.toml")).map_err(|e| e.to_string())?;
    let provider = ScriptedProvider::new(book);
    let mut sim = Simulation::new(spec, cfg.engine.clone(), Backends::uniform(&provider)).map_err(|e| e.to_string())?;
    match sim.run_forum_round(0) {
        Err(EngineError::AttemptCapExceeded { cap: 200, replies: 0, target: 10, .. }) => {}
        other => return Err(format!("always-reject round gave {other:?}")),
    }
    let partial = run(&cfg)?;
    ensure(!partial.complete && partial.error.as_deref().is_some_and(|e| e.starts_with("E_ATTEMPT_CAP")), || {
        format!("always-reject run: complete={}, error={:?}", partial.complete, partial.error)
    })?;
    Ok("attempts = 27 (17 rejected + 10 public); always-reject hits cap 200".into())
}

fn reflection_calls(report: &RunReport, round: u32) -> usize {
    report
        .journal
        .iter()
        .filter(|e| e.tag.module == ModuleName::ReflectRegulations && e.tag.round_index == round)
        .count()
}

fn c5_reflection_trigger() -> Outcome {
    let mut cfg = load("scenario1.toml");
    cfg.scenario.reflection_threshold = 2;
    let two = run(&cfg)?;
    let (r1, r2) = (reflection_calls(&two, 1), reflection_calls(&two, 2));
    ensure(r1 == 0, || format!("threshold 2: {r1} reflection calls after the first violation"))?;
    ensure(r2 == 2, || format!("threshold 2: {r2} reflection calls after the second violation"))?;

    cfg.scenario.reflection_threshold = 1;
    let one = run(&cfg)?;
    let (o1, o2) = (reflection_calls(&one, 1), reflection_calls(&one, 2));
    ensure(o1 == 2 && o2 == 2, || format!("threshold 1: reflection calls {o1} then {o2}"))?;
    Ok("threshold 2: 0 then 2 calls; threshold 1: 2 then 2 calls".into())
}

fn review_calls(report: &RunReport) -> usize {
    report.journal.iter().filter(|e| e.tag.module == ModuleName::Review).count()
}

fn c6_supervisor_staging() -> Outcome {
    let mut cfg = load("scenario1.toml");
    cfg.scenario.evolution_rounds = 1;
    let keyword_hit = run(&cfg)?;
    ensure(keyword_hit.round_results[0].violations[0].rationale == "keyword: 58", || {
        "round 0 not a keyword hit".into()
    })?;
    ensure(review_calls(&keyword_hit) == 0, || {
        format!("{} review calls on a keyword hit", review_calls(&keyword_hit))
    })?;

    let clean = run(&load("scenario2.toml"))?;
    let units: usize = clean.round_results.len() * clean.spec.turns_per_round as usize;
    ensure(review_calls(&clean) == units, || format!("pet: {} review calls for {units} turns", review_calls(&clean)))?;

    let forum = run(&load("scenario3.toml"))?;
    let posts: usize = forum.round_results.iter().map(|r| r.attempts as usize).sum();
    ensure(review_calls(&forum) == posts, || {
        format!("forum: {} review calls for {posts} posts", review_calls(&forum))
    })?;
    Ok(format!("keyword hit: 0 calls; clean: {units} calls / {units} turns, {posts} calls / {posts} posts"))
}

fn c7_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in ["scenario1", "scenario2", "scenario3"] {
        let config = fixture(&format!("{name}.toml"));
        let mut outputs = Vec::new();
        for copy in ["x", "y"] {
            let out = tmp.path().join(format!("{name}_{copy}"));
            let code =
                cli_main(["evosim", "run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
            ensure(code == 0, || format!("{name}: run exited {code}"))?;
            outputs.push(out);
        }
        for file in [RECORD_FILE, CSV_FILE, SVG_FILE] {
            let a = std::fs::read(outputs[0].join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(outputs[1].join(file)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{name}/{file} differs between runs"))?;
        }
    }
    Ok("record, CSV and SVG byte-identical for all three fixtures".into())
}

fn c8_memory_compression() -> Outcome {
    let mut book = ScriptBook::new();
    book.push_repeating(
        ScriptPattern { module: Some(ModuleName::CompressHistory), ..Default::default() },
        "We talked about the weather.",
    );
    let provider = ScriptedProvider::new(book);
    let journal = Journal::new();
    let journaled = JournaledProvider::new(&provider, journal.clone());
    let profile = AgentProfile::participant("a", "Agent A", "You are Agent A.", SecretPayload::Number(58))
        .map_err(|e| e.to_string())?;
    let roster: Roster = [&profile].into_iter().collect();
    let ctx = AgentContext { provider: &journaled, roster: &roster, sampling: Sampling::PARTICIPANT };
    let mut state = ParticipantState::new(profile);
    let mut history = Transcript::new(0);
    for i in 0..10u32 {
        let body = format!("Message number {i} in a long conversation about rivers, hills and the colour of the sky.");
        history.push(Message::new("a".into(), i, body).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    }
    let originals = history.messages.clone();
    state.dialogue_history = history;
    let limit = 400;
    let limits = MemoryLimits { history_chars: limit, log_chars: 4000, keep_last_turns: 2 };
    let before = evosim_core::domain::render_transcript(&state.dialogue_history, &roster, true).chars().count();
    ensure(before > limit, || format!("history of {before} chars does not exceed {limit}"))?;

    let changed = state.compress_memory(&ctx, &limits, 0, 0).map_err(|e| e.to_string())?;
    let msgs = &state.dialogue_history.messages;
    ensure(changed && msgs.len() == 3, || format!("{} messages after compression", msgs.len()))?;
    ensure(msgs[0].summary && !msgs[1].summary && !msgs[2].summary, || "summary flags wrong".into())?;
    ensure(msgs[1..] == originals[8..], || "last two messages not kept verbatim".into())?;
    let rendered = evosim_core::domain::render_transcript(&state.dialogue_history, &roster, true).chars().count();
    let slack = evosim_core::domain::render_messages(&msgs[..1], &roster).chars().count();
    ensure(rendered <= limit + slack, || format!("{rendered} chars > {limit} + {slack}"))?;

    let snapshot = state.dialogue_history.clone();
    let again = state.compress_memory(&ctx, &limits, 0, 1).map_err(|e| e.to_string())?;
    ensure(!again && state.dialogue_history == snapshot, || "recompression changed the history".into())?;

    let tight = MemoryLimits { history_chars: 100, ..limits };
    let again = state.compress_memory(&ctx, &tight, 0, 2).map_err(|e| e.to_string())?;
    ensure(!again && state.dialogue_history == snapshot, || "recompression over the limit changed the history".into())?;
    ensure(journal.count(ModuleName::CompressHistory) == 1, || "extra summarisation calls".into())?;
    Ok(format!("{before} chars -> summary + 2 messages ({rendered} chars); recompression no-op"))
}

fn replay(record: &Path, out: &Path) -> Result<Option<i32>, String> {
    let output = std::process::Command::new(env!("CARGO_BIN_EXE_evosim"))
        .args(["replay", "--record", record.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    Ok(output.status.code())
}

fn c9_replay_integrity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for name in ["scenario1", "scenario2", "scenario3"] {
        let record = fixture(&format!("records/{name}.json"));
        let out = tmp.path().join(name);
        let code = replay(&record, &out)?;
        ensure(code == Some(0), || format!("replay of shipped {name} exited {code:?}"))?;

        let mut report = RunReport::read(&record).map_err(|e| e.to_string())?;
        report.series[0].values[0] += 1.0;
        let tampered = tmp.path().join(format!("{name}_tampered.json"));
        report.write(&tampered).map_err(|e| e.to_string())?;
        let code = replay(&tampered, &out)?;
        ensure(code.is_some_and(|c| c != 0), || format!("tampered {name} replay exited {code:?}"))?;
    }
    Ok("shipped records replay with exit 0; tampered copies exit nonzero".into())
}

fn c10_live_smoke() -> Option<Outcome> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty())?;
    let endpoint =
        std::env::var("EVOSIM_ENDPOINT").unwrap_or_else(|_| "https://api.openai.com/v1/chat/completions".into());
    let model = std::env::var("EVOSIM_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let mut cfg = load("scenario1.toml");
    cfg.scenario.evolution_rounds = 1;
    cfg.provider.kind = ProviderKind::Http;
    cfg.provider.http = Some(HttpConfig::new(endpoint, model));
    cfg.engine = EngineSettings::default();
    Some((|| {
        let report = run(&cfg)?;
        let text = report.to_json().map_err(|e| e.to_string())?;
        let back = RunReport::from_json(&text).map_err(|e| e.to_string())?;
        ensure(back == report, || "record does not round-trip".into())?;
        ensure(report.complete, || format!("live round incomplete: {:?}", report.error))?;
        ensure(report.round_results.len() == 1, || "expected one round".into())?;
        Ok(format!("1 live round, {} provider calls", report.journal.len()))
    })())
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "scenario-1 end-to-end scripted run", c1_scenario_one),
        (2, "accuracy formula oracle (tol 1e-12)", c2_accuracy_oracle),
        (3, "pet-trading trimodality", c3_pet_trimodality),
        (4, "forum attempt accounting", c4_forum_attempts),
        (5, "reflection trigger conformance", c5_reflection_trigger),
        (6, "supervisor staging", c6_supervisor_staging),
        (7, "determinism", c7_determinism),
        (8, "memory compression", c8_memory_compression),
        (9, "replay integrity", c9_replay_integrity),
    ];
    let mut failed = 0;
    for (n, title, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {n:>2} PASS  {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {title}: {detail}");
            }
        }
    }
    match c10_live_smoke() {
        None => println!("criterion 10 SKIP  live smoke test: {API_KEY_ENV} not set"),
        Some(Ok(detail)) => println!("criterion 10 PASS  live smoke test: {detail}"),
        Some(Err(detail)) => {
            failed += 1;
            println!("criterion 10 FAIL  live smoke test: {detail}");
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
