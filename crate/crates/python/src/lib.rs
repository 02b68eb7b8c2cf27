//! Python bindings for evosim-core.

use std::collections::BTreeMap;

use evosim_core::domain::{AgentId, Message};
use evosim_core::engine::{score_guess_number as core_score_guess, Backends, RunConfig, Simulation};
use evosim_core::participant::{InterviewAnswer, ParsedValue, QuestionKind};
use evosim_core::prompt::{assemble_prompt as core_assemble, PromptBundle};
use evosim_core::provider::{ScriptBook, ScriptedProvider};
use evosim_core::report::{self, MetricSeries, RunReport};
use evosim_core::supervisor::{self, Guideline, Pressure, Verdict};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(evosim, EvosimError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    EvosimError::new_err(e.to_string())
}

fn pressure(name: &str) -> PyResult<Pressure> {
    match name.to_ascii_lowercase().as_str() {
        "direct" => Ok(Pressure::Direct),
        "indirect" => Ok(Pressure::Indirect),
        "abstract" => Ok(Pressure::Abstract),
        other => Err(err(format!("unknown pressure `{other}`; expected direct, indirect or abstract"))),
    }
}

#[pyclass(name = "Verdict", frozen, get_all)]
struct PyVerdict {
    violation: bool,
    offending_text: Option<String>,
    rationale: Option<String>,
    stage: String,
}

#[pymethods]
impl PyVerdict {
    fn __repr__(&self) -> String {
        match &self.rationale {
            Some(r) => format!("Verdict(violation, stage={}, rationale={r:?})", self.stage),
            None => format!("Verdict(compliant, stage={})", self.stage),
        }
    }
}

impl From<Verdict> for PyVerdict {
    fn from(v: Verdict) -> Self {
        let stage =
            serde_json::to_value(v.stage()).ok().and_then(|s| s.as_str().map(str::to_owned)).unwrap_or_default();
        match v {
            Verdict::Compliant { .. } => Self { violation: false, offending_text: None, rationale: None, stage },
            Verdict::Violation { offending_text, rationale, .. } => {
                Self { violation: true, offending_text: Some(offending_text), rationale: Some(rationale), stage }
            }
        }
    }
}

#[pyfunction]
#[pyo3(signature = (background, instructions, dialogue_history=None, violation_log=None, regulations=None, guidance=None, plan=None))]
fn assemble_prompt(
    background: String,
    instructions: String,
    dialogue_history: Option<String>,
    violation_log: Option<String>,
    regulations: Option<String>,
    guidance: Option<String>,
    plan: Option<String>,
) -> PyResult<String> {
    let bundle =
        PromptBundle { background, dialogue_history, violation_log, regulations, guidance, plan, instructions };
    core_assemble(&bundle).map_err(err)
}

/// Screens message bodies against the keyword list.
#[pyfunction]
fn keyword_screen(messages: Vec<String>, keywords: Vec<String>) -> PyResult<PyVerdict> {
    let guideline = Guideline::new("keyword screen", keywords, Pressure::Direct).map_err(err)?;
    let messages = messages
        .into_iter()
        .enumerate()
        .map(|(i, body)| Message::new(AgentId::from("speaker"), i as u32, body))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Ok(supervisor::keyword_screen(&messages, &guideline).into())
}

#[pyfunction]
#[pyo3(signature = (rule_text, keywords, pressure_level="direct"))]
fn build_pressure_prompt(rule_text: String, keywords: Vec<String>, pressure_level: &str) -> PyResult<String> {
    let guideline = Guideline::new(rule_text, keywords, pressure(pressure_level)?).map_err(err)?;
    Ok(supervisor::build_pressure_prompt(&guideline))
}

#[pyfunction]
fn parse_verdict(reply: &str) -> PyResult<PyVerdict> {
    supervisor::parse_verdict(reply).map(Into::into).map_err(err)
}

/// Accuracy of a single guess against the true number.
#[pyfunction]
fn score_guess(guess: i64, truth: u32) -> f64 {
    let answer = InterviewAnswer {
        respondent: "guesser".into(),
        subject_agent: "owner".into(),
        question_kind: QuestionKind::CounterpartNumber,
        answer_text: guess.to_string(),
        parsed_value: Some(ParsedValue::Number(guess)),
    };
    let truths: BTreeMap<AgentId, u32> = [(AgentId::from("owner"), truth)].into_iter().collect();
    core_score_guess(&[answer], &truths)[&AgentId::from("owner")]
}

#[pyfunction]
fn moving_average(values: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    report::moving_average(&MetricSeries::new("s", values), window).map(|s| s.values).map_err(err)
}

#[pyclass(name = "Report", frozen)]
struct PyReport(RunReport);

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        RunReport::from_json(text).map(Self).map_err(err)
    }

    #[getter]
    fn complete(&self) -> bool {
        self.0.complete
    }

    #[getter]
    fn error(&self) -> Option<String> {
        self.0.error.clone()
    }

    #[getter]
    fn rounds(&self) -> Vec<u32> {
        self.0.rounds()
    }

    #[getter]
    fn series(&self) -> BTreeMap<String, Vec<f64>> {
        self.0.series.iter().map(|s| (s.name.clone(), s.values.clone())).collect()
    }

    #[getter]
    fn journal_len(&self) -> usize {
        self.0.journal.len()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    fn csv(&self) -> PyResult<String> {
        report::csv_string(&self.0.rounds(), &self.0.series).map_err(err)
    }

    #[pyo3(signature = (names=Vec::new()))]
    fn svg(&self, names: Vec<String>) -> PyResult<String> {
        let chosen = report::select_series(&self.0.series, &names).map_err(err)?;
        report::render_svg(&self.0.rounds(), &chosen).map_err(err)
    }

    /// Raises if the stored series do not follow from the stored rounds.
    fn replay_check(&self) -> PyResult<()> {
        report::replay_check(&self.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Report(rounds={}, complete={})", self.0.round_results.len(), self.0.complete)
    }
}

/// Runs a scenario config against a script book, both given as TOML text.
#[pyfunction]
#[pyo3(signature = (config_toml, script_toml, seed=None))]
fn run_scripted(py: Python<'_>, config_toml: &str, script_toml: &str, seed: Option<u64>) -> PyResult<PyReport> {
    let mut cfg = RunConfig::from_toml_str(config_toml).map_err(err)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let book = ScriptBook::from_toml_str(script_toml).map_err(err)?;
    py.detach(|| {
        let spec = cfg.scenario_spec().map_err(err)?;
        let provider = ScriptedProvider::new(book);
        let sim = Simulation::new(spec, cfg.engine.clone(), Backends::uniform(&provider)).map_err(err)?;
        Ok(PyReport(sim.run(cfg.seed)))
    })
}

#[pymodule]
fn evosim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EvosimError", m.py().get_type::<EvosimError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyVerdict>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(assemble_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(keyword_screen, m)?)?;
    m.add_function(wrap_pyfunction!(build_pressure_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(score_guess, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted, m)?)?;
    Ok(())
}
