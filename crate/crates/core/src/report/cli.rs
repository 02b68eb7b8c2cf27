use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::{
    csv_string, derive_series, emit_all, moving_average, render_svg, replay_check, select_series, write_file,
    ReportError, RunReport, CSV_FILE, SVG_FILE,
};
use crate::engine::{Backends, EngineError, ProviderKind, RunConfig, Simulation};
use crate::provider::{HttpConfig, HttpProvider, Provider, RetryingProvider, ScriptBook, ScriptedProvider};

const EXIT_OK: i32 = 0;
const EXIT_FAILURE: i32 = 1;
const EXIT_PARTIAL: i32 = 2;
const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "evosim", version, about = "Coded-language evolution under LLM supervision")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProviderArg {
    Scripted,
    Http,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a simulation and write the run record, CSV and SVG.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        provider: Option<ProviderArg>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute scores and series from a stored record and compare.
    Replay {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Smooth stored series and plot them.
    Report {
        #[arg(long)]
        record: PathBuf,
        /// Comma-separated series names; all series when omitted.
        #[arg(long, value_delimiter = ',')]
        plot: Vec<String>,
        #[arg(long, default_value_t = super::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Engine(EngineError),
    Report(ReportError),
}

impl Failure {
    fn report(&self) -> i32 {
        let (code, msg) = match self {
            Failure::Engine(e) => (e.code(), e.to_string()),
            Failure::Report(e) => (e.code(), e.to_string()),
        };
        eprintln!("error[{code}]: {}", one_line(&msg));
        match self {
            Failure::Report(ReportError::Diverged(_)) => EXIT_DIVERGED,
            _ => EXIT_FAILURE,
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::Engine(e)
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::Report(e)
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Entry point shared by the binary and the tests. Returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[E_USAGE]: {}", first.trim_start_matches("error: "));
            return EXIT_FAILURE;
        }
    };
    let outcome = match cli.command {
        Command::Run { config, provider, script, seed, out } => run(&config, provider, script, seed, &out),
        Command::Replay { record, out } => replay(&record, &out),
        Command::Report { record, plot, window, out } => report(&record, &plot, window, &out),
        Command::ValidateConfig { config } => validate(&config),
    };
    outcome.unwrap_or_else(|f| f.report())
}

/// Providers for a run, owned so the borrowed [`Backends`] can point at them.
pub struct ProviderSet {
    participant: Box<dyn Provider>,
    supervisor: Option<Box<dyn Provider>>,
    judge: Option<Box<dyn Provider>>,
}

impl ProviderSet {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, EngineError> {
        match cfg.provider.kind {
            ProviderKind::Scripted => {
                let path = cfg
                    .provider
                    .script
                    .as_deref()
                    .ok_or_else(|| EngineError::Config("scripted provider needs a script file".into()))?;
                let book = ScriptBook::load(path).map_err(|e| EngineError::Config(e.to_string()))?;
                Ok(Self { participant: Box::new(ScriptedProvider::new(book)), supervisor: None, judge: None })
            }
            ProviderKind::Http => {
                let mut http = cfg
                    .provider
                    .http
                    .clone()
                    .ok_or_else(|| EngineError::Config("http provider needs a [provider.http] table".into()))?;
                http.seed.get_or_insert(cfg.seed);
                let build = |http: HttpConfig| -> Result<Box<dyn Provider>, EngineError> {
                    let p = HttpProvider::from_env(http)?;
                    Ok(Box::new(RetryingProvider::new(p, cfg.provider.retry.clone())))
                };
                let with_model = |model: &Option<String>| -> Result<Option<Box<dyn Provider>>, EngineError> {
                    model.as_ref().map(|m| build(HttpConfig { model: m.clone(), ..http.clone() })).transpose()
                };
                Ok(Self {
                    supervisor: with_model(&cfg.provider.supervisor_model)?,
                    judge: with_model(&cfg.provider.judge_model)?,
                    participant: build(http.clone())?,
                })
            }
        }
    }

    pub fn backends(&self) -> Backends<'_> {
        let participant = self.participant.as_ref();
        Backends {
            participant,
            supervisor: self.supervisor.as_deref().unwrap_or(participant),
            judge: self.judge.as_deref().unwrap_or(participant),
        }
    }
}

/// Loads a config, runs it and writes the artifacts into `out`.
pub fn run_config(cfg: &RunConfig) -> Result<RunReport, EngineError> {
    let spec = cfg.scenario_spec()?;
    let providers = ProviderSet::from_config(cfg)?;
    let sim = Simulation::new(spec, cfg.engine.clone(), providers.backends())?;
    Ok(sim.run(cfg.seed))
}

fn run(
    config: &Path,
    provider: Option<ProviderArg>,
    script: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32, Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(p) = provider {
        cfg.provider.kind = match p {
            ProviderArg::Scripted => ProviderKind::Scripted,
            ProviderArg::Http => ProviderKind::Http,
        };
    }
    if script.is_some() {
        cfg.provider.script = script;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = run_config(&cfg)?;
    emit_all(&report, out)?;
    if let Some(err) = &report.error {
        eprintln!("error[E_PARTIAL]: run stopped after {} rounds: {}", report.round_results.len(), one_line(err));
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn replay(record: &Path, out: &Path) -> Result<i32, Failure> {
    let report = RunReport::read(record)?;
    replay_check(&report)?;
    if !report.round_results.is_empty() {
        std::fs::create_dir_all(out).map_err(|source| ReportError::Io { path: out.display().to_string(), source })?;
        let series = derive_series(&report.spec, &report.round_results);
        write_file(&out.join(CSV_FILE), &csv_string(&report.rounds(), &series)?)?;
        write_file(&out.join(SVG_FILE), &render_svg(&report.rounds(), &series)?)?;
    }
    println!("replay ok: {} rounds, {} series", report.round_results.len(), report.series.len());
    Ok(EXIT_OK)
}

fn report(record: &Path, names: &[String], window: usize, out: &Path) -> Result<i32, Failure> {
    let report = RunReport::read(record)?;
    let chosen = select_series(&report.series, names)?;
    let smoothed = chosen.iter().map(|s| moving_average(s, window)).collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(out).map_err(|source| ReportError::Io { path: out.display().to_string(), source })?;
    let rounds = report.rounds();
    write_file(&out.join(format!("metrics_sma{window}.csv")), &csv_string(&rounds, &smoothed)?)?;
    write_file(&out.join(format!("metrics_sma{window}.svg")), &render_svg(&rounds, &smoothed)?)?;
    Ok(EXIT_OK)
}

fn validate(config: &Path) -> Result<i32, Failure> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.scenario_spec()?;
    if cfg.provider.kind == ProviderKind::Scripted {
        if let Some(path) = &cfg.provider.script {
            ScriptBook::load(path).map_err(|e| EngineError::Config(e.to_string()))?;
        }
    } else if cfg.provider.http.is_none() {
        return Err(EngineError::Config("http provider needs a [provider.http] table".into()).into());
    }
    println!("config ok: {:?}, {} participants, {} rounds", spec.kind, spec.participants.len(), spec.evolution_rounds);
    Ok(EXIT_OK)
}
