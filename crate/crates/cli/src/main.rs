use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use memweave_cli::ops::{self, RetrieveRequest, StepRequest};
use memweave_cli::{serve, BackendKind, CliError, Session, Settings};
use memweave_core::config::Policy;
use memweave_core::eval;
use memweave_core::types::Speaker;
use serde::Serialize;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "memweave", version, about = "Long-term memory for role-play dialogue agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration: engine keys plus an optional [remote] table.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// State file; created when missing. Logs are kept next to it.
    #[arg(long, global = true)]
    state: Option<PathBuf>,
    /// JSONL transcript of turn records.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    /// JSONL memory labels.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// JSONL probe questions.
    #[arg(long, global = true)]
    probes: Option<PathBuf>,
    /// JSONL probe triplets.
    #[arg(long, global = true)]
    triplets: Option<PathBuf>,
    /// Overrides `capacity_chars` from the configuration.
    #[arg(long, global = true)]
    capacity_chars: Option<usize>,
    /// Overrides `forgetting.policy` from the configuration.
    #[arg(long, global = true, value_parser = parse_policy)]
    policy: Option<Policy>,
    #[arg(long, global = true, value_enum, default_value_t = BackendKind::MockSum)]
    backend: BackendKind,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Feeds --transcript through the engine and saves --state.
    Ingest,
    /// Feeds one utterance at the next turn index.
    Step {
        text: String,
        #[arg(long, value_enum)]
        speaker: Option<SpeakerArg>,
    },
    /// Prints engine contents.
    Dump {
        #[arg(long, value_enum, default_value_t = DumpPart::All)]
        what: DumpPart,
    },
    /// Prints the top-k memories for a query.
    Retrieve {
        query: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Prints eviction records.
    EvictLog {
        #[arg(long)]
        round: Option<u64>,
    },
    /// Scores the pool against --labels.
    EvalLabels,
    /// Multiple-choice probe accuracy over --probes.
    EvalProbes,
    /// Insertion-recall scores over --triplets.
    EvalTable,
    /// Serves the session over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpeakerArg {
    User,
    Chatbot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DumpPart {
    All,
    Stats,
    Persona,
    Memories,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: memweave_core::error::ConfigError| e.to_string())
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Usage(format!("this command needs {flag}")))
}

fn print<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Internal(e.to_string())),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    settings.apply_overrides(cli.capacity_chars, cli.policy)?;
    let transcript = match &cli.command {
        Command::Ingest => Some(ops::load_transcript(required(&cli.transcript, "--transcript")?)?),
        _ => None,
    };
    let mut session = Session::open(&settings, cli.backend, cli.state.as_deref())?;
    let models = settings.eval_models(cli.backend);
    match cli.command {
        Command::Ingest => print(&session.ingest(transcript.unwrap_or_default())?),
        Command::Step { text, speaker } => {
            let speaker = speaker.map(|s| match s {
                SpeakerArg::User => Speaker::User,
                SpeakerArg::Chatbot => Speaker::Chatbot,
            });
            print(&session.step(StepRequest { speaker, text })?)
        }
        Command::Dump { what } => match what {
            DumpPart::All => print(&session.dump()),
            DumpPart::Stats => print(&session.stats()),
            DumpPart::Persona => print(&session.persona()),
            DumpPart::Memories => print(&session.memories()),
        },
        Command::Retrieve { query, k } => print(&session.retrieve(&RetrieveRequest { query, k })?),
        Command::EvictLog { round } => print(&session.evict_log(round)?),
        Command::EvalLabels => {
            let labels = eval::load_labels(required(&cli.labels, "--labels")?)?;
            print(&session.eval_labels(&labels, &models)?)
        }
        Command::EvalProbes => {
            let probes = eval::load_probes(required(&cli.probes, "--probes")?)?;
            print(&session.eval_probes(&probes, &models)?)
        }
        Command::EvalTable => {
            let triplets = eval::load_triplets(required(&cli.triplets, "--triplets")?)?;
            print(&session.eval_table(&triplets, &models)?)
        }
        Command::Serve { addr } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            rt.block_on(serve::serve(session, addr))
                .map_err(|e| CliError::Internal(format!("{addr}: {e}")))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("Usage: memweave [OPTIONS] <COMMAND>  (see memweave --help)");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
