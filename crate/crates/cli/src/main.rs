mod config;
mod error;

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use curate_core::eval::{self, EvalConfig};
use curate_core::{
    walkthrough, AblationMode, Clock, DetectionStrategy, EngineConfig, LiveProvider, LlmProvider, MockProvider,
    PromptLibrary, ProviderScript, Scope, ServiceConfig, ServiceState, Session, SystemClock,
};

use crate::config::{load_file_config, provider_config};
use crate::error::CliError;

const DEFAULT_ADDR: &str = "127.0.0.1:8080";
const DEFAULT_SESSIONS_DIR: &str = "sessions";

#[derive(Parser)]
#[command(name = "curate", version, about = "Task-tree planning with curated personal context")]
struct Cli {
    /// Disable ANSI colors in output and logs.
    #[arg(long, global = true, env = "NO_COLOR", value_parser = clap::builder::FalseyValueParser::new())]
    no_color: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP/JSON service.
    Serve(ServeArgs),
    /// Play the bundled PhD-application scenario against a scripted provider.
    Walkthrough(WalkthroughArgs),
    /// Measure subtask-detection accuracy of the prompting strategies.
    Eval(EvalArgs),
    /// Inspect saved sessions.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Listen address [default: 127.0.0.1:8080].
    #[arg(long, env = "CURATE_ADDR")]
    addr: Option<String>,
    /// Directory holding one JSON file per session [default: ./sessions].
    #[arg(long, env = "CURATE_SESSIONS_DIR")]
    sessions_dir: Option<PathBuf>,
    /// Ablation mode for new sessions [default: full_curation].
    #[arg(long, env = "CURATE_MODE", value_parser = parse_mode)]
    mode: Option<AblationMode>,
    /// Detection strategy [default: few_shot_cot_tree].
    #[arg(long, env = "CURATE_STRATEGY", value_parser = parse_strategy)]
    strategy: Option<DetectionStrategy>,
    /// TOML file with endpoint, model, api_key_env, timeout_secs.
    #[arg(long, env = "CURATE_PROVIDER_CONFIG")]
    provider_config: Option<PathBuf>,
    /// Serve against a scripted mock provider instead of a live endpoint.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// TOML file with any of the keys above.
    #[arg(long, env = "CURATE_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct WalkthroughArgs {
    /// Provider script [default: the bundled script].
    #[arg(long)]
    script: Option<PathBuf>,
    /// Where to write the session file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    Mock,
    Live,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MockKind {
    /// Answers every case correctly.
    Oracle,
    /// Answers "Yes" to everything.
    AlwaysYes,
}

#[derive(Args)]
struct EvalArgs {
    /// Suite file (`id|scenario|title|description|level|gold_label`) [default: bundled].
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Comma-separated strategies [default: all six].
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<DetectionStrategy>>,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    runs: u32,
    #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
    provider: ProviderKind,
    /// Behaviour of the mock provider.
    #[arg(long, value_enum, default_value_t = MockKind::Oracle)]
    mock: MockKind,
    /// Concurrent cases per run for the live provider.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..))]
    parallelism: u32,
    /// TOML file with the live endpoint settings.
    #[arg(long, env = "CURATE_PROVIDER_CONFIG")]
    provider_config: Option<PathBuf>,
    /// Per-case CSV report; a `.json` extension writes the full report instead.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Print a session summary, its outline, its context or its events.
    Show {
        file: PathBuf,
        #[arg(long, group = "view")]
        outline: bool,
        #[arg(long, group = "view")]
        context: bool,
        #[arg(long, group = "view")]
        events: bool,
    },
}

fn parse_mode(s: &str) -> Result<AblationMode, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<DetectionStrategy, String> {
    s.parse()
}

struct Style {
    color: bool,
}

impl Style {
    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_owned()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .write_style(if cli.no_color { env_logger::WriteStyle::Never } else { env_logger::WriteStyle::Auto })
        .init();
    let style = Style { color: !cli.no_color && std::io::IsTerminal::is_terminal(&std::io::stdout()) };
    let result = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Walkthrough(args) => run_walkthrough(args, &style),
        Command::Eval(args) => run_eval(args, &style),
        Command::Session { command: SessionCommand::Show { file, outline, context, events } } => {
            show(&file, outline, context, events, &style)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_script(path: &Path) -> Result<ProviderScript, CliError> {
    ProviderScript::load(path).map_err(|e| match e {
        curate_core::Error::InvalidRequest(msg) => CliError::BadConfig(format!("{}: {msg}", path.display())),
        other => other.into(),
    })
}

fn live_provider(path: Option<&Path>, inline: Option<config::ProviderTable>) -> Result<LiveProvider, CliError> {
    let config = provider_config(path, inline)?;
    if !config.is_configured() {
        return Err(CliError::BadConfig(format!(
            "no provider configured: set {} and {} or pass --provider-config",
            curate_core::provider::ENV_ENDPOINT,
            curate_core::provider::ENV_MODEL
        )));
    }
    Ok(LiveProvider::new(config)?)
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let addr = args.addr.or(file.addr).unwrap_or_else(|| DEFAULT_ADDR.into());
    let addr: SocketAddr = addr.parse().map_err(|e| CliError::BadConfig(format!("invalid address `{addr}`: {e}")))?;
    let sessions_dir = args.sessions_dir.or(file.sessions_dir).unwrap_or_else(|| DEFAULT_SESSIONS_DIR.into());
    let mode = match (args.mode, file.mode) {
        (Some(m), _) => m,
        (None, Some(m)) => m.parse().map_err(CliError::BadConfig)?,
        (None, None) => EngineConfig::default().mode,
    };
    let strategy = match (args.strategy, file.strategy) {
        (Some(s), _) => s,
        (None, Some(s)) => s.parse().map_err(CliError::BadConfig)?,
        (None, None) => EngineConfig::default().strategy,
    };
    let provider: Arc<dyn LlmProvider> = match args.mock_script.or(file.mock_script) {
        Some(path) => Arc::new(MockProvider::scripted(load_script(&path)?)),
        None => Arc::new(live_provider(args.provider_config.or(file.provider_config).as_deref(), file.provider)?),
    };
    std::fs::create_dir_all(&sessions_dir)
        .map_err(|source| CliError::Io { path: sessions_dir.display().to_string(), source })?;

    let engine = EngineConfig { mode, strategy, ..EngineConfig::default() };
    let state = ServiceState::new(
        ServiceConfig::new(&sessions_dir, engine),
        provider,
        Arc::new(PromptLibrary::builtin()),
        Arc::new(SystemClock),
    );
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "runtime".into(), source })?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| CliError::AddrInUse { addr: addr.to_string(), source })?;
        let bound = listener.local_addr().map_err(|source| CliError::AddrInUse { addr: addr.to_string(), source })?;
        println!("listening on http://{bound}");
        std::io::stdout().flush().ok();
        log::info!("sessions in {}, mode {}, strategy {}", sessions_dir.display(), mode.as_str(), strategy.as_str());
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        curate_core::serve(listener, state, shutdown)
            .await
            .map_err(|source| CliError::Io { path: bound.to_string(), source })
    })
}

fn run_walkthrough(args: WalkthroughArgs, style: &Style) -> Result<(), CliError> {
    let script = match &args.script {
        Some(path) => load_script(path)?,
        None => walkthrough::bundled_script(),
    };
    let session = walkthrough::run(script)?;
    session.save(&args.out)?;
    print!("{}", session.tree.outline());
    println!(
        "{} {} nodes, {} events -> {}",
        style.paint("32", "ok"),
        session.tree.len(),
        session.events.len(),
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs, style: &Style) -> Result<(), CliError> {
    let suite = match &args.suite {
        Some(path) => eval::load_suite(path)?,
        None => eval::bundled_suite(),
    };
    let strategies = args.strategies.unwrap_or_else(|| DetectionStrategy::ALL.to_vec());
    let prompts = PromptLibrary::builtin();
    let (provider, parallelism): (Box<dyn LlmProvider>, u32) = match args.provider {
        // Mock runs stay sequential so a report is reproducible.
        ProviderKind::Mock => match args.mock {
            MockKind::Oracle => (Box::new(eval::oracle_provider(&suite, prompts.clone())), 1),
            MockKind::AlwaysYes => (Box::new(eval::always_yes_provider()), 1),
        },
        ProviderKind::Live => (Box::new(live_provider(args.provider_config.as_deref(), None)?), args.parallelism),
    };
    let config = EvalConfig { runs: args.runs as usize, parallelism: parallelism as usize, ..EvalConfig::default() };
    let report = eval::run_eval(&suite, &strategies, &config, provider.as_ref(), &prompts, SystemClock.now())?;
    println!("{}", style.paint("1", &format!("{} cases x {} runs, provider {}", suite.len(), args.runs, report.provider)));
    print!("{}", eval::render_report(&report));
    if let Some(path) = &args.report {
        let text = if path.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
        } else {
            eval::report_csv(&report)
        };
        std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    }
    Ok(())
}

fn show(file: &Path, outline: bool, context: bool, events: bool, style: &Style) -> Result<(), CliError> {
    let session = Session::load(file)?;
    let mut out = String::new();
    if outline {
        out = session.tree.outline();
    } else if context {
        for scope in [Scope::Global, Scope::Local] {
            for entry in session.context.scope(scope) {
                out += &format!("{}: {}\n", entry.key, provenance_name(entry.provenance));
            }
        }
    } else if events {
        for e in &session.events {
            out += &format!("{:>4} {} {}\n", e.seq, e.at.to_rfc3339(), style.paint("36", e.body.kind()));
        }
    } else {
        let completed = session.tree.nodes.values().filter(|n| n.draft_ref.is_some()).count();
        out += &format!("session   {}\n", session.id);
        out += &format!("goal      {}\n", session.goal);
        out += &format!("mode      {}\n", session.mode.as_str());
        out += &format!("tasks     {} ({completed} with saved drafts)\n", session.tree.len());
        out += &format!("context   {} entries\n", session.context.entries().len());
        out += &format!("events    {}\n", session.events.len());
    }
    print!("{out}");
    Ok(())
}

fn provenance_name(p: curate_core::Provenance) -> String {
    serde_json::to_value(p).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}
