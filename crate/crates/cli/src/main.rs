//! `biasgames`: serve live sessions, simulate bot games, build reports and stimuli.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 configuration or usage, 3 environment
//! (e.g. the port is taken).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biasgames_core::imagegen::{generate_stimuli, StimulusManifest};
use biasgames_core::report::{Report, ReportData};
use biasgames_core::rules::GameKind;
use biasgames_core::settings::{BackendKind, Settings, SettingsError};
use biasgames_core::sim::{simulate, Profile, SimOptions};
use biasgames_core::study::ResearchBundle;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "biasgames", version, about = "Classroom games about bias in image generators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Settings file (`key = value` lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for simulations, stimuli and room codes
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the session server
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        host: String,
    },
    /// Play headless games with bot clients against the stub backend
    Simulate {
        /// diversity_duel / dd or secret_agent / sa
        #[arg(long)]
        game: GameKind,
        #[arg(long, default_value_t = 100)]
        games: usize,
        /// Preset (default, all-honest, all-random) with optional key=value overrides
        #[arg(long, default_value = "default")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Scan every outbound message for agent-identity leaks
        #[arg(long)]
        capture: bool,
    },
    /// Shift tables and game statistics from session logs and questionnaire files
    Report {
        #[arg(required = true, value_name = "PATHS")]
        paths: Vec<PathBuf>,
    },
    /// Generate questionnaire images per category
    GenerateStimuli {
        /// Comma-separated, e.g. doctor,nurse
        #[arg(value_delimiter = ',', required = true)]
        categories: Vec<String>,
        #[arg(long, default_value_t = 10)]
        per: usize,
        /// Overrides imagegen.backend
        #[arg(long)]
        backend: Option<BackendArg>,
        /// Overrides imagegen.url
        #[arg(long)]
        url: Option<String>,
    },
    /// Write the research CSV bundle for one session log
    Export {
        log: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Stub,
    Http,
}

#[derive(Debug)]
enum Failure {
    Runtime(String),
    Config(String),
    Environment(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Config(_) => 2,
            Failure::Environment(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Runtime(m) | Failure::Config(m) | Failure::Environment(m) => m,
        }
    }
}

impl From<SettingsError> for Failure {
    fn from(e: SettingsError) -> Self {
        match e {
            SettingsError::Io { .. } => Failure::Config(format!("cannot read settings: {e}")),
            SettingsError::Invalid(_) => Failure::Config(format!("invalid settings:\n{e}")),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("biasgames: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = match &cli.global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let g = &cli.global;
    match cli.command {
        Command::Serve { port, host } => serve(settings, g, &host, port),
        Command::Simulate { game, games, profile, workers, capture } => {
            let profile = Profile::parse(&profile).map_err(Failure::Config)?;
            let mut opts = SimOptions::new(settings.game(game).clone(), g.seed.unwrap_or(0), games, profile);
            opts.workers = workers;
            opts.capture_snapshots = capture;
            run_simulation(&opts, g.out.as_deref())
        }
        Command::Report { paths } => report(&settings, &paths, g.out.as_deref()),
        Command::GenerateStimuli { categories, per, backend, url } => {
            let mut settings = settings;
            if let Some(url) = url {
                settings.imagegen.url = url;
            }
            match backend {
                Some(BackendArg::Stub) => settings.imagegen.backend = BackendKind::Stub,
                Some(BackendArg::Http) => settings.imagegen.backend = BackendKind::Http,
                None => {}
            }
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("stimuli"));
            stimuli(&settings, &categories, per, g.seed.unwrap_or(0), &out)
        }
        Command::Export { log } => {
            let out = g.out.as_deref().ok_or_else(|| Failure::Config("export needs --out DIR".into()))?;
            export(&log, out)
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Environment(format!("cannot start runtime: {e}")))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn serve(settings: Settings, g: &Global, host: &str, port: u16) -> Result<(), Failure> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Some(dir) = &g.out {
        create_dir(dir)?;
    }
    let config = biasgames_server::ServerConfig { settings, data_dir: g.out.clone(), seed: g.seed };
    let state = biasgames_server::AppState::new(config)?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| {
            let msg = format!("cannot listen on {host}:{port}: {e}");
            match e.kind() {
                std::io::ErrorKind::AddrInUse
                | std::io::ErrorKind::PermissionDenied
                | std::io::ErrorKind::AddrNotAvailable => Failure::Environment(msg),
                _ => Failure::Runtime(msg),
            }
        })?;
        let addr = listener.local_addr().map_err(|e| Failure::Environment(e.to_string()))?;
        // First stdout line is machine-readable so scripts can pick up port 0.
        println!("listening on http://{addr}");
        tracing::info!(%addr, version = biasgames_server::VERSION, "serving");
        biasgames_server::serve(listener, state).await.map_err(|e| Failure::Runtime(e.to_string()))
    })
}

fn run_simulation(opts: &SimOptions, out: Option<&Path>) -> Result<(), Failure> {
    let result = simulate(opts).map_err(|e| Failure::Config(format!("invalid game settings: {e}")))?;
    print!("{}", result.summary.to_table());
    if let Some(dir) = out {
        create_dir(dir)?;
        for run in &result.runs {
            write(&dir.join(format!("game-{:04}.jsonl", run.index + 1)), &run.log)?;
        }
        write(&dir.join("summary.csv"), &result.summary.to_csv())?;
        println!("wrote {} logs and summary.csv to {}", result.runs.len(), dir.display());
    }
    let violations: usize = result.runs.iter().map(|r| r.violations.len()).sum();
    if violations > 0 {
        for run in result.runs.iter().filter(|r| !r.violations.is_empty()) {
            for v in &run.violations {
                eprintln!("game {}: {v}", run.index + 1);
            }
        }
        return Err(Failure::Runtime(format!("{violations} invariant violations")));
    }
    Ok(())
}

fn report(settings: &Settings, paths: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let lexicon = settings.imagegen.load_lexicon()?;
    let data = ReportData::load(paths).map_err(|e| Failure::Runtime(e.to_string()))?;
    let report = Report::build(&data, &lexicon);
    print!("{}", report.to_text());
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("shifts.csv"), &report.shifts_csv())?;
        write(&dir.join("games.csv"), &report.games_csv())?;
    }
    Ok(())
}

fn stimuli(settings: &Settings, categories: &[String], per: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let gateway = settings.imagegen.gateway()?;
    let manifest: StimulusManifest = runtime()?
        .block_on(generate_stimuli(&gateway, categories, per, seed, out))
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    create_dir(out)?;
    let path = out.join("manifest.csv");
    write(&path, &manifest.to_csv())?;
    println!("{}", path.display());
    Ok(())
}

fn export(log: &Path, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(log).map_err(|e| Failure::Runtime(format!("{}: {e}", log.display())))?;
    let bundle = ResearchBundle::from_jsonl(&text).map_err(|e| Failure::Runtime(format!("{}: {e}", log.display())))?;
    let files = bundle.write_to(out).map_err(|e| Failure::Runtime(e.to_string()))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
