use std::collections::hash_map::RandomState;
use std::fmt;
use std::hash::{BuildHasher, Hasher};
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idea23d::codec::encode_png;
use idea23d::config::{AppConfig, DEFAULT_CONFIG_PATH};
use idea23d::eval::{load_dataset, run_eval, EvalContext, EvalMode};
use idea23d::mesh_io::load_mesh;
use idea23d::render::{cm2i, compose_view_grid};
use idea23d::session::{format_iteration_table, load_session, write_views, Event, LOG_FILE};
use idea23d::{Error, Idea};
use tracing::info;
use tracing_subscriber::filter::LevelFilter;

#[derive(Parser, Debug)]
#[command(name = "idea23d", version, about = "Turn multimodal ideas into textured 3D models")]
struct Cli {
    /// Configuration file (TOML, or JSON by extension). Defaults to
    /// ./idea23d.toml when that file exists, built-in defaults otherwise.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for every random choice. A random seed is drawn, printed and
    /// logged when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log verbosity: error, warn, info, debug or trace. Overrides the
    /// configured level.
    #[arg(long, global = true, value_name = "LEVEL")]
    log_level: Option<LevelFilter>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Refine one idea into a 3D model.
    Run {
        /// Idea manifest (JSON with text, images and meshes).
        #[arg(long, value_name = "PATH")]
        idea: PathBuf,
        /// Session directory for the log, drafts and final model.
        /// Defaults to `<session_root>/run-<seed>`.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Evaluate a dataset under one or more modes.
    Eval {
        /// Dataset manifest.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Mode to evaluate: idea23d, caption_baseline, text_only or
        /// gt_prompt. Repeat for several; all modes when omitted.
        #[arg(long, value_name = "MODE")]
        mode: Vec<EvalMode>,
        /// JSON report path; the plain-text table goes next to it with a
        /// `.txt` extension.
        #[arg(long, value_name = "PATH")]
        report: PathBuf,
        /// Parent directory of per-case sessions. Defaults to the
        /// configured session root.
        #[arg(long, value_name = "DIR")]
        session_root: Option<PathBuf>,
    },
    /// Render the six canonical views of a mesh plus the view grid.
    Render {
        /// Mesh file (.obj or .glb).
        mesh: PathBuf,
        /// Directory receiving `<view>.png` and `grid.png`.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Print the iteration table of a recorded session.
    Inspect {
        /// Session directory containing `session.jsonl`.
        session_dir: PathBuf,
    },
}

/// Failure of one CLI invocation, split by exit code.
enum Failure {
    /// Bad arguments or missing input files (exit 2).
    Usage(String),
    /// A domain error in the named stage (exit 1).
    Domain { stage: String, error: Error },
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "error: {msg}"),
            Failure::Domain { stage, error } => write!(f, "error in stage {stage}: {error}"),
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for idea23d::Result<T> {
    fn stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|error| Failure::Domain { stage: stage.into(), error })
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn load_config(explicit: Option<&Path>) -> Result<AppConfig, Failure> {
    match explicit {
        Some(p) => {
            require_file(p, "config file")?;
            AppConfig::load(p).stage("config")
        }
        None if Path::new(DEFAULT_CONFIG_PATH).is_file() => {
            AppConfig::load(Path::new(DEFAULT_CONFIG_PATH)).stage("config")
        }
        None => Ok(AppConfig::default()),
    }
}

fn random_seed() -> u64 {
    RandomState::new().build_hasher().finish()
}

fn init_logging(level: LevelFilter) {
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            match f {
                Failure::Usage(_) => ExitCode::from(2),
                Failure::Domain { .. } => ExitCode::from(1),
            }
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let level = match cli.log_level {
        Some(l) => l,
        None => {
            cfg.logging.level.parse().map_err(|_| Failure::Usage(format!("bad log level {:?}", cfg.logging.level)))?
        }
    };
    init_logging(level);
    let seed = cli.seed.unwrap_or_else(random_seed);
    cfg.loop_cfg.seed = seed;
    match cli.command {
        Command::Run { idea, out } => cmd_run(&cfg, &idea, out),
        Command::Eval { dataset, mode, report, session_root } => cmd_eval(&cfg, &dataset, mode, &report, session_root),
        Command::Render { mesh, out_dir } => cmd_render(&cfg, &mesh, &out_dir),
        Command::Inspect { session_dir } => cmd_inspect(&session_dir),
    }
}

fn announce_seed(seed: u64) {
    eprintln!("seed: {seed}");
    info!(seed, "using seed");
}

fn cmd_run(cfg: &AppConfig, idea_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    require_file(idea_path, "idea file")?;
    let idea = Idea::load_manifest(idea_path).map_err(|e| match e {
        Error::Io(msg) => Failure::Usage(msg),
        error => Failure::Domain { stage: "load idea".into(), error },
    })?;
    let gateway = cfg.backends.build().stage("config")?;
    let templates = cfg.prompt_templates().stage("config")?;
    let seed = cfg.loop_cfg.seed;
    announce_seed(seed);
    let out = out.unwrap_or_else(|| cfg.logging.session_root.join(format!("run-{seed}")));
    match idea23d::refine::run(&idea, &gateway, &cfg.loop_cfg, &templates, &out) {
        Ok(result) => {
            println!(
                "final draft {} after {} iteration(s); outputs in {}",
                result.final_draft.draft_id,
                result.outcomes.len(),
                out.join("final").display()
            );
            Ok(())
        }
        Err(error) => {
            let stage = failed_stage(&out).unwrap_or_else(|| "run".into());
            Err(Failure::Domain { stage, error })
        }
    }
}

/// Stage recorded by the session's `run_error` event, if any.
fn failed_stage(session_dir: &Path) -> Option<String> {
    let s = load_session(session_dir).ok()?;
    s.events.iter().rev().find_map(|e| match &e.event {
        Event::RunError { stage, .. } => Some(stage.clone()),
        _ => None,
    })
}

fn cmd_eval(
    cfg: &AppConfig,
    dataset_path: &Path,
    mut modes: Vec<EvalMode>,
    report_path: &Path,
    session_root: Option<PathBuf>,
) -> Result<(), Failure> {
    require_file(dataset_path, "dataset manifest")?;
    let dataset = load_dataset(dataset_path).stage("load dataset")?;
    if modes.is_empty() {
        modes = EvalMode::ALL.to_vec();
    }
    let mut seen = Vec::new();
    modes.retain(|m| {
        !seen.contains(m) && {
            seen.push(*m);
            true
        }
    });
    let gateway = cfg.backends.build().stage("config")?;
    let templates = cfg.prompt_templates().stage("config")?;
    announce_seed(cfg.loop_cfg.seed);
    let session_root = session_root.unwrap_or_else(|| cfg.logging.session_root.clone());
    let ctx = EvalContext {
        gateway: &gateway,
        loop_cfg: &cfg.loop_cfg,
        templates: &templates,
        settings: &cfg.eval,
        session_root: &session_root,
    };
    let report = run_eval(&dataset, &modes, &ctx).stage("eval")?;
    let table = report.to_table();
    write(report_path, report.to_json().as_bytes())?;
    write(&report_path.with_extension("txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Domain { stage: "write".into(), error: Error::Io(format!("{}: {e}", path.display())) }
}

fn cmd_render(cfg: &AppConfig, mesh_path: &Path, out_dir: &Path) -> Result<(), Failure> {
    require_file(mesh_path, "mesh file")?;
    let mesh = load_mesh(mesh_path).stage("load mesh")?;
    let views = cm2i(&mesh, &cfg.loop_cfg.render).stage("render")?;
    write_views(&views, out_dir).stage("write")?;
    write(&out_dir.join("grid.png"), &encode_png(&compose_view_grid(&views).pixels))?;
    println!("wrote 7 images to {}", out_dir.display());
    Ok(())
}

fn cmd_inspect(session_dir: &Path) -> Result<(), Failure> {
    require_file(&session_dir.join(LOG_FILE), "session log")?;
    let s = load_session(session_dir).stage("load session")?;
    print!("{}", format_iteration_table(&s));
    Ok(())
}
