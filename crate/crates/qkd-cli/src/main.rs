//! `qkd`: experiment runner for the decoy-state BB84 stack.
//!
//! Four modes. `analytic` and `montecarlo` sweep secret-key rate over
//! channel attenuation and print CSV (or JSON, by output extension);
//! `session` runs the live two-party protocol in-process, across two
//! processes, or against a remote peer; `feedback-demo` exercises the
//! drift-compensation controller. Exit code 0 means a completed run, 2 an
//! aborted protocol or failed estimation, 3 a configuration error.

mod feedback_demo;
mod presets;
mod session_run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Deserialize;

use presets::Preset;
use session_run::SessionSpec;
use sweep::SweepMode;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// Bad flags, bad config file, impossible parameters: exit 3.
    #[error("{0}")]
    Config(String),
    /// The run itself failed (protocol abort, estimation breakdown): exit 2.
    #[error("{0}")]
    Aborted(String),
}

#[derive(Parser, Debug)]
#[command(name = "qkd", about = "Decoy-state BB84 experiment runner", version)]
struct Cli {
    /// analytic | montecarlo | session | feedback-demo
    #[arg(long)]
    mode: Option<String>,
    /// wsi-local | nbn-intercity
    #[arg(long)]
    preset: Option<String>,
    /// Total channel attenuation in dB; repeat the flag for a sweep
    #[arg(long = "loss-db")]
    loss_db: Vec<f64>,
    /// Pulse-budget scale for montecarlo and session modes
    #[arg(long)]
    scale: Option<f64>,
    /// Seed for every random stream in the run
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when omitted. Sweeps emit CSV unless the path
    /// ends in .json
    #[arg(long)]
    out: Option<PathBuf>,
    /// Session: spawn a second copy of this binary as the remote party
    #[arg(long)]
    two_process: bool,
    /// Port for --two-process; defaults to QKD_TEST_PORT or an ephemeral one
    #[arg(long)]
    port: Option<u16>,
    /// Session: listen on host:port and run the receiving side
    #[arg(long)]
    listen: Option<String>,
    /// Session: dial host:port and run the sending side
    #[arg(long)]
    connect: Option<String>,
    /// feedback-demo: "on" closes the loop (default), "off" opens it
    #[arg(long)]
    feedback: Option<String>,
    /// Session: tilt the channel so the Z error rate equals this value
    #[arg(long = "force-ebit")]
    force_ebit: Option<f64>,
    /// JSON file supplying any of the long options; explicit flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

/// File form of the command line. Field names match the long flags with
/// underscores; unknown keys are rejected rather than ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<String>,
    preset: Option<String>,
    loss_db: Option<Vec<f64>>,
    scale: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    two_process: Option<bool>,
    port: Option<u16>,
    listen: Option<String>,
    connect: Option<String>,
    feedback: Option<String>,
    force_ebit: Option<f64>,
    /// Sweep-only override of the full pulse budget, for matched-budget
    /// comparisons between the two sweep modes.
    n_pulses: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Analytic,
    MonteCarlo,
    Session,
    FeedbackDemo,
}

fn mode_from_name(name: &str) -> Result<Mode, RunError> {
    match name {
        "analytic" => Ok(Mode::Analytic),
        "montecarlo" => Ok(Mode::MonteCarlo),
        "session" => Ok(Mode::Session),
        "feedback-demo" => Ok(Mode::FeedbackDemo),
        other => Err(RunError::Config(format!(
            "unknown mode {other:?}; expected analytic, montecarlo, session or feedback-demo"
        ))),
    }
}

struct Resolved {
    mode: Mode,
    preset: Preset,
    losses: Vec<f64>,
    scale: Option<f64>,
    seed: u64,
    out: Option<PathBuf>,
    two_process: bool,
    port: Option<u16>,
    listen: Option<String>,
    connect: Option<String>,
    feedback: bool,
    force_ebit: Option<f64>,
    n_pulses: Option<u64>,
}

fn load_file_config(path: &PathBuf) -> Result<FileConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("bad config {}: {e}", path.display())))
}

fn resolve(cli: Cli) -> Result<Resolved, RunError> {
    let file = match &cli.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };
    let mode_name = cli
        .mode
        .or(file.mode)
        .ok_or_else(|| RunError::Config("--mode is required".to_string()))?;
    let mode = mode_from_name(&mode_name)?;
    let preset_name = cli
        .preset
        .or(file.preset)
        .unwrap_or_else(|| "wsi-local".to_string());
    let preset = Preset::from_name(&preset_name).ok_or_else(|| {
        RunError::Config(format!(
            "unknown preset {preset_name:?}; expected wsi-local or nbn-intercity"
        ))
    })?;
    let losses = if cli.loss_db.is_empty() {
        file.loss_db.unwrap_or_default()
    } else {
        cli.loss_db
    };
    let feedback = match cli.feedback.or(file.feedback).as_deref() {
        None | Some("on") => true,
        Some("off") => false,
        Some(other) => {
            return Err(RunError::Config(format!(
                "--feedback takes on or off, got {other:?}"
            )))
        }
    };
    Ok(Resolved {
        mode,
        preset,
        losses,
        scale: cli.scale.or(file.scale),
        seed: cli.seed.or(file.seed).unwrap_or(1),
        out: cli.out.or(file.out),
        two_process: cli.two_process || file.two_process.unwrap_or(false),
        port: cli.port.or(file.port),
        listen: cli.listen.or(file.listen),
        connect: cli.connect.or(file.connect),
        feedback,
        force_ebit: cli.force_ebit.or(file.force_ebit),
        n_pulses: file.n_pulses,
    })
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), RunError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| RunError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn wants_json(out: &Option<PathBuf>) -> bool {
    out.as_ref()
        .and_then(|p| p.extension())
        .is_some_and(|ext| ext == "json")
}

fn run_sweep_mode(r: &Resolved, mode: SweepMode) -> Result<u8, RunError> {
    let mut cfg = r.preset.protocol();
    if let Some(n) = r.n_pulses {
        if n == 0 {
            return Err(RunError::Config("n_pulses must be positive".to_string()));
        }
        cfg.n_pulses = n;
    }
    // Count-level sampling costs the same at any budget, so the Monte Carlo
    // default is the full budget; --scale exists for scaled-extrapolation
    // studies.
    let scale = match mode {
        SweepMode::Analytic => 1.0,
        SweepMode::MonteCarlo => r.scale.unwrap_or(1.0),
    };
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(RunError::Config(format!(
            "--scale must lie in (0, 1], got {scale}"
        )));
    }
    let losses = if r.losses.is_empty() {
        r.preset.default_losses()
    } else {
        r.losses.clone()
    };
    let rows = sweep::run_sweep(mode, r.preset, &cfg, &losses, scale, r.seed)?;
    let text = if wants_json(&r.out) {
        sweep::render_json(&rows)
    } else {
        sweep::render_csv(&rows)
    };
    write_output(&r.out, &text)?;
    Ok(0)
}

fn run_session_mode(r: &Resolved) -> Result<u8, RunError> {
    if r.losses.len() > 1 {
        return Err(RunError::Config(
            "session mode takes at most one --loss-db".to_string(),
        ));
    }
    let transports =
        usize::from(r.two_process) + usize::from(r.listen.is_some()) + usize::from(r.connect.is_some());
    if transports > 1 {
        return Err(RunError::Config(
            "--two-process, --listen and --connect are mutually exclusive".to_string(),
        ));
    }
    let spec = SessionSpec {
        preset: r.preset,
        scale: r.scale.unwrap_or(1e-5),
        seed: r.seed,
        loss_db: r.losses.first().copied(),
        force_ebit: r.force_ebit,
    };
    let cfg = session_run::build_session_config(&spec)?;
    let outcome = if r.two_process {
        session_run::run_two_process(&cfg, &spec, r.port)?
    } else if let Some(addr) = &r.listen {
        session_run::run_listen(&cfg, addr, Duration::from_secs(60))?
    } else if let Some(addr) = &r.connect {
        session_run::run_connect(&cfg, addr)?
    } else {
        session_run::run_loopback(&cfg)
    };
    write_output(&r.out, &session_run::render_report(&outcome))?;
    Ok(session_run::exit_code_for(&outcome))
}

fn run_feedback_demo(r: &Resolved) -> Result<u8, RunError> {
    let spec = feedback_demo::DemoSpec {
        seed: r.seed,
        feedback: r.feedback,
    };
    let (summary, trace) = feedback_demo::run_demo(&spec);
    if r.out.is_some() {
        write_output(&r.out, &feedback_demo::render_trace_csv(&trace))?;
    }
    print!("{}", feedback_demo::render_summary(&summary));
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, RunError> {
    let r = resolve(cli)?;
    match r.mode {
        Mode::Analytic => run_sweep_mode(&r, SweepMode::Analytic),
        Mode::MonteCarlo => run_sweep_mode(&r, SweepMode::MonteCarlo),
        Mode::Session => run_session_mode(&r),
        Mode::FeedbackDemo => run_feedback_demo(&r),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(3);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(3)
        }
        Err(RunError::Aborted(msg)) => {
            eprintln!("run aborted: {msg}");
            ExitCode::from(2)
        }
    }
}
