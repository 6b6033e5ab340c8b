//! Live protocol sessions at a scaled pulse budget.
//!
//! Session mode exercises the full two-party engine, which is record-level
//! and therefore far too slow for the 2.81e11-pulse production budget. The
//! budget is scaled by `--scale`, and the failure weights scale with it:
//! ln(1/eps) is proportional to the sample size a weight has to cover, so
//! keeping ln(1/eps') = scale * ln(1/eps) preserves the relative width of
//! every concentration bound. A scaled session is a faithful miniature of
//! the full run rather than a run that aborts purely because the budget
//! shrank. The correctness weight stays physical (it prices the hash
//! comparison, not a sample), as does the phase-error tolerance.
//!
//! The source settings also differ from the sweep presets: with a few
//! million pulses the three-intensity inversion is dominated by sampling
//! scatter in the decoy counts, not by the concentration deltas. Dim,
//! well-separated decoys keep the inversion's signal-leakage coefficient
//! (mu2^2 - mu3^2) / mu1^2 small, which is what keeps the single-photon
//! bracket positive seed after seed at these count levels.

use std::io::Read as _;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use qkd_core::engine::{run_party, run_session_loopback, Role, SessionConfig, SessionOutcome};
use qkd_core::record::Basis;
use qkd_core::security::EpsilonBudget;
use qkd_core::sim::analytic_rates;

use crate::presets::Preset;
use crate::RunError;

/// Everything that determines a session (and therefore its report bytes).
#[derive(Clone, Debug)]
pub struct SessionSpec {
    pub preset: Preset,
    pub scale: f64,
    pub seed: u64,
    pub loss_db: Option<f64>,
    pub force_ebit: Option<f64>,
}

const FULL_BUDGET: f64 = 281e9;
const SESSION_INTENSITIES: (f64, f64, f64) = (0.5, 0.1, 0.02);
const SESSION_INTENSITY_PROBS: (f64, f64, f64) = (0.5, 0.25, 0.25);
const SESSION_ALICE_BASIS: (f64, f64) = (0.65, 0.35);

pub fn build_session_config(spec: &SessionSpec) -> Result<SessionConfig, RunError> {
    if !(spec.scale > 0.0 && spec.scale <= 1.0) {
        return Err(RunError::Config(format!(
            "--scale must lie in (0, 1], got {}",
            spec.scale
        )));
    }
    let mut protocol = spec.preset.protocol();
    // The production estimation weight, before any scaling, fixes what the
    // miniature has to shrink proportionally.
    let eps_pe_full = EpsilonBudget::new(protocol.eps_sec, protocol.eps_cor).eps_pe;
    protocol.n_pulses = (FULL_BUDGET * spec.scale).round().max(1.0) as u64;
    protocol.intensities = SESSION_INTENSITIES;
    protocol.intensity_probs = SESSION_INTENSITY_PROBS;
    protocol.alice_basis_probs = SESSION_ALICE_BASIS;
    // ln(1/eps') = scale * ln(1/eps): every failure weight shrinks with the
    // sample it has to cover, so the relative width of each concentration
    // bound is what it would be at the full budget. The production split
    // eps_pe = eps_sec^2 / n cannot express that (it never exceeds 1/n),
    // hence the explicit override.
    protocol.eps_sec = protocol.eps_sec.powf(spec.scale).min(1.0 - 1e-9);
    let eps_pe = eps_pe_full.powf(spec.scale).min(1.0 - 1e-9);
    protocol.eps_cor = 1e-6;
    protocol.e_phase_tol = 0.10;

    let loss_db = spec.loss_db.unwrap_or(spec.preset.default_losses()[0]);
    let mut channel = spec.preset.channel_at(loss_db);
    if let Some(e) = spec.force_ebit {
        if !(0.0..=1.0).contains(&e) {
            return Err(RunError::Config(format!(
                "--force-ebit must lie in [0, 1], got {e}"
            )));
        }
        // A pure tilt of 2 asin(sqrt(e)) makes the Z error rate exactly e.
        channel.misalignment_angle = 2.0 * e.sqrt().asin();
    }
    let detector = spec.preset.detector();

    // Size the stop targets from the expected counts so the session neither
    // starves the estimators nor waits for pulses the budget cannot supply.
    let table = analytic_rates(&protocol, &channel, &detector);
    let n = protocol.n_pulses as f64;
    let expected_z = table.intensity_counts(&protocol, n, Basis::Z).total_detected();
    let expected_x = table.intensity_counts(&protocol, n, Basis::X);
    let min_expected_x = expected_x
        .detected
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let target_z = ((0.85 * expected_z).round() as u64).max(64);
    let min_x = ((0.4 * min_expected_x).round() as u64).max(1);
    let block_pulses = (protocol.n_pulses / 8).clamp(10_000, 2_000_000).min(protocol.n_pulses);

    let cfg = SessionConfig {
        protocol,
        channel,
        detector,
        target_z,
        min_x_per_intensity: min_x,
        block_pulses,
        world_seed: spec.seed,
        auth_key: format!("qkd session frame auth {:016x}", spec.seed).into_bytes(),
        eps_pe_override: Some(eps_pe),
    };
    cfg.validate()
        .map_err(|errs| RunError::Config(format!("session config invalid: {}", errs.join("; "))))?;
    Ok(cfg)
}

pub fn render_report(outcome: &SessionOutcome) -> String {
    let mut out =
        serde_json::to_string_pretty(&outcome.report).expect("session report serializes");
    out.push('\n');
    out
}

/// Exit code contract: 0 when the session produced a key, 2 when the
/// protocol aborted.
pub fn exit_code_for(outcome: &SessionOutcome) -> u8 {
    if outcome.report.status == "done" {
        0
    } else {
        2
    }
}

pub fn run_loopback(cfg: &SessionConfig) -> SessionOutcome {
    let (_alice, bob) = run_session_loopback(cfg);
    bob
}

/// Bind, wait for the one expected peer, run our side. `deadline` guards
/// against a peer that never dials in.
pub fn run_listen(cfg: &SessionConfig, addr: &str, deadline: Duration) -> Result<SessionOutcome, RunError> {
    let listener = TcpListener::bind(addr)
        .map_err(|e| RunError::Config(format!("cannot listen on {addr}: {e}")))?;
    let stream = accept_with_deadline(&listener, deadline, None)?;
    Ok(run_party(Role::Bob, cfg, stream))
}

pub fn run_connect(cfg: &SessionConfig, addr: &str) -> Result<SessionOutcome, RunError> {
    let stream = connect_with_retry(addr, Duration::from_secs(10))?;
    Ok(run_party(Role::Alice, cfg, stream))
}

/// Spawn a second copy of this binary as the dialing party and run the
/// listening side in-process. The child recomputes the identical world from
/// the shared spec, so its report is byte-identical and is discarded.
pub fn run_two_process(
    cfg: &SessionConfig,
    spec: &SessionSpec,
    port: Option<u16>,
) -> Result<SessionOutcome, RunError> {
    let port = resolve_port(port)?;
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| RunError::Config(format!("cannot bind 127.0.0.1:{port}: {e}")))?;
    let actual = listener
        .local_addr()
        .map_err(|e| RunError::Config(format!("listener has no address: {e}")))?
        .port();

    let exe = std::env::current_exe()
        .map_err(|e| RunError::Config(format!("cannot locate own binary: {e}")))?;
    let mut child = child_command(&exe, spec, actual)
        .spawn()
        .map_err(|e| RunError::Config(format!("cannot spawn peer process: {e}")))?;

    let stream = match accept_with_deadline(&listener, Duration::from_secs(30), Some(&mut child)) {
        Ok(s) => s,
        Err(e) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(e);
        }
    };
    let outcome = run_party(Role::Bob, cfg, stream);

    let status = child
        .wait()
        .map_err(|e| RunError::Config(format!("peer process lost: {e}")))?;
    let expected = i32::from(exit_code_for(&outcome));
    if status.code() != Some(expected) {
        return Err(RunError::Config(format!(
            "peer process exited with {:?}, expected {expected}",
            status.code()
        )));
    }
    Ok(outcome)
}

fn child_command(exe: &PathBuf, spec: &SessionSpec, port: u16) -> Command {
    let mut cmd = Command::new(exe);
    cmd.arg("--mode")
        .arg("session")
        .arg("--preset")
        .arg(spec.preset.name())
        .arg("--scale")
        .arg(spec.scale.to_string())
        .arg("--seed")
        .arg(spec.seed.to_string())
        .arg("--connect")
        .arg(format!("127.0.0.1:{port}"));
    if let Some(loss) = spec.loss_db {
        cmd.arg("--loss-db").arg(loss.to_string());
    }
    if let Some(e) = spec.force_ebit {
        cmd.arg("--force-ebit").arg(e.to_string());
    }
    cmd.stdout(Stdio::null()).stderr(Stdio::inherit());
    cmd
}

fn resolve_port(flag: Option<u16>) -> Result<u16, RunError> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match std::env::var("QKD_TEST_PORT") {
        Ok(v) => v
            .parse::<u16>()
            .map_err(|_| RunError::Config(format!("QKD_TEST_PORT is not a port: {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn accept_with_deadline(
    listener: &TcpListener,
    deadline: Duration,
    mut child: Option<&mut Child>,
) -> Result<TcpStream, RunError> {
    listener
        .set_nonblocking(true)
        .map_err(|e| RunError::Config(format!("listener setup failed: {e}")))?;
    let start = Instant::now();
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.set_nodelay(true))
                    .map_err(|e| RunError::Config(format!("stream setup failed: {e}")))?;
                return Ok(stream);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if let Some(child) = child.as_deref_mut() {
                    if let Ok(Some(status)) = child.try_wait() {
                        return Err(RunError::Config(format!(
                            "peer process exited before connecting: {status}"
                        )));
                    }
                }
                if start.elapsed() > deadline {
                    return Err(RunError::Config("no peer connected in time".to_string()));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(RunError::Config(format!("accept failed: {e}"))),
        }
    }
}

fn connect_with_retry(addr: &str, deadline: Duration) -> Result<TcpStream, RunError> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(stream) => {
                stream
                    .set_nodelay(true)
                    .map_err(|e| RunError::Config(format!("stream setup failed: {e}")))?;
                return Ok(stream);
            }
            Err(e) => {
                if start.elapsed() > deadline {
                    return Err(RunError::Config(format!("cannot connect to {addr}: {e}")));
                }
                std::thread::sleep(Duration::from_millis(25));
            }
        }
    }
}

/// Drain a child's piped stdout without blocking the protocol threads.
/// Unused when the child inherits stderr and nulls stdout, but kept for
/// callers that want the peer's report for comparison.
#[allow(dead_code)]
pub fn read_child_stdout(child: &mut Child) -> String {
    let mut buf = String::new();
    if let Some(out) = child.stdout.as_mut() {
        let _ = out.read_to_string(&mut buf);
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scale: f64) -> SessionSpec {
        SessionSpec {
            preset: Preset::NbnIntercity,
            scale,
            seed: 5,
            loss_db: None,
            force_ebit: None,
        }
    }

    #[test]
    fn scaled_budget_shrinks_pulses_and_relaxes_eps() {
        let cfg = build_session_config(&spec(1e-5)).unwrap();
        assert_eq!(cfg.protocol.n_pulses, 2_810_000);
        // ln(1/eps) scales with the budget
        let want = (1e-10f64).powf(1e-5);
        assert!((cfg.protocol.eps_sec - want).abs() < 1e-12);
        assert!(cfg.protocol.eps_sec < 1.0);
        assert_eq!(cfg.protocol.eps_cor, 1e-6);
        assert!(cfg.target_z >= 64);
        assert!(cfg.block_pulses <= cfg.protocol.n_pulses);
        cfg.validate().unwrap();
    }

    #[test]
    fn unit_scale_recovers_the_production_budget() {
        let cfg = build_session_config(&spec(1.0)).unwrap();
        assert_eq!(cfg.protocol.n_pulses, 281_000_000_000);
        assert!((cfg.protocol.eps_sec - 1e-10).abs() < 1e-22);
    }

    #[test]
    fn force_ebit_sets_the_tilt() {
        let mut s = spec(1e-5);
        s.force_ebit = Some(0.12);
        let cfg = build_session_config(&s).unwrap();
        let e = (cfg.channel.misalignment_angle / 2.0).sin().powi(2);
        assert!((e - 0.12).abs() < 1e-12);
    }

    #[test]
    fn bad_scale_and_bad_ebit_are_config_errors() {
        assert!(matches!(
            build_session_config(&spec(0.0)),
            Err(RunError::Config(_))
        ));
        let mut s = spec(1e-5);
        s.force_ebit = Some(1.5);
        assert!(matches!(
            build_session_config(&s),
            Err(RunError::Config(_))
        ));
    }
}
