//! Session orchestration.
//!
//! A session walks both parties through collection, basis reconciliation,
//! estimation, error correction, verification and amplification. Each party
//! sees only its own side of the optics: Alice her preparations, Bob his
//! detections. Everything else arrives through announced messages, and every
//! early exit is decided from data both sides share, so the two reports are
//! field-for-field identical whichever transport carries the frames.

use super::bits::KeyMaterial;
use super::cascade::{reconcile_alice, reconcile_bob, ReconcileSummary};
use super::messages::{
    decode_amplify, decode_bases, decode_bases_with_check_bits, decode_detections, decode_digest,
    decode_ec, decode_intensities, decode_seed, decode_summary, encode_amplify, encode_bases,
    encode_bases_with_check_bits, encode_detections, encode_digest, encode_intensities,
    encode_seed, encode_summary, EcMessage, EstimateSummary, PayloadError,
};
use super::toeplitz::{hash_strip, toeplitz_hash, verify_digest_bits};
use super::{sample_indices, AbortReason, StepResult, TranscriptEntry, Wire};
use crate::config::ProtocolConfig;
use crate::decoy::{
    bound_single_events, bound_vacuum_events, estimate_phase_error_standard, IntensityCounts,
};
use crate::record::{Basis, Outcome, RecordBlock};
use crate::rng::RandomStream;
use crate::security::{
    binary_entropy, secret_key_length_charged, skr_from_length, EpsilonBudget, SecurityBounds,
};
use crate::sim::{simulate_block, ChannelModel, DetectorModel};
use crate::transport::{loopback_pair, FramedLink, MsgType};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

/// Everything both parties must agree on before connecting, including the
/// seed for the shared optical simulation and the frame authentication key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub protocol: ProtocolConfig,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    /// Sifted Z detections to collect; also the raw key length, drawn as a
    /// seeded sample from the full sifted Z set.
    pub target_z: u64,
    /// Minimum X-basis check detections per intensity before estimation.
    pub min_x_per_intensity: u64,
    pub block_pulses: u64,
    pub world_seed: u64,
    pub auth_key: Vec<u8>,
    /// Estimation failure weight to use instead of the production split
    /// eps_sec^2 / n_estimates. Scaled-down sessions set this, because the
    /// production split never exceeds 1/n_estimates and would leave the
    /// concentration deltas sized for the full budget.
    #[serde(default)]
    pub eps_pe_override: Option<f64>,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = self.protocol.validate().err().unwrap_or_default();
        if self.target_z < 64 {
            errors.push("target_z must be at least 64".to_string());
        }
        if self.min_x_per_intensity == 0 {
            errors.push("min_x_per_intensity must be positive".to_string());
        }
        if self.block_pulses == 0 {
            errors.push("block_pulses must be positive".to_string());
        }
        if self.auth_key.len() < 16 {
            errors.push("auth_key must hold at least 16 bytes".to_string());
        }
        if let Some(eps) = self.eps_pe_override {
            if !(eps > 0.0 && eps < 1.0) {
                errors.push("eps_pe_override must lie in (0,1)".to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

/// One party's view of a finished or aborted session. Every field is
/// computed from data both parties share, so Alice's and Bob's reports are
/// identical and serialize to identical JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub seed: u64,
    pub status: String,
    pub abort_reason: Option<String>,
    pub pulses_used: u64,
    pub blocks: u64,
    pub z_sifted: [u64; 3],
    pub x_sifted: [u64; 3],
    pub x_errors: [u64; 3],
    pub basis_mismatches: u64,
    pub n_raw: u64,
    pub bounds: Option<SecurityBounds>,
    pub ec_leakage_bits: u64,
    pub ec_charged_bits: f64,
    pub ec_passes: u32,
    pub ec_corrections: u64,
    pub verify_bits: u32,
    pub key_length: u64,
    pub skr_bps: f64,
    pub bytes_a_to_b: u64,
    pub bytes_b_to_a: u64,
    pub key_fingerprint: Option<String>,
}

pub struct SessionOutcome {
    pub report: SessionReport,
    /// The distilled secret key; None on abort.
    pub key: Option<KeyMaterial>,
    /// The pre-amplification raw key, kept for transcript audits.
    pub raw_key: Option<KeyMaterial>,
    pub transcript: Vec<TranscriptEntry>,
}

// ---- phase bookkeeping ----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Collecting,
    ReconcilingBases,
    Estimating,
    Correcting,
    Verifying,
    Amplifying,
    Done,
}

/// Collection and announcement alternate per block; after that the order is
/// fixed. Aborting is allowed from anywhere and handled by early return.
fn can_follow(from: Phase, to: Phase) -> bool {
    use Phase::*;
    matches!(
        (from, to),
        (Collecting, ReconcilingBases)
            | (ReconcilingBases, Collecting)
            | (ReconcilingBases, Estimating)
            | (Estimating, Correcting)
            | (Correcting, Verifying)
            | (Verifying, Amplifying)
            | (Amplifying, Done)
    )
}

struct PhaseTracker {
    phase: Phase,
}

impl PhaseTracker {
    fn new() -> Self {
        PhaseTracker { phase: Phase::Collecting }
    }

    fn advance(&mut self, to: Phase) {
        assert!(can_follow(self.phase, to), "phase skip {:?} -> {to:?}", self.phase);
        self.phase = to;
    }
}

// ---- per-party accumulation -------------------------------------------------

#[derive(Default)]
struct Tape {
    z_index: Vec<u64>,
    z_mu: Vec<u8>,
    /// This party's own Z bit per sifted event; never announced.
    z_bits: Vec<u8>,
    z_counts: [u64; 3],
    x_detected: [u64; 3],
    x_errors: [u64; 3],
    mismatches: u64,
}

impl Tape {
    fn z_total(&self) -> u64 {
        self.z_counts.iter().sum()
    }

    fn targets_met(&self, cfg: &SessionConfig) -> bool {
        self.z_total() >= cfg.target_z
            && self.x_detected.iter().all(|&x| x >= cfg.min_x_per_intensity)
    }

    /// Digest of the shared sift view: indices, intensities and tallies, but
    /// never bit values.
    fn digest(&self) -> Vec<u8> {
        let mut h = Sha256::new();
        for v in self
            .z_counts
            .iter()
            .chain(self.x_detected.iter())
            .chain(self.x_errors.iter())
        {
            h.update(v.to_le_bytes());
        }
        h.update(self.mismatches.to_le_bytes());
        h.update((self.z_index.len() as u64).to_le_bytes());
        for (i, mu) in self.z_index.iter().zip(&self.z_mu) {
            h.update(i.to_le_bytes());
            h.update([*mu]);
        }
        h.finalize().to_vec()
    }
}

#[derive(Default)]
struct Progress {
    pulses_used: u64,
    blocks: u64,
    tape: Tape,
    bounds: Option<SecurityBounds>,
    ec: ReconcileSummary,
    ec_charge: f64,
    verify_bits: u32,
    raw_key: Option<KeyMaterial>,
}

fn parsed<S: Read + Write, T>(wire: &mut Wire<S>, value: Result<T, PayloadError>) -> StepResult<T> {
    match value {
        Ok(v) => Ok(v),
        Err(_) => Err(wire.abort(AbortReason::Link)),
    }
}

// ---- the protocol ----------------------------------------------------------

/// Runs one endpoint over any byte stream and reports how it went. The
/// stream must be connected to a peer running the opposite role with an
/// identical config.
pub fn run_party<S: Read + Write>(role: Role, cfg: &SessionConfig, stream: S) -> SessionOutcome {
    assert!(cfg.validate().is_ok(), "invalid session config");
    let mut wire = Wire::new(FramedLink::new(stream, &cfg.auth_key));
    let mut prog = Progress::default();
    let outcome = drive(role, cfg, &mut wire, &mut prog);

    let (status, abort_reason, key) = match outcome {
        Ok(key) => ("done", None, Some(key)),
        Err(reason) => ("aborted", Some(reason.as_str().to_string()), None),
    };
    let (bytes_a_to_b, bytes_b_to_a) = match role {
        Role::Alice => (wire.bytes_sent(), wire.bytes_received()),
        Role::Bob => (wire.bytes_received(), wire.bytes_sent()),
    };
    let key_length = key.as_ref().map_or(0, |k| k.len() as u64);
    let duration = prog.pulses_used as f64 / cfg.protocol.clock_rate;
    let report = SessionReport {
        seed: cfg.world_seed,
        status: status.to_string(),
        abort_reason,
        pulses_used: prog.pulses_used,
        blocks: prog.blocks,
        z_sifted: prog.tape.z_counts,
        x_sifted: prog.tape.x_detected,
        x_errors: prog.tape.x_errors,
        basis_mismatches: prog.tape.mismatches,
        n_raw: prog.raw_key.as_ref().map_or(0, |k| k.len() as u64),
        bounds: prog.bounds,
        ec_leakage_bits: prog.ec.leakage_bits,
        ec_charged_bits: prog.ec_charge,
        ec_passes: prog.ec.passes,
        ec_corrections: prog.ec.corrections,
        verify_bits: prog.verify_bits,
        key_length,
        skr_bps: if key_length > 0 { skr_from_length(key_length, duration) } else { 0.0 },
        bytes_a_to_b,
        bytes_b_to_a,
        key_fingerprint: key.as_ref().map(fingerprint),
    };
    SessionOutcome { report, key, raw_key: prog.raw_key.take(), transcript: std::mem::take(&mut wire.log) }
}

/// Runs both roles over an in-memory pipe and returns (Alice, Bob).
pub fn run_session_loopback(cfg: &SessionConfig) -> (SessionOutcome, SessionOutcome) {
    let (a, b) = loopback_pair();
    std::thread::scope(|s| {
        let alice = s.spawn(move || run_party(Role::Alice, cfg, a));
        let bob = s.spawn(move || run_party(Role::Bob, cfg, b));
        (alice.join().unwrap(), bob.join().unwrap())
    })
}

fn drive<S: Read + Write>(
    role: Role,
    cfg: &SessionConfig,
    wire: &mut Wire<S>,
    prog: &mut Progress,
) -> StepResult<KeyMaterial> {
    let proto = &cfg.protocol;
    let mut budget = EpsilonBudget::new(proto.eps_sec, proto.eps_cor);
    if let Some(eps) = cfg.eps_pe_override {
        budget.eps_pe = eps;
    }
    let mut phase = PhaseTracker::new();
    let mut channel = cfg.channel.clone();
    // both parties replay the same optical world from the shared seed; each
    // then uses only its own side of it
    let world = RandomStream::new(cfg.world_seed, "optics");
    let mut alice_rng = RandomStream::new(cfg.world_seed, "alice-protocol");

    loop {
        let remaining = proto.n_pulses - prog.pulses_used;
        if remaining == 0 {
            return Err(wire.abort(AbortReason::InsufficientData));
        }
        let len = remaining.min(cfg.block_pulses);
        let mut block_rng = world.derive(&format!("block-{}", prog.blocks));
        let (records, _) = simulate_block(len, proto, &mut channel, &cfg.detector, &mut block_rng);
        phase.advance(Phase::ReconcilingBases);
        match role {
            Role::Alice => sift_block_alice(prog.pulses_used, &records, wire, &mut prog.tape)?,
            Role::Bob => sift_block_bob(prog.pulses_used, &records, wire, &mut prog.tape)?,
        }
        prog.pulses_used += len;
        prog.blocks += 1;
        if prog.tape.targets_met(cfg) {
            break;
        }
        phase.advance(Phase::Collecting);
    }

    // both sides must hold the same sift view before sampling from it
    let digest = prog.tape.digest();
    wire.send(MsgType::SiftConfirm, &digest)?;
    let theirs = wire.recv_expect(MsgType::SiftConfirm)?;
    if theirs != digest {
        return Err(wire.abort(AbortReason::Link));
    }

    phase.advance(Phase::Estimating);
    let summary = match role {
        Role::Alice => {
            let s = EstimateSummary {
                sample_seed: alice_rng.next_u64(),
                z_counts: prog.tape.z_counts,
                x_detected: prog.tape.x_detected,
                x_errors: prog.tape.x_errors,
            };
            wire.send(MsgType::PeSummary, &encode_summary(&s))?;
            let payload = wire.recv_expect(MsgType::PeSummary)?;
            let echo = parsed(wire, decode_summary(&payload))?;
            if echo != s {
                return Err(wire.abort(AbortReason::Link));
            }
            s
        }
        Role::Bob => {
            let payload = wire.recv_expect(MsgType::PeSummary)?;
            let got = parsed(wire, decode_summary(&payload))?;
            let mine = EstimateSummary {
                sample_seed: got.sample_seed,
                z_counts: prog.tape.z_counts,
                x_detected: prog.tape.x_detected,
                x_errors: prog.tape.x_errors,
            };
            wire.send(MsgType::PeSummary, &encode_summary(&mine))?;
            if got != mine {
                return Err(wire.abort(AbortReason::Link));
            }
            got
        }
    };

    // raw key: a seeded sample of target_z positions from the sifted Z set
    let sample = sample_indices(
        prog.tape.z_total() as usize,
        cfg.target_z as usize,
        summary.sample_seed,
    );
    let mut raw = KeyMaterial::new();
    let mut sampled_z = [0u64; 3];
    for &pos in &sample {
        raw.push(prog.tape.z_bits[pos as usize] == 1);
        sampled_z[prog.tape.z_mu[pos as usize] as usize] += 1;
    }
    prog.raw_key = Some(raw.clone());

    let probs = [proto.intensity_probs.0, proto.intensity_probs.1, proto.intensity_probs.2];
    let z_counts = IntensityCounts {
        detected: sampled_z.map(|v| v as f64),
        errors: [0.0; 3],
        probs,
    };
    let x_counts = IntensityCounts {
        detected: summary.x_detected.map(|v| v as f64),
        errors: summary.x_errors.map(|v| v as f64),
        probs,
    };
    // an estimator that cannot produce a bound is a security failure, not a
    // retry: both sides see the same counts and abort together
    let eps = budget.eps_pe;
    let m0 = bound_vacuum_events(&z_counts, proto, eps);
    let m1 = match bound_single_events(&z_counts, m0, proto, eps) {
        Ok(v) => v,
        Err(_) => return Err(wire.abort(AbortReason::Security)),
    };
    let m0x = bound_vacuum_events(&x_counts, proto, eps);
    let m1x = match bound_single_events(&x_counts, m0x, proto, eps) {
        Ok(v) => v,
        Err(_) => return Err(wire.abort(AbortReason::Security)),
    };
    let e_phase = match estimate_phase_error_standard(&x_counts, proto, m1, m1x, eps) {
        Ok(v) => v,
        Err(_) => return Err(wire.abort(AbortReason::Security)),
    };
    prog.bounds = Some(SecurityBounds {
        m0_lower: m0,
        m1_lower: m1,
        e_phase_upper: e_phase,
        e_bit: 0.0,
        n_z_sifted: cfg.target_z,
    });
    if e_phase > proto.e_phase_tol {
        return Err(wire.abort(AbortReason::Security));
    }

    phase.advance(Phase::Correcting);
    let x_total: u64 = summary.x_detected.iter().sum();
    let xe_total: u64 = summary.x_errors.iter().sum();
    let e_estimate = if x_total > 0 {
        (xe_total as f64 / x_total as f64).clamp(1e-3, 0.5)
    } else {
        0.02
    };
    let mut key = raw;
    prog.ec = match role {
        Role::Alice => reconcile_alice(wire, &key, e_estimate, &mut alice_rng)?,
        Role::Bob => reconcile_bob(wire, &mut key)?,
    };
    let e_bit = prog.ec.corrections as f64 / key.len() as f64;
    if let Some(b) = prog.bounds.as_mut() {
        b.e_bit = e_bit;
    }

    phase.advance(Phase::Verifying);
    let nbits = verify_digest_bits(proto.eps_cor) as usize;
    prog.verify_bits = nbits as u32;
    match role {
        Role::Alice => {
            let seed = alice_rng.next_u64();
            wire.send(MsgType::VerifySeed, &encode_seed(seed))?;
            let payload = wire.recv_expect(MsgType::VerifyDigest)?;
            let theirs = parsed(wire, decode_digest(&payload))?;
            let mine = toeplitz_hash(&hash_strip(seed, "verify", nbits, key.len()), &key, nbits);
            if theirs != mine {
                return Err(wire.abort(AbortReason::Correctness));
            }
        }
        Role::Bob => {
            let payload = wire.recv_expect(MsgType::VerifySeed)?;
            let seed = parsed(wire, decode_seed(&payload))?;
            let digest = toeplitz_hash(&hash_strip(seed, "verify", nbits, key.len()), &key, nbits);
            wire.send(MsgType::VerifyDigest, &encode_digest(&digest))?;
        }
    }

    phase.advance(Phase::Amplifying);
    let bounds = prog.bounds.expect("bounds set during estimation");
    let model_term = proto.xi * binary_entropy(e_bit) * bounds.m1_lower;
    let charge = (prog.ec.leakage_bits as f64).max(model_term);
    prog.ec_charge = charge;
    let l = secret_key_length_charged(&bounds, &budget, charge) as usize;
    if l == 0 {
        return Err(wire.abort(AbortReason::NoKey));
    }
    let final_key = match role {
        Role::Alice => {
            let seed = alice_rng.next_u64();
            wire.send(MsgType::PaSeed, &encode_amplify(seed, l as u64))?;
            toeplitz_hash(&hash_strip(seed, "amplify", l, key.len()), &key, l)
        }
        Role::Bob => {
            let payload = wire.recv_expect(MsgType::PaSeed)?;
            let (seed, their_l) = parsed(wire, decode_amplify(&payload))?;
            if their_l != l as u64 {
                return Err(wire.abort(AbortReason::Correctness));
            }
            toeplitz_hash(&hash_strip(seed, "amplify", l, key.len()), &key, l)
        }
    };
    phase.advance(Phase::Done);
    Ok(final_key)
}

// ---- per-block announcement exchange ---------------------------------------

fn sift_block_bob<S: Read + Write>(
    base: u64,
    records: &RecordBlock,
    wire: &mut Wire<S>,
    tape: &mut Tape,
) -> StepResult<()> {
    // Bob's projection of the block: what clicked, where, measured how
    let mut detected: Vec<(u64, bool, u8)> = Vec::new();
    for r in records.iter() {
        if r.outcome != Outcome::NoClick {
            let bit = r.resolved_bit.expect("clicked record carries a bit");
            detected.push((base + r.index, r.bob_basis == Basis::X, bit));
        }
    }
    let indices: Vec<u64> = detected.iter().map(|d| d.0).collect();
    wire.send(MsgType::DetectIndices, &encode_detections(base, &indices))?;

    let payload = wire.recv_expect(MsgType::BasisAnnounce)?;
    let (ab, alice_bases) = parsed(wire, decode_bases(&payload))?;
    let payload = wire.recv_expect(MsgType::IntensityAnnounce)?;
    let (ai, mus) = parsed(wire, decode_intensities(&payload))?;
    if ab != base || ai != base || alice_bases.len() != detected.len() || mus.len() != detected.len()
    {
        return Err(wire.abort(AbortReason::Link));
    }

    // bases, plus outcome bits for the rounds both measured in X: those are
    // check data, never key material
    let mut bases = KeyMaterial::zeros(detected.len());
    let mut check = KeyMaterial::new();
    for (i, &(_, x_basis, bit)) in detected.iter().enumerate() {
        bases.set(i, x_basis);
        if x_basis && alice_bases.get(i) {
            check.push(bit == 1);
        }
    }
    wire.send(MsgType::BasisAnnounce, &encode_bases_with_check_bits(base, &bases, &check))?;

    for (i, &(index, x_basis, bit)) in detected.iter().enumerate() {
        let k = mus[i] as usize;
        match (alice_bases.get(i), x_basis) {
            (false, false) => {
                tape.z_index.push(index);
                tape.z_mu.push(mus[i]);
                tape.z_bits.push(bit);
                tape.z_counts[k] += 1;
            }
            (true, true) => {
                tape.x_detected[k] += 1;
                // the only X state ever prepared encodes 0
                if bit == 1 {
                    tape.x_errors[k] += 1;
                }
            }
            _ => tape.mismatches += 1,
        }
    }
    Ok(())
}

fn sift_block_alice<S: Read + Write>(
    base: u64,
    records: &RecordBlock,
    wire: &mut Wire<S>,
    tape: &mut Tape,
) -> StepResult<()> {
    let payload = wire.recv_expect(MsgType::DetectIndices)?;
    let (b, indices) = parsed(wire, decode_detections(&payload))?;
    let len = records.len() as u64;
    let in_range = match (indices.first(), indices.last()) {
        (Some(&first), Some(&last)) => first >= base && last < base + len,
        _ => true,
    };
    if b != base || indices.len() as u64 > len || !in_range {
        return Err(wire.abort(AbortReason::Link));
    }

    // Alice's projection: what she prepared at the announced positions
    let mut prepared: Vec<(bool, u8, u8)> = Vec::with_capacity(indices.len());
    let mut bases = KeyMaterial::zeros(indices.len());
    let mut codes = Vec::with_capacity(indices.len());
    for (i, &gi) in indices.iter().enumerate() {
        let r = records.get((gi - base) as usize);
        let x_basis = r.alice_basis == Basis::X;
        prepared.push((x_basis, r.intensity.index() as u8, r.alice_bit));
        bases.set(i, x_basis);
        codes.push(r.intensity.index() as u8);
    }
    wire.send(MsgType::BasisAnnounce, &encode_bases(base, &bases))?;
    wire.send(MsgType::IntensityAnnounce, &encode_intensities(base, &codes))?;

    let payload = wire.recv_expect(MsgType::BasisAnnounce)?;
    let (bb, bob_bases, check) = parsed(wire, decode_bases_with_check_bits(&payload))?;
    if bb != base || bob_bases.len() != indices.len() {
        return Err(wire.abort(AbortReason::Link));
    }
    let expected_checks = prepared
        .iter()
        .enumerate()
        .filter(|&(i, p)| p.0 && bob_bases.get(i))
        .count();
    if check.len() != expected_checks {
        return Err(wire.abort(AbortReason::Link));
    }

    let mut ci = 0;
    for (i, &(x_basis, mu, alice_bit)) in prepared.iter().enumerate() {
        let k = mu as usize;
        match (x_basis, bob_bases.get(i)) {
            (false, false) => {
                tape.z_index.push(indices[i]);
                tape.z_mu.push(mu);
                tape.z_bits.push(alice_bit);
                tape.z_counts[k] += 1;
            }
            (true, true) => {
                tape.x_detected[k] += 1;
                if check.get(ci) {
                    tape.x_errors[k] += 1;
                }
                ci += 1;
            }
            _ => tape.mismatches += 1,
        }
    }
    Ok(())
}

fn fingerprint(key: &KeyMaterial) -> String {
    let mut h = Sha256::new();
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.to_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---- transcript audit --------------------------------------------------------

/// Checks a session transcript against its report: every frame must parse
/// under its declared type, disclosed parity bits must match the accounted
/// leakage, published digests must have the advertised width, and the raw
/// key must not appear on the wire.
pub fn audit_transcript(
    transcript: &[TranscriptEntry],
    report: &SessionReport,
    raw_key: Option<&KeyMaterial>,
) -> Result<(), String> {
    let mut parity_bits = 0u64;
    let needle = raw_key.filter(|k| k.len() >= 128).map(|k| k.to_bytes());
    for (i, e) in transcript.iter().enumerate() {
        let fail = |what: &str| format!("frame {i} ({:?}): {what}", e.msg_type);
        if let Some(n) = &needle {
            if e.payload.windows(n.len()).any(|w| w == &n[..]) {
                return Err(fail("raw key bytes on the wire"));
            }
        }
        match e.msg_type {
            MsgType::DetectIndices => {
                decode_detections(&e.payload).map_err(|er| fail(&er.to_string()))?;
            }
            MsgType::BasisAnnounce => {
                if decode_bases(&e.payload).is_err()
                    && decode_bases_with_check_bits(&e.payload).is_err()
                {
                    return Err(fail("unparseable basis announcement"));
                }
            }
            MsgType::IntensityAnnounce => {
                decode_intensities(&e.payload).map_err(|er| fail(&er.to_string()))?;
            }
            MsgType::SiftConfirm => {
                if e.payload.len() != 32 {
                    return Err(fail("digest is not 32 bytes"));
                }
            }
            MsgType::PeSummary => {
                decode_summary(&e.payload).map_err(|er| fail(&er.to_string()))?;
            }
            MsgType::EcParity => match decode_ec(&e.payload) {
                Ok(EcMessage::BlockParities(p)) => parity_bits += p.len() as u64,
                Ok(EcMessage::ProbeReply(_)) => parity_bits += 1,
                Ok(_) => {}
                Err(er) => return Err(fail(&er.to_string())),
            },
            MsgType::VerifySeed => {
                decode_seed(&e.payload).map_err(|er| fail(&er.to_string()))?;
            }
            MsgType::VerifyDigest => {
                let d = decode_digest(&e.payload).map_err(|er| fail(&er.to_string()))?;
                if d.len() as u32 != report.verify_bits {
                    return Err(fail("published digest width differs from the report"));
                }
            }
            MsgType::PaSeed => {
                decode_amplify(&e.payload).map_err(|er| fail(&er.to_string()))?;
            }
            MsgType::Abort => {
                if e.payload.len() != 1 {
                    return Err(fail("abort payload is not one byte"));
                }
            }
            MsgType::Calibrate => return Err(fail("calibration frame inside a key session")),
        }
    }
    // parity frames are logged by both parties (sent by one, received by the
    // other), so each transcript counts them exactly once
    if parity_bits != report.ec_leakage_bits {
        return Err(format!(
            "transcript discloses {parity_bits} parity bits, report accounts {}",
            report.ec_leakage_bits
        ));
    }
    if report.status == "done" && (report.ec_leakage_bits as f64) > report.ec_charged_bits {
        return Err("amplification charge below the disclosed leakage".to_string());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{Intensity, TrialRecord};
    use crate::sim::DriftModel;

    /// A lossless operating point big enough that the finite-size bounds
    /// close: the X check sample must dwarf its Hoeffding deviations or the
    /// single-photon bracket collapses and the estimator (rightly) refuses.
    fn base_config(seed: u64) -> SessionConfig {
        SessionConfig {
            protocol: ProtocolConfig {
                clock_rate: 625e6,
                n_pulses: 2_000_000,
                intensities: (0.6, 0.25, 0.1),
                intensity_probs: (0.4, 0.3, 0.3),
                alice_basis_probs: (0.7, 0.3),
                bob_basis_probs: (0.5, 0.5),
                eps_sec: 1e-3,
                eps_cor: 1e-6,
                xi: 1.15,
                e_phase_tol: 0.25,
            },
            channel: ChannelModel {
                loss_db: 0.0,
                misalignment_angle: 0.0,
                phase_offset_angle: 0.0,
                extra_attenuation_db: 0.0,
                drift: DriftModel { random_walk_sigma: 0.0, timestep: 0.0, current_angle: 0.0 },
            },
            detector: DetectorModel {
                efficiency: 1.0,
                dark_rate: 0.0,
                dead_time: 0.0,
                jitter_sigma: 0.0,
                max_count_rate: 0.0,
            },
            target_z: 50_000,
            min_x_per_intensity: 4_000,
            block_pulses: 250_000,
            world_seed: seed,
            auth_key: b"session unit test authentication".to_vec(),
            eps_pe_override: None,
        }
    }

    fn report_json(o: &SessionOutcome) -> String {
        serde_json::to_string(&o.report).unwrap()
    }

    #[test]
    fn a_clean_session_yields_identical_keys() {
        let cfg = base_config(1);
        let (a, b) = run_session_loopback(&cfg);
        assert_eq!(a.report.status, "done", "{:?}", a.report.abort_reason);
        assert_eq!(report_json(&a), report_json(&b));
        let ka = a.key.expect("alice key");
        let kb = b.key.expect("bob key");
        assert_eq!(ka, kb);
        assert_eq!(ka.len() as u64, a.report.key_length);
        assert!(a.report.key_length > 0);
        // a noiseless channel leaves nothing to correct
        assert_eq!(a.report.ec_corrections, 0);
        assert_eq!(a.report.bounds.unwrap().e_bit, 0.0);
        assert_eq!(a.report.verify_bits, 20);
        assert_eq!(a.report.n_raw, cfg.target_z);
        assert!(a.report.skr_bps > 0.0);
    }

    #[test]
    fn sessions_replay_byte_for_byte() {
        let cfg = base_config(2);
        let (a1, b1) = run_session_loopback(&cfg);
        let (a2, _) = run_session_loopback(&cfg);
        assert_eq!(report_json(&a1), report_json(&a2));
        assert_eq!(a1.transcript, a2.transcript);
        assert_eq!(a1.key, a2.key);
        assert_eq!(b1.transcript.len(), a1.transcript.len());

        let other = base_config(3);
        let (a3, _) = run_session_loopback(&other);
        assert_ne!(a1.report.key_fingerprint, a3.report.key_fingerprint);
    }

    #[test]
    fn transcripts_pass_the_audit_and_account_all_parities() {
        let cfg = base_config(4);
        let (a, b) = run_session_loopback(&cfg);
        assert_eq!(a.report.status, "done");
        audit_transcript(&a.transcript, &a.report, a.raw_key.as_ref()).unwrap();
        audit_transcript(&b.transcript, &b.report, b.raw_key.as_ref()).unwrap();
        assert!(a.report.ec_leakage_bits as f64 <= a.report.ec_charged_bits);

        // a forged leakage total must be caught
        let mut forged = a.report.clone();
        forged.ec_leakage_bits += 1;
        assert!(audit_transcript(&a.transcript, &forged, None).is_err());

        // so must frames that have no business in a session
        let mut tampered = a.transcript.clone();
        tampered.push(TranscriptEntry {
            outbound: true,
            msg_type: MsgType::Calibrate,
            payload: vec![],
        });
        assert!(audit_transcript(&tampered, &a.report, None).is_err());
    }

    #[test]
    fn a_noisy_channel_aborts_on_the_phase_error_threshold() {
        let mut cfg = base_config(5);
        // error rate sin^2(beta/2) = 12%, over the 11% tolerance
        cfg.channel.misalignment_angle = 2.0 * 0.12f64.sqrt().asin();
        cfg.protocol.e_phase_tol = 0.11;
        let (a, b) = run_session_loopback(&cfg);
        assert_eq!(a.report.status, "aborted");
        assert_eq!(a.report.abort_reason.as_deref(), Some("security"));
        assert_eq!(report_json(&a), report_json(&b));
        assert!(a.key.is_none() && b.key.is_none());
        let bounds = a.report.bounds.unwrap();
        assert!(bounds.e_phase_upper > 0.11, "{bounds:?}");
    }

    #[test]
    fn an_exhausted_pulse_budget_aborts_for_lack_of_data() {
        let mut cfg = base_config(6);
        // enough pulses for the Z target but not for the weakest X minimum,
        // and not a multiple of the block size
        cfg.protocol.n_pulses = 600_000;
        let (a, b) = run_session_loopback(&cfg);
        assert_eq!(a.report.abort_reason.as_deref(), Some("insufficient-data"));
        assert_eq!(a.report.pulses_used, 600_000);
        assert!(a.report.z_sifted.iter().sum::<u64>() >= cfg.target_z);
        assert_eq!(report_json(&a), report_json(&b));
    }

    #[test]
    fn announcements_sort_records_exactly_like_the_classifier() {
        use crate::record::{classify_record, SetLabel};
        let mk = |index, ab, bit, mu, bb, out, rbit: Option<u8>| TrialRecord {
            index,
            alice_basis: ab,
            alice_bit: bit,
            intensity: mu,
            bob_basis: bb,
            outcome: out,
            resolved_bit: rbit,
        };
        use Basis::{X, Z};
        use Outcome::{Double, NoClick, One, Zero};
        let records = [
            mk(0, Z, 1, Intensity::Mu1, Z, One, Some(1)),
            mk(1, X, 0, Intensity::Mu2, X, Zero, Some(0)),
            mk(2, X, 0, Intensity::Mu3, X, One, Some(1)),
            mk(3, Z, 0, Intensity::Mu1, X, Double, Some(0)),
            mk(4, X, 0, Intensity::Mu2, Z, Zero, Some(0)),
            mk(5, Z, 0, Intensity::Mu2, Z, NoClick, None),
            mk(6, Z, 0, Intensity::Mu3, Z, Double, Some(1)),
            mk(7, X, 0, Intensity::Mu1, X, NoClick, None),
        ];
        let mut block = RecordBlock::with_capacity(0, records.len());
        for r in &records {
            block.push(r);
        }

        let (pa, pb) = loopback_pair();
        let key = b"sift exchange unit test key 0001";
        let (ta, tb) = std::thread::scope(|s| {
            let alice = s.spawn(|| {
                let mut wire = Wire::new(FramedLink::new(pa, key));
                let mut tape = Tape::default();
                sift_block_alice(0, &block, &mut wire, &mut tape).unwrap();
                tape
            });
            let bob = s.spawn(|| {
                let mut wire = Wire::new(FramedLink::new(pb, key));
                let mut tape = Tape::default();
                sift_block_bob(0, &block, &mut wire, &mut tape).unwrap();
                tape
            });
            (alice.join().unwrap(), bob.join().unwrap())
        });

        // shared view must agree with the classifier record by record
        let mut z_counts = [0u64; 3];
        let mut x_counts = [0u64; 3];
        let mut mismatches = 0u64;
        for r in &records {
            match classify_record(r) {
                SetLabel::Key(mu) => z_counts[mu.index()] += 1,
                SetLabel::Check(mu) => x_counts[mu.index()] += 1,
                SetLabel::Mismatch { .. } => mismatches += 1,
                SetLabel::Discard => {}
            }
        }
        // the classifier drops the Alice-X/Bob-Z crossing outright, but the
        // exchange still announces it, so the tape counts it as a mismatch
        mismatches += 1;
        for t in [&ta, &tb] {
            assert_eq!(t.z_counts, z_counts);
            assert_eq!(t.x_detected, x_counts);
            assert_eq!(t.mismatches, mismatches);
            assert_eq!(t.z_index, vec![0, 6]);
            assert_eq!(t.z_mu, vec![0, 2]);
            assert_eq!(t.x_errors, [0, 0, 1]);
        }
        assert_eq!(ta.digest(), tb.digest());
        // Z bits stay private and differ where the channel flipped them
        assert_eq!(ta.z_bits, vec![1, 0]);
        assert_eq!(tb.z_bits, vec![1, 1]);
    }

    #[test]
    fn phases_only_move_forward() {
        use Phase::*;
        assert!(can_follow(Collecting, ReconcilingBases));
        assert!(can_follow(ReconcilingBases, Collecting));
        assert!(can_follow(ReconcilingBases, Estimating));
        assert!(can_follow(Estimating, Correcting));
        assert!(can_follow(Correcting, Verifying));
        assert!(can_follow(Verifying, Amplifying));
        assert!(can_follow(Amplifying, Done));
        assert!(!can_follow(Collecting, Estimating));
        assert!(!can_follow(Estimating, Collecting));
        assert!(!can_follow(Correcting, Done));
        assert!(!can_follow(Done, Collecting));
    }

    #[test]
    fn config_validation_reports_all_problems() {
        let mut cfg = base_config(7);
        cfg.target_z = 10;
        cfg.block_pulses = 0;
        cfg.auth_key = vec![1, 2, 3];
        let errs = cfg.validate().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(base_config(8).validate().is_ok());
    }
}
