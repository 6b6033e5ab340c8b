//! Interactive parity reconciliation.
//!
//! Alice is the reference: she answers parity queries about her key and Bob
//! flips his own bits until every parity agrees. Disclosed information is
//! counted one way, as the parity bits Alice reveals (block parities plus
//! probe replies); Bob's probe coordinates and mismatch reports are functions
//! of those parities and his own noisy string. Block sizes start near
//! 0.73/e_bit and double each pass; a bisection that pins down a flip
//! re-checks the flipped position against every earlier pass, which is what
//! lets later passes clean up pairs an earlier pass could not see.

use super::bits::KeyMaterial;
use super::messages::{decode_ec, encode_ec, EcMessage};
use super::{permutation, AbortReason, StepResult, Wire};
use crate::rng::RandomStream;
use crate::transport::MsgType;
use rand::RngCore;
use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};

pub const MIN_PASSES: u32 = 4;
pub const MAX_PASSES: u32 = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReconcileSummary {
    /// Parity bits Alice disclosed; the privacy-amplification charge must
    /// cover at least this many bits.
    pub leakage_bits: u64,
    pub passes: u32,
    pub corrections: u64,
}

/// First-pass block size from the error estimate, clamped so there are
/// always at least two blocks.
pub fn initial_block_size(e_estimate: f64, n: usize) -> usize {
    let e = e_estimate.max(1e-4);
    let k = (0.73 / e).ceil() as usize;
    k.clamp(2, (n / 2).max(2))
}

fn next_block_size(k: usize, n: usize) -> usize {
    (k * 2).min((n / 2).max(2))
}

fn range_parity(key: &KeyMaterial, perm: &[u32], lo: usize, len: usize) -> bool {
    let mut p = false;
    for &raw in &perm[lo..lo + len] {
        p ^= key.get(raw as usize);
    }
    p
}

fn block_bounds(b: usize, k: usize, n: usize) -> (usize, usize) {
    let lo = b * k;
    (lo, k.min(n - lo))
}

struct PassView {
    k: usize,
    perm: Vec<u32>,
    /// inverse permutation: raw index -> position in this pass's ordering
    pos_of: Vec<u32>,
    alice_parities: KeyMaterial,
}

/// Drives the reference side. The pass seeds come from the caller's stream
/// so a session replays bit-for-bit.
pub(crate) fn reconcile_alice<S: Read + Write>(
    wire: &mut Wire<S>,
    key: &KeyMaterial,
    e_estimate: f64,
    seeds: &mut RandomStream,
) -> StepResult<ReconcileSummary> {
    let n = key.len();
    assert!(n >= 2, "reconciliation needs at least two bits");
    let mut out = ReconcileSummary::default();
    let mut k = initial_block_size(e_estimate, n);
    let mut perms: Vec<Vec<u32>> = Vec::new();

    loop {
        let perm_seed = seeds.next_u64();
        wire.send(
            MsgType::EcParity,
            &encode_ec(&EcMessage::PassHeader {
                pass: out.passes,
                block_size: k as u32,
                perm_seed,
            }),
        )?;
        let perm = permutation(n, perm_seed);
        let blocks = n.div_ceil(k);
        let mut parities = KeyMaterial::zeros(blocks);
        for b in 0..blocks {
            let (lo, len) = block_bounds(b, k, n);
            parities.set(b, range_parity(key, &perm, lo, len));
        }
        wire.send(MsgType::EcParity, &encode_ec(&EcMessage::BlockParities(parities)))?;
        out.leakage_bits += blocks as u64;
        if out.leakage_bits > n as u64 {
            return Err(wire.abort(AbortReason::Efficiency));
        }
        perms.push(perm);

        let pass_corrections = loop {
            let payload = wire.recv_expect(MsgType::EcParity)?;
            match decode_ec(&payload) {
                Ok(EcMessage::Probe { pass, lo, len }) => {
                    let (pass, lo, len) = (pass as usize, lo as usize, len as usize);
                    if pass >= perms.len() || len == 0 || lo + len > n {
                        return Err(wire.abort(AbortReason::Link));
                    }
                    let bit = range_parity(key, &perms[pass], lo, len);
                    wire.send(MsgType::EcParity, &encode_ec(&EcMessage::ProbeReply(bit)))?;
                    out.leakage_bits += 1;
                    if out.leakage_bits > n as u64 {
                        return Err(wire.abort(AbortReason::Efficiency));
                    }
                }
                Ok(EcMessage::PassComplete { corrections }) => break corrections,
                _ => return Err(wire.abort(AbortReason::Link)),
            }
        };
        out.corrections += pass_corrections;
        out.passes += 1;

        if (out.passes >= MIN_PASSES && pass_corrections == 0) || out.passes >= MAX_PASSES {
            wire.send(MsgType::EcParity, &encode_ec(&EcMessage::Finished))?;
            return Ok(out);
        }
        k = next_block_size(k, n);
    }
}

/// Drives the correcting side; `key` ends equal to Alice's unless the
/// residual error survives every pass (verification exists for that case).
pub(crate) fn reconcile_bob<S: Read + Write>(
    wire: &mut Wire<S>,
    key: &mut KeyMaterial,
) -> StepResult<ReconcileSummary> {
    let n = key.len();
    assert!(n >= 2, "reconciliation needs at least two bits");
    let mut out = ReconcileSummary::default();
    let mut views: Vec<PassView> = Vec::new();

    loop {
        let payload = wire.recv_expect(MsgType::EcParity)?;
        let (block_size, perm_seed) = match decode_ec(&payload) {
            Ok(EcMessage::Finished) => return Ok(out),
            Ok(EcMessage::PassHeader { pass, block_size, perm_seed })
                if pass as usize == views.len()
                    && block_size >= 1
                    && block_size as usize <= n =>
            {
                (block_size as usize, perm_seed)
            }
            _ => return Err(wire.abort(AbortReason::Link)),
        };

        let blocks = n.div_ceil(block_size);
        let alice_parities = match decode_ec(&wire.recv_expect(MsgType::EcParity)?) {
            Ok(EcMessage::BlockParities(p)) if p.len() == blocks => p,
            _ => return Err(wire.abort(AbortReason::Link)),
        };
        out.leakage_bits += blocks as u64;
        if out.leakage_bits > n as u64 {
            return Err(wire.abort(AbortReason::Efficiency));
        }
        let perm = permutation(n, perm_seed);
        let mut pos_of = vec![0u32; n];
        for (pos, &raw) in perm.iter().enumerate() {
            pos_of[raw as usize] = pos as u32;
        }
        views.push(PassView { k: block_size, perm, pos_of, alice_parities });
        let this_pass = views.len() - 1;

        let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
        let mut queued: HashSet<(usize, usize)> = HashSet::new();
        {
            let v = &views[this_pass];
            for b in 0..blocks {
                let (lo, len) = block_bounds(b, v.k, n);
                if range_parity(key, &v.perm, lo, len) != v.alice_parities.get(b) {
                    queue.push_back((this_pass, b));
                    queued.insert((this_pass, b));
                }
            }
        }

        let mut pass_corrections = 0u64;
        while let Some((q, b)) = queue.pop_front() {
            queued.remove(&(q, b));
            let v = &views[q];
            let (mut lo, mut len) = block_bounds(b, v.k, n);
            // a flip from another search may have fixed this block already
            let mut target = v.alice_parities.get(b);
            if range_parity(key, &v.perm, lo, len) == target {
                continue;
            }
            // bisection: every reply is Alice's parity of the left half, so
            // the right half's parity comes for free as target XOR reply
            while len > 1 {
                let half = len / 2;
                wire.send(
                    MsgType::EcParity,
                    &encode_ec(&EcMessage::Probe {
                        pass: q as u32,
                        lo: lo as u32,
                        len: half as u32,
                    }),
                )?;
                let alice_left = match decode_ec(&wire.recv_expect(MsgType::EcParity)?) {
                    Ok(EcMessage::ProbeReply(bit)) => bit,
                    _ => return Err(wire.abort(AbortReason::Link)),
                };
                out.leakage_bits += 1;
                if out.leakage_bits > n as u64 {
                    return Err(wire.abort(AbortReason::Efficiency));
                }
                if range_parity(key, &v.perm, lo, half) != alice_left {
                    len = half;
                    target = alice_left;
                } else {
                    lo += half;
                    len -= half;
                    target ^= alice_left;
                }
            }
            let raw = v.perm[lo] as usize;
            key.flip(raw);
            pass_corrections += 1;
            out.corrections += 1;
            // the flip changes one block's parity in every pass; queue the
            // ones that now disagree with Alice
            for (qi, view) in views.iter().enumerate() {
                let b2 = view.pos_of[raw] as usize / view.k;
                let (lo2, len2) = block_bounds(b2, view.k, n);
                let bad = range_parity(key, &view.perm, lo2, len2) != view.alice_parities.get(b2);
                if bad && queued.insert((qi, b2)) {
                    queue.push_back((qi, b2));
                }
            }
        }

        wire.send(
            MsgType::EcParity,
            &encode_ec(&EcMessage::PassComplete { corrections: pass_corrections }),
        )?;
        out.passes += 1;
    }
}
