//! The two-party protocol engine.
//!
//! Both endpoints run the same phase sequence and talk only through framed
//! messages, so a session behaves identically over an in-memory pipe and a
//! socket. Every decision that could end a session early is taken from data
//! both sides share, which keeps aborts symmetric: each endpoint sends one
//! ABORT frame and reads the peer's, and both report the same reason.

mod bits;
mod cascade;
mod messages;
mod session;
mod toeplitz;

pub use bits::KeyMaterial;
pub use cascade::{initial_block_size, ReconcileSummary};
pub use session::{
    audit_transcript, run_party, run_session_loopback, Role, SessionConfig, SessionOutcome,
    SessionReport,
};
pub use toeplitz::{hash_strip, toeplitz_hash, verify_digest_bits};

use crate::rng::RandomStream;
use crate::transport::{Frame, FramedLink, MsgType};
use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbortReason {
    Link,
    Security,
    Correctness,
    Efficiency,
    InsufficientData,
    NoKey,
}

impl AbortReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Link => "link",
            AbortReason::Security => "security",
            AbortReason::Correctness => "correctness",
            AbortReason::Efficiency => "efficiency",
            AbortReason::InsufficientData => "insufficient-data",
            AbortReason::NoKey => "no-key",
        }
    }

    fn code(self) -> u8 {
        match self {
            AbortReason::Link => 0,
            AbortReason::Security => 1,
            AbortReason::Correctness => 2,
            AbortReason::Efficiency => 3,
            AbortReason::InsufficientData => 4,
            AbortReason::NoKey => 5,
        }
    }

    fn from_code(c: u8) -> Option<AbortReason> {
        Some(match c {
            0 => AbortReason::Link,
            1 => AbortReason::Security,
            2 => AbortReason::Correctness,
            3 => AbortReason::Efficiency,
            4 => AbortReason::InsufficientData,
            5 => AbortReason::NoKey,
            _ => return None,
        })
    }
}

pub(crate) type StepResult<T> = Result<T, AbortReason>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub outbound: bool,
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

/// A framed link plus a local transcript of every frame in both directions.
pub(crate) struct Wire<S> {
    link: FramedLink<S>,
    pub log: Vec<TranscriptEntry>,
}

impl<S: Read + Write> Wire<S> {
    pub fn new(link: FramedLink<S>) -> Self {
        Wire { link, log: Vec::new() }
    }

    pub fn send(&mut self, msg_type: MsgType, payload: &[u8]) -> StepResult<()> {
        self.link.send(msg_type, payload).map_err(|_| AbortReason::Link)?;
        self.log.push(TranscriptEntry { outbound: true, msg_type, payload: payload.to_vec() });
        Ok(())
    }

    pub fn recv(&mut self) -> StepResult<Frame> {
        let f = self.link.recv().map_err(|_| AbortReason::Link)?;
        self.log.push(TranscriptEntry {
            outbound: false,
            msg_type: f.msg_type,
            payload: f.payload.clone(),
        });
        Ok(f)
    }

    /// Receives the next frame, which must be of the wanted type. A peer
    /// ABORT is echoed once (so the peer's own closing read completes) and
    /// adopted as this side's reason; any other type poisons the link.
    pub fn recv_expect(&mut self, want: MsgType) -> StepResult<Vec<u8>> {
        let f = self.recv()?;
        if f.msg_type == MsgType::Abort {
            let reason = f
                .payload
                .first()
                .and_then(|c| AbortReason::from_code(*c))
                .unwrap_or(AbortReason::Link);
            let _ = self.send(MsgType::Abort, &[reason.code()]);
            return Err(reason);
        }
        if f.msg_type != want {
            return Err(self.abort(AbortReason::Link));
        }
        Ok(f.payload)
    }

    /// Ends the session: send our ABORT and read one frame back. When both
    /// sides decided from shared data that read is the peer's own ABORT;
    /// when the decision was one-sided it is the peer's echo. Either way the
    /// exchange stays balanced and neither endpoint blocks.
    pub fn abort(&mut self, reason: AbortReason) -> AbortReason {
        let _ = self.send(MsgType::Abort, &[reason.code()]);
        let _ = self.recv();
        reason
    }

    pub fn bytes_sent(&self) -> u64 {
        self.link.bytes_sent()
    }

    pub fn bytes_received(&self) -> u64 {
        self.link.bytes_received()
    }
}

/// Seeded Fisher-Yates shuffle of 0..n.
pub(crate) fn permutation(n: usize, seed: u64) -> Vec<u32> {
    assert!(n <= u32::MAX as usize);
    let mut rng = RandomStream::new(seed, "shuffle");
    let mut p: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        p.swap(i, j);
    }
    p
}

/// k distinct positions out of 0..n, ascending.
pub(crate) fn sample_indices(n: usize, k: usize, seed: u64) -> Vec<u32> {
    assert!(k <= n, "sample of {k} from {n}");
    assert!(n <= u32::MAX as usize);
    let mut rng = RandomStream::new(seed, "key-sample");
    let mut p: Vec<u32> = (0..n as u32).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        p.swap(i, j);
    }
    p.truncate(k);
    p.sort_unstable();
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn permutations_are_bijective_and_seed_stable() {
        let p = permutation(1000, 99);
        let q = permutation(1000, 99);
        assert_eq!(p, q);
        let distinct: HashSet<u32> = p.iter().copied().collect();
        assert_eq!(distinct.len(), 1000);
        assert_ne!(p, permutation(1000, 100));
    }

    #[test]
    fn samples_are_sorted_distinct_and_unbiased_enough() {
        let s = sample_indices(500, 100, 7);
        assert_eq!(s.len(), 100);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&i| i < 500));

        // every position should appear in roughly k/n of many draws
        let mut hits = vec![0u32; 50];
        for seed in 0..2000 {
            for &i in &sample_indices(50, 10, seed) {
                hits[i as usize] += 1;
            }
        }
        let expect = 2000.0 * 10.0 / 50.0;
        for (i, h) in hits.iter().enumerate() {
            let dev = (f64::from(*h) - expect).abs();
            assert!(dev < 6.0 * (expect * 0.8f64).sqrt(), "position {i}: {h} vs {expect}");
        }
    }

    #[test]
    fn full_sample_is_the_identity_set() {
        let s = sample_indices(64, 64, 3);
        assert_eq!(s, (0..64).collect::<Vec<u32>>());
    }

    #[test]
    fn abort_codes_round_trip() {
        for r in [
            AbortReason::Link,
            AbortReason::Security,
            AbortReason::Correctness,
            AbortReason::Efficiency,
            AbortReason::InsufficientData,
            AbortReason::NoKey,
        ] {
            assert_eq!(AbortReason::from_code(r.code()), Some(r));
        }
        assert_eq!(AbortReason::from_code(6), None);
    }
}
