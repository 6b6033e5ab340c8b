//! Per-pulse records and their classification into sifting sets.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

/// Intensity setting label; index 0 is the signal state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intensity {
    Mu1,
    Mu2,
    Mu3,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Mu1, Intensity::Mu2, Intensity::Mu3];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Intensity {
        Intensity::ALL[k]
    }
}

/// Bob's measurement outcome for one pulse: a bit, nothing, or both
/// detectors at once.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Zero,
    One,
    NoClick,
    Double,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialRecord {
    pub index: u64,
    pub alice_basis: Basis,
    /// Always 0 when alice_basis is X: only one X state is ever prepared.
    pub alice_bit: u8,
    pub intensity: Intensity,
    pub bob_basis: Basis,
    pub outcome: Outcome,
    /// Present iff outcome is Zero, One or Double; doubles carry the random
    /// assignment made at detection time.
    pub resolved_bit: Option<u8>,
}

impl TrialRecord {
    pub fn well_formed(&self) -> bool {
        let resolved_ok = match self.outcome {
            Outcome::NoClick => self.resolved_bit.is_none(),
            Outcome::Zero => self.resolved_bit == Some(0),
            Outcome::One => self.resolved_bit == Some(1),
            Outcome::Double => matches!(self.resolved_bit, Some(0) | Some(1)),
        };
        let three_state_ok = self.alice_basis != Basis::X || self.alice_bit == 0;
        resolved_ok && three_state_ok && self.alice_bit <= 1
    }
}

/// Where a record lands after basis reconciliation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetLabel {
    /// Both chose Z and something clicked: key material.
    Key(Intensity),
    /// Both chose X: security check sample.
    Check(Intensity),
    /// Alice Z, Bob X: kept for the transmission-rate estimator.
    Mismatch {
        alice_bit: u8,
        bob_bit: u8,
        intensity: Intensity,
    },
    Discard,
}

pub fn classify_record(r: &TrialRecord) -> SetLabel {
    debug_assert!(r.well_formed());
    if r.outcome == Outcome::NoClick {
        return SetLabel::Discard;
    }
    match (r.alice_basis, r.bob_basis) {
        (Basis::Z, Basis::Z) => SetLabel::Key(r.intensity),
        (Basis::X, Basis::X) => SetLabel::Check(r.intensity),
        (Basis::Z, Basis::X) => SetLabel::Mismatch {
            alice_bit: r.alice_bit,
            bob_bit: r.resolved_bit.expect("clicked record must carry a bit"),
            intensity: r.intensity,
        },
        // The reverse mismatch carries no usable statistics: Alice's X
        // preparation is a single fixed state, so it is dropped.
        (Basis::X, Basis::Z) => SetLabel::Discard,
    }
}

/// Columnar storage for a block of records: one byte-vector per field keeps
/// tens of millions of pulses affordable and scan-friendly.
#[derive(Clone, Debug, Default)]
pub struct RecordBlock {
    pub start_index: u64,
    alice_basis: Vec<u8>,
    alice_bit: Vec<u8>,
    intensity: Vec<u8>,
    bob_basis: Vec<u8>,
    outcome: Vec<u8>,
    /// 0 or 1 for resolved outcomes, NO_BIT for no-clicks.
    resolved: Vec<u8>,
}

const NO_BIT: u8 = 0xff;

impl RecordBlock {
    pub fn with_capacity(start_index: u64, n: usize) -> Self {
        RecordBlock {
            start_index,
            alice_basis: Vec::with_capacity(n),
            alice_bit: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
            bob_basis: Vec::with_capacity(n),
            outcome: Vec::with_capacity(n),
            resolved: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn push(&mut self, r: &TrialRecord) {
        debug_assert!(r.well_formed());
        debug_assert_eq!(r.index, self.start_index + self.len() as u64);
        self.alice_basis.push(r.alice_basis as u8);
        self.alice_bit.push(r.alice_bit);
        self.intensity.push(r.intensity as u8);
        self.bob_basis.push(r.bob_basis as u8);
        self.outcome.push(r.outcome as u8);
        self.resolved.push(r.resolved_bit.unwrap_or(NO_BIT));
    }

    pub fn get(&self, i: usize) -> TrialRecord {
        TrialRecord {
            index: self.start_index + i as u64,
            alice_basis: if self.alice_basis[i] == 0 { Basis::Z } else { Basis::X },
            alice_bit: self.alice_bit[i],
            intensity: Intensity::from_index(self.intensity[i] as usize),
            bob_basis: if self.bob_basis[i] == 0 { Basis::Z } else { Basis::X },
            outcome: match self.outcome[i] {
                0 => Outcome::Zero,
                1 => Outcome::One,
                2 => Outcome::NoClick,
                _ => Outcome::Double,
            },
            resolved_bit: match self.resolved[i] {
                NO_BIT => None,
                b => Some(b),
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TrialRecord> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(a: Basis, bit: u8, mu: Intensity, b: Basis, y: Outcome) -> TrialRecord {
        let resolved = match y {
            Outcome::Zero => Some(0),
            Outcome::One => Some(1),
            Outcome::Double => Some(1),
            Outcome::NoClick => None,
        };
        TrialRecord {
            index: 0,
            alice_basis: a,
            alice_bit: bit,
            intensity: mu,
            bob_basis: b,
            outcome: y,
            resolved_bit: resolved,
        }
    }

    #[test]
    fn classification_matches_set_definitions() {
        use Basis::*;
        use Intensity::*;
        assert_eq!(
            classify_record(&rec(Z, 1, Mu1, Z, Outcome::One)),
            SetLabel::Key(Mu1)
        );
        assert_eq!(
            classify_record(&rec(Z, 0, Mu2, X, Outcome::One)),
            SetLabel::Mismatch { alice_bit: 0, bob_bit: 1, intensity: Mu2 }
        );
        assert_eq!(
            classify_record(&rec(X, 0, Mu1, X, Outcome::NoClick)),
            SetLabel::Discard
        );
        assert_eq!(
            classify_record(&rec(X, 0, Mu3, X, Outcome::Zero)),
            SetLabel::Check(Mu3)
        );
        assert_eq!(
            classify_record(&rec(X, 0, Mu1, Z, Outcome::Zero)),
            SetLabel::Discard
        );
    }

    #[test]
    fn three_state_rule_enforced() {
        let mut r = rec(Basis::X, 0, Intensity::Mu1, Basis::X, Outcome::Zero);
        assert!(r.well_formed());
        r.alice_bit = 1;
        assert!(!r.well_formed());
    }

    #[test]
    fn block_roundtrip() {
        let mut block = RecordBlock::with_capacity(100, 4);
        let records = [
            rec(Basis::Z, 0, Intensity::Mu1, Basis::Z, Outcome::Zero),
            rec(Basis::Z, 1, Intensity::Mu2, Basis::X, Outcome::Double),
            rec(Basis::X, 0, Intensity::Mu3, Basis::Z, Outcome::NoClick),
            rec(Basis::Z, 1, Intensity::Mu1, Basis::Z, Outcome::One),
        ];
        for (i, mut r) in records.into_iter().enumerate() {
            r.index = 100 + i as u64;
            block.push(&r);
        }
        assert_eq!(block.len(), 4);
        for (i, got) in block.iter().enumerate() {
            assert_eq!(got.index, 100 + i as u64);
            assert!(got.well_formed());
        }
        assert_eq!(block.get(1).outcome, Outcome::Double);
        assert_eq!(block.get(2).resolved_bit, None);
    }
}
