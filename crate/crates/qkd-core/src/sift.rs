//! Sifting-set accumulation and the yield table fed to the estimators.

use crate::record::{classify_record, Basis, Outcome, SetLabel, TrialRecord};

/// The per-intensity sorted index sets plus the aggregate counters every
/// estimator runs on. Partial instances accumulated over disjoint, ordered
/// pulse ranges merge associatively and commutatively.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SiftedSets {
    /// Key-generation sets: both parties chose Z, something clicked.
    pub z_sets: [Vec<u64>; 3],
    /// Security-check sets: both parties chose X.
    pub x_sets: [Vec<u64>; 3],
    /// Alice Z, Bob X, indexed [intensity][alice_bit][bob_bit].
    pub mismatch_counts: [[[u64; 2]; 2]; 3],
    /// Errors inside z_sets / x_sets. Z errors require both bit strings, so
    /// a protocol party can only fill them after reconciliation; simulation
    /// and analysis contexts fill them directly.
    pub z_error_counts: [u64; 3],
    pub x_error_counts: [u64; 3],
}

impl SiftedSets {
    pub fn accumulate(&mut self, r: &TrialRecord) {
        match classify_record(r) {
            SetLabel::Key(mu) => {
                let k = mu.index();
                self.z_sets[k].push(r.index);
                if r.resolved_bit != Some(r.alice_bit) {
                    self.z_error_counts[k] += 1;
                }
            }
            SetLabel::Check(mu) => {
                let k = mu.index();
                self.x_sets[k].push(r.index);
                if r.resolved_bit != Some(r.alice_bit) {
                    self.x_error_counts[k] += 1;
                }
            }
            SetLabel::Mismatch { alice_bit, bob_bit, intensity } => {
                self.mismatch_counts[intensity.index()][alice_bit as usize]
                    [bob_bit as usize] += 1;
            }
            SetLabel::Discard => {}
        }
    }

    /// Merges two partial accumulations. Index lists stay sorted, so the
    /// result is independent of merge order.
    pub fn merge(&mut self, other: &SiftedSets) {
        for k in 0..3 {
            self.z_sets[k] = merge_sorted(&self.z_sets[k], &other.z_sets[k]);
            self.x_sets[k] = merge_sorted(&self.x_sets[k], &other.x_sets[k]);
            self.z_error_counts[k] += other.z_error_counts[k];
            self.x_error_counts[k] += other.x_error_counts[k];
            for j in 0..2 {
                for b in 0..2 {
                    self.mismatch_counts[k][j][b] += other.mismatch_counts[k][j][b];
                }
            }
        }
    }

    pub fn z_counts(&self) -> [u64; 3] {
        [0, 1, 2].map(|k| self.z_sets[k].len() as u64)
    }

    pub fn x_counts(&self) -> [u64; 3] {
        [0, 1, 2].map(|k| self.x_sets[k].len() as u64)
    }

    pub fn z_total(&self) -> u64 {
        self.z_counts().iter().sum()
    }

    pub fn x_total(&self) -> u64 {
        self.x_counts().iter().sum()
    }

    pub fn mismatch_total(&self) -> u64 {
        let mut t = 0;
        for k in 0..3 {
            for j in 0..2 {
                for b in 0..2 {
                    t += self.mismatch_counts[k][j][b];
                }
            }
        }
        t
    }
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Observed detection fractions Y(s|j) for prepared states j in
/// {0z, 1z, 0x} and Bob outcomes s in {0z, 1z, 0x, 1x}, aggregated over
/// intensities. `denoms[j][b]` counts pulses where state j was prepared and
/// Bob measured basis b, detected or not; yields with a zero denominator are
/// unusable.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct YieldTable {
    pub yields: [[f64; 4]; 3],
    pub denoms: [[f64; 2]; 3],
}

pub const STATE_0Z: usize = 0;
pub const STATE_1Z: usize = 1;
pub const STATE_0X: usize = 2;
pub const OUT_0Z: usize = 0;
pub const OUT_1Z: usize = 1;
pub const OUT_0X: usize = 2;
pub const OUT_1X: usize = 3;

impl YieldTable {
    pub fn outcome_basis(s: usize) -> usize {
        match s {
            OUT_0Z | OUT_1Z => 0,
            _ => 1,
        }
    }

    /// Builds the table from raw records; every field is observable here.
    /// Double detections contribute via their random bit assignment.
    pub fn from_records<'a>(records: impl Iterator<Item = TrialRecord>) -> YieldTable {
        let mut clicks = [[0u64; 4]; 3];
        let mut denoms = [[0u64; 2]; 3];
        for r in records {
            let j = match (r.alice_basis, r.alice_bit) {
                (Basis::Z, 0) => STATE_0Z,
                (Basis::Z, _) => STATE_1Z,
                (Basis::X, _) => STATE_0X,
            };
            let b = if r.bob_basis == Basis::Z { 0 } else { 1 };
            denoms[j][b] += 1;
            if r.outcome == Outcome::NoClick {
                continue;
            }
            let bit = r.resolved_bit.expect("clicked record must carry a bit") as usize;
            clicks[j][2 * b + bit] += 1;
        }
        let mut t = YieldTable::default();
        for j in 0..3 {
            for b in 0..2 {
                t.denoms[j][b] = denoms[j][b] as f64;
            }
            for s in 0..4 {
                let d = denoms[j][Self::outcome_basis(s)];
                t.yields[j][s] = if d > 0 { clicks[j][s] as f64 / d as f64 } else { 0.0 };
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Intensity;

    fn rec(
        index: u64,
        a: Basis,
        bit: u8,
        mu: Intensity,
        b: Basis,
        y: Outcome,
        resolved: Option<u8>,
    ) -> TrialRecord {
        TrialRecord {
            index,
            alice_basis: a,
            alice_bit: bit,
            intensity: mu,
            bob_basis: b,
            outcome: y,
            resolved_bit: resolved,
        }
    }

    fn sample_records() -> Vec<TrialRecord> {
        use Basis::*;
        use Intensity::*;
        vec![
            rec(0, Z, 0, Mu1, Z, Outcome::Zero, Some(0)),
            rec(1, Z, 1, Mu1, Z, Outcome::Zero, Some(0)), // a Z error
            rec(2, Z, 1, Mu2, X, Outcome::One, Some(1)),
            rec(3, X, 0, Mu1, X, Outcome::One, Some(1)), // an X error
            rec(4, X, 0, Mu3, Z, Outcome::Zero, Some(0)),
            rec(5, Z, 0, Mu1, Z, Outcome::NoClick, None),
            rec(6, X, 0, Mu2, X, Outcome::Double, Some(0)),
            rec(7, Z, 0, Mu3, Z, Outcome::One, Some(1)), // a Z error
        ]
    }

    #[test]
    fn accumulate_matches_classification() {
        let mut s = SiftedSets::default();
        for r in sample_records() {
            s.accumulate(&r);
        }
        assert_eq!(s.z_sets[0], vec![0, 1]);
        assert_eq!(s.z_sets[2], vec![7]);
        assert_eq!(s.x_sets[0], vec![3]);
        assert_eq!(s.x_sets[1], vec![6]);
        assert_eq!(s.mismatch_counts[1][1][1], 1);
        assert_eq!(s.z_error_counts, [1, 0, 1]);
        assert_eq!(s.x_error_counts, [1, 0, 0]);
        // partition: every record classified exactly once
        let placed = s.z_total() + s.x_total() + s.mismatch_total();
        assert_eq!(placed, 6); // two discards out of eight
    }

    #[test]
    fn merge_is_commutative_and_matches_single_pass() {
        let records = sample_records();
        let mut whole = SiftedSets::default();
        for r in &records {
            whole.accumulate(r);
        }
        let (mut left, mut right) = (SiftedSets::default(), SiftedSets::default());
        for r in &records[..4] {
            left.accumulate(r);
        }
        for r in &records[4..] {
            right.accumulate(r);
        }
        let mut ab = left.clone();
        ab.merge(&right);
        let mut ba = right;
        ba.merge(&left);
        assert_eq!(ab, whole);
        assert_eq!(ba, whole);
    }

    #[test]
    fn yield_table_counts_doubles_via_resolved_bit() {
        let t = YieldTable::from_records(sample_records().into_iter());
        // prepared 0x, measured X: records 3 (resolved 1) and 6 (double, resolved 0)
        assert_eq!(t.denoms[STATE_0X][1], 2.0);
        assert!((t.yields[STATE_0X][OUT_0X] - 0.5).abs() < 1e-12);
        assert!((t.yields[STATE_0X][OUT_1X] - 0.5).abs() < 1e-12);
        // prepared 1z, measured Z: record 1 only, clicked 0z
        assert_eq!(t.denoms[STATE_1Z][0], 1.0);
        assert!((t.yields[STATE_1Z][OUT_0Z] - 1.0).abs() < 1e-12);
    }
}
