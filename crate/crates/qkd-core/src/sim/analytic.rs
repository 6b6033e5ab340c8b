//! Exact per-pulse outcome probabilities for a frozen channel.
//!
//! Everything below rests on one fact about attenuated laser pulses: sending
//! a coherent pulse of mean photon number mu through total transmission eta
//! and splitting it with probability q between two detectors yields two
//! independent Poisson arrival streams with means eta*mu*q and
//! eta*mu*(1-q). Click probabilities and double-click rates all follow in
//! closed form, including dark counts. Detector dead time enters as a
//! steady-state live-fraction per detector derived from renewal theory; that
//! is exact for the long-run rates the estimators consume, while transient
//! dynamics are left to the pulse-level simulation.

use super::{ChannelModel, DetectorModel};
use crate::config::ProtocolConfig;
use crate::decoy::IntensityCounts;
use crate::record::{Basis, Intensity};
use crate::sift::{YieldTable, OUT_0X, OUT_0Z, OUT_1X, OUT_1Z, STATE_0X, STATE_0Z, STATE_1Z};

/// Probabilities of the four detection outcomes conditioned on one cell
/// (intensity, prepared state, Bob basis). `zero`/`one` are exclusive
/// single-detector clicks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutcomeSplit {
    pub none: f64,
    pub zero: f64,
    pub one: f64,
    pub double: f64,
}

impl OutcomeSplit {
    pub fn click(&self) -> f64 {
        1.0 - self.none
    }

    /// Expected error weight among resolved detections for a prepared bit:
    /// the wrong exclusive click plus half the double clicks.
    pub fn error_weight(&self, alice_bit: u8) -> f64 {
        let wrong = if alice_bit == 0 { self.one } else { self.zero };
        wrong + self.double / 2.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub intensity: Intensity,
    pub alice_basis: Basis,
    pub alice_bit: u8,
    pub bob_basis: Basis,
    /// Prior probability that a pulse lands in this cell.
    pub prob_pulse: f64,
    pub split: OutcomeSplit,
}

/// The full 18-cell outcome law for one (config, channel, detector) triple,
/// with the channel frozen at its current drift angle.
#[derive(Clone, Debug)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    /// Steady-state fraction of gates each detector is live.
    pub live: [f64; 2],
    pub p_dark: f64,
}

pub(super) const STATES: [usize; 3] = [STATE_0Z, STATE_1Z, STATE_0X];

pub(super) fn state_basis_bit(state: usize) -> (Basis, u8) {
    match state {
        STATE_0Z => (Basis::Z, 0),
        STATE_1Z => (Basis::Z, 1),
        _ => (Basis::X, 0),
    }
}

/// Prior probability of a cell; the X state absorbs the whole X basis
/// probability because only one check state is ever prepared.
pub(super) fn cell_prior(cfg: &ProtocolConfig, k: usize, state: usize, bob_basis: Basis) -> f64 {
    let p_state = match state {
        STATE_0Z | STATE_1Z => cfg.alice_basis_probs.0 / 2.0,
        _ => cfg.alice_basis_probs.1,
    };
    let p_bob = match bob_basis {
        Basis::Z => cfg.bob_basis_probs.0,
        Basis::X => cfg.bob_basis_probs.1,
    };
    cfg.intensity_prob(k) * p_state * p_bob
}

/// Per-gate probabilities that detector 0 resp. 1 resp. both stay silent,
/// given the cell, with both detectors live.
pub(super) fn miss_probs(mu: f64, q: f64, s: f64, eta: f64) -> (f64, f64, f64) {
    let lam = eta * mu;
    (s * (-lam * q).exp(), s * (-lam * (1.0 - q)).exp(), s * s * (-lam).exp())
}

/// Fold live fractions into the miss probabilities: a dead detector is
/// silent with certainty, and the two detectors go dead independently
/// because their input streams are independent.
pub(super) fn fold_live(miss: (f64, f64, f64), live: [f64; 2]) -> OutcomeSplit {
    let (m0, m1, mb) = miss;
    let (l0, l1) = (live[0], live[1]);
    let f0 = 1.0 - l0 + l0 * m0;
    let f1 = 1.0 - l1 + l1 * m1;
    let fb = (1.0 - l0) * (1.0 - l1) + (1.0 - l0) * l1 * m1 + l0 * (1.0 - l1) * m0 + l0 * l1 * mb;
    OutcomeSplit {
        none: fb,
        zero: (f1 - fb).max(0.0),
        one: (f0 - fb).max(0.0),
        double: (1.0 - f0 - f1 + fb).max(0.0),
    }
}

/// Steady-state live fraction of each detector. With click probability c per
/// live gate and a dead window of d gates after each registered click, the
/// renewal cycle averages 1/c live gates plus d dead ones.
pub fn live_factors(cfg: &ProtocolConfig, channel: &ChannelModel, detector: &DetectorModel) -> [f64; 2] {
    let dead = detector.dead_gates(cfg.clock_rate) as f64;
    if dead == 0.0 {
        return [1.0, 1.0];
    }
    let s = 1.0 - detector.p_dark(cfg.clock_rate);
    let eta = channel.transmittance() * detector.effective_efficiency(cfg.clock_rate);
    let mut click = [0.0f64; 2];
    for k in 0..3 {
        let mu = cfg.intensity(k);
        for &j in &STATES {
            for b in [Basis::Z, Basis::X] {
                let prior = cell_prior(cfg, k, j, b);
                let q = channel.detector_zero_prob(j, b);
                let (m0, m1, _) = miss_probs(mu, q, s, eta);
                click[0] += prior * (1.0 - m0);
                click[1] += prior * (1.0 - m1);
            }
        }
    }
    [1.0 / (1.0 + click[0] * dead), 1.0 / (1.0 + click[1] * dead)]
}

pub fn analytic_rates(cfg: &ProtocolConfig, channel: &ChannelModel, detector: &DetectorModel) -> RateTable {
    let p_dark = detector.p_dark(cfg.clock_rate);
    let s = 1.0 - p_dark;
    let eta = channel.transmittance() * detector.effective_efficiency(cfg.clock_rate);
    let live = live_factors(cfg, channel, detector);
    let mut rows = Vec::with_capacity(18);
    for k in 0..3 {
        let mu = cfg.intensity(k);
        for &j in &STATES {
            let (alice_basis, alice_bit) = state_basis_bit(j);
            for bob_basis in [Basis::Z, Basis::X] {
                let q = channel.detector_zero_prob(j, bob_basis);
                let split = fold_live(miss_probs(mu, q, s, eta), live);
                rows.push(RateRow {
                    intensity: Intensity::from_index(k),
                    alice_basis,
                    alice_bit,
                    bob_basis,
                    prob_pulse: cell_prior(cfg, k, j, bob_basis),
                    split,
                });
            }
        }
    }
    RateTable { rows, live, p_dark }
}

impl RateTable {
    pub fn row(&self, k: usize, state: usize, bob_basis: Basis) -> &RateRow {
        let j = STATES.iter().position(|&s| s == state).unwrap();
        let b = match bob_basis {
            Basis::Z => 0,
            Basis::X => 1,
        };
        &self.rows[(k * 3 + j) * 2 + b]
    }

    /// Expected sifted detections and errors per intensity in one basis, in
    /// the exact shape the decoy estimators take. Doubles count as
    /// detections and as half an error each.
    pub fn intensity_counts(&self, cfg: &ProtocolConfig, n_pulses: f64, basis: Basis) -> IntensityCounts {
        let mut out = IntensityCounts {
            detected: [0.0; 3],
            errors: [0.0; 3],
            probs: [cfg.intensity_prob(0), cfg.intensity_prob(1), cfg.intensity_prob(2)],
        };
        for row in &self.rows {
            if row.alice_basis != basis || row.bob_basis != basis {
                continue;
            }
            let k = row.intensity.index();
            out.detected[k] += n_pulses * row.prob_pulse * row.split.click();
            out.errors[k] += n_pulses * row.prob_pulse * row.split.error_weight(row.alice_bit);
        }
        out
    }

    /// Sifted error rate in one basis, all intensities pooled.
    pub fn error_rate(&self, cfg: &ProtocolConfig, basis: Basis) -> f64 {
        let c = self.intensity_counts(cfg, 1.0, basis);
        c.total_errors() / c.total_detected()
    }

    /// Per-intensity gain: click probability given the intensity.
    pub fn gain(&self, cfg: &ProtocolConfig, k: usize) -> f64 {
        let p_int = cfg.intensity_prob(k);
        self.rows
            .iter()
            .filter(|r| r.intensity.index() == k)
            .map(|r| r.prob_pulse * r.split.click())
            .sum::<f64>()
            / p_int
    }

    /// Conditional detection law of one intensity arranged for the
    /// loss-tolerant estimator, as expected counts out of `n_pulses`.
    pub fn yield_table(&self, k: usize, n_pulses: f64) -> YieldTable {
        let mut t = YieldTable::default();
        for &j in &STATES {
            let jz = self.row(k, j, Basis::Z);
            let jx = self.row(k, j, Basis::X);
            let js = STATES.iter().position(|&s| s == j).unwrap();
            t.yields[js][OUT_0Z] = jz.split.zero + jz.split.double / 2.0;
            t.yields[js][OUT_1Z] = jz.split.one + jz.split.double / 2.0;
            t.yields[js][OUT_0X] = jx.split.zero + jx.split.double / 2.0;
            t.yields[js][OUT_1X] = jx.split.one + jx.split.double / 2.0;
            t.denoms[js][0] = n_pulses * jz.prob_pulse;
            t.denoms[js][1] = n_pulses * jx.prob_pulse;
        }
        t
    }
}

/// Detection law conditioned on exactly one photon entering the channel,
/// which is what the loss-tolerant phase-error analysis reasons about. Dead
/// time is deliberately ignored: single-photon yields are a property of the
/// channel and detector, not of the traffic running through them.
pub fn single_photon_yields(
    channel: &ChannelModel,
    detector: &DetectorModel,
    clock_rate: f64,
    denom: f64,
) -> YieldTable {
    let s = 1.0 - detector.p_dark(clock_rate);
    let eta = channel.transmittance() * detector.effective_efficiency(clock_rate);
    let mut t = YieldTable::default();
    for (js, &j) in STATES.iter().enumerate() {
        for (b, basis) in [Basis::Z, Basis::X].into_iter().enumerate() {
            let q = channel.detector_zero_prob(j, basis);
            let m0 = s * (1.0 - eta * q);
            let m1 = s * (1.0 - eta * (1.0 - q));
            let mb = s * s * (1.0 - eta);
            let split = OutcomeSplit {
                none: mb,
                zero: (m1 - mb).max(0.0),
                one: (m0 - mb).max(0.0),
                double: (1.0 - m0 - m1 + mb).max(0.0),
            };
            let (o0, o1) = if b == 0 { (OUT_0Z, OUT_1Z) } else { (OUT_0X, OUT_1X) };
            t.yields[js][o0] = split.zero + split.double / 2.0;
            t.yields[js][o1] = split.one + split.double / 2.0;
            t.denoms[js][b] = denom;
        }
    }
    t
}
