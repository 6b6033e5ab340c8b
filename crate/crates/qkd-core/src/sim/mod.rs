//! Physical layer: a lossy polarization channel with slow drift feeding a
//! gated pair of threshold detectors.
//!
//! Three samplers share one probability law. [`analytic_rates`] evaluates it
//! exactly, [`simulate_block`] walks it pulse by pulse (the only path that
//! resolves detector dead time dynamically), and [`simulate_counts`] draws
//! whole-block counts from the same distribution in a few thousand RNG calls,
//! which is what makes large-N Monte Carlo affordable.

mod analytic;
mod block;
mod counts;

pub use analytic::{analytic_rates, live_factors, single_photon_yields, OutcomeSplit, RateRow, RateTable};
pub use block::simulate_block;
pub use counts::{simulate_counts, CellOutcomes, CountBlock};

use crate::record::Basis;
use crate::rng::RandomStream;
use crate::sift::{STATE_0X, STATE_0Z, STATE_1Z};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Slow polarization rotation, modeled as a Gaussian random walk on the
/// rotation angle. `random_walk_sigma` is in rad/sqrt(s); `timestep` is the
/// interval at which the walk is advanced during pulse-level simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftModel {
    pub random_walk_sigma: f64,
    pub timestep: f64,
    pub current_angle: f64,
}

impl DriftModel {
    pub fn frozen(angle: f64) -> DriftModel {
        DriftModel { random_walk_sigma: 0.0, timestep: 0.0, current_angle: angle }
    }
}

/// Advance the drift walk by `dt` seconds and wrap the angle back into
/// [-pi, pi). A sigma of zero leaves the angle untouched, so a frozen channel
/// stays bit-for-bit reproducible no matter how often this is called.
pub fn drift_advance(drift: &mut DriftModel, dt: f64, rng: &mut RandomStream) {
    if drift.random_walk_sigma > 0.0 && dt > 0.0 {
        let step: f64 = rng.sample(StandardNormal);
        drift.current_angle += drift.random_walk_sigma * dt.sqrt() * step;
        drift.current_angle = wrap_angle(drift.current_angle);
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI
}

/// Fiber between the parties. The polarization transformation is a rotation
/// about the Bloch y axis by `misalignment_angle` plus the drift angle,
/// preceded by a rotation about z by `phase_offset_angle`. The z rotation
/// leaves computational-basis states alone, so it produces phase errors
/// without showing up in the bit error rate; a bare y rotation affects both
/// equally.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub loss_db: f64,
    pub misalignment_angle: f64,
    #[serde(default)]
    pub phase_offset_angle: f64,
    pub extra_attenuation_db: f64,
    pub drift: DriftModel,
}

impl ChannelModel {
    pub fn transmittance(&self) -> f64 {
        10f64.powf(-(self.loss_db + self.extra_attenuation_db) / 10.0)
    }

    /// Total y-rotation angle currently applied by the channel.
    pub fn tilt(&self) -> f64 {
        self.misalignment_angle + self.drift.current_angle
    }

    /// Probability that a photon of the given prepared state ends up at
    /// Bob's detector 0 when he measures in `bob_basis`, for the channel's
    /// current tilt. Detector 0 registers bit 0 in either basis.
    pub fn detector_zero_prob(&self, state: usize, bob_basis: Basis) -> f64 {
        detector_zero_prob_at(state, bob_basis, self.tilt(), self.phase_offset_angle)
    }
}

/// Same as [`ChannelModel::detector_zero_prob`] with the angles made
/// explicit, for callers that scan over tilt without mutating a channel.
pub fn detector_zero_prob_at(state: usize, bob_basis: Basis, tilt: f64, phase: f64) -> f64 {
    // Bloch vectors of the three prepared states; y components stay zero.
    let (x, z) = match state {
        STATE_0Z => (0.0, 1.0),
        STATE_1Z => (0.0, -1.0),
        STATE_0X => (1.0, 0.0),
        other => panic!("unknown state index {other}"),
    };
    // z rotation first (x, y) -> (x cos - y sin, x sin + y cos), then the
    // y rotation (x, z) -> (x cos + z sin, z cos - x sin).
    let x1 = x * phase.cos();
    let (cb, sb) = (tilt.cos(), tilt.sin());
    let x2 = x1 * cb + z * sb;
    let z2 = z * cb - x1 * sb;
    let q = match bob_basis {
        Basis::Z => (1.0 + z2) / 2.0,
        Basis::X => (1.0 + x2) / 2.0,
    };
    q.clamp(0.0, 1.0)
}

/// Gated single-photon detector pair. Both of Bob's detectors share these
/// parameters. `dark_rate` and `max_count_rate` are in Hz, `dead_time` and
/// `jitter_sigma` in seconds. A `max_count_rate` of zero means unlimited; a
/// `dead_time` of zero falls back to `1 / max_count_rate` so that either
/// field can express the saturation limit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time: f64,
    pub jitter_sigma: f64,
    pub max_count_rate: f64,
}

impl DetectorModel {
    /// Dark count probability per detection gate.
    pub fn p_dark(&self, clock_rate: f64) -> f64 {
        (self.dark_rate / clock_rate).clamp(0.0, 1.0)
    }

    pub fn effective_dead_time(&self) -> f64 {
        if self.dead_time > 0.0 {
            self.dead_time
        } else if self.max_count_rate > 0.0 {
            1.0 / self.max_count_rate
        } else {
            0.0
        }
    }

    /// Dead time rounded to whole clock gates, which is how the pulse-level
    /// simulation applies it.
    pub fn dead_gates(&self, clock_rate: f64) -> u64 {
        (self.effective_dead_time() * clock_rate).round() as u64
    }

    /// Fraction of detections whose timing jitter keeps them inside their
    /// own clock gate; the remainder are assumed lost.
    pub fn gate_pass_fraction(&self, clock_rate: f64) -> f64 {
        if self.jitter_sigma <= 0.0 {
            return 1.0;
        }
        let half_gate = 0.5 / clock_rate;
        libm::erf(half_gate / (self.jitter_sigma * std::f64::consts::SQRT_2))
    }

    pub fn effective_efficiency(&self, clock_rate: f64) -> f64 {
        self.efficiency * self.gate_pass_fraction(clock_rate)
    }
}

/// Observed count rate of a non-paralyzable detector driven at `input_rate`
/// clicks per second: each registered click blanks the following dead time,
/// so the output saturates at `1 / dead_time`.
pub fn saturation_throughput(input_rate: f64, detector: &DetectorModel) -> f64 {
    let tau = detector.effective_dead_time();
    input_rate / (1.0 + input_rate * tau)
}
