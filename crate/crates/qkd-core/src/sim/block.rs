//! Pulse-by-pulse simulation. This is the reference dynamics: every gate
//! draws its cell, its photon number and its detector hits, dark counts
//! arrive as a skip-sampled Bernoulli stream, and dead time is tracked per
//! detector as an actual blanking window rather than a rate correction.

use super::analytic::{cell_prior, state_basis_bit, STATES};
use super::{drift_advance, ChannelModel, DetectorModel};
use crate::config::ProtocolConfig;
use crate::record::{Basis, Intensity, Outcome, RecordBlock, TrialRecord};
use crate::rng::RandomStream;
use rand_distr::{Distribution, Poisson};

/// Geometric skip to the next success of a Bernoulli(p) stream: the number
/// of failures before it, so 0 means the very next gate fires.
fn geometric_skip(p: f64, rng: &mut RandomStream) -> u64 {
    if p <= 0.0 {
        return u64::MAX;
    }
    let u = rng.uniform().max(f64::MIN_POSITIVE);
    let skip = (u.ln() / (1.0 - p).ln()).floor();
    if skip.is_finite() && skip < 9e18 {
        skip as u64
    } else {
        u64::MAX
    }
}

/// Simulate `n_pulses` gates and return every trial, detected or not,
/// together with the true photon number of each pulse (saturated at 255).
/// The channel drift advances in place, one step per drift timestep, so
/// consecutive calls continue the same walk.
pub fn simulate_block(
    n_pulses: u64,
    cfg: &ProtocolConfig,
    channel: &mut ChannelModel,
    detector: &DetectorModel,
    rng: &mut RandomStream,
) -> (RecordBlock, Vec<u8>) {
    let eta = channel.transmittance() * detector.effective_efficiency(cfg.clock_rate);
    let p_dark = detector.p_dark(cfg.clock_rate);
    let dead = detector.dead_gates(cfg.clock_rate);

    // cells in the same fixed order as the analytic table
    let mut cells = Vec::with_capacity(18);
    let mut cdf = Vec::with_capacity(18);
    let mut acc = 0.0;
    for k in 0..3 {
        for &j in &STATES {
            for b in [Basis::Z, Basis::X] {
                acc += cell_prior(cfg, k, j, b);
                cells.push((k, j, b));
                cdf.push(acc);
            }
        }
    }
    debug_assert!((acc - 1.0).abs() < 1e-9);

    let poissons: [Option<Poisson<f64>>; 3] = [
        Poisson::new(cfg.intensity(0)).ok(),
        Poisson::new(cfg.intensity(1)).ok(),
        Poisson::new(cfg.intensity(2)).ok(),
    ];

    let drift_on = channel.drift.random_walk_sigma > 0.0 && channel.drift.timestep > 0.0;
    let stride = if drift_on {
        ((channel.drift.timestep * cfg.clock_rate).round() as u64).max(1)
    } else {
        u64::MAX
    };
    let stride_dt = stride as f64 / cfg.clock_rate;

    let mut qs = [[0.0f64; 2]; 3];
    let refresh = |qs: &mut [[f64; 2]; 3], channel: &ChannelModel| {
        for (js, &j) in STATES.iter().enumerate() {
            qs[js][0] = channel.detector_zero_prob(j, Basis::Z);
            qs[js][1] = channel.detector_zero_prob(j, Basis::X);
        }
    };
    refresh(&mut qs, channel);

    let mut next_dark = [geometric_skip(p_dark, rng), geometric_skip(p_dark, rng)];
    let mut dead_until = [0u64; 2];
    let mut block = RecordBlock::with_capacity(0, n_pulses as usize);
    let mut tags = Vec::with_capacity(n_pulses as usize);

    for i in 0..n_pulses {
        if drift_on && i > 0 && i % stride == 0 {
            drift_advance(&mut channel.drift, stride_dt, rng);
            refresh(&mut qs, channel);
        }

        let u = rng.uniform();
        let cell = cdf.partition_point(|&c| c <= u).min(17);
        let (k, j, bob_basis) = cells[cell];
        let js = STATES.iter().position(|&s| s == j).unwrap();
        let q = qs[js][bob_basis as usize];

        let n_ph: u64 = match &poissons[k] {
            Some(p) => p.sample(rng) as u64,
            None => 0,
        };
        let mut hit = [false; 2];
        for _ in 0..n_ph {
            // one draw decides loss and routing together
            let v = rng.uniform();
            if v < eta * q {
                hit[0] = true;
            } else if v < eta {
                hit[1] = true;
            }
            if hit[0] && hit[1] {
                break;
            }
        }
        for d in 0..2 {
            if next_dark[d] == i {
                hit[d] = true;
                next_dark[d] = i.saturating_add(1).saturating_add(geometric_skip(p_dark, rng));
            }
        }
        if dead > 0 {
            for d in 0..2 {
                if hit[d] {
                    if i < dead_until[d] {
                        hit[d] = false; // swallowed, and it does not extend the window
                    } else {
                        dead_until[d] = i + 1 + dead;
                    }
                }
            }
        }

        let (outcome, resolved_bit) = match (hit[0], hit[1]) {
            (false, false) => (Outcome::NoClick, None),
            (true, false) => (Outcome::Zero, Some(0)),
            (false, true) => (Outcome::One, Some(1)),
            (true, true) => (Outcome::Double, Some(rng.bernoulli(0.5) as u8)),
        };
        let (alice_basis, alice_bit) = state_basis_bit(j);
        block.push(&TrialRecord {
            index: i,
            alice_basis,
            alice_bit,
            intensity: Intensity::from_index(k),
            bob_basis,
            outcome,
            resolved_bit,
        });
        tags.push(n_ph.min(255) as u8);
    }
    (block, tags)
}
