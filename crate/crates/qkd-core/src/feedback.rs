//! Polarization drift compensation.
//!
//! Interleaved calibration blocks measure the error rate on publicly known
//! states; a one-angle controller dithers its compensation setting to hold
//! that rate at its floor. Key pulses always run at the committed center
//! angle. Calibration alternates between center + step and center - step,
//! and each completed pair commits a move toward the lower-error side:
//! reversals halve the step down to a floor, sustained runs in one direction
//! grow it back toward its cap so the loop can chase fast drift. The error
//! surface is even in the residual angle, so a signed gradient only exists
//! through this two-sided probing.

use crate::rng::RandomStream;
use crate::sim::wrap_angle;
use rand::Rng;
use rand_distr::{Binomial, StandardNormal};
use std::collections::VecDeque;

/// Ring capacity for the (step, error) history kept on the controller.
pub const HISTORY_CAPACITY: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ProbePhase {
    First,
    Second,
}

#[derive(Clone, Debug)]
pub struct ControllerState {
    /// Committed compensation, radians: the angle key pulses see.
    pub compensation_angle: f64,
    /// Probe amplitude and commit size, radians. Adapts within
    /// [dither_step_min, dither_step_max].
    pub dither_step: f64,
    /// Floor for the step; sets the granularity near the optimum.
    pub dither_step_min: f64,
    /// Cap for the step; bounds how fast the controller can slew.
    pub dither_step_max: f64,
    /// Pulses between the starts of consecutive calibration blocks.
    pub calibration_period: u64,
    /// Calibration pulses at the head of each period.
    pub calibration_block: u64,
    /// Error rate observed at the previous step.
    pub last_error: f64,
    pub steps: u64,
    /// Recent (step, observed error) pairs, oldest first.
    pub history: VecDeque<(f64, f64)>,
    phase: ProbePhase,
    /// Which side the current pair probes first: +1.0 or -1.0.
    first_side: f64,
    first_side_error: f64,
    /// Direction of the last commit; 0.0 before the first one.
    last_direction: f64,
    /// Consecutive commits in the same direction.
    run_length: u32,
}

impl ControllerState {
    pub fn new(
        dither_step: f64,
        dither_step_min: f64,
        calibration_period: u64,
        calibration_block: u64,
    ) -> ControllerState {
        assert!(dither_step > 0.0, "dither step must be positive");
        assert!(
            dither_step_min > 0.0 && dither_step_min <= dither_step,
            "step floor must sit in (0, dither_step]"
        );
        assert!(
            calibration_block >= 100,
            "calibration blocks under 100 pulses estimate nothing"
        );
        assert!(
            calibration_period > calibration_block,
            "period must leave room for key pulses"
        );
        ControllerState {
            compensation_angle: 0.0,
            dither_step,
            dither_step_min,
            dither_step_max: dither_step,
            calibration_period,
            calibration_block,
            last_error: f64::INFINITY,
            steps: 0,
            history: VecDeque::with_capacity(HISTORY_CAPACITY),
            phase: ProbePhase::First,
            first_side: 1.0,
            first_side_error: 0.0,
            last_direction: 0.0,
            run_length: 0,
        }
    }

    /// The angle the next calibration block should be measured at.
    pub fn probe_angle(&self) -> f64 {
        let side = match self.phase {
            ProbePhase::First => self.first_side,
            ProbePhase::Second => -self.first_side,
        };
        wrap_angle(self.compensation_angle + side * self.dither_step)
    }

    /// Fraction of pulses spent on calibration rather than keys.
    pub fn overhead(&self) -> f64 {
        self.calibration_block as f64 / self.calibration_period as f64
    }
}

/// One controller update after a calibration block measured
/// `observed_error` at [`ControllerState::probe_angle`]. The first call of a
/// pair just stores its reading; the second compares the two sides and
/// commits. An exact tie commits nothing, since an even error surface gives
/// no direction at the optimum. The rng only shuffles which side each pair
/// probes first, so a drift trend within the pair cannot masquerade as a
/// gradient.
pub fn controller_step(
    mut state: ControllerState,
    observed_error: f64,
    rng: &mut RandomStream,
) -> ControllerState {
    assert!(
        (0.0..=1.0).contains(&observed_error),
        "error rate {observed_error} outside [0,1]"
    );
    state.steps += 1;
    if state.history.len() == HISTORY_CAPACITY {
        state.history.pop_front();
    }
    state.history.push_back((state.steps as f64, observed_error));
    state.last_error = observed_error;

    match state.phase {
        ProbePhase::First => {
            state.first_side_error = observed_error;
            state.phase = ProbePhase::Second;
        }
        ProbePhase::Second => {
            let (e_plus, e_minus) = if state.first_side > 0.0 {
                (state.first_side_error, observed_error)
            } else {
                (observed_error, state.first_side_error)
            };
            let direction = if e_plus < e_minus {
                1.0
            } else if e_minus < e_plus {
                -1.0
            } else {
                0.0
            };
            if direction != 0.0 {
                if state.last_direction == -direction {
                    state.dither_step = (state.dither_step / 2.0).max(state.dither_step_min);
                    state.run_length = 1;
                } else {
                    state.run_length += 1;
                    if state.run_length >= 4 {
                        state.dither_step = (state.dither_step * 2.0).min(state.dither_step_max);
                    }
                }
                state.compensation_angle =
                    wrap_angle(state.compensation_angle + direction * state.dither_step);
                state.last_direction = direction;
            }
            state.phase = ProbePhase::First;
            state.first_side = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
        }
    }
    state
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PulseKind {
    Calibration,
    Key,
}

/// Deterministic interleave: each period opens with `calibration_block`
/// calibration pulses, so pulse 0 is always calibration. Calibration pulses
/// never enter any sifting set; the throughput cost is exactly
/// block / period.
pub fn schedule_calibration(pulse_index: u64, state: &ControllerState) -> PulseKind {
    if pulse_index % state.calibration_period < state.calibration_block {
        PulseKind::Calibration
    } else {
        PulseKind::Key
    }
}

// ---- closed-loop drift simulation -----------------------------------------

/// Setup for a drift-tracking run: a random-walk misalignment angle, a
/// baseline error rate from mechanisms the controller cannot touch, and the
/// controller's own knobs.
#[derive(Clone, Copy, Debug)]
pub struct DriftLoopConfig {
    /// Random-walk step of the channel angle per calibration period, radians.
    pub sigma_per_period: f64,
    /// Error rate with the channel perfectly compensated.
    pub baseline_error: f64,
    /// Calibration periods to simulate.
    pub periods: u64,
    pub calibration_period: u64,
    /// In this loop the block doubles as the measured sample count per
    /// period, i.e. every calibration pulse yields an outcome.
    pub calibration_block: u64,
    pub dither_step: f64,
    pub dither_step_min: f64,
}

/// Per-period traces of a closed- or open-loop run.
pub struct LoopTrace {
    /// True key-pulse error rate each period, at the committed angle.
    pub true_error: Vec<f64>,
    /// Error rate the calibration block reported (probe offset and binomial
    /// noise included).
    pub observed_error: Vec<f64>,
    /// Channel angle plus committed compensation, radians.
    pub residual: Vec<f64>,
}

/// True error rate at a residual misalignment: the baseline plus the
/// rotation term, which both bases see identically for a y-axis tilt.
pub fn error_at(residual_angle: f64, baseline: f64) -> f64 {
    (baseline + (residual_angle / 2.0).sin().powi(2)).min(0.5)
}

/// Runs the drift loop. The walk is drawn from a stream independent of the
/// controller's, so a compensated and an uncompensated run with the same
/// seed face the identical channel history.
pub fn run_drift_loop(cfg: &DriftLoopConfig, seed: u64, feedback: bool) -> LoopTrace {
    let mut walk_rng = RandomStream::new(seed, "drift-walk");
    let mut meter_rng = RandomStream::new(seed, "drift-meter");
    let mut dither_rng = RandomStream::new(seed, "drift-dither");
    let mut state = ControllerState::new(
        cfg.dither_step,
        cfg.dither_step_min,
        cfg.calibration_period,
        cfg.calibration_block,
    );
    let mut channel_angle = 0.0f64;
    let mut trace = LoopTrace {
        true_error: Vec::with_capacity(cfg.periods as usize),
        observed_error: Vec::with_capacity(cfg.periods as usize),
        residual: Vec::with_capacity(cfg.periods as usize),
    };
    for _ in 0..cfg.periods {
        let gauss: f64 = walk_rng.sample(StandardNormal);
        channel_angle = wrap_angle(channel_angle + cfg.sigma_per_period * gauss);
        let residual = wrap_angle(channel_angle + state.compensation_angle);
        let e_key = error_at(residual, cfg.baseline_error);
        let meter_angle = if feedback { state.probe_angle() } else { state.compensation_angle };
        let e_cal = error_at(wrap_angle(channel_angle + meter_angle), cfg.baseline_error);
        let hits = meter_rng.sample(Binomial::new(cfg.calibration_block, e_cal).unwrap());
        let e_obs = hits as f64 / cfg.calibration_block as f64;
        trace.true_error.push(e_key);
        trace.observed_error.push(e_obs);
        trace.residual.push(residual);
        if feedback {
            state = controller_step(state, e_obs, &mut dither_rng);
        }
    }
    trace
}

/// Centered moving average with clamped edges; `window` should be odd.
pub fn smoothed(series: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Peak-to-peak excursion of a series relative to its starting value.
pub fn relative_fluctuation(series: &[f64]) -> f64 {
    assert!(!series.is_empty());
    let first = series[0];
    assert!(first > 0.0, "fluctuation is undefined from a zero start");
    let max = series.iter().cloned().fold(f64::MIN, f64::max);
    let min = series.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / first
}
