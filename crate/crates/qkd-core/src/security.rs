//! Entropy, concentration bounds, the failure-probability budget, and the
//! finite-key secret length.
//!
//! Counts arrive as f64 because the analytic pipeline feeds expectations;
//! whole-number counts up to 2^53 are exact in that representation, which
//! covers any realistic pulse budget. The final length is an integer.

use serde::{Deserialize, Serialize};

/// h(p) = -p log2 p - (1-p) log2 (1-p), with h(0) = h(1) = 0 by continuity.
pub fn binary_entropy(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "entropy argument {p} outside [0,1]");
    if p == 0.0 || p == 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// One-sided Hoeffding deviation sqrt(n/2 * ln(1/eps)) for converting an
/// observed count into a bound on its expectation.
pub fn hoeffding_delta(n: f64, eps: f64) -> f64 {
    assert!(n >= 0.0, "negative sample count {n}");
    assert!(eps > 0.0 && eps <= 1.0, "eps {eps} outside (0,1]");
    (n / 2.0 * (1.0 / eps).ln()).sqrt()
}

/// Upper bound, failing with probability at most `eps`, on the error rate of
/// `n_target` unobserved positions given `k_err` errors seen in a random
/// `n_sample`-position sample of the joint population (sampling without
/// replacement, Serfling-type tail).
///
/// `k_err` is real-valued so that the decoy-estimation chain can pass in an
/// upper *bound* on the single-photon error count rather than a raw tally.
pub fn sampling_upper_bound(k_err: f64, n_sample: f64, n_target: f64, eps: f64) -> f64 {
    assert!(n_sample >= 1.0, "empty sample");
    assert!(n_target >= 1.0, "empty target population");
    assert!(k_err >= 0.0 && k_err <= n_sample, "k_err {k_err} outside [0, n_sample]");
    assert!(eps > 0.0 && eps <= 1.0, "eps {eps} outside (0,1]");
    let gamma = ((n_sample + n_target) * (n_target + 1.0) * (1.0 / eps).ln()
        / (2.0 * n_sample * n_target * n_target))
        .sqrt();
    (k_err / n_sample + gamma).min(1.0)
}

/// The per-estimate failure probability: eps_sec^2 divided evenly over the
/// concentration bounds used on the way to a key. The chain in this crate
/// uses 13 of the 17 budgeted estimates (five count corrections per basis,
/// two error-count corrections, one sampling transfer); the spare slots keep
/// the budget valid if an estimator variant uses more.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonBudget {
    pub eps_sec: f64,
    pub eps_cor: f64,
    pub eps_pe: f64,
    pub n_estimates: u32,
}

impl EpsilonBudget {
    pub fn new(eps_sec: f64, eps_cor: f64) -> Self {
        const N_ESTIMATES: u32 = 17;
        EpsilonBudget {
            eps_sec,
            eps_cor,
            eps_pe: eps_sec * eps_sec / N_ESTIMATES as f64,
            n_estimates: N_ESTIMATES,
        }
    }
}

/// Inputs to the key-length formula.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityBounds {
    /// Lower bound on detections caused by vacuum pulses in the key set.
    pub m0_lower: f64,
    /// Lower bound on detections caused by single-photon pulses.
    pub m1_lower: f64,
    pub e_phase_upper: f64,
    pub e_bit: f64,
    pub n_z_sifted: u64,
}

impl SecurityBounds {
    pub fn well_formed(&self) -> bool {
        self.m0_lower >= 0.0
            && self.m1_lower >= 0.0
            && self.m0_lower + self.m1_lower <= self.n_z_sifted as f64
            && (0.0..=1.0).contains(&self.e_phase_upper)
            && (0.0..=1.0).contains(&self.e_bit)
    }
}

fn length_penalty(budget: &EpsilonBudget) -> f64 {
    (4.0 / (budget.eps_sec * budget.eps_sec)).log2() + (2.0 / budget.eps_cor).log2()
}

/// Secret length l = max(0, floor(m0 + m1 (1 - h(e_ph) - xi h(e_bit))
/// - log2(4/eps_sec^2) - log2(2/eps_cor))). The m1 bracket may go negative
/// and is deliberately not clamped before the sum.
pub fn secret_key_length(b: &SecurityBounds, budget: &EpsilonBudget, xi: f64) -> u64 {
    assert!(xi >= 1.0, "xi {xi} below 1");
    let bracket = 1.0 - binary_entropy(b.e_phase_upper) - xi * binary_entropy(b.e_bit);
    let raw = b.m0_lower + b.m1_lower * bracket - length_penalty(budget);
    if raw <= 0.0 {
        0
    } else {
        raw.floor() as u64
    }
}

/// Variant used by the protocol engine: the error-correction term is an
/// explicit bit count, so the charge can be the larger of the model term and
/// what reconciliation actually disclosed.
pub fn secret_key_length_charged(
    b: &SecurityBounds,
    budget: &EpsilonBudget,
    ec_charge_bits: f64,
) -> u64 {
    let raw = b.m0_lower + b.m1_lower * (1.0 - binary_entropy(b.e_phase_upper))
        - ec_charge_bits
        - length_penalty(budget);
    if raw <= 0.0 {
        0
    } else {
        raw.floor() as u64
    }
}

pub fn skr_from_length(l: u64, duration: f64) -> f64 {
    assert!(duration > 0.0, "non-positive duration {duration}");
    l as f64 / duration
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_anchors() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        // high-precision reference: 0.18528302711722522132
        assert!((binary_entropy(0.0282) - 0.18528).abs() < 1e-5);
    }

    #[test]
    fn entropy_symmetry() {
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            assert!(
                (binary_entropy(p) - binary_entropy(1.0 - p)).abs() < 1e-12,
                "asymmetry at {p}"
            );
        }
    }

    #[test]
    fn hoeffding_anchors() {
        assert_eq!(hoeffding_delta(0.0, 1e-10), 0.0);
        assert_eq!(hoeffding_delta(1e6, 1.0), 0.0);
        // high-precision reference: 3393.0702122075559
        assert!((hoeffding_delta(1e6, 1e-10) - 3393.07).abs() < 0.01);
    }

    #[test]
    fn hoeffding_quadruple_scaling_exact() {
        for (n, eps) in [(100.0, 1e-3), (1e6, 1e-10), (7.0, 0.2)] {
            assert_eq!(hoeffding_delta(4.0 * n, eps), 2.0 * hoeffding_delta(n, eps));
        }
    }

    #[test]
    fn sampling_bound_edges() {
        assert_eq!(sampling_upper_bound(0.0, 1e6, 1e6, 1.0), 0.0);
        assert_eq!(sampling_upper_bound(500.0, 500.0, 1e4, 0.01), 1.0);
    }

    #[test]
    fn sampling_bound_dominates_point_estimate() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let n_sample = (next() * 1e6).floor() + 1.0;
            let n_target = (next() * 1e6).floor() + 1.0;
            let k_err = (next() * n_sample).floor();
            let eps = (next() * 0.999) + 1e-6;
            let e_u = sampling_upper_bound(k_err, n_sample, n_target, eps);
            assert!(e_u >= k_err / n_sample - 1e-15);
            assert!(e_u <= 1.0);
        }
    }

    #[test]
    fn budget_is_eps_sec_squared_over_17() {
        let b = EpsilonBudget::new(1e-10, 1e-10);
        assert_eq!(b.n_estimates, 17);
        assert_eq!(b.eps_pe, 1e-10f64 * 1e-10f64 / 17.0);
        assert!((b.eps_pe - 5.88e-22).abs() < 1e-24);
    }

    fn bounds(m0: f64, m1: f64, eph: f64, ebit: f64) -> SecurityBounds {
        SecurityBounds {
            m0_lower: m0,
            m1_lower: m1,
            e_phase_upper: eph,
            e_bit: ebit,
            n_z_sifted: (m0 + m1).ceil() as u64 + 1_000_000,
        }
    }

    #[test]
    fn zero_input_clamps_to_zero() {
        let budget = EpsilonBudget::new(1e-10, 1e-10);
        assert_eq!(secret_key_length(&bounds(0.0, 0.0, 0.1, 0.1), &budget, 1.15), 0);
    }

    #[test]
    fn maximal_phase_error_kills_the_bracket() {
        let budget = EpsilonBudget::new(1e-10, 1e-10);
        // bracket is exactly zero, so any m1 below the eps penalty clamps
        assert_eq!(secret_key_length(&bounds(0.0, 100.0, 0.5, 0.0), &budget, 1.15), 0);
    }

    #[test]
    fn reference_instance_matches_arbitrary_precision_oracle() {
        // independently computed at 60-digit precision: raw = 231483.71823,
        // floor = 231483
        let budget = EpsilonBudget::new(1e-10, 1e-10);
        let b = bounds(1e4, 1e6, 0.1329, 0.0282);
        assert_eq!(secret_key_length(&b, &budget, 1.15), 231_483);
    }

    #[test]
    fn monotone_in_every_argument() {
        let budget = EpsilonBudget::new(1e-10, 1e-10);
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let m0 = next() * 1e5;
            let m1 = next() * 1e6;
            let eph = next() * 0.45;
            let ebit = next() * 0.45;
            let base = secret_key_length(&bounds(m0, m1, eph, ebit), &budget, 1.15);
            let worse_eph =
                secret_key_length(&bounds(m0, m1, (eph + 0.05).min(0.5), ebit), &budget, 1.15);
            let worse_ebit =
                secret_key_length(&bounds(m0, m1, eph, (ebit + 0.05).min(0.5)), &budget, 1.15);
            let more_m0 = secret_key_length(&bounds(m0 + 100.0, m1, eph, ebit), &budget, 1.15);
            assert!(worse_eph <= base);
            assert!(worse_ebit <= base);
            assert!(more_m0 >= base);
            if 1.0 - binary_entropy(eph) - 1.15 * binary_entropy(0.01) > 0.0 {
                // the m1 bracket is positive here, so more singles help
                let more_m1 =
                    secret_key_length(&bounds(m0, m1 + 100.0, eph, 0.01), &budget, 1.15);
                let base_small_ebit =
                    secret_key_length(&bounds(m0, m1, eph, 0.01), &budget, 1.15);
                assert!(more_m1 >= base_small_ebit);
            }
        }
    }

    #[test]
    fn skr_arithmetic() {
        assert_eq!(skr_from_length(0, 450.0), 0.0);
        assert!((skr_from_length(4_500_000, 450.0) - 1e4).abs() < 1e-9);
    }

    #[test]
    fn charged_variant_matches_formula_when_charges_agree() {
        let budget = EpsilonBudget::new(1e-10, 1e-10);
        let b = bounds(1e4, 1e6, 0.1329, 0.0282);
        let formula_charge = 1.15 * binary_entropy(0.0282) * 1e6;
        assert_eq!(
            secret_key_length_charged(&b, &budget, formula_charge),
            secret_key_length(&b, &budget, 1.15)
        );
        // a larger explicit charge can only shrink the key
        assert!(
            secret_key_length_charged(&b, &budget, formula_charge + 5000.0)
                < secret_key_length(&b, &budget, 1.15)
        );
    }
}
