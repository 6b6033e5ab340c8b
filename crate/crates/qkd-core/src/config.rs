//! Protocol constants and their validation.

use serde::{Deserialize, Serialize};

/// Everything both parties must agree on before a session starts.
///
/// Probabilities come in (Z, X) resp. (mu1, mu2, mu3) order. The config file
/// format is plain JSON with exactly these field names; unknown keys are
/// rejected so that typos fail loudly instead of silently using defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Pulses per second.
    pub clock_rate: f64,
    /// Total pulse budget per session.
    pub n_pulses: u64,
    /// Mean photon numbers (mu1, mu2, mu3); mu1 > mu2 + mu3 and mu2 > mu3 >= 0.
    pub intensities: (f64, f64, f64),
    pub intensity_probs: (f64, f64, f64),
    pub alice_basis_probs: (f64, f64),
    pub bob_basis_probs: (f64, f64),
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Error-correction inefficiency factor, >= 1.
    pub xi: f64,
    /// Abort threshold on the estimated phase error rate.
    pub e_phase_tol: f64,
}

const PROB_SUM_TOL: f64 = 1e-12;

/// Checks every invariant and reports all violations, not just the first.
pub fn validate_config(cfg: &ProtocolConfig) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    let (mu1, mu2, mu3) = cfg.intensities;

    if !(mu1 > mu2 + mu3) {
        errors.push("mu1 > mu2 + mu3 violated".to_string());
    }
    if !(mu2 > mu3) {
        errors.push("mu2 > mu3 violated".to_string());
    }
    if !(mu3 >= 0.0) {
        errors.push("mu3 >= 0 violated".to_string());
    }

    check_probs(
        "intensity_probs",
        &[cfg.intensity_probs.0, cfg.intensity_probs.1, cfg.intensity_probs.2],
        &mut errors,
    );
    check_probs(
        "alice_basis_probs",
        &[cfg.alice_basis_probs.0, cfg.alice_basis_probs.1],
        &mut errors,
    );
    check_probs(
        "bob_basis_probs",
        &[cfg.bob_basis_probs.0, cfg.bob_basis_probs.1],
        &mut errors,
    );

    if !(cfg.eps_sec > 0.0 && cfg.eps_sec < 1.0) {
        errors.push("eps_sec must lie in (0,1)".to_string());
    }
    if !(cfg.eps_cor > 0.0 && cfg.eps_cor < 1.0) {
        errors.push("eps_cor must lie in (0,1)".to_string());
    }
    if !(cfg.xi >= 1.0) {
        errors.push("xi must be >= 1".to_string());
    }
    if !(cfg.e_phase_tol > 0.0 && cfg.e_phase_tol <= 1.0) {
        errors.push("e_phase_tol must lie in (0,1]".to_string());
    }
    if !(cfg.clock_rate > 0.0) {
        errors.push("clock_rate must be positive".to_string());
    }
    if cfg.n_pulses == 0 {
        errors.push("n_pulses must be positive".to_string());
    }

    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn check_probs(name: &str, ps: &[f64], errors: &mut Vec<String>) {
    for p in ps {
        if !(*p >= 0.0 && *p <= 1.0) {
            errors.push(format!("{name} entries must lie in [0,1]"));
            return;
        }
    }
    let sum: f64 = ps.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        errors.push(format!("{name} must sum to 1 (got {sum})"));
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), Vec<String>> {
        validate_config(self)
    }

    /// Collection time implied by the pulse budget.
    pub fn duration_seconds(&self) -> f64 {
        self.n_pulses as f64 / self.clock_rate
    }

    pub fn intensity(&self, k: usize) -> f64 {
        match k {
            0 => self.intensities.0,
            1 => self.intensities.1,
            2 => self.intensities.2,
            _ => panic!("intensity index {k} out of range"),
        }
    }

    pub fn intensity_prob(&self, k: usize) -> f64 {
        match k {
            0 => self.intensity_probs.0,
            1 => self.intensity_probs.1,
            2 => self.intensity_probs.2,
            _ => panic!("intensity index {k} out of range"),
        }
    }
}
