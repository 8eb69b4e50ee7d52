use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejected protocol or channel parameter.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid parameter `{field}`: {reason}")]
pub struct ParamError {
    pub field: &'static str,
    pub reason: String,
}

impl ParamError {
    fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

/// Per-link knobs of the BB84 models. Every field can be overridden from the
/// configuration file; missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub pulses_per_round: u64,
    pub pulse_rate_hz: f64,
    pub detector_efficiency: f64,
    /// Probability of a dark count per detection gate.
    pub dark_count_prob: f64,
    /// Probability that a transmitted qubit is replaced by a random BB84 state.
    pub depolarization_prob: f64,
    /// Fraction of the sifted key disclosed (and discarded) to estimate the QBER.
    pub qber_sample_fraction: f64,
    /// Classical post-processing time charged to every round, in seconds.
    pub classical_overhead_s: f64,
    pub qber_abort_threshold: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            pulses_per_round: 10_000,
            pulse_rate_hz: 1.0e6,
            detector_efficiency: 0.9,
            dark_count_prob: 1.0e-5,
            depolarization_prob: 0.0,
            qber_sample_fraction: 0.25,
            classical_overhead_s: 0.01,
            qber_abort_threshold: 0.11,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.pulses_per_round == 0 {
            return Err(ParamError::new("pulses_per_round", "must be positive"));
        }
        if !(self.pulse_rate_hz.is_finite() && self.pulse_rate_hz > 0.0) {
            return Err(ParamError::new("pulse_rate_hz", "must be a positive number"));
        }
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return Err(ParamError::new("detector_efficiency", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dark_count_prob) {
            return Err(ParamError::new("dark_count_prob", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.depolarization_prob) {
            return Err(ParamError::new("depolarization_prob", "must lie in [0, 1)"));
        }
        if !(self.qber_sample_fraction > 0.0 && self.qber_sample_fraction < 1.0) {
            return Err(ParamError::new("qber_sample_fraction", "must lie in (0, 1)"));
        }
        if !(self.classical_overhead_s.is_finite() && self.classical_overhead_s >= 0.0) {
            return Err(ParamError::new("classical_overhead_s", "must be non-negative"));
        }
        if !(self.qber_abort_threshold > 0.0 && self.qber_abort_threshold < 0.5) {
            return Err(ParamError::new("qber_abort_threshold", "must lie in (0, 0.5)"));
        }
        Ok(())
    }

    /// Wall time of the quantum transmission of one round.
    pub fn transmission_time_s(&self) -> f64 {
        self.pulses_per_round as f64 / self.pulse_rate_hz
    }
}

/// An intercept-resend eavesdropper on a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EveDecl {
    /// Fraction of the pulses Eve intercepts.
    pub intercept_fraction: f64,
    /// Distance from the `endpoint_a` side at which Eve taps the fiber.
    #[serde(default)]
    pub position_km: f64,
    /// Probability that an intercepted, sifted pulse ends up in error.
    /// 0.25 is the textbook random-basis attack.
    #[serde(default = "EveDecl::default_error_per_intercept")]
    pub error_per_intercept: f64,
}

impl EveDecl {
    pub const TEXTBOOK_ERROR_PER_INTERCEPT: f64 = 0.25;

    fn default_error_per_intercept() -> f64 {
        Self::TEXTBOOK_ERROR_PER_INTERCEPT
    }

    pub fn intercepting(intercept_fraction: f64) -> Self {
        Self {
            intercept_fraction,
            position_km: 0.0,
            error_per_intercept: Self::TEXTBOOK_ERROR_PER_INTERCEPT,
        }
    }

    pub fn validate(&self, length_km: f64) -> Result<(), ParamError> {
        if !(0.0..=1.0).contains(&self.intercept_fraction) {
            return Err(ParamError::new("intercept_fraction", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.error_per_intercept) {
            return Err(ParamError::new("error_per_intercept", "must lie in [0, 1]"));
        }
        if !(self.position_km >= 0.0 && self.position_km <= length_km) {
            return Err(ParamError::new(
                "position_km",
                format!("must lie in [0, {length_km}] (the link length)"),
            ));
        }
        Ok(())
    }
}

/// Physical description of one fiber span, resolved from a link declaration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkPhysics {
    pub length_km: f64,
    pub total_attenuation_db: f64,
    pub eve: Option<EveDecl>,
}

impl LinkPhysics {
    pub fn lossless() -> Self {
        Self::default()
    }

    pub fn with_attenuation(total_attenuation_db: f64) -> Self {
        Self {
            total_attenuation_db,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.length_km.is_finite() && self.length_km >= 0.0) {
            return Err(ParamError::new("length_km", "must be non-negative"));
        }
        if !(self.total_attenuation_db.is_finite() && self.total_attenuation_db >= 0.0) {
            return Err(ParamError::new("attenuation_db", "must be non-negative"));
        }
        if let Some(eve) = &self.eve {
            eve.validate(self.length_km)?;
        }
        Ok(())
    }

    /// Photon survival probability over the whole span.
    pub fn transmittance(&self) -> f64 {
        db_to_transmittance(self.total_attenuation_db)
    }

    /// Survival probabilities before and after Eve's tap. Without an
    /// eavesdropper (or on a zero-length span) all loss is placed after it.
    pub fn split_transmittance(&self) -> (f64, f64) {
        let before = match &self.eve {
            Some(eve) if self.length_km > 0.0 => eve.position_km / self.length_km,
            _ => 0.0,
        };
        let db_before = self.total_attenuation_db * before;
        (
            db_to_transmittance(db_before),
            db_to_transmittance(self.total_attenuation_db - db_before),
        )
    }
}

pub fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}
