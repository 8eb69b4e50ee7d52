//! Scalar statistics derived from BB84 rounds.

use thiserror::Error;

use super::{ProtocolParams, RoundOutcome};
use crate::BitString;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("QBER sample lengths differ ({alice} vs {bob})")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("QBER sample is empty")]
    EmptySample,
    #[error("QBER {0} outside [0, 0.5]")]
    QberOutOfRange(f64),
}

/// Fraction of disagreeing positions between the two disclosed samples.
pub fn estimate_qber(alice_sample: &BitString, bob_sample: &BitString) -> Result<f64, StatsError> {
    let errors = alice_sample
        .hamming_distance(bob_sample)
        .ok_or(StatsError::LengthMismatch {
            alice: alice_sample.len(),
            bob: bob_sample.len(),
        })?;
    if alice_sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    Ok(errors as f64 / alice_sample.len() as f64)
}

/// Binary Shannon entropy in bits, with h2(0) = h2(1) = 0.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Asymptotic BB84 secret fraction `max(0, 1 - 2 h2(qber))`.
///
/// Stands in for error correction plus privacy amplification: after both,
/// this fraction of the sifted key remains.
pub fn secure_fraction(qber: f64) -> Result<f64, StatsError> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(StatsError::QberOutOfRange(qber));
    }
    Ok((1.0 - 2.0 * binary_entropy(qber)).max(0.0))
}

/// Emulated time needed by real equipment for `rounds` protocol rounds.
pub fn simulated_duration(rounds: u64, params: &ProtocolParams) -> f64 {
    rounds as f64 * (params.transmission_time_s() + params.classical_overhead_s)
}

/// Key bit rate: secure bits per channel use.
pub fn kbr(outcome: &RoundOutcome) -> f64 {
    if outcome.channel_uses == 0 {
        return 0.0;
    }
    outcome.secure_bits.len() as f64 / outcome.channel_uses as f64
}
