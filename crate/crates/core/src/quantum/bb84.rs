//! Monte Carlo BB84 rounds.
//!
//! Each pulse is followed through preparation, the fiber (optionally tapped
//! by an intercept-resend eavesdropper), detection and sifting. After
//! sifting a random sample is disclosed to estimate the QBER and removed;
//! the rest is reduced by [`secure_fraction`].

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::stats::{secure_fraction, simulated_duration};
use super::{EveDecl, LinkPhysics, ParamError, ProtocolParams, RoundOutcome};
use crate::BitString;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Rectilinear,
    Diagonal,
}

impl Basis {
    fn random<R: Rng>(rng: &mut R) -> Self {
        if rng.random() {
            Basis::Diagonal
        } else {
            Basis::Rectilinear
        }
    }

    fn other(self) -> Self {
        match self {
            Basis::Rectilinear => Basis::Diagonal,
            Basis::Diagonal => Basis::Rectilinear,
        }
    }
}

/// A BB84 state in flight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Qubit {
    pub basis: Basis,
    pub bit: bool,
}

impl Qubit {
    /// Projective measurement: deterministic in the preparation basis,
    /// uniformly random in the conjugate one.
    fn measure<R: Rng>(self, basis: Basis, rng: &mut R) -> bool {
        if basis == self.basis {
            self.bit
        } else {
            rng.random()
        }
    }
}

/// Eve measures an intercepted qubit and resends what she saw, prepared in
/// her measurement basis.
///
/// With the default `error_per_intercept` of 0.25 her basis is uniformly
/// random, independent of Alice's, which is the textbook attack. Other values
/// calibrate the resend rule so that an intercepted pulse that survives
/// sifting is wrong with exactly that probability: up to 0.5 by measuring in
/// the conjugate basis more often, above 0.5 by additionally flipping the
/// resent bit whenever she happened to pick the right basis.
fn intercept_resend<R: Rng>(qubit: Qubit, eve: &EveDecl, rng: &mut R) -> Qubit {
    let e = eve.error_per_intercept;
    let (basis, flip) = if e <= 0.5 {
        let conjugate = rng.random_bool(2.0 * e);
        let basis = if conjugate { qubit.basis.other() } else { qubit.basis };
        (basis, false)
    } else if rng.random_bool(2.0 * e - 1.0) {
        (qubit.basis, true)
    } else {
        (qubit.basis.other(), false)
    };
    let seen = qubit.measure(basis, rng);
    Qubit {
        basis,
        bit: seen ^ flip,
    }
}

#[derive(Debug, Clone, Copy)]
enum Channel {
    Ideal,
    Lossy {
        before_eve: f64,
        after_eve: f64,
        detector_efficiency: f64,
        dark_count_prob: f64,
        depolarization_prob: f64,
    },
}

/// One round of "BB84 with Eve": lossless, noiseless channel, optional
/// intercept-resend attacker. Eve's position has no effect here.
pub fn run_bb84_with_eve(
    params: &ProtocolParams,
    eve: Option<&EveDecl>,
    seed: u64,
) -> Result<RoundOutcome, ParamError> {
    params.validate()?;
    if let Some(eve) = eve {
        eve.validate(f64::INFINITY)?;
    }
    Ok(run_round(params, Channel::Ideal, eve, seed))
}

/// One round of "Extended BB84": fiber loss, detector efficiency, dark counts
/// and depolarization. Loss is split at Eve's position when she is present.
pub fn run_extended_bb84(
    params: &ProtocolParams,
    phys: &LinkPhysics,
    seed: u64,
) -> Result<RoundOutcome, ParamError> {
    params.validate()?;
    phys.validate()?;
    let (before_eve, after_eve) = phys.split_transmittance();
    let channel = Channel::Lossy {
        before_eve,
        after_eve,
        detector_efficiency: params.detector_efficiency,
        dark_count_prob: params.dark_count_prob,
        depolarization_prob: params.depolarization_prob,
    };
    Ok(run_round(params, channel, phys.eve.as_ref(), seed))
}

fn run_round(
    params: &ProtocolParams,
    channel: Channel,
    eve: Option<&EveDecl>,
    seed: u64,
) -> RoundOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut alice_sifted = Vec::new();
    let mut bob_sifted = Vec::new();
    let mut detections = 0u64;
    let mut intercepted = 0u64;

    for _ in 0..params.pulses_per_round {
        let sent = Qubit {
            bit: rng.random(),
            basis: Basis::random(&mut rng),
        };
        let bob_basis = Basis::random(&mut rng);

        let mut in_flight = match channel {
            Channel::Ideal => Some(sent),
            Channel::Lossy { before_eve, .. } => rng.random_bool(before_eve).then_some(sent),
        };
        if let (Some(qubit), Some(eve)) = (in_flight.as_mut(), eve) {
            if rng.random_bool(eve.intercept_fraction) {
                *qubit = intercept_resend(*qubit, eve, &mut rng);
                intercepted += 1;
            }
        }

        let bob_bit = match channel {
            Channel::Ideal => in_flight.map(|q| q.measure(bob_basis, &mut rng)),
            Channel::Lossy {
                after_eve,
                detector_efficiency,
                dark_count_prob,
                depolarization_prob,
                ..
            } => match in_flight.filter(|_| rng.random_bool(after_eve * detector_efficiency)) {
                Some(mut qubit) => {
                    if depolarization_prob > 0.0 && rng.random_bool(depolarization_prob) {
                        qubit = Qubit {
                            bit: rng.random(),
                            basis: Basis::random(&mut rng),
                        };
                    }
                    Some(qubit.measure(bob_basis, &mut rng))
                }
                None if dark_count_prob > 0.0 && rng.random_bool(dark_count_prob) => {
                    Some(rng.random())
                }
                None => None,
            },
        };

        let Some(bob_bit) = bob_bit else { continue };
        detections += 1;
        if bob_basis == sent.basis {
            alice_sifted.push(sent.bit);
            bob_sifted.push(bob_bit);
        }
    }

    let sifted_len = alice_sifted.len();
    let duration = simulated_duration(1, params);
    let mut outcome = RoundOutcome {
        detections,
        sifted_len,
        intercepted,
        ..RoundOutcome::empty(params.pulses_per_round, duration)
    };
    if sifted_len == 0 {
        return outcome;
    }

    let sample_len = ((params.qber_sample_fraction * sifted_len as f64).round() as usize).clamp(1, sifted_len);
    let mut disclosed = vec![false; sifted_len];
    for i in index::sample(&mut rng, sifted_len, sample_len) {
        disclosed[i] = true;
    }
    let mut sample_errors = 0;
    let mut alice_rest = BitString::with_capacity(sifted_len - sample_len);
    let mut bob_rest = BitString::with_capacity(sifted_len - sample_len);
    for (i, &is_sample) in disclosed.iter().enumerate() {
        if is_sample {
            sample_errors += usize::from(alice_sifted[i] != bob_sifted[i]);
        } else {
            alice_rest.push(alice_sifted[i]);
            bob_rest.push(bob_sifted[i]);
        }
    }

    let qber = sample_errors as f64 / sample_len as f64;
    outcome.qber = qber;
    outcome.sample_len = sample_len;
    outcome.sample_errors = sample_errors;
    outcome.aborted = qber > params.qber_abort_threshold;
    if !outcome.aborted {
        // Below the abort threshold qber < 0.5, so the fraction is defined.
        let fraction = secure_fraction(qber).unwrap_or(0.0);
        let keep = (fraction * alice_rest.len() as f64).floor() as usize;
        outcome.secure_bits = alice_rest.prefix(keep);
    }
    outcome.alice_sifted = alice_rest;
    outcome.bob_sifted = bob_rest;
    outcome
}
