use qdnet_core::messages::{ModelingRequest, ModelingResult, ResultStatus};
use qdnet_core::quantum::{round_seed, QkdProtocol};
use qdnet_core::topology::{EngineOptions, LinkDecl};
use qdnet_core::BitString;
use serde::{Deserialize, Serialize};

/// Per-link key accounting kept between requests.
#[derive(Debug, Clone, Default)]
pub struct LinkBuffer {
    /// Secure bits generated for earlier requests and not yet handed out.
    pub leftover: BitString,
    /// Bits produced by protocol rounds on this link.
    pub generated_bits: u64,
    /// Bits handed out in results.
    pub delivered_bits: u64,
    /// Requests fulfilled so far; numbers the next request's seeds.
    pub requests: u64,
}

/// What happened in one protocol round, for the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub qber: f64,
    pub secure_bits: usize,
    pub sifted_bits: usize,
    pub channel_uses: u64,
    pub duration_s: f64,
    pub aborted: bool,
    /// The round aborted but its divergent material was released anyway.
    pub released_compromised: bool,
}

#[derive(Debug, Clone)]
pub struct Fulfillment {
    pub result: ModelingResult,
    pub rounds: Vec<RoundReport>,
    /// Bits of the key taken from the link buffer.
    pub from_buffer: usize,
}

/// Runs protocol rounds on `link` until `req.bits_needed` bits exist.
///
/// The protocol only ever produces whole rounds; the requested length is
/// enforced here by truncation, with the surplus kept in `buffer` when
/// buffering is enabled. Aborted rounds are discarded, except on a link with
/// a declared eavesdropper outside strict mode, where the two sides' raw
/// strings are released and the result is marked compromised.
pub fn fulfill(
    req: &ModelingRequest,
    link: &LinkDecl,
    protocol: &dyn QkdProtocol,
    buffer: &mut LinkBuffer,
    options: &EngineOptions,
    base_seed: u64,
) -> Fulfillment {
    let ordinal = buffer.requests;
    buffer.requests += 1;
    let needed = req.bits_needed as usize;
    let release_compromised = link.eve.is_some() && !options.strict_abort;
    let phys = link.physics();
    let link_id = link.id();

    let mut alice = if options.buffer_leftover {
        std::mem::take(&mut buffer.leftover)
    } else {
        BitString::new()
    };
    let from_buffer = alice.len().min(needed);
    // Only diverges from `alice` once a compromised round is released.
    let mut bob: Option<BitString> = None;
    let mut rounds = Vec::new();
    let mut duration_s = 0.0;
    let (mut sample_errors, mut sample_len) = (0usize, 0usize);

    while alice.len() < needed {
        if rounds.len() as u32 >= options.max_rounds {
            if options.buffer_leftover && bob.is_none() {
                buffer.leftover = alice;
            }
            let mut result = ModelingResult::error(
                req,
                format!("no key after {} rounds on link {link_id}", options.max_rounds),
            );
            result.simulated_duration_s = duration_s;
            result.rounds = rounds.len() as u32;
            result.qber = pooled(sample_errors, sample_len);
            return Fulfillment {
                result,
                rounds,
                from_buffer: 0,
            };
        }
        let index = rounds.len() as u32;
        let seed = round_seed(base_seed, &link_id, ordinal, index as u64);
        let outcome = match protocol.run_round(&link.phys, &phys, seed) {
            Ok(outcome) => outcome,
            Err(e) => {
                let mut result = ModelingResult::error(req, format!("protocol {}: {e}", protocol.name()));
                result.simulated_duration_s = duration_s;
                return Fulfillment {
                    result,
                    rounds,
                    from_buffer: 0,
                };
            }
        };
        duration_s += outcome.simulated_duration_s;
        sample_errors += outcome.sample_errors;
        sample_len += outcome.sample_len;
        let mut report = RoundReport {
            round: index,
            qber: outcome.qber,
            secure_bits: outcome.secure_bits.len(),
            sifted_bits: outcome.sifted_len,
            channel_uses: outcome.channel_uses,
            duration_s: outcome.simulated_duration_s,
            aborted: outcome.aborted,
            released_compromised: false,
        };

        if outcome.aborted {
            if release_compromised {
                let released = outcome.into_compromised();
                let (a, b) = released.released_material();
                let bob_bits = bob.get_or_insert_with(|| alice.clone());
                alice.extend_from(a);
                bob_bits.extend_from(b);
                buffer.generated_bits += a.len() as u64;
                report.released_compromised = true;
            }
        } else {
            alice.extend_from(&outcome.secure_bits);
            if let Some(bob_bits) = bob.as_mut() {
                bob_bits.extend_from(&outcome.secure_bits);
            }
            buffer.generated_bits += outcome.secure_bits.len() as u64;
        }
        rounds.push(report);
    }

    let key = alice.prefix(needed);
    let (status, peer_key) = match &bob {
        Some(bob_bits) => (ResultStatus::Compromised, bob_bits.prefix(needed)),
        None => (ResultStatus::Ok, key.clone()),
    };
    if options.buffer_leftover && bob.is_none() {
        alice.take_front(needed);
        buffer.leftover = alice;
    }
    buffer.delivered_bits += needed as u64;

    let result = ModelingResult {
        request_id: req.request_id,
        key_id: req.request_id,
        initiator: req.initiator.clone(),
        peer: req.peer.clone(),
        status,
        key_material: Some(key),
        peer_key_material: Some(peer_key),
        qber: pooled(sample_errors, sample_len),
        simulated_duration_s: duration_s,
        rounds: rounds.len() as u32,
        error: None,
        recipient: None,
    };
    Fulfillment {
        result,
        rounds,
        from_buffer,
    }
}

fn pooled(errors: usize, len: usize) -> f64 {
    if len == 0 {
        0.0
    } else {
        errors as f64 / len as f64
    }
}

#[cfg(test)]
mod tests {
    use qdnet_core::quantum::{Bb84WithEve, EveDecl, ProtocolParams};
    use qdnet_core::topology::ProtocolKind;

    use super::*;

    fn link(eve: Option<EveDecl>) -> LinkDecl {
        LinkDecl {
            endpoint_a: "Quintin".into(),
            endpoint_b: "Quijote".into(),
            length_km: 10.0,
            attenuation_db: 0.0,
            protocol: ProtocolKind::Bb84WithEve,
            eve,
            phys: ProtocolParams::default(),
        }
    }

    fn request(bits: u64) -> ModelingRequest {
        ModelingRequest::new("Quintin", "Quijote", bits)
    }

    #[test]
    fn small_request_takes_one_round_and_buffers_the_rest() {
        let link = link(None);
        let options = EngineOptions::default();
        // Oracle: the yield of the first round, straight from the model.
        let seed = round_seed(7, &link.id(), 0, 0);
        let yield_bits = Bb84WithEve
            .run_round(&link.phys, &link.physics(), seed)
            .unwrap()
            .secure_bits
            .len();
        assert!(yield_bits > 64);

        let mut buffer = LinkBuffer::default();
        let f = fulfill(&request(64), &link, &Bb84WithEve, &mut buffer, &options, 7);
        assert_eq!(f.rounds.len(), 1);
        assert_eq!(f.result.status, ResultStatus::Ok);
        assert_eq!(f.result.key_material.as_ref().unwrap().len(), 64);
        assert_eq!(buffer.leftover.len(), yield_bits - 64);

        // A follow-up request small enough for the buffer runs no rounds.
        let f2 = fulfill(&request(512), &link, &Bb84WithEve, &mut buffer, &options, 7);
        assert!(f2.rounds.is_empty());
        assert_eq!(f2.from_buffer, 512);
        assert_eq!(f2.result.simulated_duration_s, 0.0);
        assert_eq!(buffer.leftover.len(), yield_bits - 64 - 512);
    }

    #[test]
    fn buffered_bits_are_not_reused() {
        let link = link(None);
        let options = EngineOptions::default();
        let mut buffer = LinkBuffer::default();
        let a = fulfill(&request(64), &link, &Bb84WithEve, &mut buffer, &options, 1).result;
        let b = fulfill(&request(64), &link, &Bb84WithEve, &mut buffer, &options, 1).result;
        assert_ne!(a.key_material, b.key_material);
    }

    #[test]
    fn no_buffering_runs_fresh_rounds() {
        let link = link(None);
        let options = EngineOptions {
            buffer_leftover: false,
            ..Default::default()
        };
        let mut buffer = LinkBuffer::default();
        for _ in 0..3 {
            let f = fulfill(&request(64), &link, &Bb84WithEve, &mut buffer, &options, 3);
            assert_eq!(f.rounds.len(), 1);
            assert!(buffer.leftover.is_empty());
        }
    }

    #[test]
    fn large_request_spans_rounds() {
        let link = link(None);
        let mut buffer = LinkBuffer::default();
        let f = fulfill(&request(10_000), &link, &Bb84WithEve, &mut buffer, &EngineOptions::default(), 5);
        assert!(f.rounds.len() >= 3);
        let expected: f64 = f.rounds.iter().map(|r| r.duration_s).sum();
        assert!((f.result.simulated_duration_s - expected).abs() < 1e-12);
        assert_eq!(f.result.key_material.unwrap().len(), 10_000);
    }

    #[test]
    fn eavesdropped_link_delivers_divergent_keys() {
        let link = link(Some(EveDecl::intercepting(1.0)));
        let mut buffer = LinkBuffer::default();
        let f = fulfill(&request(256), &link, &Bb84WithEve, &mut buffer, &EngineOptions::default(), 2);
        assert_eq!(f.result.status, ResultStatus::Compromised);
        assert!(f.result.qber > 0.11);
        let (a, b) = (f.result.key_material.unwrap(), f.result.peer_key_material.unwrap());
        assert_eq!(a.len(), 256);
        assert_eq!(b.len(), 256);
        assert_ne!(a, b);
        assert!(buffer.leftover.is_empty());
    }

    #[test]
    fn strict_mode_gives_up_after_max_rounds() {
        let link = link(Some(EveDecl::intercepting(1.0)));
        let options = EngineOptions {
            strict_abort: true,
            max_rounds: 5,
            ..Default::default()
        };
        let mut buffer = LinkBuffer::default();
        let f = fulfill(&request(256), &link, &Bb84WithEve, &mut buffer, &options, 2);
        assert_eq!(f.result.status, ResultStatus::Error);
        assert_eq!(f.rounds.len(), 5);
        assert!(f.rounds.iter().all(|r| r.aborted && !r.released_compromised));
        assert_eq!(buffer.generated_bits, 0);
    }

    #[test]
    fn same_seed_same_keys() {
        let link = link(None);
        let run = || {
            let mut buffer = LinkBuffer::default();
            (0..3)
                .map(|_| {
                    fulfill(&request(700), &link, &Bb84WithEve, &mut buffer, &EngineOptions::default(), 99)
                        .result
                        .key_material
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
