//! Stochastic BB84 channel models.

mod bb84;
mod outcome;
mod params;
mod protocol;
pub mod stats;

pub use bb84::{run_bb84_with_eve, run_extended_bb84, Basis, Qubit};
pub use outcome::RoundOutcome;
pub use params::{db_to_transmittance, EveDecl, LinkPhysics, ParamError, ProtocolParams};
pub use protocol::{
    Bb84WithEve, ExtendedBb84, ProtocolRegistry, QkdProtocol, BB84_WITH_EVE, EXTENDED_BB84,
};
pub use stats::{binary_entropy, estimate_qber, kbr, secure_fraction, simulated_duration};

/// Seed for one protocol round, derived from the deployment seed, the link,
/// the request's position in that link's queue and the round index, so that
/// concurrent links never share a random stream and reruns are reproducible.
pub fn round_seed(base: u64, link: &str, request_ordinal: u64, round: u64) -> u64 {
    // FNV-1a over the link label, then splitmix64 to mix in the counters.
    let mut label = 0xcbf2_9ce4_8422_2325u64;
    for byte in link.bytes() {
        label ^= u64::from(byte);
        label = label.wrapping_mul(0x0000_0100_0000_01b3);
    }
    [label, request_ordinal, round]
        .into_iter()
        .fold(splitmix64(base), |acc, x| splitmix64(acc ^ x))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
