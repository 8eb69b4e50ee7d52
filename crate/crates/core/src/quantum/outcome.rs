use crate::BitString;

/// Result of one BB84 execution on a link.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Key material left after the secure-fraction reduction. Empty when the
    /// round aborted or was released as a compromised round.
    pub secure_bits: BitString,
    /// Alice's sifted bits with the disclosed QBER sample removed.
    pub alice_sifted: BitString,
    /// Bob's counterpart of `alice_sifted`.
    pub bob_sifted: BitString,
    pub qber: f64,
    /// Pulses emitted by Alice.
    pub channel_uses: u64,
    pub simulated_duration_s: f64,
    pub aborted: bool,
    /// Set when the engine releases the divergent raw strings of an aborted
    /// round instead of discarding them.
    pub compromised_divergent: bool,
    /// Pulses for which Bob registered a click (photon or dark count).
    pub detections: u64,
    /// Clicks whose bases matched, before the QBER sample was removed.
    pub sifted_len: usize,
    pub sample_len: usize,
    pub sample_errors: usize,
    pub intercepted: u64,
}

impl RoundOutcome {
    /// A round that produced nothing.
    pub fn empty(channel_uses: u64, simulated_duration_s: f64) -> Self {
        Self {
            secure_bits: BitString::new(),
            alice_sifted: BitString::new(),
            bob_sifted: BitString::new(),
            qber: 0.0,
            channel_uses,
            simulated_duration_s,
            aborted: false,
            compromised_divergent: false,
            detections: 0,
            sifted_len: 0,
            sample_len: 0,
            sample_errors: 0,
            intercepted: 0,
        }
    }

    /// Turns an aborted round into a released-but-compromised one: the raw
    /// (disagreeing) sifted strings become the key material of each side.
    pub fn into_compromised(mut self) -> Self {
        if self.aborted {
            self.aborted = false;
            self.compromised_divergent = true;
            self.secure_bits = BitString::new();
        }
        self
    }

    /// Material to hand to Alice's and Bob's side respectively.
    pub fn released_material(&self) -> (&BitString, &BitString) {
        if self.compromised_divergent {
            (&self.alice_sifted, &self.bob_sifted)
        } else {
            (&self.secure_bits, &self.secure_bits)
        }
    }
}
