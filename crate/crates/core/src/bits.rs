use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An ordered string of bits.
///
/// Byte conversions are MSB-first. `Debug` deliberately prints only the
/// length so key material never ends up in logs by accident.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self(Vec::with_capacity(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        self.0.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.0.extend_from_slice(&other.0);
    }

    /// Removes and returns the first `n` bits (or all of them if shorter).
    pub fn take_front(&mut self, n: usize) -> BitString {
        let n = n.min(self.0.len());
        let rest = self.0.split_off(n);
        BitString(std::mem::replace(&mut self.0, rest))
    }

    /// Copy of the first `n` bits (or all of them if shorter).
    pub fn prefix(&self, n: usize) -> BitString {
        BitString(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn truncate(&mut self, n: usize) {
        self.0.truncate(n);
    }

    /// Number of positions at which the two strings differ, `None` if the
    /// lengths differ.
    pub fn hamming_distance(&self, other: &BitString) -> Option<usize> {
        if self.len() != other.len() {
            return None;
        }
        Some(self.iter().zip(other.iter()).filter(|(a, b)| a != b).count())
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut bits = Vec::with_capacity(bytes.len() * 8);
        for byte in bytes {
            for shift in (0..8).rev() {
                bits.push(byte >> shift & 1 == 1);
            }
        }
        Self(bits)
    }

    /// Packs the bits MSB-first; a trailing partial byte is zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (u8::from(b) << (7 - i)))
            })
            .collect()
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(self.to_bytes())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BitString").field("len", &self.len()).finish()
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl From<Vec<bool>> for BitString {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

#[derive(Serialize, Deserialize)]
struct EncodedBits {
    len: usize,
    data: String,
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        EncodedBits {
            len: self.len(),
            data: self.to_base64(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let encoded = EncodedBits::deserialize(deserializer)?;
        let bytes = BASE64.decode(encoded.data.as_bytes()).map_err(D::Error::custom)?;
        if bytes.len() != encoded.len.div_ceil(8) {
            return Err(D::Error::custom(format!(
                "bit string of {} bits carries {} bytes",
                encoded.len,
                bytes.len()
            )));
        }
        let mut bits = BitString::from_bytes(&bytes);
        bits.truncate(encoded.len);
        Ok(bits)
    }
}
