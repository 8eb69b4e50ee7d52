use crate::RelayError;

/// One-time pad: `data XOR pad`, byte for byte.
pub fn xor_pad(data: &[u8], pad: &[u8]) -> Result<Vec<u8>, RelayError> {
    if data.len() != pad.len() {
        return Err(RelayError::LengthMismatch {
            pad: pad.len(),
            data: data.len(),
        });
    }
    Ok(data.iter().zip(pad).map(|(d, p)| d ^ p).collect())
}

/// What a trusted node does: strip the upstream pad, apply the downstream
/// one.
pub fn forward_hop(ciphertext: &[u8], upstream_key: &[u8], downstream_key: &[u8]) -> Result<Vec<u8>, RelayError> {
    let plain = xor_pad(ciphertext, upstream_key)?;
    xor_pad(&plain, downstream_key)
}
