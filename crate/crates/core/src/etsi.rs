//! Request and response bodies of the ETSI GS QKD 014 key delivery API.
//!
//! Field names follow the standard's JSON schema, hence the mixed case.

use serde::{Deserialize, Serialize};

pub const DEFAULT_KEY_SIZE: u32 = 256;
pub const MAX_KEY_PER_REQUEST: u32 = 1;
pub const MIN_KEY_SIZE: u32 = 8;
pub const MAX_KEY_SIZE: u32 = 65_536;

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub source_KME_ID: String,
    pub target_KME_ID: String,
    pub master_SAE_ID: String,
    pub slave_SAE_ID: String,
    pub key_size: u32,
    pub stored_key_count: u64,
    pub max_key_count: u64,
    pub max_key_per_request: u32,
    pub max_key_size: u32,
    pub min_key_size: u32,
    pub max_SAE_ID_count: u32,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key_ID: String,
    /// Base64 of the key bytes.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyContainer {
    pub keys: Vec<KeyEntry>,
}

/// Body (or query) of an `enc_keys` call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncKeysRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<u32>,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIdEntry {
    pub key_ID: String,
}

/// Body of a POST `dec_keys` call.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecKeysRequest {
    pub key_IDs: Vec<KeyIdEntry>,
}

impl DecKeysRequest {
    pub fn single(key_id: impl Into<String>) -> Self {
        Self {
            key_IDs: vec![KeyIdEntry { key_ID: key_id.into() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_names_match_standard() {
        let json = serde_json::to_value(DecKeysRequest::single("abc")).unwrap();
        assert_eq!(json, serde_json::json!({"key_IDs": [{"key_ID": "abc"}]}));
        let container = KeyContainer {
            keys: vec![KeyEntry {
                key_ID: "id".into(),
                key: "AAE=".into(),
            }],
        };
        let json = serde_json::to_value(&container).unwrap();
        assert_eq!(json["keys"][0]["key_ID"], "id");
    }

    #[test]
    fn empty_enc_request_parses() {
        let req: EncKeysRequest = serde_json::from_str("{}").unwrap();
        assert_eq!(req, EncKeysRequest::default());
    }
}
