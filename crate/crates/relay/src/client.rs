use std::collections::HashMap;
use std::time::Duration;

use base64::Engine as _;
use qdnet_core::etsi::{DecKeysRequest, EncKeysRequest, ErrorBody, KeyContainer, Status};
use qdnet_core::topology::{Inventory, NetworkConfig};
use serde::de::DeserializeOwned;

use crate::RelayError;

/// Where each node's key delivery API lives.
#[derive(Debug, Clone, Default)]
pub struct NodeDirectory {
    urls: HashMap<String, String>,
    saes: HashMap<String, String>,
}

impl NodeDirectory {
    /// Node APIs at `http://<host address>:<api_port>`, addresses taken from
    /// the inventory when given and loopback otherwise.
    pub fn from_config(config: &NetworkConfig, inventory: Option<&Inventory>) -> Self {
        let mut directory = Self::default();
        for node in &config.nodes {
            let address = inventory
                .and_then(|inv| inv.host(&node.host))
                .map_or("127.0.0.1", |h| h.address());
            directory
                .urls
                .insert(node.name.clone(), format!("http://{address}:{}", node.api_port));
            directory.saes.insert(node.name.clone(), node.sae_id.clone());
        }
        directory
    }

    /// Overrides the API base URL of `node`.
    pub fn set_url(&mut self, node: &str, url: impl Into<String>) {
        self.urls.insert(node.to_owned(), url.into());
    }

    pub fn sae(&self, node: &str) -> Result<&str, RelayError> {
        self.saes
            .get(node)
            .map(String::as_str)
            .ok_or_else(|| RelayError::UnknownNode(node.to_owned()))
    }

    pub fn client(&self, node: &str) -> Result<EtsiClient, RelayError> {
        let base = self
            .urls
            .get(node)
            .ok_or_else(|| RelayError::UnknownNode(node.to_owned()))?;
        Ok(EtsiClient::new(node, base.clone()))
    }
}

/// Minimal ETSI GS QKD 014 client for one node.
#[derive(Debug, Clone)]
pub struct EtsiClient {
    node: String,
    base: String,
    http: reqwest::Client,
}

impl EtsiClient {
    pub fn new(node: impl Into<String>, base: impl Into<String>) -> Self {
        Self {
            node: node.into(),
            base: base.into(),
            http: reqwest::Client::builder()
                .timeout(Duration::from_secs(180))
                .build()
                .expect("http client builds"),
        }
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub async fn status(&self, slave_sae: &str) -> Result<Status, RelayError> {
        let request = self.http.get(format!("{}/api/v1/keys/{slave_sae}/status", self.base));
        self.send(request).await
    }

    /// Asks this node for a new key shared with `slave_sae`.
    pub async fn enc_key(&self, slave_sae: &str, size_bits: u32) -> Result<(String, Vec<u8>), RelayError> {
        let request = self
            .http
            .post(format!("{}/api/v1/keys/{slave_sae}/enc_keys", self.base))
            .json(&EncKeysRequest {
                number: Some(1),
                size: Some(size_bits),
            });
        let container: KeyContainer = self.send(request).await?;
        self.single(container)
    }

    /// Retrieves a stored key shared with the node of `master_sae`.
    pub async fn dec_key(&self, master_sae: &str, key_id: &str) -> Result<Vec<u8>, RelayError> {
        let request = self
            .http
            .post(format!("{}/api/v1/keys/{master_sae}/dec_keys", self.base))
            .json(&DecKeysRequest::single(key_id));
        let container: KeyContainer = self.send(request).await?;
        self.single(container).map(|(_, key)| key)
    }

    fn single(&self, container: KeyContainer) -> Result<(String, Vec<u8>), RelayError> {
        let entry = container
            .keys
            .into_iter()
            .next()
            .ok_or_else(|| RelayError::Protocol(format!("{} returned no key", self.node)))?;
        let key = base64::engine::general_purpose::STANDARD
            .decode(&entry.key)
            .map_err(|e| RelayError::Protocol(format!("{} returned invalid base64: {e}", self.node)))?;
        Ok((entry.key_ID, key))
    }

    async fn send<T: DeserializeOwned>(&self, request: reqwest::RequestBuilder) -> Result<T, RelayError> {
        let response = request
            .send()
            .await
            .map_err(|e| RelayError::Unreachable(format!("{} ({e})", self.node)))?;
        let status = response.status();
        let body = response
            .bytes()
            .await
            .map_err(|e| RelayError::Unreachable(format!("{} ({e})", self.node)))?;
        if !status.is_success() {
            let message = serde_json::from_slice::<ErrorBody>(&body)
                .map(|e| e.message)
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
            return Err(RelayError::Api {
                node: self.node.clone(),
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&body).map_err(|e| RelayError::Protocol(format!("{}: {e}", self.node)))
    }
}
