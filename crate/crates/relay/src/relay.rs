use std::collections::HashSet;
use std::sync::Mutex;

use base64::Engine as _;
use qdnet_core::topology::NetworkConfig;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::info;
use uuid::Uuid;

use crate::agent::send_hop;
use crate::pad::xor_pad;
use crate::{AgentDirectory, FrameTap, HopPayload, NodeDirectory, RelayError, RelayPath};

/// Hop keys drawn for one relay, not yet used.
#[derive(Debug, Clone)]
pub struct PreparedRelay {
    relay_id: Uuid,
    path: RelayPath,
    size_bits: u32,
    key_ids: Vec<String>,
    first_hop_key: Vec<u8>,
}

impl PreparedRelay {
    pub fn relay_id(&self) -> Uuid {
        self.relay_id
    }

    pub fn hop_key_ids(&self) -> &[String] {
        &self.key_ids
    }
}

/// Result of a successful relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayOutcome {
    pub key_id: Uuid,
    pub initiator_key: Vec<u8>,
    pub target_key: Vec<u8>,
    pub hop_key_ids: Vec<String>,
}

impl RelayOutcome {
    pub fn keys_match(&self) -> bool {
        self.initiator_key == self.target_key
    }
}

/// Initiator side of the trusted-node relay.
pub struct Relayer {
    config: NetworkConfig,
    nodes: NodeDirectory,
    agents: AgentDirectory,
    tap: Option<FrameTap>,
    rng: Mutex<ChaCha8Rng>,
    used_keys: Mutex<HashSet<String>>,
}

impl Relayer {
    /// With `seed`, end-to-end keys and relay ids are reproducible.
    pub fn new(config: NetworkConfig, nodes: NodeDirectory, agents: AgentDirectory, seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            config,
            nodes,
            agents,
            tap: None,
            rng: Mutex::new(rng),
            used_keys: Mutex::new(HashSet::new()),
        }
    }

    pub fn with_tap(mut self, tap: FrameTap) -> Self {
        self.tap = Some(tap);
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub async fn relay_key(&self, path: &RelayPath, size_bits: u32) -> Result<RelayOutcome, RelayError> {
        let prepared = self.prepare(path, size_bits).await?;
        self.transmit(prepared).await
    }

    /// Requests one fresh key per hop from the hop's upstream node.
    pub async fn prepare(&self, path: &RelayPath, size_bits: u32) -> Result<PreparedRelay, RelayError> {
        if size_bits == 0 || size_bits % 8 != 0 {
            return Err(RelayError::InvalidSize(size_bits));
        }
        let mut key_ids = Vec::new();
        let mut first_hop_key = Vec::new();
        for (index, (upstream, downstream)) in path.hops().enumerate() {
            let client = self.nodes.client(upstream)?;
            let (key_id, key) = client.enc_key(self.nodes.sae(downstream)?, size_bits).await?;
            info!(hop = index, %upstream, %downstream, %key_id, "hop key obtained");
            if index == 0 {
                first_hop_key = key;
            }
            key_ids.push(key_id);
        }
        let relay_id = Uuid::from_u128(self.rng.lock().unwrap().random());
        Ok(PreparedRelay {
            relay_id,
            path: path.clone(),
            size_bits,
            key_ids,
            first_hop_key,
        })
    }

    /// Draws the end-to-end key, pads it with the first hop key and sends it
    /// down the path.
    pub async fn transmit(&self, prepared: PreparedRelay) -> Result<RelayOutcome, RelayError> {
        {
            let mut used = self.used_keys.lock().unwrap();
            if !used.insert(prepared.key_ids[0].clone()) {
                return Err(RelayError::KeyReused(prepared.key_ids[0].clone()));
            }
        }
        let mut e2e = vec![0u8; prepared.size_bits as usize / 8];
        self.rng.lock().unwrap().fill_bytes(&mut e2e);
        let ciphertext = xor_pad(&e2e, &prepared.first_hop_key)?;
        let payload = HopPayload {
            relay_id: prepared.relay_id,
            path: prepared.path.nodes().to_vec(),
            position: 1,
            key_ids: prepared.key_ids.clone(),
            ciphertext: base64::engine::general_purpose::STANDARD.encode(ciphertext),
        };
        send_hop(&self.agents, self.tap.as_ref(), &payload).await?;
        let target = prepared.path.target();
        let target_key = self
            .agents
            .take_delivered(target, prepared.relay_id)
            .ok_or_else(|| RelayError::Hop {
                node: target.to_owned(),
                message: "target acknowledged without a key".into(),
            })?;
        info!(relay_id = %prepared.relay_id, bits = prepared.size_bits, "relay complete");
        Ok(RelayOutcome {
            key_id: prepared.relay_id,
            initiator_key: e2e,
            target_key,
            hop_key_ids: prepared.key_ids,
        })
    }
}
