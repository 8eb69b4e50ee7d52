use std::collections::BTreeMap;
use std::sync::Arc;

use super::{run_bb84_with_eve, run_extended_bb84, LinkPhysics, ParamError, ProtocolParams, RoundOutcome};

pub const BB84_WITH_EVE: &str = "bb84_with_eve";
pub const EXTENDED_BB84: &str = "extended_bb84";

/// A key-generation protocol the engine can run on a link.
///
/// Implementations never see the requested key length: they produce one
/// round of material and the engine keeps calling them until it has enough.
pub trait QkdProtocol: Send + Sync {
    fn name(&self) -> &str;

    fn run_round(
        &self,
        params: &ProtocolParams,
        phys: &LinkPhysics,
        seed: u64,
    ) -> Result<RoundOutcome, ParamError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Bb84WithEve;

impl QkdProtocol for Bb84WithEve {
    fn name(&self) -> &str {
        BB84_WITH_EVE
    }

    fn run_round(
        &self,
        params: &ProtocolParams,
        phys: &LinkPhysics,
        seed: u64,
    ) -> Result<RoundOutcome, ParamError> {
        run_bb84_with_eve(params, phys.eve.as_ref(), seed)
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ExtendedBb84;

impl QkdProtocol for ExtendedBb84 {
    fn name(&self) -> &str {
        EXTENDED_BB84
    }

    fn run_round(
        &self,
        params: &ProtocolParams,
        phys: &LinkPhysics,
        seed: u64,
    ) -> Result<RoundOutcome, ParamError> {
        run_extended_bb84(params, phys, seed)
    }
}

/// Protocol implementations keyed by the name used in the configuration.
#[derive(Clone)]
pub struct ProtocolRegistry {
    protocols: BTreeMap<String, Arc<dyn QkdProtocol>>,
}

impl ProtocolRegistry {
    pub fn empty() -> Self {
        Self {
            protocols: BTreeMap::new(),
        }
    }

    /// Registry holding the two built-in BB84 models.
    pub fn builtin() -> Self {
        let mut registry = Self::empty();
        registry.register(Arc::new(Bb84WithEve));
        registry.register(Arc::new(ExtendedBb84));
        registry
    }

    /// Adds `protocol` under its own name, replacing any previous entry.
    pub fn register(&mut self, protocol: Arc<dyn QkdProtocol>) {
        self.protocols.insert(protocol.name().to_owned(), protocol);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn QkdProtocol>> {
        self.protocols.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.protocols.keys().map(String::as_str)
    }
}

impl Default for ProtocolRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl std::fmt::Debug for ProtocolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.protocols.keys()).finish()
    }
}
