use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::document::{DocKind, MdlDocument};
use crate::types::ActionId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("duplicate action id `{0}` in registry")]
pub struct DuplicateId(pub ActionId);

/// Immutable set of MDL documents keyed by action id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    docs: BTreeMap<ActionId, Arc<MdlDocument>>,
}

impl Registry {
    pub fn new(docs: impl IntoIterator<Item = MdlDocument>) -> Result<Self, DuplicateId> {
        let mut map = BTreeMap::new();
        for doc in docs {
            let id = doc.id.clone();
            if map.insert(id.clone(), Arc::new(doc)).is_some() {
                return Err(DuplicateId(id));
            }
        }
        Ok(Registry { docs: map })
    }

    /// A new registry with `docs` added; later documents replace earlier
    /// ones with the same id.
    pub fn overlay(&self, docs: impl IntoIterator<Item = MdlDocument>) -> Registry {
        let mut out = self.clone();
        for doc in docs {
            out.docs.insert(doc.id.clone(), Arc::new(doc));
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&Arc<MdlDocument>> {
        self.docs.get(&ActionId::new(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<MdlDocument>> {
        self.docs.values()
    }

    pub fn sub_manoeuvres(&self) -> impl Iterator<Item = &Arc<MdlDocument>> {
        self.iter().filter(|d| d.kind == DocKind::SubManoeuvre)
    }

    pub fn manoeuvres(&self) -> impl Iterator<Item = &Arc<MdlDocument>> {
        self.iter().filter(|d| d.kind == DocKind::Manoeuvre)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}
