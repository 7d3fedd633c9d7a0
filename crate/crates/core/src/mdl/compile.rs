//! Linking validated documents into executable behaviour.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::document::*;
use super::registry::Registry;
use super::validate::validate;
use crate::diagnostic::{Diagnostic, Rule};
use crate::types::{ActionId, MessageKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("unresolved reference to `{0}`")]
    Unresolved(String),
    #[error("SIM_PARTICIPANT_OVERLAP: {0}")]
    SimParticipantOverlap(String),
    #[error("NO_EXIT: {0}")]
    NoExit(String),
    #[error("{} validation error(s), first: {}", .0.len(), .0[0])]
    Invalid(Vec<Diagnostic>),
}

/// A sub-manoeuvre ready for the engines.
#[derive(Debug, Clone)]
pub struct CompiledSub {
    pub doc: Arc<MdlDocument>,
    pub controlling: String,
    /// Reactive role names with their trigger.
    pub reactive: BTreeMap<String, Trigger>,
}

/// A manoeuvre with every step linked to its sub-manoeuvre definitions.
#[derive(Debug, Clone)]
pub struct CompiledManoeuvre {
    pub doc: Arc<MdlDocument>,
    pub subs: BTreeMap<ActionId, CompiledSub>,
    /// step id -> linked sub-manoeuvres in invocation order
    pub linked: BTreeMap<String, Vec<ActionId>>,
}

impl CompiledManoeuvre {
    pub fn def(&self) -> &ManoeuvreDef {
        self.doc.as_manoeuvre().expect("compiled from a manoeuvre")
    }

    pub fn sub(&self, id: &ActionId) -> &CompiledSub {
        &self.subs[id]
    }
}

#[derive(Debug, Clone)]
pub enum CompiledBehaviour {
    Sub(CompiledSub),
    Manoeuvre(CompiledManoeuvre),
}

impl CompiledBehaviour {
    pub fn doc(&self) -> &Arc<MdlDocument> {
        match self {
            CompiledBehaviour::Sub(s) => &s.doc,
            CompiledBehaviour::Manoeuvre(m) => &m.doc,
        }
    }

    pub fn id(&self) -> &ActionId {
        &self.doc().id
    }
}

fn compile_sub(doc: Arc<MdlDocument>) -> CompiledSub {
    let controlling = doc
        .controlling_role()
        .map(|r| r.name.clone())
        .unwrap_or_default();
    let reactive = doc
        .roles
        .iter()
        .filter(|r| r.part == Part::Reactive)
        .filter_map(|r| r.trigger.map(|t| (r.name.clone(), t)))
        .collect();
    CompiledSub {
        doc,
        controlling,
        reactive,
    }
}

/// Validate and link one document. Warnings do not prevent compilation.
pub fn compile(doc: &MdlDocument, registry: &Registry) -> Result<CompiledBehaviour, CompileError> {
    let errors: Vec<Diagnostic> = validate(doc, registry)
        .into_iter()
        .filter(Diagnostic::is_error)
        .collect();
    if let Some(d) = errors.iter().find(|d| d.rule == Rule::UnresolvedReference) {
        return Err(CompileError::Unresolved(
            d.message.split('`').nth(1).unwrap_or_default().to_string(),
        ));
    }
    if let Some(d) = errors.iter().find(|d| d.rule == Rule::SimParticipantOverlap) {
        return Err(CompileError::SimParticipantOverlap(d.message.clone()));
    }
    if let Some(d) = errors.iter().find(|d| d.rule == Rule::NoExit) {
        return Err(CompileError::NoExit(d.location.clone()));
    }
    if !errors.is_empty() {
        return Err(CompileError::Invalid(errors));
    }
    let doc = Arc::new(doc.clone());
    match &doc.body {
        Body::Sub(_) => Ok(CompiledBehaviour::Sub(compile_sub(doc))),
        Body::Manoeuvre(m) => {
            let mut subs = BTreeMap::new();
            let mut linked = BTreeMap::new();
            for (id, step) in &m.steps {
                let ids: Vec<ActionId> = step.invoke.invokes().iter().map(|i| i.action.clone()).collect();
                for a in &ids {
                    let sub = registry
                        .get(a.as_str())
                        .ok_or_else(|| CompileError::Unresolved(a.to_string()))?;
                    subs.entry(a.clone())
                        .or_insert_with(|| compile_sub(Arc::clone(sub)));
                }
                linked.insert(id.clone(), ids);
            }
            Ok(CompiledBehaviour::Manoeuvre(CompiledManoeuvre {
                doc: Arc::clone(&doc),
                subs,
                linked,
            }))
        }
    }
}

/// Everything a vehicle needs at run time: PME entries per manoeuvre and
/// the RSM dispatch table.
#[derive(Debug, Clone, Default)]
pub struct Library {
    pub behaviours: BTreeMap<ActionId, CompiledBehaviour>,
    /// (sub-manoeuvre, triggering kind) -> reactive role
    pub rsm: BTreeMap<(ActionId, MessageKind), String>,
}

impl Library {
    /// Compile every document of `registry`; sub-manoeuvres are also
    /// exposed as one-step manoeuvres for direct initiation.
    pub fn build(registry: &Registry) -> Result<Library, Vec<(ActionId, CompileError)>> {
        let mut lib = Library::default();
        let mut failures = Vec::new();
        for doc in registry.iter() {
            match compile(doc, registry) {
                Ok(b) => {
                    if let CompiledBehaviour::Sub(s) = &b {
                        for (role, trigger) in &s.reactive {
                            if let Trigger::Message(k) = trigger {
                                lib.rsm.insert((s.doc.id.clone(), *k), role.clone());
                            }
                        }
                    }
                    lib.behaviours.insert(doc.id.clone(), b);
                }
                Err(e) => failures.push((doc.id.clone(), e)),
            }
        }
        if failures.is_empty() {
            Ok(lib)
        } else {
            Err(failures)
        }
    }

    pub fn get(&self, id: &str) -> Option<&CompiledBehaviour> {
        self.behaviours.get(&ActionId::new(id))
    }

    pub fn sub(&self, id: &ActionId) -> Option<&CompiledSub> {
        match self.behaviours.get(id) {
            Some(CompiledBehaviour::Sub(s)) => Some(s),
            _ => None,
        }
    }

    pub fn manoeuvre(&self, id: &ActionId) -> Option<&CompiledManoeuvre> {
        match self.behaviours.get(id) {
            Some(CompiledBehaviour::Manoeuvre(m)) => Some(m),
            _ => None,
        }
    }

    pub fn reactive_role(&self, action: &ActionId, kind: MessageKind) -> Option<(&CompiledSub, &str)> {
        let role = self.rsm.get(&(action.clone(), kind))?;
        Some((self.sub(action)?, role.as_str()))
    }
}

/// A one-step manoeuvre invoking `sub` with the same role names, used when
/// a leader initiates a sub-manoeuvre directly.
pub fn single_step_manoeuvre(sub: &MdlDocument, params: crate::types::Payload) -> MdlDocument {
    let roles = sub
        .roles
        .iter()
        .map(|r| RoleDef {
            name: r.name.clone(),
            entry_state: r.entry_state,
            part: r.part,
            start: None,
            trigger: None,
            bind: None,
        })
        .collect();
    let participants = sub
        .roles
        .iter()
        .filter(|r| r.part == Part::Reactive)
        .map(|r| (r.name.clone(), r.name.clone()))
        .collect();
    let next = sub
        .result_labels()
        .into_iter()
        .map(|l| (vec![l], NextTarget::Terminate))
        .collect();
    let step = StepDef {
        invoke: Invocation::Single(Invoke {
            action: sub.id.clone(),
            participants,
            params,
        }),
        next,
    };
    MdlDocument {
        id: sub.id.clone(),
        kind: DocKind::Manoeuvre,
        version: sub.version.clone(),
        roles,
        body: Body::Manoeuvre(ManoeuvreDef {
            start: "main".into(),
            steps: BTreeMap::from([("main".to_string(), step)]),
        }),
    }
}
