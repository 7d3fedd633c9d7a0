//! Graphviz export of compiled behaviours. A manoeuvre becomes its step
//! graph with result-key edges; a sub-manoeuvre becomes one cluster per
//! role half sharing the result nodes.

use std::fmt::Write as _;

use crate::mdl::{Body, CompiledBehaviour, Invocation, MdlDocument, NextTarget, Target, Trigger};
use crate::types::{Headway, Primitive, ResultLabel};

pub fn to_dot(behaviour: &CompiledBehaviour) -> String {
    document_dot(behaviour.doc())
}

pub fn document_dot(doc: &MdlDocument) -> String {
    match &doc.body {
        Body::Manoeuvre(_) => manoeuvre_dot(doc),
        Body::Sub(_) => sub_dot(doc),
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\\\""))
}

fn key_label(key: &[ResultLabel]) -> String {
    let labels: Vec<String> = key.iter().map(ResultLabel::to_string).collect();
    if labels.len() == 1 {
        labels[0].clone()
    } else {
        format!("({})", labels.join(","))
    }
}

fn manoeuvre_dot(doc: &MdlDocument) -> String {
    let Body::Manoeuvre(m) = &doc.body else { unreachable!("manoeuvre body") };
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(doc.id.as_str()));
    let _ = writeln!(out, "    rankdir=LR;");
    let _ = writeln!(out, "    node [shape=box];");
    let _ = writeln!(out, "    start [shape=point];");
    let _ = writeln!(out, "    TERMINATE [shape=doublecircle];");
    for (id, step) in &m.steps {
        let invoked: Vec<&str> = step.invoke.invokes().iter().map(|i| i.action.as_str()).collect();
        let label = match &step.invoke {
            Invocation::Single(_) => format!("{id}\\n{}", invoked[0]),
            Invocation::Sim(_) => format!("{id}\\nSIM({})", invoked.join(", ")),
        };
        let _ = writeln!(out, "    {} [label=\"{}\"];", quote(id), label);
    }
    let _ = writeln!(out, "    start -> {};", quote(&m.start));
    for (id, step) in &m.steps {
        for (key, next) in &step.next {
            let to = match next {
                NextTarget::Step(s) => quote(s),
                NextTarget::Terminate => "TERMINATE".to_string(),
            };
            let _ = writeln!(out, "    {} -> {} [label={}];", quote(id), to, quote(&key_label(key)));
        }
    }
    out.push_str("}\n");
    out
}

fn primitive_label(p: &Primitive) -> String {
    let op = p.op().as_str();
    match p {
        Primitive::Mtp { target, offset, lane } => match lane {
            Some(l) => format!("{op}({target}, {offset}, lane {l})"),
            None => format!("{op}({target}, {offset})"),
        },
        Primitive::Sh(Headway::Time(t)) => format!("{op}(t={t})"),
        Primitive::Sh(Headway::Space(s)) => format!("{op}(s={s})"),
        Primitive::W { timeout: Some(t) } => format!("{op}({t})"),
        Primitive::Snd(t) => match &t.action {
            Some(a) => format!("{op}({}/{a} to {})", t.kind, t.to),
            None => format!("{op}({} to {})", t.kind, t.to),
        },
        _ => op.to_string(),
    }
}

fn sub_dot(doc: &MdlDocument) -> String {
    let Body::Sub(s) = &doc.body else { unreachable!("sub body") };
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(doc.id.as_str()));
    let _ = writeln!(out, "    rankdir=LR;");
    let _ = writeln!(out, "    node [shape=box];");
    for r in &s.results {
        let finals: Vec<String> = r.finals.iter().map(|(role, st)| format!("{role}={st}")).collect();
        let _ = writeln!(
            out,
            "    {} [shape=doublecircle label=\"{}\\n{}\"];",
            quote(&r.label.to_string()),
            r.label,
            finals.join(" ")
        );
    }
    for role in &doc.roles {
        let Some(states) = s.states.get(&role.name) else { continue };
        let node = |state: &str| quote(&format!("{}.{state}", role.name));
        let _ = writeln!(out, "    subgraph {} {{", quote(&format!("cluster_{}", role.name)));
        let _ = writeln!(out, "        label=\"{} ({}, {})\";", role.name, role.part.as_str(), role.entry_state);
        let _ = writeln!(out, "        {} [shape=point];", node("entry"));
        for (id, st) in states {
            let prims: Vec<String> = st.primitives.iter().map(primitive_label).collect();
            let label = if prims.is_empty() { id.clone() } else { format!("{id}\\n{}", prims.join("; ")) };
            let _ = writeln!(out, "        {} [label={}];", node(id), quote(&label));
        }
        out.push_str("    }\n");
        if let Some(start) = &role.start {
            let trigger = match role.trigger {
                Some(Trigger::Message(k)) => format!("{k}/{}", doc.id),
                Some(Trigger::Lli) => "LLI".to_string(),
                None => String::new(),
            };
            let _ = writeln!(out, "    {} -> {} [label={}];", node("entry"), node(start), quote(&trigger));
        }
        for (id, st) in states {
            for t in &st.transitions {
                let to = match &t.to {
                    Target::State(x) => node(x),
                    Target::Result(l) => quote(&l.to_string()),
                };
                let label = t.on.as_ref().map(|e| e.to_string()).unwrap_or_default();
                let _ = writeln!(out, "    {} -> {} [label={}];", node(id), to, quote(&label));
            }
        }
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalogue::builtin_registry;
    use crate::mdl::Library;

    #[test]
    fn join_tail_has_three_steps_and_result_edges() {
        let lib = Library::build(&builtin_registry()).unwrap();
        let dot = to_dot(lib.get("JOIN_TAIL").unwrap());
        assert!(dot.starts_with("digraph \"JOIN_TAIL\" {"));
        let steps = dot.lines().filter(|l| l.contains("[label=\"") && l.contains("\\n")).count();
        assert_eq!(steps, 3);
        assert!(dot.contains("[label=\"RS\"]"));
        assert!(dot.contains("-> TERMINATE"));
    }

    #[test]
    fn sub_clusters_share_result_nodes() {
        let lib = Library::build(&builtin_registry()).unwrap();
        let dot = to_dot(lib.get("GAPCLOSE").unwrap());
        assert!(dot.contains("subgraph \"cluster_A\""));
        assert!(dot.contains("subgraph \"cluster_B\""));
        assert!(dot.contains("\"RA1\" [shape=doublecircle"));
    }
}
