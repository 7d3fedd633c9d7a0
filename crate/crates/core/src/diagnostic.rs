use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

macro_rules! rules {
    ($($variant:ident => $text:literal),+ $(,)?) => {
        /// Stable rule identifiers; safe to gate CI on.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Rule {
            $($variant),+
        }

        impl Rule {
            pub const ALL: &'static [Rule] = &[$(Rule::$variant),+];

            pub fn id(self) -> &'static str {
                match self {
                    $(Rule::$variant => $text),+
                }
            }
        }
    };
}

rules! {
    ParseError => "PARSE_ERROR",
    RoleDuplicate => "ROLE_DUPLICATE",
    RoleControlling => "ROLE_CONTROLLING",
    RoleUnknown => "ROLE_UNKNOWN",
    RoleTrigger => "ROLE_TRIGGER",
    StateUnknown => "STATE_UNKNOWN",
    StateUnreachable => "STATE_UNREACHABLE",
    WaitNotLast => "WAIT_NOT_LAST",
    TransitionIncomplete => "TRANSITION_INCOMPLETE",
    DeadEnd => "DEAD_END",
    PrimitiveActorViolation => "PRIMITIVE_ACTOR_VIOLATION",
    UndeclaredResult => "UNDECLARED_RESULT",
    UnreachableResult => "UNREACHABLE_RESULT",
    FinalMissing => "FINAL_MISSING",
    FinalStateMismatch => "FINAL_STATE_MISMATCH",
    StabilityTerminalUnstable => "STABILITY_TERMINAL_UNSTABLE",
    ParamUnresolved => "PARAM_UNRESOLVED",
    UnresolvedReference => "UNRESOLVED_REFERENCE",
    StepUnknown => "STEP_UNKNOWN",
    StepUnreachable => "STEP_UNREACHABLE",
    MissingNext => "MISSING_NEXT",
    NextUndeclared => "NEXT_UNDECLARED",
    ParticipantUnbound => "PARTICIPANT_UNBOUND",
    RoleStateMismatch => "ROLE_STATE_MISMATCH",
    SimParticipantOverlap => "SIM_PARTICIPANT_OVERLAP",
    SimArity => "SIM_ARITY",
    RequestEntry => "REQUEST_ENTRY",
    NoExit => "NO_EXIT",
    CycleWithExit => "CYCLE_WITH_EXIT",
    DeadlockRisk => "DEADLOCK_RISK",
    StateExplosion => "STATE_EXPLOSION",
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for Rule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub rule: Rule,
    /// Document id plus JSON path, e.g. `GAPCLOSE:$.body.states.B.B2`.
    pub location: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(rule: Rule, location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            rule,
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn warning(rule: Rule, location: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(rule, location, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}] {}: {}", self.rule, self.location, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

pub fn to_json(diags: &[Diagnostic]) -> String {
    serde_json::to_string_pretty(diags).expect("diagnostics serialize")
}
