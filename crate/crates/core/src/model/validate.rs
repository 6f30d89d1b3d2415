use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::ProblemInstance;

/// Relative tolerance for the share-sum check. Decimal shares such as `rhs / 3`
/// cannot sum back to `rhs` bit-exactly, so the comparison allows a few ulps.
const SHARE_SUM_RTOL: f64 = 1e-12;

/// One broken invariant of a [`ProblemInstance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum Violation {
    NoAgents,
    DuplicateAgentId {
        id: usize,
    },
    NonContiguousIds {
        position: usize,
        id: usize,
    },
    BoxDimensionMismatch {
        agent: usize,
        costs: usize,
        lower: usize,
        upper: usize,
    },
    NonStrictlyConvexCost {
        agent: usize,
        var: usize,
        a: f64,
    },
    NonFiniteValue {
        location: String,
    },
    InvertedBox {
        agent: usize,
        var: usize,
    },
    EmptyCoupling {
        coupling: usize,
    },
    UnknownAgent {
        coupling: usize,
        agent: usize,
    },
    UnknownVariable {
        coupling: usize,
        agent: usize,
        var: usize,
    },
    DuplicateTerm {
        coupling: usize,
        agent: usize,
        var: usize,
    },
    MissingShare {
        coupling: usize,
        agent: usize,
    },
    ShareForUntouchedAgent {
        coupling: usize,
        agent: usize,
    },
    ShareSumMismatch {
        coupling: usize,
        sum: f64,
        rhs: f64,
    },
}

impl Violation {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Violation::NoAgents => "no-agents",
            Violation::DuplicateAgentId { .. } => "duplicate-agent-id",
            Violation::NonContiguousIds { .. } => "non-contiguous-ids",
            Violation::BoxDimensionMismatch { .. } => "box-dimension-mismatch",
            Violation::NonStrictlyConvexCost { .. } => "non-strictly-convex-cost",
            Violation::NonFiniteValue { .. } => "non-finite-value",
            Violation::InvertedBox { .. } => "inverted-box",
            Violation::EmptyCoupling { .. } => "empty-coupling",
            Violation::UnknownAgent { .. } => "unknown-agent",
            Violation::UnknownVariable { .. } => "unknown-variable",
            Violation::DuplicateTerm { .. } => "duplicate-term",
            Violation::MissingShare { .. } => "missing-share",
            Violation::ShareForUntouchedAgent { .. } => "share-for-untouched-agent",
            Violation::ShareSumMismatch { .. } => "share-sum-mismatch",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoAgents => write!(f, "instance has no agents"),
            Violation::DuplicateAgentId { id } => write!(f, "agent id {id} appears more than once"),
            Violation::NonContiguousIds { position, id } => {
                write!(f, "agent at position {position} has id {id}; canonicalize first")
            }
            Violation::BoxDimensionMismatch {
                agent,
                costs,
                lower,
                upper,
            } => write!(
                f,
                "agent {agent}: {costs} costs but box has {lower} lower / {upper} upper bounds"
            ),
            Violation::NonStrictlyConvexCost { agent, var, a } => {
                write!(f, "agent {agent} var {var}: quadratic coefficient {a} is not > 0")
            }
            Violation::NonFiniteValue { location } => write!(f, "non-finite value at {location}"),
            Violation::InvertedBox { agent, var } => {
                write!(f, "agent {agent} var {var}: lower bound exceeds upper bound")
            }
            Violation::EmptyCoupling { coupling } => write!(f, "coupling {coupling} has no terms"),
            Violation::UnknownAgent { coupling, agent } => {
                write!(f, "coupling {coupling} references unknown agent {agent}")
            }
            Violation::UnknownVariable { coupling, agent, var } => {
                write!(
                    f,
                    "coupling {coupling} references unknown variable {var} of agent {agent}"
                )
            }
            Violation::DuplicateTerm { coupling, agent, var } => {
                write!(f, "coupling {coupling} lists agent {agent} var {var} twice")
            }
            Violation::MissingShare { coupling, agent } => {
                write!(f, "coupling {coupling} has no share for touching agent {agent}")
            }
            Violation::ShareForUntouchedAgent { coupling, agent } => {
                write!(
                    f,
                    "coupling {coupling} assigns a share to agent {agent}, which it does not touch"
                )
            }
            Violation::ShareSumMismatch { coupling, sum, rhs } => {
                write!(f, "coupling {coupling}: shares sum to {sum}, rhs is {rhs}")
            }
        }
    }
}

/// Checks every instance invariant. An empty list means the instance is valid.
pub fn validate_instance(instance: &ProblemInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    if instance.agents.is_empty() {
        out.push(Violation::NoAgents);
    }

    let mut seen = BTreeSet::new();
    for (position, agent) in instance.agents.iter().enumerate() {
        if !seen.insert(agent.id) {
            out.push(Violation::DuplicateAgentId { id: agent.id });
        } else if agent.id != position {
            out.push(Violation::NonContiguousIds { position, id: agent.id });
        }
        let n = agent.n_vars();
        let b = &agent.bounds;
        if b.lower.len() != n || b.upper.len() != n {
            out.push(Violation::BoxDimensionMismatch {
                agent: agent.id,
                costs: n,
                lower: b.lower.len(),
                upper: b.upper.len(),
            });
            continue;
        }
        for (v, cost) in agent.costs.iter().enumerate() {
            if !(cost.a.is_finite() && cost.b.is_finite() && cost.c.is_finite()) {
                out.push(Violation::NonFiniteValue {
                    location: format!("agents[{position}].costs[{v}]"),
                });
            } else if cost.a <= 0.0 {
                out.push(Violation::NonStrictlyConvexCost {
                    agent: agent.id,
                    var: v,
                    a: cost.a,
                });
            }
            if b.lower[v].is_nan() || b.upper[v].is_nan() {
                out.push(Violation::NonFiniteValue {
                    location: format!("agents[{position}].box[{v}]"),
                });
            } else if b.lower[v] > b.upper[v] {
                out.push(Violation::InvertedBox {
                    agent: agent.id,
                    var: v,
                });
            }
        }
    }

    let n_vars_of = |id: usize| instance.agents.iter().find(|a| a.id == id).map(|a| a.n_vars());

    for (j, coupling) in instance.couplings.iter().enumerate() {
        if coupling.terms.is_empty() {
            out.push(Violation::EmptyCoupling { coupling: j });
            continue;
        }
        if !coupling.rhs.is_finite() {
            out.push(Violation::NonFiniteValue {
                location: format!("couplings[{j}].rhs"),
            });
        }
        let mut term_keys = BTreeSet::new();
        for (t_idx, t) in coupling.terms.iter().enumerate() {
            match n_vars_of(t.agent) {
                None => out.push(Violation::UnknownAgent {
                    coupling: j,
                    agent: t.agent,
                }),
                Some(n) if t.var >= n => out.push(Violation::UnknownVariable {
                    coupling: j,
                    agent: t.agent,
                    var: t.var,
                }),
                Some(_) => {}
            }
            if !t.coeff.is_finite() {
                out.push(Violation::NonFiniteValue {
                    location: format!("couplings[{j}].terms[{t_idx}].coeff"),
                });
            }
            if !term_keys.insert((t.agent, t.var)) {
                out.push(Violation::DuplicateTerm {
                    coupling: j,
                    agent: t.agent,
                    var: t.var,
                });
            }
        }

        let touching = coupling.agents();
        for &a in &touching {
            if !coupling.shares.contains_key(&a) {
                out.push(Violation::MissingShare { coupling: j, agent: a });
            }
        }
        for (&a, &s) in &coupling.shares {
            if !touching.contains(&a) {
                out.push(Violation::ShareForUntouchedAgent { coupling: j, agent: a });
            }
            if !s.is_finite() {
                out.push(Violation::NonFiniteValue {
                    location: format!("couplings[{j}].shares[{a}]"),
                });
            }
        }
        let sum: f64 = coupling.shares.values().sum();
        let scale = 1.0_f64
            .max(coupling.rhs.abs())
            .max(coupling.shares.values().fold(0.0_f64, |m, s| m.max(s.abs())));
        if (sum - coupling.rhs).abs() > SHARE_SUM_RTOL * scale * coupling.shares.len().max(1) as f64 {
            out.push(Violation::ShareSumMismatch {
                coupling: j,
                sum,
                rhs: coupling.rhs,
            });
        }
    }
    out
}
