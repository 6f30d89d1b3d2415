//! Problem class: separable convex quadratic objectives, per-agent boxes and
//! linear coupling constraints.
//!
//! ```text
//!   minimize   Σ_k Σ_v  a·x² + b·x + c
//!   s.t.       Σ coeff·x − rhs ≤ 0     (inequality couplings, multiplier μ_j ≥ 0)
//!              Σ coeff·x − rhs = 0     (equality couplings,   multiplier λ_j)
//!              lower ≤ x ≤ upper       (local boxes)
//! ```
//!
//! The Lagrangian convention throughout the crate is
//! `L = f + Σ μ_j g_j + Σ λ_j h_j`, stationarity being `∇ₓL = 0`.

mod kkt;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kkt::{evaluate_objective, kkt_residual, local_innovation, Innovation, KktResidual, KktSummary};
pub use validate::{validate_instance, Violation};

/// Errors raised when inputs do not match the instance they are evaluated against.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("agent {0} does not exist")]
    UnknownAgent(usize),
    #[error("state belongs to agent {state} but agent {requested} was requested")]
    StateMismatch { state: usize, requested: usize },
}

/// Per-variable cost `a·x² + b·x + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticCost {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadraticCost {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.a * x * x + self.b * x + self.c
    }

    pub fn gradient(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }
}

/// Componentwise bounds on an agent's variables. Infinite bounds are allowed and
/// are written as `null` in instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalBox {
    #[serde(with = "lower_bounds")]
    pub lower: Vec<f64>,
    #[serde(with = "upper_bounds")]
    pub upper: Vec<f64>,
}

impl LocalBox {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    pub fn clamp(&self, v: usize, x: f64) -> f64 {
        x.max(self.lower[v]).min(self.upper[v])
    }

    pub fn contains(&self, v: usize, x: f64) -> bool {
        self.lower[v] <= x && x <= self.upper[v]
    }

    /// Box midpoint when both sides are finite, otherwise zero clamped into the box.
    pub fn initial_point(&self, v: usize) -> f64 {
        let (lo, hi) = (self.lower[v], self.upper[v]);
        if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            self.clamp(v, 0.0)
        }
    }
}

/// One agent of the fleet. The number of local variables is `costs.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Agent {
    pub id: usize,
    pub costs: Vec<QuadraticCost>,
    #[serde(rename = "box")]
    pub bounds: LocalBox,
}

impl Agent {
    pub fn new(id: usize, costs: Vec<QuadraticCost>, bounds: LocalBox) -> Self {
        Self { id, costs, bounds }
    }

    pub fn n_vars(&self) -> usize {
        self.costs.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CouplingKind {
    #[serde(rename = "eq")]
    Equality,
    #[serde(rename = "ineq")]
    Inequality,
}

/// A single `coeff · x[agent][var]` term of a coupling row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub agent: usize,
    pub var: usize,
    pub coeff: f64,
}

impl Term {
    pub fn new(agent: usize, var: usize, coeff: f64) -> Self {
        Self { agent, var, coeff }
    }
}

/// Linear coupling `Σ terms − rhs (= | ≤) 0`, with the rhs split into per-agent
/// shares so each touching agent can sense a local mismatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConstraint {
    pub kind: CouplingKind,
    pub terms: Vec<Term>,
    pub rhs: f64,
    pub shares: BTreeMap<usize, f64>,
}

impl CouplingConstraint {
    /// Builds a constraint whose rhs is split equally between the touching agents.
    pub fn with_equal_shares(kind: CouplingKind, terms: Vec<Term>, rhs: f64) -> Self {
        let mut c = Self {
            kind,
            terms,
            rhs,
            shares: BTreeMap::new(),
        };
        let agents = c.agents();
        let share = rhs / agents.len().max(1) as f64;
        c.shares = agents.into_iter().map(|a| (a, share)).collect();
        c
    }

    /// Agents with at least one term in this row, ascending.
    pub fn agents(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.terms.iter().map(|t| t.agent).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn touches(&self, agent: usize) -> bool {
        self.terms.iter().any(|t| t.agent == agent)
    }

    /// `Σ coeff·x` over the terms belonging to `agent`, reading the agent's local vector.
    pub fn contribution(&self, agent: usize, x_local: &[f64]) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.agent == agent)
            .map(|t| t.coeff * x_local[t.var])
            .sum()
    }

    /// Row value `Σ coeff·x − rhs` over the full primal vector.
    pub fn residual(&self, layout: &VarLayout, x: &[f64]) -> f64 {
        let lhs: f64 = self
            .terms
            .iter()
            .map(|t| t.coeff * x[layout.index(t.agent, t.var)])
            .sum();
        lhs - self.rhs
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub agents: Vec<Agent>,
    pub couplings: Vec<CouplingConstraint>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ProblemInstance {
    pub fn new(agents: Vec<Agent>, couplings: Vec<CouplingConstraint>) -> Self {
        Self {
            agents,
            couplings,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn with_metadata(mut self, metadata: serde_json::Value) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn layout(&self) -> VarLayout {
        VarLayout::new(self)
    }

    pub fn total_vars(&self) -> usize {
        self.agents.iter().map(Agent::n_vars).sum()
    }

    /// Coupling indices of equality rows, in instance order. Multiplier vectors
    /// for equalities are indexed by position in this list.
    pub fn equality_indices(&self) -> Vec<usize> {
        self.kind_indices(CouplingKind::Equality)
    }

    pub fn inequality_indices(&self) -> Vec<usize> {
        self.kind_indices(CouplingKind::Inequality)
    }

    fn kind_indices(&self, kind: CouplingKind) -> Vec<usize> {
        self.couplings
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(j, _)| j)
            .collect()
    }

    /// Couplings touching `agent`, ascending by coupling index.
    pub fn couplings_of(&self, agent: usize) -> Vec<usize> {
        self.couplings
            .iter()
            .enumerate()
            .filter(|(_, c)| c.touches(agent))
            .map(|(j, _)| j)
            .collect()
    }

    /// Relabels agents to `0..n` in ascending id order, remapping terms and shares.
    ///
    /// Returns the canonical instance and the original id of each new position.
    pub fn canonicalize(&self) -> (ProblemInstance, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.agents.len()).collect();
        order.sort_by_key(|&i| self.agents[i].id);
        let original: Vec<usize> = order.iter().map(|&i| self.agents[i].id).collect();
        let remap: BTreeMap<usize, usize> = original.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let lookup = |old: usize| remap.get(&old).copied().unwrap_or(old);

        let agents = order
            .iter()
            .enumerate()
            .map(|(new, &i)| Agent {
                id: new,
                ..self.agents[i].clone()
            })
            .collect();
        let couplings = self
            .couplings
            .iter()
            .map(|c| CouplingConstraint {
                kind: c.kind,
                terms: c
                    .terms
                    .iter()
                    .map(|t| Term {
                        agent: lookup(t.agent),
                        ..*t
                    })
                    .collect(),
                rhs: c.rhs,
                shares: c.shares.iter().map(|(&a, &s)| (lookup(a), s)).collect(),
            })
            .collect();
        (
            ProblemInstance {
                agents,
                couplings,
                metadata: self.metadata.clone(),
            },
            original,
        )
    }

    pub fn is_canonical(&self) -> bool {
        self.agents.iter().enumerate().all(|(i, a)| a.id == i)
    }
}

/// Offsets of each agent's block in the flat primal vector. Assumes canonical ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarLayout {
    offsets: Vec<usize>,
    total: usize,
}

impl VarLayout {
    pub fn new(instance: &ProblemInstance) -> Self {
        let mut offsets = Vec::with_capacity(instance.agents.len());
        let mut total = 0;
        for agent in &instance.agents {
            offsets.push(total);
            total += agent.n_vars();
        }
        Self { offsets, total }
    }

    pub fn index(&self, agent: usize, var: usize) -> usize {
        self.offsets[agent] + var
    }

    pub fn offset(&self, agent: usize) -> usize {
        self.offsets[agent]
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Splits a flat vector into per-agent slices.
    pub fn split<'a>(&self, instance: &ProblemInstance, x: &'a [f64]) -> Vec<&'a [f64]> {
        instance
            .agents
            .iter()
            .zip(&self.offsets)
            .map(|(a, &o)| &x[o..o + a.n_vars()])
            .collect()
    }
}

mod lower_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Option<f64>> = v.iter().map(|&x| x.is_finite().then_some(x)).collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

mod upper_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Option<f64>> = v.iter().map(|&x| x.is_finite().then_some(x)).collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}
