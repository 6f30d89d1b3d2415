use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{CouplingKind, ProblemInstance};
use crate::network::Payload;

/// One agent's iterate `V_i`: its primal block, its local copies of the
/// multipliers of every coupling it touches, and its current share of each
/// coupling's right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent: usize,
    pub x: Vec<f64>,
    /// Coupling index → local copy of λ_j (equality rows touching this agent).
    pub lambda: BTreeMap<usize, f64>,
    /// Coupling index → local copy of μ_j (inequality rows touching this agent).
    pub mu: BTreeMap<usize, f64>,
    /// Coupling index → this agent's share of the row's rhs.
    pub shares: BTreeMap<usize, f64>,
    pub iteration: usize,
}

impl AgentState {
    /// Box midpoint (zero where unbounded), zero multiplier copies and the
    /// instance's owner shares.
    pub fn initial(instance: &ProblemInstance, agent: usize) -> Self {
        let a = &instance.agents[agent];
        let x = (0..a.n_vars()).map(|v| a.bounds.initial_point(v)).collect();
        let mut lambda = BTreeMap::new();
        let mut mu = BTreeMap::new();
        let mut shares = BTreeMap::new();
        for j in instance.couplings_of(agent) {
            let c = &instance.couplings[j];
            match c.kind {
                CouplingKind::Equality => lambda.insert(j, 0.0),
                CouplingKind::Inequality => mu.insert(j, 0.0),
            };
            shares.insert(j, c.shares.get(&agent).copied().unwrap_or(0.0));
        }
        Self {
            agent,
            x,
            lambda,
            mu,
            shares,
            iteration: 0,
        }
    }

    /// Copy of coupling `j`'s multiplier, whichever kind it is.
    pub fn dual(&self, j: usize) -> Option<f64> {
        self.lambda.get(&j).or_else(|| self.mu.get(&j)).copied()
    }

    pub fn carries(&self, j: usize) -> bool {
        self.lambda.contains_key(&j) || self.mu.contains_key(&j)
    }

    /// What this agent sends to a neighbour: copies of the multipliers both of
    /// them carry.
    pub fn shared_with(&self, other: &AgentState) -> SharedCopies {
        SharedCopies {
            lambda: filter_keys(&self.lambda, |j| other.carries(j)),
            mu: filter_keys(&self.mu, |j| other.carries(j)),
        }
    }

    pub fn all_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.x
            .iter()
            .chain(self.lambda.values())
            .chain(self.mu.values())
            .chain(self.shares.values())
            .copied()
    }

    pub fn is_finite(&self) -> bool {
        self.all_values().all(f64::is_finite)
    }

    /// Box membership and `μ ≥ 0`, checked exactly.
    pub fn is_feasible(&self, instance: &ProblemInstance) -> bool {
        let b = &instance.agents[self.agent].bounds;
        self.x.iter().enumerate().all(|(v, &x)| b.contains(v, x)) && self.mu.values().all(|&m| m >= 0.0)
    }
}

fn filter_keys(map: &BTreeMap<usize, f64>, keep: impl Fn(usize) -> bool) -> BTreeMap<usize, f64> {
    map.iter().filter(|(&j, _)| keep(j)).map(|(&j, &v)| (j, v)).collect()
}

/// Shared multiplier copies as carried on the wire.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SharedCopies {
    pub lambda: BTreeMap<usize, f64>,
    pub mu: BTreeMap<usize, f64>,
}

impl SharedCopies {
    pub fn dual(&self, j: usize) -> Option<f64> {
        self.lambda.get(&j).or_else(|| self.mu.get(&j)).copied()
    }
}

impl Payload for SharedCopies {
    fn components(&self) -> usize {
        self.lambda.len() + self.mu.len()
    }
}

/// Euclidean projection onto the locally decoupled feasible set: `x` into its
/// box, `μ` onto `[0, ∞)`. λ copies and shares pass through unchanged.
pub fn project(state: &AgentState, instance: &ProblemInstance) -> AgentState {
    let bounds = &instance.agents[state.agent].bounds;
    let mut out = state.clone();
    for (v, x) in out.x.iter_mut().enumerate() {
        *x = bounds.clamp(v, *x);
    }
    for m in out.mu.values_mut() {
        if m.is_nan() || *m < 0.0 {
            *m = 0.0;
        }
    }
    out
}
