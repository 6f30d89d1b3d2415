use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CouplingKind, ModelError, ProblemInstance};
use crate::solver::AgentState;

/// Exact first-order optimality residual of an instance at `(x, λ, μ)`.
///
/// Stationarity is the natural-map residual `x − clamp(x − ∇ₓL)` per variable,
/// which equals `∇ₓL` wherever the box is inactive and vanishes exactly at a box
/// KKT point without requiring explicit box multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktResidual {
    /// Signed per-agent stationarity vectors.
    pub stationarity: Vec<Vec<f64>>,
    /// `|h_j(x)|` per equality coupling.
    pub primal_equality: Vec<f64>,
    /// `max(0, g_j(x))` per inequality coupling.
    pub primal_inequality: Vec<f64>,
    /// `|μ_j · g_j(x)|` per inequality coupling.
    pub complementarity: Vec<f64>,
    /// `max(0, −μ_j)` per inequality coupling.
    pub dual_feasibility: Vec<f64>,
}

/// Euclidean norms of each residual block.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktSummary {
    pub stationarity: f64,
    pub primal_equality: f64,
    pub primal_inequality: f64,
    pub complementarity: f64,
    pub dual_feasibility: f64,
    pub total: f64,
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    // An empty `sum` is −0.0; start from +0.0 so empty blocks print as 0.
    v.into_iter().fold(0.0, |s, x| s + x * x).sqrt()
}

impl KktResidual {
    pub fn stationarity_norms(&self) -> Vec<f64> {
        self.stationarity.iter().map(|s| norm(s.iter().copied())).collect()
    }

    pub fn summary(&self) -> KktSummary {
        let stationarity = norm(self.stationarity.iter().flatten().copied());
        let primal_equality = norm(self.primal_equality.iter().copied());
        let primal_inequality = norm(self.primal_inequality.iter().copied());
        let complementarity = norm(self.complementarity.iter().copied());
        let dual_feasibility = norm(self.dual_feasibility.iter().copied());
        let total = norm([
            stationarity,
            primal_equality,
            primal_inequality,
            complementarity,
            dual_feasibility,
        ]);
        KktSummary {
            stationarity,
            primal_equality,
            primal_inequality,
            complementarity,
            dual_feasibility,
            total,
        }
    }

    /// Largest entry over every block.
    pub fn max_abs(&self) -> f64 {
        self.stationarity
            .iter()
            .flatten()
            .chain(&self.primal_equality)
            .chain(&self.primal_inequality)
            .chain(&self.complementarity)
            .chain(&self.dual_feasibility)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn evaluate_objective(instance: &ProblemInstance, x: &[f64]) -> Result<f64, ModelError> {
    let layout = instance.layout();
    check_len("primal vector", layout.total(), x.len())?;
    let mut total = 0.0;
    for (agent, xs) in instance.agents.iter().zip(layout.split(instance, x)) {
        for (cost, &xv) in agent.costs.iter().zip(xs) {
            total += cost.value(xv);
        }
    }
    Ok(total)
}

/// Evaluates the KKT residual. `lambda` is indexed like
/// [`ProblemInstance::equality_indices`] and `mu` like
/// [`ProblemInstance::inequality_indices`].
pub fn kkt_residual(
    instance: &ProblemInstance,
    x: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<KktResidual, ModelError> {
    let layout = instance.layout();
    let eq = instance.equality_indices();
    let ineq = instance.inequality_indices();
    check_len("primal vector", layout.total(), x.len())?;
    check_len("equality multipliers", eq.len(), lambda.len())?;
    check_len("inequality multipliers", ineq.len(), mu.len())?;

    let mut grad: Vec<f64> = Vec::with_capacity(layout.total());
    for (agent, xs) in instance.agents.iter().zip(layout.split(instance, x)) {
        grad.extend(agent.costs.iter().zip(xs).map(|(c, &v)| c.gradient(v)));
    }
    for (&j, &m) in eq.iter().zip(lambda).chain(ineq.iter().zip(mu)) {
        for t in &instance.couplings[j].terms {
            grad[layout.index(t.agent, t.var)] += m * t.coeff;
        }
    }

    let stationarity = instance
        .agents
        .iter()
        .enumerate()
        .map(|(k, agent)| {
            (0..agent.n_vars())
                .map(|v| {
                    let p = layout.index(k, v);
                    natural_map(x[p], grad[p], agent.bounds.lower[v], agent.bounds.upper[v])
                })
                .collect()
        })
        .collect();

    let primal_equality = eq
        .iter()
        .map(|&j| instance.couplings[j].residual(&layout, x).abs())
        .collect();
    let g: Vec<f64> = ineq
        .iter()
        .map(|&j| instance.couplings[j].residual(&layout, x))
        .collect();
    let primal_inequality = g.iter().map(|&v| v.max(0.0)).collect();
    let complementarity = g.iter().zip(mu).map(|(&gv, &m)| (m * gv).abs()).collect();
    let dual_feasibility = mu.iter().map(|&m| (-m).max(0.0)).collect();

    Ok(KktResidual {
        stationarity,
        primal_equality,
        primal_inequality,
        complementarity,
        dual_feasibility,
    })
}

/// `x − clamp(x − g, lo, hi)`, computed branchwise so that an inactive box
/// returns `g` bit-for-bit.
fn natural_map(x: f64, g: f64, lo: f64, hi: f64) -> f64 {
    let trial = x - g;
    if trial < lo {
        x - lo
    } else if trial > hi {
        x - hi
    } else {
        g
    }
}

/// Agent-local optimality-condition blocks, evaluated from the agent's own
/// variables, multiplier copies and shares only.
///
/// Every block is the negative local gradient of the Lagrangian in that
/// component: the primal block is `−∇ₓL_i` and each dual block is
/// `share − contribution` for both equality and inequality rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Innovation {
    pub primal: Vec<f64>,
    pub equality: BTreeMap<usize, f64>,
    pub inequality: BTreeMap<usize, f64>,
}

pub fn local_innovation(
    instance: &ProblemInstance,
    agent_id: usize,
    state: &AgentState,
) -> Result<Innovation, ModelError> {
    let agent = instance
        .agents
        .get(agent_id)
        .ok_or(ModelError::UnknownAgent(agent_id))?;
    if state.agent != agent_id {
        return Err(ModelError::StateMismatch {
            state: state.agent,
            requested: agent_id,
        });
    }
    check_len("agent primal vector", agent.n_vars(), state.x.len())?;

    let mut primal: Vec<f64> = agent.costs.iter().zip(&state.x).map(|(c, &v)| -c.gradient(v)).collect();
    let mut equality = BTreeMap::new();
    let mut inequality = BTreeMap::new();

    for (j, coupling) in instance.couplings.iter().enumerate() {
        if !coupling.touches(agent_id) {
            continue;
        }
        let copies = match coupling.kind {
            CouplingKind::Equality => &state.lambda,
            CouplingKind::Inequality => &state.mu,
        };
        let multiplier = copies.get(&j).copied().unwrap_or(0.0);
        for t in coupling.terms.iter().filter(|t| t.agent == agent_id) {
            primal[t.var] -= multiplier * t.coeff;
        }
        let share = state
            .shares
            .get(&j)
            .or_else(|| coupling.shares.get(&agent_id))
            .copied()
            .unwrap_or(0.0);
        let block = share - coupling.contribution(agent_id, &state.x);
        match coupling.kind {
            CouplingKind::Equality => equality.insert(j, block),
            CouplingKind::Inequality => inequality.insert(j, block),
        };
    }

    Ok(Innovation {
        primal,
        equality,
        inequality,
    })
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch { what, expected, got })
    }
}
