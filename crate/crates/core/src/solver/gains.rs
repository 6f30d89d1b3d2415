use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ProblemInstance;
use crate::network::Topology;

/// Step size as a function of agent and iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GainProfile {
    Constant(f64),
    PerAgent(Vec<f64>),
    /// `base / (k + 1)^exponent`.
    Diminishing {
        base: f64,
        exponent: f64,
    },
}

impl GainProfile {
    pub fn at(&self, agent: usize, k: usize) -> f64 {
        match self {
            GainProfile::Constant(g) => *g,
            GainProfile::PerAgent(g) => g[agent],
            GainProfile::Diminishing { base, exponent } => base / ((k + 1) as f64).powf(*exponent),
        }
    }

    pub fn is_constant_in_k(&self) -> bool {
        !matches!(self, GainProfile::Diminishing { exponent, .. } if *exponent != 0.0)
    }

    fn is_finite(&self) -> bool {
        match self {
            GainProfile::Constant(g) => g.is_finite(),
            GainProfile::PerAgent(g) => g.iter().all(|v| v.is_finite()),
            GainProfile::Diminishing { base, exponent } => base.is_finite() && exponent.is_finite(),
        }
    }

    fn covers(&self, n_agents: usize) -> bool {
        !matches!(self, GainProfile::PerAgent(g) if g.len() != n_agents)
    }
}

/// Tuning parameters of the local update.
///
/// The innovation gain is a vector over the components of `V_i`: `primal`
/// scales the primal block and `dual` scales the multiplier blocks. Signs are
/// unrestricted; convergent settings use `consensus < 0`, `primal > 0` and
/// `dual < 0` (descent in `x`, ascent in the multipliers).
///
/// `dual_weights[i][j]` further scales agent `i`'s dual step on coupling `j`
/// (a diagonal preconditioner; missing entries mean 1).
///
/// `share` moves rhs shares along multiplier disagreement. It is a single
/// scalar so that the two ends of an edge always transfer equal and opposite
/// amounts, which keeps each row's share sum equal to its rhs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub consensus: GainProfile,
    pub primal: GainProfile,
    pub dual: GainProfile,
    #[serde(default)]
    pub dual_weights: Vec<BTreeMap<usize, f64>>,
    pub share: f64,
}

/// Default primal-step numerator: `ρ_primal = 0.3 / max a`.
pub const DEFAULT_PRIMAL_SCALE: f64 = 0.3;
/// Default consensus numerator: `ρ_consensus = −0.3 / max degree`.
pub const DEFAULT_CONSENSUS_SCALE: f64 = 0.3;
/// Default dual numerator: `ρ_dual = −0.3`, with per-copy weights
/// `1 / (m_i · Σ_{terms of i in j} coeff² / 2a)`, `m_i` being the largest
/// number of couplings sharing one of agent `i`'s variables.
pub const DEFAULT_DUAL_SCALE: f64 = 0.3;
/// Default share numerator: `ρ_share = 0.1 / (max a · max degree)`.
pub const DEFAULT_SHARE_SCALE: f64 = 0.1;

impl GainSchedule {
    pub fn constant(consensus: f64, primal: f64, dual: f64, share: f64) -> Self {
        Self {
            consensus: GainProfile::Constant(consensus),
            primal: GainProfile::Constant(primal),
            dual: GainProfile::Constant(dual),
            dual_weights: Vec::new(),
            share,
        }
    }

    /// Shipped constant gains scaled from the instance's curvature, coupling
    /// weights and the topology's maximum degree.
    pub fn default_for(instance: &ProblemInstance, topology: &Topology) -> Self {
        let a_max = instance
            .agents
            .iter()
            .flat_map(|a| a.costs.iter().map(|c| c.a))
            .fold(0.0_f64, f64::max);
        let a_max = if a_max > 0.0 { a_max } else { 1.0 };
        let deg = topology.max_degree().max(1) as f64;
        Self {
            dual_weights: dual_preconditioner(instance),
            ..Self::constant(
                -DEFAULT_CONSENSUS_SCALE / deg,
                DEFAULT_PRIMAL_SCALE / a_max,
                -DEFAULT_DUAL_SCALE,
                DEFAULT_SHARE_SCALE / (a_max * deg),
            )
        }
    }

    pub fn consensus_at(&self, agent: usize, k: usize) -> f64 {
        self.consensus.at(agent, k)
    }

    pub fn primal_at(&self, agent: usize, k: usize) -> f64 {
        self.primal.at(agent, k)
    }

    pub fn dual_at(&self, agent: usize, k: usize) -> f64 {
        self.dual.at(agent, k)
    }

    /// Dual step of agent `agent` on coupling `coupling`, weight included.
    pub fn dual_for(&self, agent: usize, coupling: usize, k: usize) -> f64 {
        let w = self
            .dual_weights
            .get(agent)
            .and_then(|m| m.get(&coupling))
            .copied()
            .unwrap_or(1.0);
        self.dual.at(agent, k) * w
    }

    pub fn is_constant_in_k(&self) -> bool {
        self.consensus.is_constant_in_k() && self.primal.is_constant_in_k() && self.dual.is_constant_in_k()
    }

    pub fn is_valid_for(&self, n_agents: usize) -> bool {
        [&self.consensus, &self.primal, &self.dual]
            .iter()
            .all(|g| g.is_finite() && g.covers(n_agents))
            && self.share.is_finite()
            && (self.dual_weights.is_empty() || self.dual_weights.len() == n_agents)
            && self.dual_weights.iter().flat_map(|m| m.values()).all(|w| w.is_finite())
    }
}

/// Inverse of the diagonal of `A_i H_i⁻¹ A_iᵀ`, divided by the number of
/// rows that can pile onto one variable, per agent and coupling.
fn dual_preconditioner(instance: &ProblemInstance) -> Vec<BTreeMap<usize, f64>> {
    instance
        .agents
        .iter()
        .enumerate()
        .map(|(i, agent)| {
            let mut rows_per_var = vec![0usize; agent.n_vars()];
            let mut curvature = BTreeMap::new();
            for j in instance.couplings_of(i) {
                let mut q = 0.0;
                for t in instance.couplings[j]
                    .terms
                    .iter()
                    .filter(|t| t.agent == i && t.var < agent.n_vars())
                {
                    if agent.bounds.lower[t.var] == agent.bounds.upper[t.var] {
                        // A pinned variable never responds to the multiplier.
                        continue;
                    }
                    q += t.coeff * t.coeff / (2.0 * agent.costs[t.var].a);
                    rows_per_var[t.var] += 1;
                }
                curvature.insert(j, q);
            }
            let m = rows_per_var.into_iter().max().unwrap_or(1).max(1) as f64;
            curvature
                .into_iter()
                .map(|(j, q)| (j, if q > 0.0 { 1.0 / (m * q) } else { 1.0 }))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::balance_pair;
    use crate::network::{build_topology, TopologySpec};

    #[test]
    fn profiles_evaluate() {
        assert_eq!(GainProfile::Constant(0.5).at(3, 100), 0.5);
        assert_eq!(GainProfile::PerAgent(vec![0.1, 0.2]).at(1, 0), 0.2);
        let d = GainProfile::Diminishing {
            base: 1.0,
            exponent: 1.0,
        };
        assert_eq!(d.at(0, 0), 1.0);
        assert_eq!(d.at(0, 3), 0.25);
        assert!(!d.is_constant_in_k());
    }

    #[test]
    fn defaults_follow_instance_scale() {
        let inst = balance_pair(1.0, 2.0, 3.0);
        let topo = build_topology(&TopologySpec::Ring(2)).unwrap();
        let g = GainSchedule::default_for(&inst, &topo);
        assert_eq!(g.primal_at(0, 0), 0.15);
        assert_eq!(g.consensus_at(0, 0), -0.3);
        assert!(g.dual_at(0, 0) < 0.0);
        // One coupling per variable: weight 2a.
        assert_eq!(g.dual_for(1, 0, 0), -0.3 * 4.0);
        assert!(g.share > 0.0);
        assert!(g.is_constant_in_k());
        assert!(g.is_valid_for(2));
        assert!(!GainSchedule {
            primal: GainProfile::PerAgent(vec![1.0]),
            ..g
        }
        .is_valid_for(2));
    }
}
