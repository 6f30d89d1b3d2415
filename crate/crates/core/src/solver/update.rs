use std::collections::{BTreeMap, BTreeSet};

use super::{AgentState, GainSchedule, SharedCopies, SolverError};
use crate::model::{local_innovation, ProblemInstance};
use crate::network::Topology;

/// One Jacobi step of the consensus + innovations rule for agent `own.agent`,
/// before projection:
///
/// ```text
///   x    ← x + ρ_primal · 𝔒_primal
///   d_j  ← d_j + ρ_consensus · Σ_{l ∈ Ω_i carrying j} (d_j − d_{l,j}) + ρ_dual · 𝔒_j
///   s_j  ← s_j + ρ_share · Σ_{l ∈ partners carrying j} (d_j − d_{l,j})
/// ```
///
/// `neighbors` holds the last value received from every topology neighbour
/// (possibly stale). `share_partners` lists the neighbours that exchanged with
/// this agent in both directions at this iteration; only those edges move shares.
pub fn local_update(
    instance: &ProblemInstance,
    topology: &Topology,
    gains: &GainSchedule,
    own: &AgentState,
    neighbors: &BTreeMap<usize, SharedCopies>,
    share_partners: &BTreeSet<usize>,
) -> Result<AgentState, SolverError> {
    let i = own.agent;
    let k = own.iteration;
    let copies: Vec<&SharedCopies> = topology
        .neighbors(i)
        .iter()
        .map(|&l| {
            neighbors
                .get(&l)
                .ok_or(SolverError::MissingNeighbor { agent: i, neighbor: l })
        })
        .collect::<Result<_, _>>()?;
    let innovation = local_innovation(instance, i, own)?;

    let rho_p = gains.primal_at(i, k);
    let rho_c = gains.consensus_at(i, k);
    let rho_s = gains.share;

    let mut next = own.clone();
    next.iteration = k + 1;
    for (x, step) in next.x.iter_mut().zip(&innovation.primal) {
        *x += rho_p * step;
    }

    let blocks = innovation.equality.iter().chain(&innovation.inequality);
    for (&j, &block) in blocks {
        let mine = own.dual(j).ok_or(SolverError::MissingCopy { agent: i, coupling: j })?;
        let mut disagreement = 0.0;
        let mut fresh_disagreement = 0.0;
        for (&l, c) in topology.neighbors(i).iter().zip(&copies) {
            if let Some(theirs) = c.dual(j) {
                disagreement += mine - theirs;
                if share_partners.contains(&l) {
                    fresh_disagreement += mine - theirs;
                }
            }
        }
        let updated = mine + rho_c * disagreement + gains.dual_for(i, j, k) * block;
        if let Some(v) = next.lambda.get_mut(&j) {
            *v = updated;
        } else if let Some(v) = next.mu.get_mut(&j) {
            *v = updated;
        }
        if let Some(s) = next.shares.get_mut(&j) {
            *s += rho_s * fresh_disagreement;
        }
    }
    Ok(next)
}

/// Synchronous Jacobi sweep over all agents, reading every neighbour's
/// current state. Returns pre-projection states.
pub fn sync_sweep(
    instance: &ProblemInstance,
    topology: &Topology,
    gains: &GainSchedule,
    states: &[AgentState],
) -> Result<Vec<AgentState>, SolverError> {
    states
        .iter()
        .map(|own| {
            let i = own.agent;
            let neighbors: BTreeMap<usize, SharedCopies> = topology
                .neighbors(i)
                .iter()
                .map(|&l| (l, states[l].shared_with(own)))
                .collect();
            let partners: BTreeSet<usize> = topology.neighbors(i).iter().copied().collect();
            local_update(instance, topology, gains, own, &neighbors, &partners)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{balance_pair, single};
    use crate::network::{build_topology, TopologySpec};
    use crate::solver::{project, GainProfile};

    fn literal_gains(rho_c: f64, rho_i: f64) -> GainSchedule {
        // ρ^I applied to every component of V_i, as in the scalar form of the rule.
        GainSchedule::constant(rho_c, rho_i, rho_i, 0.0)
    }

    fn ring2() -> Topology {
        build_topology(&TopologySpec::Ring(2)).unwrap()
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let mut states: Vec<AgentState> = (0..2).map(|i| AgentState::initial(&inst, i)).collect();
        for s in &mut states {
            s.x[0] = 1.0;
            s.lambda.insert(0, -2.0);
        }
        let gains = GainSchedule::default_for(&inst, &ring2());
        let next = sync_sweep(&inst, &ring2(), &gains, &states).unwrap();
        for (a, b) in states.iter().zip(&next) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.lambda, b.lambda);
            assert_eq!(a.shares, b.shares);
            assert_eq!(b.iteration, 1);
        }
    }

    #[test]
    fn symmetric_pair_two_steps() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let gains = literal_gains(-0.5, 0.5);
        let s0: Vec<AgentState> = (0..2).map(|i| AgentState::initial(&inst, i)).collect();
        let s1 = sync_sweep(&inst, &ring2(), &gains, &s0).unwrap();
        assert_eq!(s1[0].lambda[&0], 0.5);
        assert_eq!(s1[0].x, vec![0.0]);
        // k = 1: x reacts to the updated copy, x ← 0 + 0.5·(−(0 + 0.5)).
        let s2 = sync_sweep(&inst, &ring2(), &gains, &s1).unwrap();
        assert_eq!(s2[0].x, vec![-0.25]);
        assert_eq!(s2[0].lambda[&0], 0.5 + 0.5 * (1.0 - 0.0));
    }

    #[test]
    fn scalar_recursion_approaches_minimizer() {
        let inst = single(1.0, -2.0);
        let topo = build_topology(&TopologySpec::Ring(1)).unwrap();
        let gains = GainSchedule::constant(0.0, 0.25, 0.0, 0.0);
        let mut s = vec![AgentState::initial(&inst, 0)];
        s = sync_sweep(&inst, &topo, &gains, &s).unwrap();
        assert_eq!(s[0].x, vec![0.5]);
        s = sync_sweep(&inst, &topo, &gains, &s).unwrap();
        assert_eq!(s[0].x, vec![0.75]);
    }

    #[test]
    fn missing_neighbor_is_a_protocol_error() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let own = AgentState::initial(&inst, 0);
        let err = local_update(
            &inst,
            &ring2(),
            &literal_gains(-0.5, 0.5),
            &own,
            &BTreeMap::new(),
            &BTreeSet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::MissingNeighbor { agent: 0, neighbor: 1 }));
    }

    #[test]
    fn shares_move_only_across_fresh_edges() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let mut own = AgentState::initial(&inst, 0);
        own.lambda.insert(0, 1.0);
        let neighbors: BTreeMap<usize, SharedCopies> = [(
            1,
            SharedCopies {
                lambda: [(0, 0.0)].into_iter().collect(),
                mu: BTreeMap::new(),
            },
        )]
        .into_iter()
        .collect();
        let gains = GainSchedule::constant(0.0, 0.0, 0.0, 0.25);
        let stale = local_update(&inst, &ring2(), &gains, &own, &neighbors, &BTreeSet::new()).unwrap();
        assert_eq!(stale.shares[&0], 1.0);
        let fresh = local_update(&inst, &ring2(), &gains, &own, &neighbors, &BTreeSet::from([1])).unwrap();
        assert_eq!(fresh.shares[&0], 1.25);
    }

    #[test]
    fn jacobi_order_does_not_matter() {
        let inst = balance_pair(1.0, 3.0, 2.0);
        let topo = ring2();
        let gains = GainSchedule::default_for(&inst, &topo);
        let mut states: Vec<AgentState> = (0..2).map(|i| AgentState::initial(&inst, i)).collect();
        for _ in 0..5 {
            states = sync_sweep(&inst, &topo, &gains, &states)
                .unwrap()
                .iter()
                .map(|s| project(s, &inst))
                .collect();
        }
        let forward = sync_sweep(&inst, &topo, &gains, &states).unwrap();
        // Update in reverse order, each agent reading only the frozen snapshot.
        let mut reverse = vec![None, None];
        for i in (0..2).rev() {
            let own = &states[i];
            let neighbors = topo
                .neighbors(i)
                .iter()
                .map(|&l| (l, states[l].shared_with(own)))
                .collect();
            let partners = topo.neighbors(i).iter().copied().collect();
            reverse[i] = Some(local_update(&inst, &topo, &gains, own, &neighbors, &partners).unwrap());
        }
        let reverse: Vec<AgentState> = reverse.into_iter().map(Option::unwrap).collect();
        assert_eq!(forward, reverse);
        assert!(matches!(gains.primal, GainProfile::Constant(_)));
    }
}
