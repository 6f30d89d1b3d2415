use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkError, Topology};

/// Disjoint, exhaustive grouping of agents into clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterPartition {
    clusters: Vec<BTreeSet<usize>>,
    #[serde(skip)]
    label: Vec<usize>,
}

impl ClusterPartition {
    pub fn new(n_agents: usize, clusters: Vec<BTreeSet<usize>>) -> Result<Self, NetworkError> {
        let mut label = vec![usize::MAX; n_agents];
        for (c, members) in clusters.iter().enumerate() {
            for &a in members {
                if a >= n_agents {
                    return Err(NetworkError::UnknownAgent(a));
                }
                if label[a] != usize::MAX {
                    return Err(NetworkError::InvalidPartition(format!(
                        "agent {a} appears in more than one cluster"
                    )));
                }
                label[a] = c;
            }
        }
        if let Some(missing) = label.iter().position(|&l| l == usize::MAX) {
            return Err(NetworkError::InvalidPartition(format!(
                "agent {missing} is not in any cluster"
            )));
        }
        Ok(Self { clusters, label })
    }

    /// Everyone in one cluster.
    pub fn single(n_agents: usize) -> Self {
        Self::new(n_agents, vec![(0..n_agents).collect()]).expect("trivial partition")
    }

    /// One cluster per agent.
    pub fn singletons(n_agents: usize) -> Self {
        Self::new(n_agents, (0..n_agents).map(|a| BTreeSet::from([a])).collect()).expect("singleton partition")
    }

    /// Parses `a,b;c,d` (clusters separated by `;`, members by `,`).
    pub fn parse(n_agents: usize, s: &str) -> Result<Self, NetworkError> {
        let clusters = s
            .split(';')
            .map(|group| {
                group
                    .split(',')
                    .map(|m| {
                        m.trim()
                            .parse::<usize>()
                            .map_err(|_| NetworkError::InvalidSpec(format!("bad cluster list {s:?}")))
                    })
                    .collect::<Result<BTreeSet<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(n_agents, clusters)
    }

    pub fn clusters(&self) -> &[BTreeSet<usize>] {
        &self.clusters
    }

    pub fn cluster_of(&self, agent: usize) -> usize {
        self.label[agent]
    }

    pub fn same_cluster(&self, u: usize, v: usize) -> bool {
        self.label[u] == self.label[v]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScheduleMode {
    Sync,
    /// Intra-cluster edges fire every iteration; inter-cluster edges only when
    /// `k mod period == 0`.
    Async {
        partition: ClusterPartition,
        period: usize,
    },
}

/// When a particular agent fails to compute or share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SkipRule {
    /// Skips whenever `k mod period == phase`.
    EveryNth { period: usize, phase: usize },
    /// Skips exactly at the listed iterations.
    At(BTreeSet<usize>),
    /// Skips independently with the given probability, reproducibly from `seed`.
    Random { probability: f64, seed: u64 },
}

impl SkipRule {
    pub fn skips(&self, agent: usize, k: usize) -> bool {
        match self {
            SkipRule::EveryNth { period, phase } => *period > 0 && k % period == *phase,
            SkipRule::At(set) => set.contains(&k),
            SkipRule::Random { probability, seed } => {
                // One independent stream per agent and a fixed word position per
                // iteration, so the draw does not depend on query order.
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(agent as u64);
                rng.set_word_pos(k as u128 * 2);
                rng.random::<f64>() < *probability
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StragglerProfile {
    pub rules: BTreeMap<usize, SkipRule>,
}

impl StragglerProfile {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with(mut self, agent: usize, rule: SkipRule) -> Self {
        self.rules.insert(agent, rule);
        self
    }

    pub fn is_skipping(&self, agent: usize, k: usize) -> bool {
        self.rules.get(&agent).is_some_and(|r| r.skips(agent, k))
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Which edges carry messages at which iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExchangeSchedule {
    pub mode: ScheduleMode,
    pub stragglers: StragglerProfile,
}

impl ExchangeSchedule {
    pub fn sync() -> Self {
        Self {
            mode: ScheduleMode::Sync,
            stragglers: StragglerProfile::none(),
        }
    }

    pub fn asynchronous(partition: ClusterPartition, period: usize) -> Result<Self, NetworkError> {
        if period == 0 {
            return Err(NetworkError::InvalidSpec("inter-cluster period must be >= 1".into()));
        }
        Ok(Self {
            mode: ScheduleMode::Async { partition, period },
            stragglers: StragglerProfile::none(),
        })
    }

    pub fn with_stragglers(mut self, stragglers: StragglerProfile) -> Self {
        self.stragglers = stragglers;
        self
    }

    pub fn is_skipping(&self, agent: usize, k: usize) -> bool {
        self.stragglers.is_skipping(agent, k)
    }

    /// Agents whose ids fall outside the topology are rejected here so the
    /// solver can trust the schedule afterwards.
    pub fn check_against(&self, topology: &Topology) -> Result<(), NetworkError> {
        let n = topology.n_agents();
        if let ScheduleMode::Async { partition, .. } = &self.mode {
            if partition.label.len() != n {
                return Err(NetworkError::InvalidPartition(format!(
                    "partition covers {} agents, topology has {n}",
                    partition.label.len()
                )));
            }
        }
        if let Some(&a) = self.stragglers.rules.keys().find(|&&a| a >= n) {
            return Err(NetworkError::UnknownAgent(a));
        }
        Ok(())
    }
}

/// A directed `sender → receiver` message slot.
pub type Exchange = (usize, usize);

/// Directed exchanges active at iteration `k`.
pub fn active_exchanges(schedule: &ExchangeSchedule, topology: &Topology, k: usize) -> BTreeSet<Exchange> {
    let mut out = BTreeSet::new();
    for &(u, v) in topology.edges() {
        let fires = match &schedule.mode {
            ScheduleMode::Sync => true,
            ScheduleMode::Async { partition, period } => partition.same_cluster(u, v) || k.is_multiple_of(*period),
        };
        if !fires || schedule.is_skipping(u, k) || schedule.is_skipping(v, k) {
            continue;
        }
        out.insert((u, v));
        out.insert((v, u));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_topology, TopologySpec};

    fn ring3() -> Topology {
        build_topology(&TopologySpec::Ring(3)).unwrap()
    }

    fn clustered(period: usize) -> ExchangeSchedule {
        let p = ClusterPartition::parse(3, "0,1;2").unwrap();
        ExchangeSchedule::asynchronous(p, period).unwrap()
    }

    #[test]
    fn sync_ring_fires_everything() {
        for k in [0, 1, 17] {
            assert_eq!(active_exchanges(&ExchangeSchedule::sync(), &ring3(), k).len(), 6);
        }
    }

    #[test]
    fn async_off_phase_keeps_only_intra_cluster() {
        let got = active_exchanges(&clustered(3), &ring3(), 1);
        let expected: BTreeSet<_> = [(0, 1), (1, 0)].into_iter().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn async_on_phase_fires_everything() {
        assert_eq!(active_exchanges(&clustered(3), &ring3(), 3).len(), 6);
        assert_eq!(active_exchanges(&clustered(3), &ring3(), 0).len(), 6);
    }

    #[test]
    fn single_cluster_period_one_matches_sync() {
        let t = build_topology(&TopologySpec::Ring(5)).unwrap();
        let a = ExchangeSchedule::asynchronous(ClusterPartition::single(5), 1).unwrap();
        for k in 0..20 {
            assert_eq!(
                active_exchanges(&a, &t, k),
                active_exchanges(&ExchangeSchedule::sync(), &t, k)
            );
        }
    }

    #[test]
    fn straggler_drops_all_its_edges() {
        let s = ExchangeSchedule::sync()
            .with_stragglers(StragglerProfile::none().with(0, SkipRule::EveryNth { period: 10, phase: 9 }));
        let at9 = active_exchanges(&s, &ring3(), 9);
        assert_eq!(at9.len(), 2);
        assert!(at9.iter().all(|&(a, b)| a != 0 && b != 0));
        assert_eq!(active_exchanges(&s, &ring3(), 10).len(), 6);
    }

    #[test]
    fn random_skips_are_reproducible() {
        let rule = SkipRule::Random {
            probability: 0.3,
            seed: 42,
        };
        let first: Vec<bool> = (0..200).map(|k| rule.skips(2, k)).collect();
        let second: Vec<bool> = (0..200).rev().map(|k| rule.skips(2, k)).rev().collect();
        assert_eq!(first, second);
        let hits = first.iter().filter(|&&b| b).count();
        assert!((30..90).contains(&hits), "{hits}");
        let other: Vec<bool> = (0..200).map(|k| rule.skips(3, k)).collect();
        assert_ne!(first, other);
    }

    #[test]
    fn partition_must_be_exact_cover() {
        assert!(ClusterPartition::parse(3, "0,1").is_err());
        assert!(ClusterPartition::parse(3, "0,1;1,2").is_err());
        assert!(ClusterPartition::parse(3, "0,1;2,9").is_err());
        assert!(ClusterPartition::parse(3, "0;x").is_err());
        let p = ClusterPartition::parse(4, "0,1;2,3").unwrap();
        assert!(p.same_cluster(2, 3));
        assert!(!p.same_cluster(1, 2));
        assert!(ExchangeSchedule::asynchronous(p, 0).is_err());
    }
}
