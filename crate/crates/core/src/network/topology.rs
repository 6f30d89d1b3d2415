use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetworkError;

const MAX_CONNECT_ATTEMPTS: usize = 1000;

/// Undirected communication graph over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Topology {
    n_agents: usize,
    /// Normalized `(min, max)` pairs.
    edges: BTreeSet<(usize, usize)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_edges(n_agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, NetworkError> {
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(NetworkError::SelfLoop(u));
            }
            if u >= n_agents || v >= n_agents {
                return Err(NetworkError::UnknownAgent(u.max(v)));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut adjacency = vec![Vec::new(); n_agents];
        for &(u, v) in &set {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Self {
            n_agents,
            edges: set,
            adjacency,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    /// Neighbour set Ω_i, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn is_connected(&self) -> bool {
        self.is_connected_within(&(0..self.n_agents).collect())
    }

    /// Whether the subgraph induced by `members` is connected. Empty and
    /// singleton sets count as connected.
    pub fn is_connected_within(&self, members: &BTreeSet<usize>) -> bool {
        let Some(&start) = members.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if members.contains(&v) && seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen.len() == members.len()
    }
}

/// Topology family, parsed from `ring:N`, `star:N` or `rand:N:P:SEED`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TopologySpec {
    Ring(usize),
    Star(usize),
    RandomConnected { n: usize, edge_prob: f64, seed: u64 },
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologySpec::Ring(n) => write!(f, "ring:{n}"),
            TopologySpec::Star(n) => write!(f, "star:{n}"),
            TopologySpec::RandomConnected { n, edge_prob, seed } => {
                write!(f, "rand:{n}:{edge_prob}:{seed}")
            }
        }
    }
}

impl FromStr for TopologySpec {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetworkError::InvalidSpec(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        let int = |p: &str| p.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["ring", n] => Ok(TopologySpec::Ring(int(n)?)),
            ["star", n] => Ok(TopologySpec::Star(int(n)?)),
            ["rand", n, p, seed] => Ok(TopologySpec::RandomConnected {
                n: int(n)?,
                edge_prob: p.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, NetworkError> {
    match *spec {
        TopologySpec::Ring(n) => {
            check_n(n)?;
            let edges: Vec<(usize, usize)> = match n {
                1 => vec![],
                2 => vec![(0, 1)],
                _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            };
            Topology::from_edges(n, edges)
        }
        TopologySpec::Star(n) => {
            check_n(n)?;
            Topology::from_edges(n, (1..n).map(|i| (0, i)))
        }
        TopologySpec::RandomConnected { n, edge_prob, seed } => {
            check_n(n)?;
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                return Err(NetworkError::InvalidSpec(format!(
                    "edge probability {edge_prob} outside (0, 1]"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..MAX_CONNECT_ATTEMPTS {
                let mut edges = Vec::new();
                for u in 0..n {
                    for v in u + 1..n {
                        if rng.random::<f64>() < edge_prob {
                            edges.push((u, v));
                        }
                    }
                }
                let t = Topology::from_edges(n, edges)?;
                if t.is_connected() {
                    return Ok(t);
                }
            }
            Err(NetworkError::Unconnectable {
                attempts: MAX_CONNECT_ATTEMPTS,
            })
        }
    }
}

fn check_n(n: usize) -> Result<(), NetworkError> {
    if n == 0 {
        Err(NetworkError::InvalidSpec("topology needs at least one agent".into()))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_three() {
        let t = build_topology(&TopologySpec::Ring(3)).unwrap();
        let expected: BTreeSet<_> = [(0, 1), (1, 2), (0, 2)].into_iter().collect();
        assert_eq!(t.edges(), &expected);
        assert!(t.has_edge(2, 0));
    }

    #[test]
    fn star_four() {
        let t = build_topology(&TopologySpec::Star(4)).unwrap();
        assert_eq!(t.edges().len(), 3);
        assert_eq!(t.degree(0), 3);
        assert_eq!(t.max_degree(), 3);
    }

    #[test]
    fn random_is_deterministic_and_connected() {
        let spec = TopologySpec::RandomConnected {
            n: 5,
            edge_prob: 0.5,
            seed: 7,
        };
        let a = build_topology(&spec).unwrap();
        let b = build_topology(&spec).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert!(a.is_connected());
    }

    #[test]
    fn random_gives_up_when_connectivity_is_hopeless() {
        let spec = TopologySpec::RandomConnected {
            n: 60,
            edge_prob: 1e-6,
            seed: 1,
        };
        assert!(matches!(build_topology(&spec), Err(NetworkError::Unconnectable { .. })));
    }

    #[test]
    fn parse_specs() {
        assert_eq!("ring:4".parse::<TopologySpec>().unwrap(), TopologySpec::Ring(4));
        assert_eq!("star:2".parse::<TopologySpec>().unwrap(), TopologySpec::Star(2));
        assert_eq!(
            "rand:5:0.5:7".parse::<TopologySpec>().unwrap(),
            TopologySpec::RandomConnected {
                n: 5,
                edge_prob: 0.5,
                seed: 7
            }
        );
        assert!("mesh:3".parse::<TopologySpec>().is_err());
        assert!("ring:x".parse::<TopologySpec>().is_err());
        assert_eq!(TopologySpec::Ring(4).to_string(), "ring:4");
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(
            Topology::from_edges(3, [(1, 1)]),
            Err(NetworkError::SelfLoop(1))
        ));
        assert!(build_topology(&TopologySpec::Ring(0)).is_err());
        let split = Topology::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(!split.is_connected());
        assert!(split.is_connected_within(&[0, 1].into_iter().collect()));
    }

    #[test]
    fn ring_edge_cases() {
        assert!(build_topology(&TopologySpec::Ring(1)).unwrap().edges().is_empty());
        assert_eq!(build_topology(&TopologySpec::Ring(2)).unwrap().edges().len(), 1);
    }
}
