use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{InstanceError, Range};
use crate::model::{
    validate_instance, Agent, CouplingConstraint, CouplingKind, LocalBox, ProblemInstance, QuadraticCost, Term,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnergySpec {
    /// One requirement per store.
    Fixed(Vec<f64>),
    /// Sampled per store.
    Sampled(Range),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// `Σ E / n_slots` in every slot.
    Flat,
    Profile(Vec<f64>),
}

/// Slots in which a store cannot consume (e.g. a defrost cycle or a closure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutageSpec {
    None,
    /// Unavailable slots per store.
    Explicit(Vec<BTreeSet<usize>>),
    /// One contiguous window per store, of length `0..=max_len` at a seeded start.
    RandomWindows {
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSchedParams {
    pub n_stores: usize,
    pub n_slots: usize,
    pub energy: EnergySpec,
    pub target: TargetSpec,
    /// Per-slot consumption bound `0 ≤ x ≤ slot_upper`; infinite allowed.
    pub slot_upper: f64,
    pub outages: OutageSpec,
    /// Weight of the per-store flatness preference.
    pub weight: f64,
    pub seed: u64,
}

impl LoadSchedParams {
    pub fn flat(n_stores: usize, n_slots: usize, energy: Vec<f64>, slot_upper: f64) -> Self {
        Self {
            n_stores,
            n_slots,
            energy: EnergySpec::Fixed(energy),
            target: TargetSpec::Flat,
            slot_upper,
            outages: OutageSpec::None,
            weight: 1.0,
            seed: 0,
        }
    }
}

/// Store `k` is agent `k` with one variable per slot and cost
/// `w · Σ_t (x_{k,t} − E_k/n_slots)²`. Couplings, in order:
///
/// * one single-agent row per store, `Σ_t x_{k,t} = E_k`;
/// * one cross-agent row per slot, `Σ_k x_{k,t} = P_t`, except the last one,
///   which the others imply (keeping it would make the KKT matrix singular).
///
/// Unavailable `(store, slot)` pairs become variables fixed at zero. They are
/// left out of their store's row but kept in the slot row (with a zero value
/// they change nothing there, and every slot row then reaches every store).
/// Slots nobody can serve (with a zero target) get no row.
pub fn gen_load_scheduling(params: &LoadSchedParams) -> Result<ProblemInstance, InstanceError> {
    let bad = |m: String| Err(InstanceError::InvalidParams(m));
    let (n, t_count) = (params.n_stores, params.n_slots);
    if n == 0 || t_count == 0 {
        return bad("need at least one store and one slot".into());
    }
    if !(params.weight > 0.0 && params.weight.is_finite()) {
        return bad("weight must be positive and finite".into());
    }
    if params.slot_upper.is_nan() || params.slot_upper < 0.0 {
        return bad("slot_upper must be non-negative".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let energy: Vec<f64> = match &params.energy {
        EnergySpec::Fixed(e) if e.len() == n => e.clone(),
        EnergySpec::Fixed(e) => return bad(format!("{} energies for {n} stores", e.len())),
        EnergySpec::Sampled(r) if r.is_valid() => (0..n).map(|_| r.sample(&mut rng)).collect(),
        EnergySpec::Sampled(_) => return bad("invalid energy range".into()),
    };
    if energy.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
        return bad("energies must be finite and non-negative".into());
    }

    let unavailable: Vec<BTreeSet<usize>> = match &params.outages {
        OutageSpec::None => vec![BTreeSet::new(); n],
        OutageSpec::Explicit(sets) if sets.len() == n && sets.iter().flatten().all(|&t| t < t_count) => sets.clone(),
        OutageSpec::Explicit(_) => return bad("outage sets must list valid slots for every store".into()),
        OutageSpec::RandomWindows { max_len } => (0..n)
            .map(|_| {
                let len = rng.random_range(0..=*max_len.min(&(t_count - 1)));
                let start = rng.random_range(0..t_count);
                (0..len).map(|d| (start + d) % t_count).collect()
            })
            .collect(),
    };

    let total: f64 = energy.iter().sum();
    let target: Vec<f64> = match &params.target {
        TargetSpec::Flat => vec![total / t_count as f64; t_count],
        TargetSpec::Profile(p) if p.len() == t_count => p.clone(),
        TargetSpec::Profile(p) => return bad(format!("target has {} slots, expected {t_count}", p.len())),
    };
    if target.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return bad("target must be finite and non-negative".into());
    }
    let target_total: f64 = target.iter().sum();
    if (target_total - total).abs() > 1e-9 * (1.0 + total.abs()) {
        return Err(InstanceError::Infeasible(format!(
            "energy total {total} differs from target total {target_total}"
        )));
    }
    if !transport_feasible(&energy, &target, &unavailable, params.slot_upper) {
        return Err(InstanceError::Infeasible(
            "no schedule meets every energy requirement and the target within the slot bounds".into(),
        ));
    }

    let w = params.weight;
    let agents: Vec<Agent> = (0..n)
        .map(|k| {
            let m = energy[k] / t_count as f64;
            let costs = vec![QuadraticCost::new(w, -2.0 * w * m, w * m * m); t_count];
            let mut bounds = LocalBox::uniform(t_count, 0.0, params.slot_upper);
            for &t in &unavailable[k] {
                bounds.upper[t] = 0.0;
            }
            Agent::new(k, costs, bounds)
        })
        .collect();

    let mut couplings = Vec::new();
    for k in 0..n {
        let terms: Vec<Term> = (0..t_count)
            .filter(|t| !unavailable[k].contains(t))
            .map(|t| Term::new(k, t, 1.0))
            .collect();
        if terms.is_empty() {
            // Infeasibility of a positive requirement was caught by the flow check.
            continue;
        }
        couplings.push(CouplingConstraint::with_equal_shares(
            CouplingKind::Equality,
            terms,
            energy[k],
        ));
    }
    let store_rows: Vec<usize> = (0..couplings.len()).collect();
    let mut slot_rows = Vec::new();
    for (t, &p) in target.iter().enumerate() {
        // Every store stays on the row, including those fixed at zero in this
        // slot, so that the slot's multiplier can be relayed through them.
        if (0..n).all(|k| unavailable[k].contains(&t)) {
            continue;
        }
        let terms: Vec<Term> = (0..n).map(|k| Term::new(k, t, 1.0)).collect();
        slot_rows.push(CouplingConstraint::with_equal_shares(CouplingKind::Equality, terms, p));
    }
    slot_rows.pop();
    couplings.extend(slot_rows);

    let instance = ProblemInstance::new(agents, couplings).with_metadata(json!({
        "family": "loadsched",
        "n_stores": n,
        "n_slots": t_count,
        "energy": energy,
        "target": target,
        "unavailable": unavailable,
        "store_rows": store_rows,
        "seed": params.seed,
    }));
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        return Err(InstanceError::Invalid(violations));
    }
    Ok(instance)
}

/// Max-flow check: source → store (capacity E_k) → available slot
/// (`slot_upper`) → sink (P_t). Feasible iff the flow saturates every E_k.
fn transport_feasible(energy: &[f64], target: &[f64], unavailable: &[BTreeSet<usize>], slot_upper: f64) -> bool {
    let (n, t_count) = (energy.len(), target.len());
    let (source, sink) = (n + t_count, n + t_count + 1);
    let size = n + t_count + 2;
    let mut cap = vec![vec![0.0_f64; size]; size];
    for k in 0..n {
        cap[source][k] = energy[k];
        for t in 0..t_count {
            if !unavailable[k].contains(&t) {
                cap[k][n + t] = slot_upper;
            }
        }
    }
    for t in 0..t_count {
        cap[n + t][sink] = target[t];
    }
    let total: f64 = energy.iter().sum();
    let eps = 1e-12 * (1.0 + total);

    // Edmonds–Karp on the dense residual graph.
    let mut flow = 0.0;
    loop {
        let mut parent = vec![usize::MAX; size];
        parent[source] = source;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for v in 0..size {
                if parent[v] == usize::MAX && cap[u][v] > eps {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if parent[sink] == usize::MAX {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = sink;
        while v != source {
            bottleneck = bottleneck.min(cap[parent[v]][v]);
            v = parent[v];
        }
        if !bottleneck.is_finite() {
            return true;
        }
        let mut v = sink;
        while v != source {
            let u = parent[v];
            cap[u][v] -= bottleneck;
            cap[v][u] += bottleneck;
            v = u;
        }
        flow += bottleneck;
    }
    flow >= total - 1e-9 * (1.0 + total)
}
