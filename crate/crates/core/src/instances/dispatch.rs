use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::InstanceError;
use crate::model::{
    validate_instance, Agent, CouplingConstraint, CouplingKind, LocalBox, ProblemInstance, QuadraticCost, Term,
};

/// Closed interval sampled uniformly; `lo == hi` yields a constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn constant(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub(crate) fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchParams {
    pub n_agents: usize,
    /// Quadratic cost coefficients; must satisfy `a.lo > 0`.
    pub a: Range,
    pub b: Range,
    /// Per-agent `a` values overriding the sampled ones.
    pub fixed_a: Option<Vec<f64>>,
    /// Probability that an agent gets a finite box.
    pub bounded_fraction: f64,
    pub lower: Range,
    pub upper: Range,
    pub total_demand: f64,
    pub seed: u64,
}

impl DispatchParams {
    /// Unbounded agents with `a = 1`, `b = 0`.
    pub fn simple(n_agents: usize, total_demand: f64, seed: u64) -> Self {
        Self {
            n_agents,
            a: Range::constant(1.0),
            b: Range::constant(0.0),
            fixed_a: None,
            bounded_fraction: 0.0,
            lower: Range::constant(0.0),
            upper: Range::constant(0.0),
            total_demand,
            seed,
        }
    }

    fn check(&self) -> Result<(), InstanceError> {
        let bad = |m: &str| Err(InstanceError::InvalidParams(m.into()));
        if self.n_agents == 0 {
            return bad("n_agents must be at least 1");
        }
        if !(self.a.is_valid() && self.b.is_valid() && self.lower.is_valid() && self.upper.is_valid()) {
            return bad("every range needs finite lo <= hi");
        }
        if self.a.lo <= 0.0 {
            return bad("quadratic coefficients must be strictly positive");
        }
        if let Some(a) = &self.fixed_a {
            if a.len() != self.n_agents || a.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return bad("fixed_a needs one positive finite value per agent");
            }
        }
        if !(0.0..=1.0).contains(&self.bounded_fraction) {
            return bad("bounded_fraction must lie in [0, 1]");
        }
        if self.bounded_fraction > 0.0 && self.upper.lo < self.lower.hi {
            return bad("upper range must lie above the lower range");
        }
        if !self.total_demand.is_finite() {
            return bad("total_demand must be finite");
        }
        Ok(())
    }
}

/// Seeded dispatch instance: one variable per agent, one balance row with
/// equal owner shares. Rejects parameterizations whose sampled boxes cannot
/// meet the demand.
pub fn gen_dispatch(params: &DispatchParams) -> Result<ProblemInstance, InstanceError> {
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut agents = Vec::with_capacity(params.n_agents);
    for i in 0..params.n_agents {
        // Draw in a fixed order so every field consumes the stream identically.
        let a = params.a.sample(&mut rng);
        let b = params.b.sample(&mut rng);
        let bounded = rng.random::<f64>() < params.bounded_fraction;
        let lo = params.lower.sample(&mut rng);
        let hi = params.upper.sample(&mut rng);
        let a = params.fixed_a.as_ref().map_or(a, |f| f[i]);
        let bounds = if bounded {
            LocalBox::uniform(1, lo, hi)
        } else {
            LocalBox::unbounded(1)
        };
        agents.push(Agent::new(i, vec![QuadraticCost::new(a, b, 0.0)], bounds));
    }

    let min: f64 = agents.iter().map(|a| a.bounds.lower[0]).sum();
    let max: f64 = agents.iter().map(|a| a.bounds.upper[0]).sum();
    if !(min <= params.total_demand && params.total_demand <= max) {
        return Err(InstanceError::Infeasible(format!(
            "demand {} outside achievable range [{min}, {max}]",
            params.total_demand
        )));
    }

    let terms = (0..params.n_agents).map(|i| Term::new(i, 0, 1.0)).collect();
    let balance = CouplingConstraint::with_equal_shares(CouplingKind::Equality, terms, params.total_demand);
    let instance = ProblemInstance::new(agents, vec![balance]).with_metadata(json!({
        "family": "dispatch",
        "n_agents": params.n_agents,
        "total_demand": params.total_demand,
        "seed": params.seed,
    }));
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        return Err(InstanceError::Invalid(violations));
    }
    Ok(instance)
}
