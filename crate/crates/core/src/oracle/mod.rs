//! Centralized reference solvers for small instances.
//!
//! [`solve_equality_qp`] solves the KKT system of an equality-only problem
//! directly. [`solve_box_qp`] enumerates active sets of inequality couplings
//! and finite bounds, solving the equality-reduced system for each.
//! [`grid_search_oracle`] is an independent brute-force check.
//!
//! Variables with `lower == upper` are treated as fixed: they are always
//! pinned and never enumerated.

mod linalg;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{evaluate_objective, validate_instance, CouplingKind, ModelError, ProblemInstance, Violation};

pub use linalg::{residual_max, solve_dense};

/// Largest number of enumerable constraints (inequalities plus finite bounds).
pub const MAX_CANDIDATES: usize = 20;
/// Largest grid the brute-force oracle will visit.
pub const MAX_GRID_POINTS: u64 = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unsupported instance: {0}")]
    Unsupported(String),
    #[error("degenerate instance: {0}")]
    Degenerate(String),
    #[error("no feasible point exists")]
    Infeasible,
    #[error("{candidates} candidate constraints exceed the enumeration limit of {limit}")]
    TooLarge { candidates: usize, limit: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<Vec<Violation>> for OracleError {
    fn from(v: Vec<Violation>) -> Self {
        OracleError::Invalid(v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualitySolution {
    pub x: Vec<f64>,
    /// Indexed like [`ProblemInstance::equality_indices`].
    pub lambda: Vec<f64>,
    pub objective: f64,
    /// `max |K·z − r|` of the KKT linear solve.
    pub linear_residual: f64,
}

/// An enumerable constraint of [`solve_box_qp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ActiveConstraint {
    Inequality { coupling: usize },
    Lower { agent: usize, var: usize },
    Upper { agent: usize, var: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxMultiplier {
    pub constraint: ActiveConstraint,
    /// Non-negative multiplier of the bound written as `g ≤ 0`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSolution {
    pub x: Vec<f64>,
    /// Indexed like [`ProblemInstance::equality_indices`].
    pub lambda: Vec<f64>,
    /// Indexed like [`ProblemInstance::inequality_indices`]; zero when inactive.
    pub mu: Vec<f64>,
    pub active_set: Vec<ActiveConstraint>,
    pub box_multipliers: Vec<BoxMultiplier>,
    /// Active constraints with a zero multiplier and inactive ones that are
    /// nonetheless tight: strict complementarity fails for these.
    pub degenerate: Vec<ActiveConstraint>,
    pub objective: f64,
    pub linear_residual: f64,
}

struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
}

struct Problem<'a> {
    instance: &'a ProblemInstance,
    hess: Vec<f64>,
    grad0: Vec<f64>,
    /// Global index → (agent, var).
    owner: Vec<(usize, usize)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(instance: &'a ProblemInstance) -> Result<Self, OracleError> {
        let violations = validate_instance(instance);
        if !violations.is_empty() {
            return Err(violations.into());
        }
        let mut p = Problem {
            instance,
            hess: Vec::new(),
            grad0: Vec::new(),
            owner: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        };
        for (i, agent) in instance.agents.iter().enumerate() {
            for (v, c) in agent.costs.iter().enumerate() {
                p.hess.push(2.0 * c.a);
                p.grad0.push(c.b);
                p.owner.push((i, v));
                p.lower.push(agent.bounds.lower[v]);
                p.upper.push(agent.bounds.upper[v]);
            }
        }
        Ok(p)
    }

    fn n(&self) -> usize {
        self.hess.len()
    }

    fn is_fixed(&self, g: usize) -> bool {
        self.lower[g] == self.upper[g]
    }

    fn coupling_row(&self, j: usize) -> Row {
        let layout = self.instance.layout();
        let c = &self.instance.couplings[j];
        Row {
            coeffs: c
                .terms
                .iter()
                .map(|t| (layout.index(t.agent, t.var), t.coeff))
                .collect(),
            rhs: c.rhs,
        }
    }

    fn candidate_row(&self, c: ActiveConstraint) -> Row {
        let layout = self.instance.layout();
        match c {
            ActiveConstraint::Inequality { coupling } => self.coupling_row(coupling),
            ActiveConstraint::Lower { agent, var } => Row {
                coeffs: vec![(layout.index(agent, var), -1.0)],
                rhs: -self.lower[layout.index(agent, var)],
            },
            ActiveConstraint::Upper { agent, var } => Row {
                coeffs: vec![(layout.index(agent, var), 1.0)],
                rhs: self.upper[layout.index(agent, var)],
            },
        }
    }

    fn fixed_rows(&self) -> Vec<Row> {
        (0..self.n())
            .filter(|&g| self.is_fixed(g))
            .map(|g| Row {
                coeffs: vec![(g, 1.0)],
                rhs: self.lower[g],
            })
            .collect()
    }

    /// Solves `[H Rᵀ; R 0][x; ν] = [−b; r]`.
    fn solve(&self, rows: &[&Row]) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let n = self.n();
        let m = rows.len();
        let mut k = vec![vec![0.0; n + m]; n + m];
        let mut r = vec![0.0; n + m];
        for g in 0..n {
            k[g][g] = self.hess[g];
            r[g] = -self.grad0[g];
        }
        for (q, row) in rows.iter().enumerate() {
            for &(g, a) in &row.coeffs {
                k[n + q][g] += a;
                k[g][n + q] += a;
            }
            r[n + q] = row.rhs;
        }
        let z = solve_dense(&k, &r)?;
        let res = residual_max(&k, &z, &r);
        Some((z[..n].to_vec(), z[n..].to_vec(), res))
    }

    fn value(&self, row: &Row, x: &[f64]) -> f64 {
        row.coeffs.iter().map(|&(g, a)| a * x[g]).sum::<f64>() - row.rhs
    }

    fn scale(&self, row: &Row, x: &[f64]) -> f64 {
        1.0 + row.rhs.abs() + row.coeffs.iter().map(|&(g, a)| (a * x[g]).abs()).sum::<f64>()
    }
}

const FEAS_RTOL: f64 = 1e-9;

pub fn solve_equality_qp(instance: &ProblemInstance) -> Result<EqualitySolution, OracleError> {
    let p = Problem::new(instance)?;
    if instance.couplings.iter().any(|c| c.kind == CouplingKind::Inequality) {
        return Err(OracleError::Unsupported(
            "inequality couplings need solve_box_qp".into(),
        ));
    }
    if p.lower.iter().chain(&p.upper).any(|b| b.is_finite()) {
        return Err(OracleError::Unsupported("finite bounds need solve_box_qp".into()));
    }
    let rows: Vec<Row> = instance
        .equality_indices()
        .into_iter()
        .map(|j| p.coupling_row(j))
        .collect();
    let refs: Vec<&Row> = rows.iter().collect();
    let (x, lambda, linear_residual) = p
        .solve(&refs)
        .ok_or_else(|| OracleError::Degenerate("KKT matrix is singular".into()))?;
    Ok(EqualitySolution {
        objective: evaluate_objective(instance, &x)?,
        x,
        lambda,
        linear_residual,
    })
}

/// Exact solution of the full problem by active-set enumeration.
///
/// Subsets are tried in order of size, then lexicographically. The
/// unconstrained-by-bounds candidate is always tried first. Beyond
/// [`MAX_CANDIDATES`] the enumeration is replaced by a primal-dual active-set
/// iteration; its answer passes the same optimality check as an enumerated
/// one, and [`OracleError::TooLarge`] is returned if it cycles or stalls.
pub fn solve_box_qp(instance: &ProblemInstance) -> Result<BoxSolution, OracleError> {
    let p = Problem::new(instance)?;
    let mut candidates = Vec::new();
    for j in instance.inequality_indices() {
        candidates.push(ActiveConstraint::Inequality { coupling: j });
    }
    for g in 0..p.n() {
        if p.is_fixed(g) {
            continue;
        }
        let (agent, var) = p.owner[g];
        if p.lower[g].is_finite() {
            candidates.push(ActiveConstraint::Lower { agent, var });
        }
        if p.upper[g].is_finite() {
            candidates.push(ActiveConstraint::Upper { agent, var });
        }
    }

    let mut base: Vec<Row> = instance
        .equality_indices()
        .into_iter()
        .map(|j| p.coupling_row(j))
        .collect();
    let n_eq = base.len();
    base.extend(p.fixed_rows());
    let cand_rows: Vec<Row> = candidates.iter().map(|&c| p.candidate_row(c)).collect();

    let mut saw_nonsingular = false;
    for size in 0..=candidates.len() {
        if size > 0 && candidates.len() > MAX_CANDIDATES {
            if let Some(sol) = active_set_iteration(&p, &candidates, &cand_rows, &base, n_eq)? {
                return Ok(sol);
            }
            return Err(OracleError::TooLarge {
                candidates: candidates.len(),
                limit: MAX_CANDIDATES,
            });
        }
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            if !has_opposite_bounds(&candidates, &combo) {
                let mut rows: Vec<&Row> = base.iter().collect();
                rows.extend(combo.iter().map(|&c| &cand_rows[c]));
                if let Some((x, nu, res)) = p.solve(&rows) {
                    saw_nonsingular = true;
                    if let Some(sol) = accept(&p, &candidates, &cand_rows, &combo, n_eq, x, nu, res)? {
                        return Ok(sol);
                    }
                }
            }
            if !next_combination(&mut combo, candidates.len()) {
                break;
            }
        }
    }
    if saw_nonsingular {
        Err(OracleError::Infeasible)
    } else {
        Err(OracleError::Degenerate(
            "every active-set KKT system is singular".into(),
        ))
    }
}

#[allow(clippy::too_many_arguments)]
fn accept(
    p: &Problem,
    candidates: &[ActiveConstraint],
    cand_rows: &[Row],
    combo: &[usize],
    n_eq: usize,
    mut x: Vec<f64>,
    nu: Vec<f64>,
    linear_residual: f64,
) -> Result<Option<BoxSolution>, OracleError> {
    let n_base = nu.len() - combo.len();
    let active_mult = &nu[n_base..];
    let mult_scale = 1.0 + nu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if active_mult.iter().any(|&m| m < -FEAS_RTOL * mult_scale) {
        return Ok(None);
    }
    let mut degenerate = Vec::new();
    for (idx, (&constraint, row)) in candidates.iter().zip(cand_rows).enumerate() {
        if combo.contains(&idx) {
            continue;
        }
        let g = p.value(row, &x);
        let tol = FEAS_RTOL * p.scale(row, &x);
        if g > tol {
            return Ok(None);
        }
        if g.abs() <= tol {
            degenerate.push(constraint);
        }
    }
    for (&c, &m) in combo.iter().zip(active_mult) {
        if m.abs() <= FEAS_RTOL * mult_scale {
            degenerate.push(candidates[c]);
        }
    }
    degenerate.sort();

    // Snap bound-active and fixed variables onto their bounds exactly.
    let layout = p.instance.layout();
    for (g, xg) in x.iter_mut().enumerate() {
        if p.is_fixed(g) {
            *xg = p.lower[g];
        }
    }
    for &c in combo {
        match candidates[c] {
            ActiveConstraint::Lower { agent, var } => x[layout.index(agent, var)] = p.lower[layout.index(agent, var)],
            ActiveConstraint::Upper { agent, var } => x[layout.index(agent, var)] = p.upper[layout.index(agent, var)],
            ActiveConstraint::Inequality { .. } => {}
        }
    }
    for (g, xg) in x.iter_mut().enumerate() {
        *xg = xg.clamp(p.lower[g], p.upper[g]);
    }

    let ineq = p.instance.inequality_indices();
    let mut mu = vec![0.0; ineq.len()];
    let mut box_multipliers = Vec::new();
    let mut active_set = Vec::new();
    for (&c, &m) in combo.iter().zip(active_mult) {
        let m = m.max(0.0);
        active_set.push(candidates[c]);
        match candidates[c] {
            ActiveConstraint::Inequality { coupling } => {
                let pos = ineq.iter().position(|&j| j == coupling).expect("inequality index");
                mu[pos] = m;
            }
            constraint => box_multipliers.push(BoxMultiplier { constraint, value: m }),
        }
    }
    Ok(Some(BoxSolution {
        objective: evaluate_objective(p.instance, &x)?,
        x,
        lambda: nu[..n_eq].to_vec(),
        mu,
        active_set,
        box_multipliers,
        degenerate,
        linear_residual,
    }))
}

/// Primal-dual active-set iteration: release active constraints with a
/// negative multiplier, activate violated ones, stop at a certified optimum.
fn active_set_iteration(
    p: &Problem,
    candidates: &[ActiveConstraint],
    cand_rows: &[Row],
    base: &[Row],
    n_eq: usize,
) -> Result<Option<BoxSolution>, OracleError> {
    let opposite = |c: ActiveConstraint| match c {
        ActiveConstraint::Lower { agent, var } => Some(ActiveConstraint::Upper { agent, var }),
        ActiveConstraint::Upper { agent, var } => Some(ActiveConstraint::Lower { agent, var }),
        ActiveConstraint::Inequality { .. } => None,
    };
    let index: BTreeMap<ActiveConstraint, usize> = candidates.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut active: BTreeSet<usize> = BTreeSet::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    while seen.insert(active.iter().copied().collect()) {
        let combo: Vec<usize> = active.iter().copied().collect();
        let mut rows: Vec<&Row> = base.iter().collect();
        rows.extend(combo.iter().map(|&c| &cand_rows[c]));
        let Some((x, nu, res)) = p.solve(&rows) else {
            return Ok(None);
        };
        let mult = &nu[nu.len() - combo.len()..];
        let mult_scale = 1.0 + nu.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut next: BTreeSet<usize> = combo
            .iter()
            .zip(mult)
            .filter(|&(_, &m)| m >= -FEAS_RTOL * mult_scale)
            .map(|(&c, _)| c)
            .collect();
        for (idx, row) in cand_rows.iter().enumerate() {
            if !active.contains(&idx) && p.value(row, &x) > FEAS_RTOL * p.scale(row, &x) {
                if let Some(o) = opposite(candidates[idx]) {
                    next.remove(&index[&o]);
                }
                next.insert(idx);
            }
        }
        if next == active {
            return accept(p, candidates, cand_rows, &combo, n_eq, x, nu, res);
        }
        active = next;
    }
    Ok(None)
}

fn has_opposite_bounds(candidates: &[ActiveConstraint], combo: &[usize]) -> bool {
    combo.iter().any(|&a| {
        combo.iter().any(|&b| {
            matches!((candidates[a], candidates[b]),
                (ActiveConstraint::Lower { agent: i, var: v }, ActiveConstraint::Upper { agent: k, var: w })
                    if i == k && v == w)
        })
    })
}

/// Advances `combo` to the next `k`-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Exhaustive search over the grid `lower + i·resolution` of every variable,
/// keeping points whose couplings hold within one grid step. Returns the
/// first strict minimum in lexicographic grid order.
pub fn grid_search_oracle(instance: &ProblemInstance, resolution: f64) -> Result<Vec<f64>, OracleError> {
    let p = Problem::new(instance)?;
    if p.n() > 4 {
        return Err(OracleError::Unsupported(format!(
            "{} variables exceed the grid limit of 4",
            p.n()
        )));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(OracleError::Unsupported("resolution must be positive".into()));
    }
    if p.lower.iter().chain(&p.upper).any(|b| !b.is_finite()) {
        return Err(OracleError::Unsupported(
            "grid search needs finite bounds on every variable".into(),
        ));
    }
    let counts: Vec<u64> = (0..p.n())
        .map(|g| ((p.upper[g] - p.lower[g]) / resolution + 1e-9).floor() as u64 + 1)
        .collect();
    let total = counts.iter().try_fold(1u64, |acc, &c| acc.checked_mul(c));
    if total.is_none_or(|t| t > MAX_GRID_POINTS) {
        return Err(OracleError::Unsupported("grid is too large".into()));
    }
    let rows: Vec<(CouplingKind, Row)> = (0..instance.couplings.len())
        .map(|j| (instance.couplings[j].kind, p.coupling_row(j)))
        .collect();
    let tol = resolution * (1.0 + 1e-9);

    let mut idx = vec![0u64; p.n()];
    let mut x = vec![0.0; p.n()];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        for g in 0..p.n() {
            x[g] = (p.lower[g] + idx[g] as f64 * resolution).min(p.upper[g]);
        }
        let feasible = rows.iter().all(|(kind, row)| {
            let g = p.value(row, &x);
            match kind {
                CouplingKind::Equality => g.abs() <= tol,
                CouplingKind::Inequality => g <= tol,
            }
        });
        if feasible {
            let f = evaluate_objective(instance, &x)?;
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, x.clone()));
            }
        }
        // Odometer with the last variable changing fastest.
        let mut g = p.n();
        loop {
            if g == 0 {
                return best.map(|(_, x)| x).ok_or(OracleError::Infeasible);
            }
            g -= 1;
            idx[g] += 1;
            if idx[g] < counts[g] {
                break;
            }
            idx[g] = 0;
        }
    }
}
