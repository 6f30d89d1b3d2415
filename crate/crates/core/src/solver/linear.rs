//! Stacked affine form of one synchronous sweep, `V(k+1) = (I − A)·Ṽ(k) + C`,
//! and a power-iteration estimate of the spectral radius of `I − A`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentState, GainSchedule, SolverError};
use crate::model::{CouplingKind, ProblemInstance};
use crate::network::Topology;

/// Role of one entry in the stacked vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StackedVar {
    Primal { agent: usize, var: usize },
    Dual { agent: usize, coupling: usize },
    Share { agent: usize, coupling: usize },
}

/// Components frozen by the projection, under which the projected sweep is
/// itself affine.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixedActiveSet {
    /// `(agent, var)` → bound value the projection clamps it to.
    pub pinned: BTreeMap<(usize, usize), f64>,
    /// Inequality couplings whose μ copies are clamped at zero.
    pub released: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub variables: Vec<StackedVar>,
    index: BTreeMap<StackedVar, usize>,
    /// Left eigenvectors of `I − A` with eigenvalue one: for every coupling, the
    /// indicator of its share entries. The iteration preserves `w·V` exactly, so
    /// errors always live in the orthogonal complement of these vectors.
    pub conserved: Vec<DVector<f64>>,
}

impl LinearForm {
    pub fn from_parts(a: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        assert_eq!(a.shape(), (n, n), "A must be square and match C");
        let variables: Vec<StackedVar> = (0..n).map(|p| StackedVar::Primal { agent: 0, var: p }).collect();
        let index = variables.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        Self {
            a,
            c,
            variables,
            index,
            conserved: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn position(&self, var: &StackedVar) -> Option<usize> {
        self.index.get(var).copied()
    }

    /// `I − A`.
    pub fn iteration_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.a
    }

    pub fn stack(&self, states: &[AgentState]) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.variables.iter().map(|v| match *v {
                StackedVar::Primal { agent, var } => states[agent].x[var],
                StackedVar::Dual { agent, coupling } => states[agent].dual(coupling).unwrap_or(0.0),
                StackedVar::Share { agent, coupling } => states[agent].shares[&coupling],
            }),
        )
    }

    /// Writes a stacked vector back into copies of `template`.
    pub fn unstack(&self, v: &DVector<f64>, template: &[AgentState]) -> Vec<AgentState> {
        let mut out = template.to_vec();
        for (p, var) in self.variables.iter().enumerate() {
            match *var {
                StackedVar::Primal { agent, var } => out[agent].x[var] = v[p],
                StackedVar::Dual { agent, coupling } => {
                    let s = &mut out[agent];
                    if let Some(d) = s.lambda.get_mut(&coupling) {
                        *d = v[p];
                    } else if let Some(d) = s.mu.get_mut(&coupling) {
                        *d = v[p];
                    }
                }
                StackedVar::Share { agent, coupling } => {
                    out[agent].shares.insert(coupling, v[p]);
                }
            }
        }
        out
    }
}

/// Builds `(A, C)` for a synchronous sweep with constant gains.
///
/// Assembled directly from the instance data rather than by probing
/// [`super::sync_sweep`], so the two can be checked against each other.
pub fn assemble_linear_form(
    instance: &ProblemInstance,
    topology: &Topology,
    gains: &GainSchedule,
    active_set: Option<&FixedActiveSet>,
) -> Result<LinearForm, SolverError> {
    if !gains.is_constant_in_k() {
        return Err(SolverError::InvalidConfiguration(
            "the affine form needs gains that are constant in k".into(),
        ));
    }
    let empty = FixedActiveSet::default();
    let active = active_set.unwrap_or(&empty);

    let mut variables = Vec::new();
    for (i, agent) in instance.agents.iter().enumerate() {
        variables.extend((0..agent.n_vars()).map(|var| StackedVar::Primal { agent: i, var }));
        for j in instance.couplings_of(i) {
            variables.push(StackedVar::Dual { agent: i, coupling: j });
            variables.push(StackedVar::Share { agent: i, coupling: j });
        }
    }
    let index: BTreeMap<StackedVar, usize> = variables.iter().enumerate().map(|(p, &v)| (v, p)).collect();
    let n = variables.len();
    // Assemble M = I − A, then A = I − M.
    let mut m = DMatrix::<f64>::identity(n, n);
    let mut c = DVector::<f64>::zeros(n);
    let carriers: Vec<BTreeSet<usize>> = instance
        .couplings
        .iter()
        .map(|cp| cp.agents().into_iter().collect())
        .collect();

    for (i, agent) in instance.agents.iter().enumerate() {
        let rho_p = gains.primal_at(i, 0);
        let rho_c = gains.consensus_at(i, 0);
        let rho_s = gains.share;

        for (v, cost) in agent.costs.iter().enumerate() {
            let p = index[&StackedVar::Primal { agent: i, var: v }];
            if let Some(&bound) = active.pinned.get(&(i, v)) {
                m.row_mut(p).fill(0.0);
                c[p] = bound;
                continue;
            }
            m[(p, p)] -= rho_p * 2.0 * cost.a;
            c[p] -= rho_p * cost.b;
        }
        for j in instance.couplings_of(i) {
            let coupling = &instance.couplings[j];
            for t in coupling.terms.iter().filter(|t| t.agent == i) {
                let p = index[&StackedVar::Primal { agent: i, var: t.var }];
                if !active.pinned.contains_key(&(i, t.var)) {
                    let d = index[&StackedVar::Dual { agent: i, coupling: j }];
                    m[(p, d)] -= rho_p * t.coeff;
                }
            }

            let d = index[&StackedVar::Dual { agent: i, coupling: j }];
            let s = index[&StackedVar::Share { agent: i, coupling: j }];
            let released = coupling.kind == CouplingKind::Inequality && active.released.contains(&j);
            if released {
                m.row_mut(d).fill(0.0);
                c[d] = 0.0;
                continue;
            }
            // Dual row: consensus over carrying neighbours, innovation share − contribution.
            let rho_d = gains.dual_for(i, j, 0);
            m[(d, s)] += rho_d;
            for t in coupling.terms.iter().filter(|t| t.agent == i) {
                let p = index[&StackedVar::Primal { agent: i, var: t.var }];
                m[(d, p)] -= rho_d * t.coeff;
            }
            for &l in topology.neighbors(i) {
                if carriers[j].contains(&l) {
                    let dl = index[&StackedVar::Dual { agent: l, coupling: j }];
                    m[(d, d)] += rho_c;
                    m[(d, dl)] -= rho_c;
                    m[(s, d)] += rho_s;
                    m[(s, dl)] -= rho_s;
                }
            }
        }
    }

    let mut conserved = Vec::new();
    for (j, members) in carriers.iter().enumerate() {
        let mut w = DVector::zeros(n);
        for &a in members {
            if let Some(&p) = index.get(&StackedVar::Share { agent: a, coupling: j }) {
                w[p] = 1.0;
            }
        }
        conserved.push(w);
    }

    let a = DMatrix::identity(n, n) - m;
    Ok(LinearForm {
        a,
        c,
        variables,
        index,
        conserved,
    })
}

/// `(I − A)·v + C`.
pub fn linear_step(v: &DVector<f64>, form: &LinearForm) -> Result<DVector<f64>, SolverError> {
    if v.len() != form.dim() {
        return Err(SolverError::InvalidConfiguration(format!(
            "stacked vector has {} entries, form expects {}",
            v.len(),
            form.dim()
        )));
    }
    Ok(v - &form.a * v + &form.c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            iterations: 4000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    /// Estimated `ρ(I − A)` on the complement of the conserved directions.
    pub radius: f64,
    /// Whether the last two quarter-windows of the growth average agree to 1e-3.
    pub converged: bool,
}

/// Power iteration on `I − A` from a seeded random start.
///
/// The radius is the geometric mean growth over the second half of the run,
/// which also converges when the dominant eigenvalues are a complex pair.
/// Conserved directions are projected out of every iterate.
pub fn spectral_radius_estimate(form: &LinearForm, options: SpectralOptions) -> SpectralEstimate {
    let n = form.dim();
    if n == 0 {
        return SpectralEstimate {
            radius: 0.0,
            converged: true,
        };
    }
    let m = SparseRows::from_dense(&form.iteration_matrix());
    let basis = orthonormal_basis(&form.conserved);
    let project_out = |v: &mut DVector<f64>| {
        for q in &basis {
            let dot = q.dot(v);
            v.axpy(-dot, q, 1.0);
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut v = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    project_out(&mut v);
    let norm = v.norm();
    if norm == 0.0 {
        return SpectralEstimate {
            radius: 0.0,
            converged: true,
        };
    }
    v /= norm;

    let iterations = options.iterations.max(8);
    let mut log_growth = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut w = m.apply(&v);
        project_out(&mut w);
        let g = w.norm();
        if g == 0.0 || !g.is_finite() {
            return SpectralEstimate {
                radius: if g == 0.0 { 0.0 } else { f64::INFINITY },
                converged: g == 0.0,
            };
        }
        log_growth.push(g.ln());
        v = w / g;
    }

    let mean = |s: &[f64]| (s.iter().sum::<f64>() / s.len() as f64).exp();
    let h = iterations / 2;
    let q = iterations / 4;
    let radius = mean(&log_growth[h..]);
    let third = mean(&log_growth[h..h + q]);
    let fourth = mean(&log_growth[h + q..]);
    let converged = (third - fourth).abs() <= 1e-3 * third.max(fourth).max(f64::MIN_POSITIVE);
    SpectralEstimate { radius, converged }
}

/// Row-compressed copy of an iteration matrix; the stacked systems are sparse
/// and the power iteration dominates the diagnostic's cost.
struct SparseRows {
    start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut start = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            start.push(cols.len());
        }
        Self { start, cols, vals }
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.start.len() - 1,
            self.start
                .windows(2)
                .map(|w| (w[0]..w[1]).map(|p| self.vals[p] * v[self.cols[p]]).sum::<f64>()),
        )
    }
}

fn orthonormal_basis(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut u = v.clone();
        for q in &basis {
            let dot = q.dot(&u);
            u.axpy(-dot, q, 1.0);
        }
        let n = u.norm();
        if n > 1e-12 {
            basis.push(u / n);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::{balance_pair, single};
    use crate::network::{build_topology, TopologySpec};
    use crate::solver::sync_sweep;

    fn ring(n: usize) -> Topology {
        build_topology(&TopologySpec::Ring(n)).unwrap()
    }

    #[test]
    fn scalar_forms() {
        let g = GainSchedule::constant(0.0, 0.25, 0.0, 0.0);
        let f = assemble_linear_form(&single(1.0, 0.0), &ring(1), &g, None).unwrap();
        assert_eq!(f.a, DMatrix::from_element(1, 1, 0.5));
        assert_eq!(f.c, DVector::from_element(1, 0.0));

        let f = assemble_linear_form(&single(1.0, -2.0), &ring(1), &g, None).unwrap();
        assert_eq!(f.a[(0, 0)], 0.5);
        assert_eq!(f.c[0], 0.5);
        let fixed = linear_step(&DVector::from_element(1, 1.0), &f).unwrap();
        assert_eq!(fixed[0], 1.0);
    }

    #[test]
    fn zero_gains_give_identity() {
        let inst = balance_pair(1.0, 2.0, 3.0);
        let f = assemble_linear_form(&inst, &ring(2), &GainSchedule::constant(0.0, 0.0, 0.0, 0.0), None).unwrap();
        assert!(f.a.iter().all(|&v| v == 0.0));
        assert!(f.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_step_examples() {
        let id = LinearForm::from_parts(DMatrix::zeros(2, 2), DVector::zeros(2));
        let v = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(linear_step(&v, &id).unwrap(), v);

        let half = LinearForm::from_parts(DMatrix::from_element(1, 1, 0.5), DVector::from_element(1, 0.5));
        assert_eq!(linear_step(&DVector::from_element(1, 0.0), &half).unwrap()[0], 0.5);
        assert!(linear_step(&v, &half).is_err());
    }

    #[test]
    fn rejects_diminishing_gains() {
        let mut g = GainSchedule::constant(-0.1, 0.1, -0.1, 0.1);
        g.primal = crate::solver::GainProfile::Diminishing {
            base: 0.1,
            exponent: 0.5,
        };
        assert!(assemble_linear_form(&single(1.0, 0.0), &ring(1), &g, None).is_err());
    }

    #[test]
    fn one_sweep_matches_linear_step() {
        let inst = balance_pair(1.0, 3.0, 2.0);
        let topo = ring(2);
        let gains = GainSchedule::default_for(&inst, &topo);
        let form = assemble_linear_form(&inst, &topo, &gains, None).unwrap();
        let mut states: Vec<AgentState> = (0..2).map(|i| AgentState::initial(&inst, i)).collect();
        states[0].x[0] = 0.7;
        states[1].lambda.insert(0, -1.3);
        let swept = sync_sweep(&inst, &topo, &gains, &states).unwrap();
        let stepped = linear_step(&form.stack(&states), &form).unwrap();
        let diff = (form.stack(&swept) - stepped).amax();
        assert!(diff <= 1e-15, "{diff}");
        let back = form.unstack(&form.stack(&swept), &swept);
        assert_eq!(back, swept);
    }

    #[test]
    fn pinned_variables_become_constants() {
        let mut inst = balance_pair(1.0, 2.0, 3.0);
        inst.agents[0].bounds.upper[0] = 1.5;
        let topo = ring(2);
        let gains = GainSchedule::default_for(&inst, &topo);
        let active = FixedActiveSet {
            pinned: [((0, 0), 1.5)].into_iter().collect(),
            released: BTreeSet::new(),
        };
        let form = assemble_linear_form(&inst, &topo, &gains, Some(&active)).unwrap();
        let p = form.position(&StackedVar::Primal { agent: 0, var: 0 }).unwrap();
        let v = linear_step(&DVector::from_element(form.dim(), 9.0), &form).unwrap();
        assert_eq!(v[p], 1.5);
    }

    #[test]
    fn spectral_examples() {
        let opts = SpectralOptions::default();
        let eye = LinearForm::from_parts(DMatrix::identity(3, 3), DVector::zeros(3));
        assert_eq!(spectral_radius_estimate(&eye, opts).radius, 0.0);
        let zero = LinearForm::from_parts(DMatrix::zeros(3, 3), DVector::zeros(3));
        let e = spectral_radius_estimate(&zero, opts);
        assert!((e.radius - 1.0).abs() < 1e-12 && e.converged);
        let half = LinearForm::from_parts(DMatrix::from_element(1, 1, 0.5), DVector::zeros(1));
        assert!((spectral_radius_estimate(&half, opts).radius - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spectral_handles_rotation() {
        // I − A = 0.9·R(θ): eigenvalues 0.9·e^{±iθ}.
        let (s, c) = (0.3_f64.sin(), 0.3_f64.cos());
        let m = DMatrix::from_row_slice(2, 2, &[0.9 * c, -0.9 * s, 0.9 * s, 0.9 * c]);
        let form = LinearForm::from_parts(DMatrix::identity(2, 2) - m, DVector::zeros(2));
        let e = spectral_radius_estimate(&form, SpectralOptions::default());
        assert!((e.radius - 0.9).abs() < 1e-9, "{}", e.radius);
    }

    #[test]
    fn conserved_share_sum_is_a_unit_left_eigenvector() {
        let inst = balance_pair(1.0, 3.0, 2.0);
        let topo = ring(2);
        let form = assemble_linear_form(&inst, &topo, &GainSchedule::default_for(&inst, &topo), None).unwrap();
        let m = form.iteration_matrix();
        for w in &form.conserved {
            let left = w.transpose() * &m;
            assert!((left.transpose() - w).amax() < 1e-15);
        }
    }
}
