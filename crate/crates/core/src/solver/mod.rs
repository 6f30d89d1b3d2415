//! The federated iteration: per-agent consensus + innovations updates, the
//! local projection, the stacked affine form of one sweep, and the driver that
//! runs agents over a simulated network until the KKT residual and the
//! multiplier disagreement are both small.
//!
//! Each agent carries its primal block, one copy of the multiplier of every
//! coupling it touches, and a share of that coupling's rhs. Shares are part of
//! the iterate: they drift along multiplier disagreement (equal and opposite
//! on either end of an edge), which is what lets all copies agree at the
//! optimum instead of settling on per-agent biased values.

mod gains;
mod linear;
mod state;
mod update;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{kkt_residual, validate_instance, KktSummary, ModelError, ProblemInstance, Violation};
use crate::network::{active_exchanges, deliver, ExchangeSchedule, Mailbox, MessageLog, NetworkError, Topology};

pub use gains::{
    GainProfile, GainSchedule, DEFAULT_CONSENSUS_SCALE, DEFAULT_DUAL_SCALE, DEFAULT_PRIMAL_SCALE, DEFAULT_SHARE_SCALE,
};
pub use linear::{
    assemble_linear_form, linear_step, spectral_radius_estimate, FixedActiveSet, LinearForm, SpectralEstimate,
    SpectralOptions, StackedVar,
};
pub use state::{project, AgentState, SharedCopies};
pub use update::{local_update, sync_sweep};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("topology is disconnected: {0}")]
    Disconnected(String),
    #[error("agent {agent} has no state for neighbour {neighbor}")]
    MissingNeighbor { agent: usize, neighbor: usize },
    #[error("agent {agent} carries no copy of coupling {coupling}")]
    MissingCopy { agent: usize, coupling: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("iterate became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        report: Box<ConvergenceReport>,
    },
    #[error("instance failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_iter: usize,
    pub kkt_tol: f64,
    pub consensus_tol: f64,
    /// Seeds the spectral diagnostic; the iteration itself is deterministic.
    pub seed: u64,
    /// Estimate `ρ(I − A)` of the unconstrained sweep before running.
    pub spectral_diagnostic: Option<SpectralOptions>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            kkt_tol: 1e-6,
            consensus_tol: 1e-6,
            seed: 0,
            spectral_diagnostic: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Diverged,
}

/// State of the run after `iter` iterations (`iter = 0` is the initial point).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub kkt: KktSummary,
    pub consensus_disagreement: f64,
    pub messages_cumulative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub status: RunStatus,
    pub converged: bool,
    pub iterations_run: usize,
    pub final_kkt_residual: KktSummary,
    pub final_consensus_disagreement: f64,
    /// Full primal vector in agent order.
    pub x: Vec<f64>,
    /// Mean of the copies of each equality multiplier, in coupling order.
    pub lambda: Vec<f64>,
    /// Mean of the copies of each inequality multiplier, in coupling order.
    pub mu: Vec<f64>,
    pub states: Vec<AgentState>,
    pub total_messages: usize,
    pub total_components: usize,
    pub gains: GainSchedule,
    pub spectral: Option<SpectralEstimate>,
    pub trace: Vec<TraceRecord>,
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub message_log: MessageLog,
}

impl ConvergenceReport {
    /// CSV with one row per trace record.
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        write_trace_csv(&self.trace, writer)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

pub const TRACE_HEADER: [&str; 7] = [
    "iter",
    "kkt_stationarity",
    "kkt_primal_eq",
    "kkt_primal_ineq",
    "kkt_complementarity",
    "consensus_disagreement",
    "messages_cumulative",
];

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            r.kkt.stationarity.to_string(),
            r.kkt.primal_equality.to_string(),
            r.kkt.primal_inequality.to_string(),
            r.kkt.complementarity.to_string(),
            r.consensus_disagreement.to_string(),
            r.messages_cumulative.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest spread (max − min) of the copies of any one multiplier.
pub fn consensus_disagreement(states: &[AgentState]) -> f64 {
    let mut range: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for s in states {
        for (&j, &v) in s.lambda.iter().chain(&s.mu) {
            let e = range.entry(j).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    range.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
}

/// Mean copy of every multiplier, indexed like
/// [`ProblemInstance::equality_indices`] and
/// [`ProblemInstance::inequality_indices`].
pub fn mean_multipliers(instance: &ProblemInstance, states: &[AgentState]) -> (Vec<f64>, Vec<f64>) {
    let mean = |j: usize| {
        let copies: Vec<f64> = states.iter().filter_map(|s| s.dual(j)).collect();
        if copies.is_empty() {
            0.0
        } else {
            copies.iter().sum::<f64>() / copies.len() as f64
        }
    };
    (
        instance.equality_indices().into_iter().map(mean).collect(),
        instance.inequality_indices().into_iter().map(mean).collect(),
    )
}

pub fn gather_primal(states: &[AgentState]) -> Vec<f64> {
    states.iter().flat_map(|s| s.x.iter().copied()).collect()
}

/// Runs the federated iteration. See [`run_with_observer`].
pub fn run(
    instance: &ProblemInstance,
    topology: &Topology,
    schedule: &ExchangeSchedule,
    gains: &GainSchedule,
    config: &RunConfig,
) -> Result<ConvergenceReport, SolverError> {
    run_with_observer(instance, topology, schedule, gains, config, |_, _| {})
}

/// Runs the federated iteration, calling `observer(k, states)` on the initial
/// states (`k = 0`) and on the projected states after every iteration.
///
/// At each iteration the schedule's active exchanges are delivered, then every
/// non-straggling agent updates from its mailbox (stale entries are used as
/// they are) and projects. Stragglers keep their state.
pub fn run_with_observer<F>(
    instance: &ProblemInstance,
    topology: &Topology,
    schedule: &ExchangeSchedule,
    gains: &GainSchedule,
    config: &RunConfig,
    mut observer: F,
) -> Result<ConvergenceReport, SolverError>
where
    F: FnMut(usize, &[AgentState]),
{
    check_preconditions(instance, topology, schedule, gains, config)?;
    let started = Instant::now();
    let n = instance.n_agents();

    let spectral = match (&config.spectral_diagnostic, gains.is_constant_in_k()) {
        (Some(opts), true) => {
            let form = assemble_linear_form(instance, topology, gains, None)?;
            Some(spectral_radius_estimate(
                &form,
                SpectralOptions {
                    seed: config.seed,
                    ..*opts
                },
            ))
        }
        _ => None,
    };

    let mut states: Vec<AgentState> = (0..n).map(|i| AgentState::initial(instance, i)).collect();
    let mut mailbox = Mailbox::new();
    for &(u, v) in topology.edges() {
        mailbox.seed(v, u, states[u].shared_with(&states[v]));
        mailbox.seed(u, v, states[v].shared_with(&states[u]));
    }
    let mut log = MessageLog::new();
    let mut trace = Vec::new();

    observer(0, &states);
    let mut record = measure(instance, &states, 0, 0)?;
    trace.push(record);
    let done = |r: &TraceRecord| r.kkt.total <= config.kkt_tol && r.consensus_disagreement <= config.consensus_tol;
    let mut status = if done(&record) {
        RunStatus::Converged
    } else {
        RunStatus::MaxIterations
    };

    let mut k = 0;
    while status != RunStatus::Converged && k < config.max_iter {
        let exchanges = active_exchanges(schedule, topology, k);
        deliver(
            k,
            &exchanges,
            |s, r| states[s].shared_with(&states[r]),
            &mut mailbox,
            &mut log,
        );

        let mut next = Vec::with_capacity(n);
        for own in &states {
            let i = own.agent;
            if schedule.is_skipping(i, k) {
                let mut frozen = own.clone();
                frozen.iteration += 1;
                next.push(frozen);
                continue;
            }
            let neighbors: BTreeMap<usize, SharedCopies> = topology
                .neighbors(i)
                .iter()
                .filter_map(|&l| mailbox.get(i, l).map(|e| (l, e.payload.clone())))
                .collect();
            let partners: BTreeSet<usize> = topology
                .neighbors(i)
                .iter()
                .copied()
                .filter(|&l| exchanges.contains(&(i, l)) && exchanges.contains(&(l, i)))
                .collect();
            let updated = local_update(instance, topology, gains, own, &neighbors, &partners)?;
            // Checked before projection, which would clamp some NaNs away.
            if !updated.is_finite() {
                log::warn!("non-finite iterate for agent {i} at iteration {k}");
                let report = finish(
                    instance,
                    states,
                    RunStatus::Diverged,
                    k,
                    trace,
                    log,
                    gains,
                    spectral,
                    started,
                )?;
                return Err(SolverError::Diverged {
                    iteration: k,
                    report: Box::new(report),
                });
            }
            next.push(project(&updated, instance));
        }
        states = next;
        k += 1;

        observer(k, &states);
        record = measure(instance, &states, k, log.total_messages())?;
        trace.push(record);
        if done(&record) {
            status = RunStatus::Converged;
        }
        if k % 10_000 == 0 {
            log::debug!(
                "iteration {k}: kkt {:.3e}, disagreement {:.3e}",
                record.kkt.total,
                record.consensus_disagreement
            );
        }
    }

    log::info!("run finished after {k} iterations: {status:?}");
    finish(instance, states, status, k, trace, log, gains, spectral, started)
}

fn check_preconditions(
    instance: &ProblemInstance,
    topology: &Topology,
    schedule: &ExchangeSchedule,
    gains: &GainSchedule,
    config: &RunConfig,
) -> Result<(), SolverError> {
    let violations = validate_instance(instance);
    if !violations.is_empty() {
        return Err(SolverError::Invalid(violations));
    }
    if !instance.is_canonical() {
        return Err(SolverError::InvalidConfiguration(
            "instance must be canonical (agent ids 0..n in order)".into(),
        ));
    }
    if topology.n_agents() != instance.n_agents() {
        return Err(SolverError::InvalidConfiguration(format!(
            "topology has {} agents, instance has {}",
            topology.n_agents(),
            instance.n_agents()
        )));
    }
    if !topology.is_connected() {
        return Err(SolverError::Disconnected("communication graph is not connected".into()));
    }
    for (j, c) in instance.couplings.iter().enumerate() {
        let members: BTreeSet<usize> = c.agents().into_iter().collect();
        if !topology.is_connected_within(&members) {
            return Err(SolverError::Disconnected(format!(
                "agents carrying coupling {j} do not form a connected subgraph"
            )));
        }
    }
    if !gains.is_valid_for(instance.n_agents()) {
        return Err(SolverError::InvalidConfiguration(
            "gains must be finite and cover every agent".into(),
        ));
    }
    if !(config.kkt_tol >= 0.0 && config.consensus_tol >= 0.0) {
        return Err(SolverError::InvalidConfiguration(
            "tolerances must be non-negative".into(),
        ));
    }
    schedule.check_against(topology)?;
    Ok(())
}

fn measure(
    instance: &ProblemInstance,
    states: &[AgentState],
    iter: usize,
    messages_cumulative: usize,
) -> Result<TraceRecord, SolverError> {
    let (lambda, mu) = mean_multipliers(instance, states);
    let kkt = kkt_residual(instance, &gather_primal(states), &lambda, &mu)?.summary();
    Ok(TraceRecord {
        iter,
        kkt,
        consensus_disagreement: consensus_disagreement(states),
        messages_cumulative,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    instance: &ProblemInstance,
    states: Vec<AgentState>,
    status: RunStatus,
    iterations_run: usize,
    trace: Vec<TraceRecord>,
    message_log: MessageLog,
    gains: &GainSchedule,
    spectral: Option<SpectralEstimate>,
    started: Instant,
) -> Result<ConvergenceReport, SolverError> {
    let (lambda, mu) = mean_multipliers(instance, &states);
    let last = *trace.last().expect("trace always holds the initial record");
    Ok(ConvergenceReport {
        status,
        converged: status == RunStatus::Converged,
        iterations_run,
        final_kkt_residual: last.kkt,
        final_consensus_disagreement: last.consensus_disagreement,
        x: gather_primal(&states),
        lambda,
        mu,
        states,
        total_messages: message_log.total_messages(),
        total_components: message_log.total_components(),
        gains: gains.clone(),
        spectral,
        trace,
        wall_time_secs: started.elapsed().as_secs_f64(),
        message_log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::balance_pair;
    use crate::network::{build_topology, TopologySpec};

    fn ring(n: usize) -> Topology {
        build_topology(&TopologySpec::Ring(n)).unwrap()
    }

    fn copies(values: &[f64]) -> Vec<AgentState> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| AgentState {
                agent: i,
                x: vec![],
                lambda: [(0, v)].into_iter().collect(),
                mu: BTreeMap::new(),
                shares: BTreeMap::new(),
                iteration: 0,
            })
            .collect()
    }

    #[test]
    fn disagreement_examples() {
        assert_eq!(consensus_disagreement(&copies(&[2.0, 2.0])), 0.0);
        assert_eq!(consensus_disagreement(&copies(&[1.0, 1.5])), 0.5);
        assert_eq!(consensus_disagreement(&copies(&[0.0, 1.0, 4.0])), 4.0);
    }

    #[test]
    fn symmetric_pair_converges() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let topo = ring(2);
        let gains = GainSchedule::default_for(&inst, &topo);
        let r = run(&inst, &topo, &ExchangeSchedule::sync(), &gains, &RunConfig::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
        assert!((r.lambda[0] + 2.0).abs() < 1e-4);
        assert_eq!(r.trace.len(), r.iterations_run + 1);
    }

    #[test]
    fn zero_innovation_never_moves() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let topo = ring(2);
        let gains = GainSchedule::constant(-0.3, 0.0, 0.0, 0.0);
        let config = RunConfig {
            max_iter: 50,
            ..RunConfig::default()
        };
        let r = run(&inst, &topo, &ExchangeSchedule::sync(), &gains, &config).unwrap();
        assert!(!r.converged);
        assert_eq!(r.status, RunStatus::MaxIterations);
        assert_eq!(r.x, vec![0.0, 0.0]);
        assert_eq!(r.trace.len(), 51);
    }

    #[test]
    fn oversized_gains_diverge() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let topo = ring(2);
        let gains = GainSchedule::constant(-0.3, 1.5, -0.3, 0.0);
        let form = assemble_linear_form(&inst, &topo, &gains, None).unwrap();
        assert!(spectral_radius_estimate(&form, SpectralOptions::default()).radius > 1.0);
        let err = run(&inst, &topo, &ExchangeSchedule::sync(), &gains, &RunConfig::default()).unwrap_err();
        match err {
            SolverError::Diverged { iteration, report } => {
                assert_eq!(report.status, RunStatus::Diverged);
                assert_eq!(report.iterations_run, iteration);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn rejects_disconnected_topology() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let topo = Topology::from_edges(2, []).unwrap();
        let err = run(
            &inst,
            &topo,
            &ExchangeSchedule::sync(),
            &GainSchedule::constant(-0.3, 0.1, -0.1, 0.0),
            &RunConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, SolverError::Disconnected(_)));
    }

    #[test]
    fn trace_csv_layout() {
        let inst = balance_pair(1.0, 1.0, 2.0);
        let topo = ring(2);
        let config = RunConfig {
            max_iter: 3,
            ..RunConfig::default()
        };
        let r = run(
            &inst,
            &topo,
            &ExchangeSchedule::sync(),
            &GainSchedule::default_for(&inst, &topo),
            &config,
        )
        .unwrap();
        let mut buf = Vec::new();
        r.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER.join(","));
        assert_eq!(lines.len(), 5);
        assert!(lines[4].ends_with(",6"));
    }
}
