use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use fedflex_core::instances::{
    gen_dispatch, gen_load_scheduling, load_instance, peak_metrics, save_instance, DispatchParams, EnergySpec,
    LoadSchedParams, OutageSpec, PeakMetrics, Range, TargetSpec,
};
use fedflex_core::model::{kkt_residual, KktSummary, ProblemInstance};
use fedflex_core::network::{active_exchanges, build_topology, ExchangeSchedule, ScheduleMode, Topology};
use fedflex_core::oracle::{solve_box_qp, BoxSolution, OracleError};
use fedflex_core::solver::{run, ConvergenceReport, GainSchedule, RunStatus, SolverError};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::args::{DispatchArgs, LoadschedArgs, OracleArgs, SolveArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    Diverged,
    OrderingViolated,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Invalid(anyhow::Error),
    #[error(transparent)]
    Output(anyhow::Error),
}

type CliResult<T> = Result<T, CliError>;

fn invalid(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Invalid(e.into())
}

fn output(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Output(e.into())
}

pub fn generate_dispatch(a: &DispatchArgs) -> CliResult<Outcome> {
    let params = DispatchParams {
        n_agents: a.n,
        a: Range::new(a.a_min, a.a_max),
        b: Range::new(a.b_min, a.b_max),
        fixed_a: None,
        bounded_fraction: a.bounded_fraction,
        lower: Range::new(a.lower_min, a.lower_max),
        upper: Range::new(a.upper_min, a.upper_max),
        total_demand: a.demand,
        seed: a.seed,
    };
    let instance = gen_dispatch(&params).map_err(invalid)?;
    write_instance(&instance, &a.output)
}

pub fn generate_loadsched(a: &LoadschedArgs) -> CliResult<Outcome> {
    let params = LoadSchedParams {
        n_stores: a.stores,
        n_slots: a.slots,
        energy: EnergySpec::Sampled(Range::new(a.energy_min, a.energy_max)),
        target: TargetSpec::Flat,
        slot_upper: a.slot_upper,
        outages: match a.max_outage {
            0 => OutageSpec::None,
            max_len => OutageSpec::RandomWindows { max_len },
        },
        weight: a.weight,
        seed: a.seed,
    };
    let instance = gen_load_scheduling(&params).map_err(invalid)?;
    write_instance(&instance, &a.output)
}

fn write_instance(instance: &ProblemInstance, path: &Path) -> CliResult<Outcome> {
    save_instance(instance, path).map_err(output)?;
    println!(
        "wrote {} ({} agents, {} variables, {} couplings)",
        path.display(),
        instance.n_agents(),
        instance.total_vars(),
        instance.couplings.len()
    );
    Ok(Outcome::Success)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", prefix.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(output)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(output)
}

struct Setup {
    instance: ProblemInstance,
    topology: Topology,
    gains: GainSchedule,
}

fn setup(a: &SolveArgs) -> CliResult<Setup> {
    let instance = load_instance(&a.instance).map_err(invalid)?;
    let topology = build_topology(&a.topology).map_err(invalid)?;
    let gains = a.gains(GainSchedule::default_for(&instance, &topology));
    Ok(Setup {
        instance,
        topology,
        gains,
    })
}

/// Runs to completion; divergence still yields the partial report.
fn run_schedule(s: &Setup, schedule: &ExchangeSchedule, a: &SolveArgs) -> CliResult<ConvergenceReport> {
    match run(&s.instance, &s.topology, schedule, &s.gains, &a.config()) {
        Ok(r) => Ok(r),
        Err(SolverError::Diverged { report, .. }) => Ok(*report),
        Err(e) => Err(invalid(e)),
    }
}

fn outcome_of(r: &ConvergenceReport) -> Outcome {
    match r.status {
        RunStatus::Converged => Outcome::Success,
        RunStatus::MaxIterations => Outcome::NotConverged,
        RunStatus::Diverged => Outcome::Diverged,
    }
}

fn write_run(r: &ConvergenceReport, prefix: &Path) -> CliResult<()> {
    let trace = with_suffix(prefix, ".trace.csv");
    r.write_trace_csv(create(&trace)?)
        .with_context(|| format!("cannot write {}", trace.display()))
        .map_err(output)?;
    let messages = with_suffix(prefix, ".messages.csv");
    r.message_log
        .write_csv(create(&messages)?)
        .with_context(|| format!("cannot write {}", messages.display()))
        .map_err(output)?;
    let mut json = r.to_json().map_err(output)?;
    json.push('\n');
    write_text(&with_suffix(prefix, ".report.json"), &json)
}

/// Peak metrics for load-scheduling instances, `None` for other families.
fn peak_of(instance: &ProblemInstance, x: &[f64]) -> CliResult<Option<PeakMetrics>> {
    if instance.metadata.get("family").and_then(|f| f.as_str()) != Some("loadsched") {
        return Ok(None);
    }
    peak_metrics(instance, x).map(Some).map_err(invalid)
}

pub fn solve(a: &SolveArgs) -> CliResult<Outcome> {
    let s = setup(a)?;
    let schedule = a.schedule(s.instance.n_agents()).map_err(invalid)?;
    let r = run_schedule(&s, &schedule, a)?;
    write_run(&r, &a.output)?;
    println!(
        "{}: {} iterations, kkt {:.3e}, disagreement {:.3e}, {} messages",
        status_name(r.status),
        r.iterations_run,
        r.final_kkt_residual.total,
        r.final_consensus_disagreement,
        r.total_messages
    );
    if let Some(p) = peak_of(&s.instance, &r.x)? {
        println!(
            "peak {:.6} (baseline {:.6}, reduction {:.2}%)",
            p.peak,
            p.baseline_peak,
            100.0 * p.reduction_fraction
        );
    }
    Ok(outcome_of(&r))
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::MaxIterations => "max-iterations",
        RunStatus::Diverged => "diverged",
    }
}

#[derive(Debug, Serialize)]
struct OracleReport<'a> {
    status: &'static str,
    #[serde(flatten)]
    solution: &'a BoxSolution,
    kkt: KktSummary,
    kkt_max_abs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    peak: Option<PeakMetrics>,
}

pub fn oracle_check(a: &OracleArgs) -> CliResult<Outcome> {
    let instance = load_instance(&a.instance).map_err(invalid)?;
    let solution = match solve_box_qp(&instance) {
        Ok(s) => s,
        Err(e) => {
            let status = match e {
                OracleError::Infeasible => "infeasible",
                OracleError::Degenerate(_) => "degenerate",
                OracleError::TooLarge { .. } | OracleError::Unsupported(_) => "unsupported",
                OracleError::Invalid(_) | OracleError::Model(_) => "invalid",
            };
            let text =
                serde_json::to_string_pretty(&json!({ "status": status, "message": e.to_string() })).map_err(output)?;
            emit(&text, a.output.as_deref())?;
            return Err(invalid(anyhow!(e)));
        }
    };
    let residual = kkt_residual(&instance, &solution.x, &solution.lambda, &solution.mu).map_err(invalid)?;
    let report = OracleReport {
        status: "solved",
        solution: &solution,
        kkt: residual.summary(),
        kkt_max_abs: residual.max_abs(),
        peak: peak_of(&instance, &solution.x)?,
    };
    emit(
        &serde_json::to_string_pretty(&report).map_err(output)?,
        a.output.as_deref(),
    )?;
    Ok(Outcome::Success)
}

fn emit(text: &str, path: Option<&Path>) -> CliResult<()> {
    println!("{text}");
    match path {
        Some(p) => write_text(p, &format!("{text}\n")),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    label: &'static str,
    status: RunStatus,
    iterations_run: usize,
    total_messages: usize,
    final_kkt_residual: f64,
    final_consensus_disagreement: f64,
    x: Vec<f64>,
}

impl RunSummary {
    fn of(label: &'static str, r: &ConvergenceReport) -> Self {
        Self {
            label,
            status: r.status,
            iterations_run: r.iterations_run,
            total_messages: r.total_messages,
            final_kkt_residual: r.final_kkt_residual.total,
            final_consensus_disagreement: r.final_consensus_disagreement,
            x: r.x.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct BudgetComparison {
    /// Iterations both runs completed.
    iterations: usize,
    sync_messages: usize,
    async_messages: usize,
    /// Messages the schedule rule predicts for the asynchronous run.
    async_predicted: usize,
    prediction_exact: bool,
    /// Whether the asynchronous schedule withholds any exchange in the budget.
    throttled: bool,
    ordering_holds: bool,
}

fn messages_at(r: &ConvergenceReport, k: usize) -> usize {
    r.trace[k.min(r.trace.len() - 1)].messages_cumulative
}

/// Messages sent in iterations `0..k`. Without stragglers this is the closed
/// form `2·(intra·k + inter·⌈k/T⌉)`; otherwise the schedule is replayed.
fn predicted_messages(schedule: &ExchangeSchedule, topology: &Topology, k: usize) -> usize {
    match &schedule.mode {
        ScheduleMode::Async { partition, period } if schedule.stragglers.is_empty() => {
            let intra = topology
                .edges()
                .iter()
                .filter(|&&(u, v)| partition.same_cluster(u, v))
                .count();
            let inter = topology.edges().len() - intra;
            2 * (intra * k + inter * k.div_ceil(*period))
        }
        _ => (0..k).map(|t| active_exchanges(schedule, topology, t).len()).sum(),
    }
}

pub fn compare(a: &SolveArgs) -> CliResult<Outcome> {
    let s = setup(a)?;
    let n = s.instance.n_agents();
    if a.period().is_none() {
        return Err(invalid(anyhow!("compare needs --schedule async:T or --period T")));
    }
    let async_schedule = a.schedule(n).map_err(invalid)?;
    let sync_schedule = ExchangeSchedule::sync().with_stragglers(a.stragglers());

    let sync = run_schedule(&s, &sync_schedule, a)?;
    let asy = run_schedule(&s, &async_schedule, a)?;
    write_run(&sync, &with_suffix(&a.output, ".sync"))?;
    write_run(&asy, &with_suffix(&a.output, ".async"))?;
    let mut runs = vec![RunSummary::of("sync", &sync), RunSummary::of("async", &asy)];
    let mut reference = None;
    if !a.stragglers.is_empty() {
        let r = run_schedule(&s, &ExchangeSchedule::sync(), a)?;
        write_run(&r, &with_suffix(&a.output, ".reference"))?;
        runs.push(RunSummary::of("sync-no-stragglers", &r));
        reference = Some(r);
    }

    let k = sync.iterations_run.min(asy.iterations_run);
    let async_messages = messages_at(&asy, k);
    let sync_messages = messages_at(&sync, k);
    let async_predicted = predicted_messages(&async_schedule, &s.topology, k);
    let throttled = async_predicted < predicted_messages(&sync_schedule, &s.topology, k);
    let budget = BudgetComparison {
        iterations: k,
        sync_messages,
        async_messages,
        async_predicted,
        prediction_exact: async_predicted == async_messages,
        throttled,
        ordering_holds: if throttled {
            async_messages < sync_messages
        } else {
            async_messages == sync_messages
        },
    };
    let max_gap = sync
        .x
        .iter()
        .zip(&asy.x)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    let straggler_slowdown = reference
        .as_ref()
        .map(|r| sync.iterations_run as f64 / r.iterations_run.max(1) as f64);
    let summary = json!({
        "topology": a.topology.to_string(),
        "period": a.period(),
        "runs": runs,
        "equal_budget": budget,
        "max_primal_gap": max_gap,
        "straggler_slowdown": straggler_slowdown,
    });
    let mut text = serde_json::to_string_pretty(&summary).map_err(output)?;
    text.push('\n');
    write_text(&with_suffix(&a.output, ".compare.json"), &text)?;

    for r in &runs {
        println!(
            "{:<20} {:<15} {:>7} iterations {:>9} messages  kkt {:.3e}",
            r.label,
            status_name(r.status),
            r.iterations_run,
            r.total_messages,
            r.final_kkt_residual
        );
    }
    println!(
        "after {k} iterations: sync {sync_messages} messages, async {async_messages} (predicted {async_predicted}); max primal gap {max_gap:.3e}"
    );

    let mut all = vec![&sync, &asy];
    all.extend(reference.as_ref());
    Ok(if all.iter().any(|r| r.status == RunStatus::Diverged) {
        Outcome::Diverged
    } else if all.iter().any(|r| r.status != RunStatus::Converged) {
        Outcome::NotConverged
    } else if !(budget.ordering_holds && budget.prediction_exact) {
        Outcome::OrderingViolated
    } else {
        Outcome::Success
    })
}
