use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fedflex_core::network::{ClusterPartition, ExchangeSchedule, SkipRule, StragglerProfile, TopologySpec};
use fedflex_core::solver::{GainProfile, GainSchedule, RunConfig, SpectralOptions};

#[derive(Debug, Parser)]
#[command(
    name = "fedflex",
    version,
    about = "Federated DER dispatch: generate, solve, verify, compare"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded benchmark instance.
    #[command(subcommand)]
    Generate(Family),
    /// Run the federated solver and write `<prefix>.trace.csv`,
    /// `<prefix>.messages.csv` and `<prefix>.report.json`.
    Solve(SolveArgs),
    /// Solve centrally and print the solution with its KKT residual.
    OracleCheck(OracleArgs),
    /// Run the synchronous and the asynchronous schedule side by side.
    Compare(SolveArgs),
}

#[derive(Debug, Subcommand)]
pub enum Family {
    /// Economic dispatch: one variable per resource, one balance row.
    Dispatch(DispatchArgs),
    /// Store load scheduling against a flat fleet target.
    Loadsched(LoadschedArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct DispatchArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub demand: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub a_max: f64,
    #[arg(long, default_value_t = 0.0)]
    pub b_min: f64,
    #[arg(long, default_value_t = 0.0)]
    pub b_max: f64,
    /// Probability that a resource gets a finite box.
    #[arg(long, default_value_t = 0.0)]
    pub bounded_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lower_min: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lower_max: f64,
    #[arg(long, default_value_t = 1.0)]
    pub upper_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub upper_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct LoadschedArgs {
    #[arg(long)]
    pub stores: usize,
    #[arg(long, default_value_t = 24)]
    pub slots: usize,
    #[arg(long, default_value_t = 5.0)]
    pub energy_min: f64,
    #[arg(long, default_value_t = 15.0)]
    pub energy_max: f64,
    #[arg(long, default_value_t = 4.0)]
    pub slot_upper: f64,
    /// Longest random outage window per store; 0 disables outages.
    #[arg(long, default_value_t = 0)]
    pub max_outage: usize,
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub instance: PathBuf,
    /// Also write the report to this file.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct SolveArgs {
    pub instance: PathBuf,
    /// `ring:N`, `star:N` or `rand:N:P:SEED`.
    #[arg(long)]
    pub topology: TopologySpec,
    /// `sync` or `async:T`.
    #[arg(long, default_value = "sync")]
    pub schedule: ScheduleSpec,
    /// Cluster partition `a,b;c,d` for the asynchronous schedule
    /// (default: one cluster per agent).
    #[arg(long)]
    pub clusters: Option<String>,
    /// Inter-cluster period; overrides the `T` of `--schedule async:T` and
    /// implies the asynchronous schedule.
    #[arg(long)]
    pub period: Option<usize>,
    /// `AGENT:PERIOD[:PHASE]`: the agent skips whenever `k mod PERIOD == PHASE`
    /// (default phase `PERIOD − 1`). Repeatable.
    #[arg(long = "straggler")]
    pub stragglers: Vec<StragglerSpec>,
    #[arg(long)]
    pub rho_c: Option<f64>,
    /// Primal innovation gain.
    #[arg(long)]
    pub rho_i: Option<f64>,
    /// Dual innovation gain (negative for ascent).
    #[arg(long)]
    pub rho_d: Option<f64>,
    #[arg(long)]
    pub rho_s: Option<f64>,
    /// Drop the per-copy dual weights and use `--rho-d` as is.
    #[arg(long)]
    pub no_precondition: bool,
    #[arg(long, default_value_t = 50_000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub kkt_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub consensus_tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Estimate the spectral radius of the unconstrained iteration first.
    #[arg(long)]
    pub spectral: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    Sync,
    Async(usize),
}

impl std::str::FromStr for ScheduleSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "sync" => Ok(ScheduleSpec::Sync),
            Some(("async", t)) => t
                .parse()
                .map(ScheduleSpec::Async)
                .map_err(|_| format!("bad period in {s:?}")),
            _ => Err(format!("expected sync or async:T, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StragglerSpec {
    pub agent: usize,
    pub period: usize,
    pub phase: usize,
}

impl std::str::FromStr for StragglerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected AGENT:PERIOD[:PHASE], got {s:?}");
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (agent, period, phase) = match parts.as_slice() {
            [a, p] => (*a, *p, p.saturating_sub(1)),
            [a, p, ph] => (*a, *p, *ph),
            _ => return Err(bad()),
        };
        if period == 0 || phase >= period {
            return Err(format!("straggler {s:?} needs PERIOD >= 1 and PHASE < PERIOD"));
        }
        Ok(Self { agent, period, phase })
    }
}

impl SolveArgs {
    pub fn config(&self) -> RunConfig {
        RunConfig {
            max_iter: self.max_iter,
            kkt_tol: self.kkt_tol,
            consensus_tol: self.consensus_tol,
            seed: self.seed,
            spectral_diagnostic: self.spectral.then(SpectralOptions::default),
        }
    }

    /// Defaults for the instance with any `--rho-*` overrides applied.
    pub fn gains(&self, defaults: GainSchedule) -> GainSchedule {
        let mut g = defaults;
        if let Some(v) = self.rho_c {
            g.consensus = GainProfile::Constant(v);
        }
        if let Some(v) = self.rho_i {
            g.primal = GainProfile::Constant(v);
        }
        if let Some(v) = self.rho_d {
            g.dual = GainProfile::Constant(v);
        }
        if let Some(v) = self.rho_s {
            g.share = v;
        }
        if self.no_precondition {
            g.dual_weights.clear();
        }
        g
    }

    pub fn stragglers(&self) -> StragglerProfile {
        self.stragglers.iter().fold(StragglerProfile::none(), |p, s| {
            p.with(
                s.agent,
                SkipRule::EveryNth {
                    period: s.period,
                    phase: s.phase,
                },
            )
        })
    }

    /// Inter-cluster period if the asynchronous schedule was requested.
    pub fn period(&self) -> Option<usize> {
        match (self.period, self.schedule) {
            (Some(t), _) => Some(t),
            (None, ScheduleSpec::Async(t)) => Some(t),
            (None, ScheduleSpec::Sync) => None,
        }
    }

    pub fn partition(&self, n_agents: usize) -> anyhow::Result<ClusterPartition> {
        Ok(match &self.clusters {
            Some(s) => ClusterPartition::parse(n_agents, s)?,
            None => ClusterPartition::singletons(n_agents),
        })
    }

    pub fn schedule(&self, n_agents: usize) -> anyhow::Result<ExchangeSchedule> {
        let base = match self.period() {
            Some(t) => ExchangeSchedule::asynchronous(self.partition(n_agents)?, t)?,
            None => ExchangeSchedule::sync(),
        };
        Ok(base.with_stragglers(self.stragglers()))
    }
}
