//! Benchmark families and the instance file format.
//!
//! * [`gen_dispatch`]: economic dispatch, one variable per resource and a
//!   single balance row `Σ x = demand`.
//! * [`gen_load_scheduling`]: stores shifting a daily energy requirement across
//!   time slots so that the fleet tracks a target aggregate profile.
//! * [`load_instance`] / [`save_instance`]: JSON round trip with located
//!   parse errors.

mod dispatch;
mod io;
mod loadsched;
mod peak;

use thiserror::Error;

use crate::model::Violation;
use crate::oracle::OracleError;

pub use dispatch::{gen_dispatch, DispatchParams, Range};
pub use io::{load_instance, parse_instance, save_instance, to_json};
pub use loadsched::{gen_load_scheduling, EnergySpec, LoadSchedParams, OutageSpec, TargetSpec};
pub use peak::{aggregate_profile, baseline_schedule, peak_metrics, PeakMetrics};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible parameterization: {0}")]
    Infeasible(String),
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at `{location}`: {message}")]
    Parse { location: String, message: String },
    #[error("instance failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
