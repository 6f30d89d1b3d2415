//! Simulated communication layer: topologies, synchronous and clustered
//! asynchronous exchange schedules, stragglers and message accounting.

mod mailbox;
mod schedule;
mod topology;

use thiserror::Error;

pub use mailbox::{deliver, message_stats, Mailbox, MailboxEntry, MessageLog, MessageRecord, MessageStats, Payload};
pub use schedule::{
    active_exchanges, ClusterPartition, Exchange, ExchangeSchedule, ScheduleMode, SkipRule, StragglerProfile,
};
pub use topology::{build_topology, Topology, TopologySpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid network specification: {0}")]
    InvalidSpec(String),
    #[error("invalid cluster partition: {0}")]
    InvalidPartition(String),
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("agent {0} is outside the topology")]
    UnknownAgent(usize),
    #[error("no connected graph found after {attempts} attempts")]
    Unconnectable { attempts: usize },
}
