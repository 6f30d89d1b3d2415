//! Federated consensus + innovations solver for distributed energy resource
//! dispatch.
//!
//! Agents hold separable convex quadratic costs, local boxes and a share of
//! each linear coupling they touch. Every iteration each agent nudges its
//! local copies of the coupling multipliers toward its neighbours' copies
//! (consensus) and along its first-order optimality residual (innovation),
//! then projects onto its box. A centralized [`oracle`] provides ground truth.
//!
//! ```
//! use fedflex_core::instances::{gen_dispatch, DispatchParams};
//! use fedflex_core::network::{build_topology, ExchangeSchedule, TopologySpec};
//! use fedflex_core::solver::{run, GainSchedule, RunConfig};
//!
//! let instance = gen_dispatch(&DispatchParams::simple(2, 2.0, 1)).unwrap();
//! let topology = build_topology(&TopologySpec::Ring(2)).unwrap();
//! let gains = GainSchedule::default_for(&instance, &topology);
//! let report = run(&instance, &topology, &ExchangeSchedule::sync(), &gains, &RunConfig::default()).unwrap();
//! assert!(report.converged);
//! assert!((report.x[0] - 1.0).abs() < 1e-4);
//! ```

pub mod instances;
pub mod model;
pub mod network;
pub mod oracle;
pub mod solver;
