//! The agentwise sweep and the stacked linear recursion agree on unconstrained
//! instances, and the mailbox-driven run reproduces the sweep exactly.

mod common;

use fedflex_core::model::ProblemInstance;
use fedflex_core::network::{build_topology, ExchangeSchedule, TopologySpec};
use fedflex_core::solver::{
    assemble_linear_form, linear_step, project, run_with_observer, sync_sweep, AgentState, GainSchedule, RunConfig,
};

fn cases() -> Vec<(ProblemInstance, TopologySpec)> {
    vec![
        (common::unbounded_dispatch(3, 1), TopologySpec::Ring(3)),
        (common::unbounded_dispatch(5, 2), TopologySpec::Star(5)),
        (
            common::unbounded_dispatch(6, 3),
            TopologySpec::RandomConnected {
                n: 6,
                edge_prob: 0.5,
                seed: 7,
            },
        ),
        (common::two_row_unbounded(), TopologySpec::Ring(3)),
        (common::two_row_unbounded(), TopologySpec::Star(3)),
    ]
}

#[test]
fn thousand_sweeps_match_linear_steps() {
    for (instance, spec) in cases() {
        let topology = build_topology(&spec).unwrap();
        let gains = GainSchedule::default_for(&instance, &topology);
        let form = assemble_linear_form(&instance, &topology, &gains, None).unwrap();
        let mut states: Vec<AgentState> = (0..instance.n_agents())
            .map(|i| AgentState::initial(&instance, i))
            .collect();
        let mut v = form.stack(&states);
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            states = sync_sweep(&instance, &topology, &gains, &states)
                .unwrap()
                .iter()
                .map(|s| project(s, &instance))
                .collect();
            v = linear_step(&v, &form).unwrap();
            let agentwise = form.stack(&states);
            worst = worst.max((&agentwise - &v).amax());
        }
        assert!(worst <= 1e-12, "{spec}: max difference {worst:e}");
    }
}

#[test]
fn mailbox_run_reproduces_sweep() {
    let instance = common::mixed_dispatch(4, 11).unwrap();
    let topology = build_topology(&TopologySpec::Ring(4)).unwrap();
    let gains = GainSchedule::default_for(&instance, &topology);
    let mut reference: Vec<AgentState> = (0..4).map(|i| AgentState::initial(&instance, i)).collect();
    let config = RunConfig {
        max_iter: 200,
        kkt_tol: 0.0,
        consensus_tol: 0.0,
        ..RunConfig::default()
    };
    run_with_observer(
        &instance,
        &topology,
        &ExchangeSchedule::sync(),
        &gains,
        &config,
        |k, states| {
            if k > 0 {
                reference = sync_sweep(&instance, &topology, &gains, &reference)
                    .unwrap()
                    .iter()
                    .map(|s| project(s, &instance))
                    .collect();
            }
            assert_eq!(states, reference.as_slice(), "iteration {k}");
        },
    )
    .unwrap();
}
