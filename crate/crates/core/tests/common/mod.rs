#![allow(dead_code)]

use fedflex_core::instances::{gen_dispatch, DispatchParams, Range};
use fedflex_core::model::{Agent, CouplingConstraint, CouplingKind, LocalBox, ProblemInstance, QuadraticCost, Term};

/// Mixed-box dispatch family used across the suites; `None` when the sampled
/// boxes cannot meet the demand.
pub fn mixed_dispatch(n: usize, seed: u64) -> Option<ProblemInstance> {
    gen_dispatch(&DispatchParams {
        n_agents: n,
        a: Range::new(0.5, 2.0),
        b: Range::new(-1.0, 1.0),
        fixed_a: None,
        bounded_fraction: 0.5,
        lower: Range::new(0.0, 0.5),
        upper: Range::new(1.0, 2.0),
        total_demand: 1.2 * n as f64,
        seed,
    })
    .ok()
}

/// Dispatch without any bounds.
pub fn unbounded_dispatch(n: usize, seed: u64) -> ProblemInstance {
    gen_dispatch(&DispatchParams {
        a: Range::new(0.5, 2.0),
        b: Range::new(-1.0, 1.0),
        ..DispatchParams::simple(n, 1.2 * n as f64, seed)
    })
    .unwrap()
}

/// Three unbounded agents with two variables each and two overlapping
/// equality rows, so copies of more than one multiplier circulate.
pub fn two_row_unbounded() -> ProblemInstance {
    let agents = (0..3)
        .map(|i| {
            let a = 1.0 + 0.5 * i as f64;
            Agent::new(
                i,
                vec![
                    QuadraticCost::new(a, 0.3 * i as f64 - 0.2, 0.0),
                    QuadraticCost::new(2.0 - 0.4 * i as f64, 0.1, 0.0),
                ],
                LocalBox::unbounded(2),
            )
        })
        .collect();
    let rows = vec![
        CouplingConstraint::with_equal_shares(
            CouplingKind::Equality,
            vec![Term::new(0, 0, 1.0), Term::new(1, 0, 1.0), Term::new(2, 0, 1.0)],
            3.0,
        ),
        CouplingConstraint::with_equal_shares(
            CouplingKind::Equality,
            vec![Term::new(0, 1, 1.0), Term::new(1, 1, 0.5), Term::new(1, 0, -0.25)],
            1.0,
        ),
    ];
    ProblemInstance::new(agents, rows)
}

/// Bounded dispatch with an extra capacity row `x_0 + x_1 ≤ cap` that binds.
pub fn capped_dispatch(cap: f64) -> ProblemInstance {
    let agents = (0..3)
        .map(|i| {
            Agent::new(
                i,
                vec![QuadraticCost::new(0.5 + 0.25 * i as f64, -1.0, 0.0)],
                LocalBox::uniform(1, 0.0, 3.0),
            )
        })
        .collect();
    let rows = vec![
        CouplingConstraint::with_equal_shares(
            CouplingKind::Equality,
            (0..3).map(|i| Term::new(i, 0, 1.0)).collect(),
            4.0,
        ),
        CouplingConstraint::with_equal_shares(
            CouplingKind::Inequality,
            vec![Term::new(0, 0, 1.0), Term::new(1, 0, 1.0)],
            cap,
        ),
    ];
    ProblemInstance::new(agents, rows)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}
