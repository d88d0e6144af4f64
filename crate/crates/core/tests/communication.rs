use std::collections::BTreeMap;

use swept_core::kernels::{Equation, Method};
use swept_core::transport::{CostModel, Phase};
use swept_core::{
    expected_messages, expected_rounds, solve, ClockMode, Decomposition, LaunchConfig, RunOptions,
};

fn cfg(eq: Equation, method: Method, n: usize, ranks: usize, w: usize, wf: usize, steps: u64) -> LaunchConfig {
    LaunchConfig::new(eq, method, n, ranks, w, wf, steps).unwrap()
}

/// Distinct rounds in a message log.
fn logged_rounds(log: &[swept_core::LogRecord]) -> u64 {
    let mut rounds: Vec<u64> = log.iter().map(|r| r.tag.round).collect();
    rounds.dedup();
    rounds.len() as u64
}

#[test]
fn classic_rounds_are_one_per_substep() {
    let heat = cfg(Equation::Heat, Method::Lengthening, 64, 2, 8, 0, 10);
    let out = solve(&heat, Decomposition::Classic, &RunOptions::default()).unwrap();
    assert_eq!(out.stats.exchange_rounds, 10);
    assert_eq!(logged_rounds(&out.log), 10);

    let euler = cfg(Equation::Euler, Method::Lengthening, 64, 2, 8, 0, 10);
    let out = solve(&euler, Decomposition::Classic, &RunOptions::default()).unwrap();
    assert_eq!(out.stats.exchange_rounds, 40);
    assert_eq!(logged_rounds(&out.log), 40);
}

#[test]
fn swept_rounds_are_one_per_cycle() {
    let heat = cfg(Equation::Heat, Method::Lengthening, 64, 2, 8, 0, 40);
    let out = solve(&heat, Decomposition::Swept, &RunOptions::default()).unwrap();
    assert_eq!(logged_rounds(&out.log), 10);

    let euler = cfg(Equation::Euler, Method::Lengthening, 256, 2, 32, 0, 100);
    let out = solve(&euler, Decomposition::Swept, &RunOptions::default()).unwrap();
    assert_eq!(logged_rounds(&out.log), 25);
}

#[test]
fn swept_passes_alternate_direction_with_fixed_buffers() {
    let c = cfg(Equation::Euler, Method::Lengthening, 192, 3, 8, 0, 8);
    let out = solve(&c, Decomposition::Swept, &RunOptions::default()).unwrap();
    let mut by_round: BTreeMap<u64, Vec<_>> = BTreeMap::new();
    for r in &out.log {
        by_round.entry(r.round).or_default().push(*r);
    }
    assert_eq!(by_round.len(), 8);
    for (round, msgs) in &by_round {
        // one message per rank, all in the same direction
        assert_eq!(msgs.len(), 3);
        let phase = if round % 2 == 0 { Phase::SweptLeft } else { Phase::SweptRight };
        for m in msgs {
            assert_eq!(m.tag.phase, phase);
            let dest = match phase {
                Phase::SweptLeft => (m.source + 2) % 3,
                _ => (m.source + 1) % 3,
            };
            assert_eq!(m.dest, dest);
            // w/2 + 1 cells of seven doubles
            assert_eq!(m.bytes, 5 * 56);
        }
    }
}

#[test]
fn message_counts_match_predictions() {
    let cases = [
        (Equation::Heat, Method::Lengthening, 128, 2, 8, 0, 16),
        (Equation::Heat, Method::Lengthening, 192, 3, 16, 0, 24),
        (Equation::Heat, Method::Lengthening, 384, 3, 32, 4, 13),
        (Equation::Euler, Method::Lengthening, 256, 4, 16, 0, 20),
        (Equation::Euler, Method::Flattening, 256, 4, 16, 0, 20),
        (Equation::Euler, Method::Flattening, 96, 2, 4, 2, 7),
    ];
    for (eq, m, n, r, w, wf, t) in cases {
        let c = cfg(eq, m, n, r, w, wf, t);
        for d in [Decomposition::Classic, Decomposition::Swept] {
            let out = solve(&c, d, &RunOptions::default()).unwrap();
            assert_eq!(out.stats.messages_sent, expected_messages(&c, d).unwrap());
            assert_eq!(out.log.len() as u64, out.stats.messages_sent);
            assert_eq!(out.stats.exchange_rounds, expected_rounds(&c, d).unwrap());
            assert_eq!(logged_rounds(&out.log), out.stats.exchange_rounds);
            let bytes: u64 = out.log.iter().map(|r| r.bytes as u64).sum();
            assert_eq!(bytes, out.stats.bytes_sent);
        }
    }
}

#[test]
fn message_economy_does_not_depend_on_blocks_per_rank() {
    let counts: Vec<u64> = [64, 128, 512]
        .iter()
        .map(|&n| {
            let c = cfg(Equation::Heat, Method::Lengthening, n, 2, 8, 0, 16);
            solve(&c, Decomposition::Swept, &RunOptions::default())
                .unwrap()
                .stats
                .messages_sent
        })
        .collect();
    assert_eq!(counts, vec![8, 8, 8]);
}

#[test]
fn virtual_runs_are_deterministic() {
    let c = cfg(Equation::Euler, Method::Lengthening, 320, 4, 16, 2, 12);
    for d in [Decomposition::Classic, Decomposition::Swept] {
        let a = solve(&c, d, &RunOptions::default()).unwrap();
        let b = solve(&c, d, &RunOptions::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.virtual_time.to_bits(), b.virtual_time.to_bits());
        assert_eq!(a.stats, b.stats);
    }
}

#[test]
fn virtual_time_matches_the_closed_form() {
    let mut c = cfg(Equation::Heat, Method::Lengthening, 256, 2, 16, 0, 32);
    c.cost = CostModel {
        latency: 1e-4,
        inverse_bandwidth: 0.0,
        compute_cost: 1e-8,
    };
    let points_per_rank = 128.0;
    let classic = solve(&c, Decomposition::Classic, &RunOptions::default()).unwrap();
    let expect = 32.0 * (points_per_rank * 1e-8 + 1e-4);
    assert!((classic.virtual_time - expect).abs() < 1e-12 * expect);

    let swept = solve(&c, Decomposition::Swept, &RunOptions::default()).unwrap();
    let expect = 32.0 * points_per_rank * 1e-8 + 4.0 * 1e-4;
    assert!((swept.virtual_time - expect).abs() < 1e-12 * expect);
    assert!((swept.stats.virtual_comm_time - 4e-4).abs() < 1e-15);
}

#[test]
fn wall_mode_keeps_counts_but_no_clock() {
    let mut c = cfg(Equation::Heat, Method::Lengthening, 128, 2, 8, 0, 16);
    c.mode = ClockMode::Wall;
    let out = solve(&c, Decomposition::Swept, &RunOptions::default()).unwrap();
    assert_eq!(out.virtual_time, 0.0);
    assert_eq!(out.stats.exchange_rounds, 4);
}
