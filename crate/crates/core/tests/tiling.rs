use std::collections::HashMap;

use swept_core::kernels::{Equation, Method};
use swept_core::{solve, CoveragePhase, Decomposition, LaunchConfig, RunOptions};

fn coverage_counts(cfg: &LaunchConfig, d: Decomposition) -> (HashMap<(usize, u64), u32>, Vec<CoveragePhase>) {
    let opts = RunOptions {
        record_coverage: true,
        ..RunOptions::default()
    };
    let out = solve(cfg, d, &opts).unwrap();
    let records = out.coverage.unwrap();
    assert_eq!(records.len() as u64, out.kernel_calls);
    let mut counts = HashMap::new();
    let mut phases: Vec<CoveragePhase> = records.iter().map(|r| r.phase).collect();
    phases.sort();
    phases.dedup();
    for r in records {
        *counts.entry((r.index, r.substep)).or_insert(0) += 1;
    }
    (counts, phases)
}

fn assert_exact_cover(cfg: &LaunchConfig, counts: &HashMap<(usize, u64), u32>) {
    let total = cfg.total_substeps();
    assert_eq!(counts.len() as u64, cfg.grid_size as u64 * total);
    for i in 0..cfg.grid_size {
        for s in 1..=total {
            assert_eq!(counts.get(&(i, s)), Some(&1), "point {i} substep {s}");
        }
    }
}

#[test]
fn swept_covers_space_time_exactly_once() {
    let cases = [
        (Equation::Heat, Method::Lengthening, 64, 2, 8, 0, 16),
        (Equation::Heat, Method::Lengthening, 96, 3, 4, 0, 9),
        (Equation::Euler, Method::Lengthening, 320, 4, 16, 2, 6),
        (Equation::Euler, Method::Flattening, 128, 2, 8, 3, 10),
        (Equation::Euler, Method::Flattening, 48, 3, 4, 0, 5),
    ];
    for (eq, m, n, r, w, wf, t) in cases {
        let cfg = LaunchConfig::new(eq, m, n, r, w, wf, t).unwrap();
        let (counts, phases) = coverage_counts(&cfg, Decomposition::Swept);
        assert_exact_cover(&cfg, &counts);
        assert!(phases.contains(&CoveragePhase::Down));
    }
}

#[test]
fn remainder_substeps_are_classic() {
    let cfg = LaunchConfig::new(Equation::Heat, Method::Lengthening, 64, 2, 8, 0, 10).unwrap();
    let (counts, phases) = coverage_counts(&cfg, Decomposition::Swept);
    assert_exact_cover(&cfg, &counts);
    assert_eq!(
        phases,
        vec![
            CoveragePhase::Up,
            CoveragePhase::Diamond,
            CoveragePhase::Down,
            CoveragePhase::Classic
        ]
    );
}

#[test]
fn classic_covers_space_time_exactly_once() {
    let cfg = LaunchConfig::new(Equation::Euler, Method::Lengthening, 64, 2, 8, 0, 3).unwrap();
    let (counts, phases) = coverage_counts(&cfg, Decomposition::Classic);
    assert_exact_cover(&cfg, &counts);
    assert_eq!(phases, vec![CoveragePhase::Classic]);
}

#[test]
fn kernel_calls_count_substeps() {
    for (m, s) in [(Method::Lengthening, 4), (Method::Flattening, 2)] {
        let cfg = LaunchConfig::new(Equation::Euler, m, 128, 2, 16, 0, 10).unwrap();
        for d in [Decomposition::Serial, Decomposition::Classic, Decomposition::Swept] {
            let out = solve(&cfg, d, &RunOptions::default()).unwrap();
            assert_eq!(out.kernel_calls, 128 * 10 * s, "{m} {d}");
            assert_eq!(out.substep, 10 * s);
        }
    }
}
