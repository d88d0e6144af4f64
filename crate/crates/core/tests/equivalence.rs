use proptest::prelude::*;
use swept_core::kernels::{Equation, Method};
use swept_core::{solve, verify, Decomposition, LaunchConfig, RunOptions};

fn pairings() -> [(Equation, Method); 3] {
    [
        (Equation::Heat, Method::Lengthening),
        (Equation::Euler, Method::Lengthening),
        (Equation::Euler, Method::Flattening),
    ]
}

/// Smallest grid that every rank count and work factor below divides evenly.
fn grid_for(w: usize, ranks: usize, wf: usize) -> usize {
    let shares = if wf > 0 { ranks - 1 + wf } else { ranks };
    w * shares * 2
}

#[test]
fn swept_classic_and_serial_agree_bitwise() {
    for (eq, method) in pairings() {
        for w in [4, 8, 16, 32] {
            for ranks in [2, 3, 4] {
                for wf in [0, 2, 4] {
                    let n = grid_for(w, ranks, wf);
                    let cfg = LaunchConfig::new(eq, method, n, ranks, w, wf, 20).unwrap();
                    let report = verify(&cfg, &RunOptions::default()).unwrap();
                    assert!(
                        report.bitwise(),
                        "{eq}/{method} n={n} w={w} R={ranks} wf={wf}: {report}"
                    );
                }
            }
        }
    }
}

#[test]
fn unaligned_step_counts_finish_with_classic_substeps() {
    for (eq, method) in pairings() {
        for steps in [1, 3, 7, 11] {
            let cfg = LaunchConfig::new(eq, method, 96, 3, 16, 0, steps).unwrap();
            let report = verify(&cfg, &RunOptions::default()).unwrap();
            assert!(report.bitwise(), "{eq}/{method} T={steps}: {report}");
        }
    }
}

#[test]
fn rank_count_does_not_change_the_answer() {
    for (eq, method) in pairings() {
        let fields: Vec<Vec<f64>> = [2, 3, 4]
            .iter()
            .map(|&r| {
                let cfg = LaunchConfig::new(eq, method, 192, r, 16, 0, 25).unwrap();
                solve(&cfg, Decomposition::Swept, &RunOptions::default())
                    .unwrap()
                    .field
            })
            .collect();
        assert_eq!(fields[0], fields[1]);
        assert_eq!(fields[1], fields[2]);
    }
}

#[test]
fn uniform_state_is_a_fixed_point() {
    for (eq, method) in pairings() {
        let mut cfg = LaunchConfig::new(eq, method, 64, 2, 8, 0, 12).unwrap();
        cfg.initial = swept_core::InitialCondition::Uniform;
        cfg.rederive_phys(0.4, 1.4, 0.4).unwrap();
        let init = solve(
            &LaunchConfig { steps: 0, ..cfg.clone() },
            Decomposition::Serial,
            &RunOptions::default(),
        )
        .unwrap();
        let out = solve(&cfg, Decomposition::Swept, &RunOptions::default()).unwrap();
        assert_eq!(out.field, init.field, "{eq}/{method}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_configs_agree(
        pairing in 0usize..3,
        w_exp in 2u32..6,
        ranks in 2usize..5,
        wf in prop::sample::select(vec![0usize, 2, 3]),
        mult in 1usize..3,
        steps in 0u64..30,
    ) {
        let (eq, method) = pairings()[pairing];
        let w = 1usize << w_exp;
        let n = grid_for(w, ranks, wf) * mult;
        let cfg = LaunchConfig::new(eq, method, n, ranks, w, wf, steps).unwrap();
        let report = verify(&cfg, &RunOptions::default()).unwrap();
        prop_assert!(report.bitwise(), "{} n={} w={} R={} wf={} T={}", report, n, w, ranks, wf, steps);
    }
}
