//! Timing records, speedups and power-law fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Decomposition, Summary};
use crate::kernels::{Equation, Method};
use crate::partition::LaunchConfig;
use crate::transport::ClockMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerfError {
    #[error("power-law fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("power-law fit needs positive data, got ({x}, {y})")]
    NonPositive { x: f64, y: f64 },
    #[error("all x values are equal; the exponent is undetermined")]
    DegenerateFit,
    #[error("no records to choose from")]
    NoRecords,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub equation: Equation,
    pub method: Method,
    pub scheme: Decomposition,
    pub n: usize,
    pub w: usize,
    pub wf: usize,
    pub ranks: usize,
    pub steps: u64,
    pub mode: ClockMode,
    pub avg_us_per_step: f64,
    pub msgs: u64,
    pub bytes: u64,
    pub rounds: u64,
    pub virtual_comm_us: f64,
    pub setup_us: f64,
}

impl TimingRecord {
    /// Ordering key for deterministic output.
    pub fn sort_key(&self) -> (Equation, Method, Decomposition, usize, usize, usize, usize, u64) {
        (
            self.equation,
            self.method,
            self.scheme,
            self.n,
            self.w,
            self.wf,
            self.ranks,
            self.steps,
        )
    }
}

/// Average time per step of a finished run. Setup is reported separately;
/// in virtual mode it is zero so records stay deterministic.
pub fn measure(cfg: &LaunchConfig, run: &Summary) -> TimingRecord {
    let total = match run.mode {
        ClockMode::Virtual => run.virtual_time,
        ClockMode::Wall => run.elapsed.as_secs_f64(),
    };
    let avg = if run.steps > 0 {
        total / run.steps as f64
    } else {
        0.0
    };
    TimingRecord {
        equation: cfg.spec.equation,
        method: cfg.spec.method,
        scheme: run.decomposition,
        n: cfg.grid_size,
        w: cfg.block_width,
        wf: cfg.work_factor,
        ranks: cfg.ranks,
        steps: cfg.steps,
        mode: run.mode,
        avg_us_per_step: avg * 1e6,
        msgs: run.stats.messages_sent,
        bytes: run.stats.bytes_sent,
        rounds: run.stats.exchange_rounds,
        virtual_comm_us: run.stats.virtual_comm_time * 1e6,
        setup_us: match run.mode {
            ClockMode::Virtual => 0.0,
            ClockMode::Wall => run.setup.as_secs_f64() * 1e6,
        },
    }
}

pub fn speedup(time_classic: f64, time_swept: f64) -> f64 {
    time_classic / time_swept
}

pub fn flattening_speedup(time_lengthening: f64, time_flattening: f64) -> f64 {
    time_lengthening / time_flattening
}

/// `y = a x^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x.powf(self.b)
    }
}

/// Least squares on `ln y = ln a + b ln x`.
pub fn power_law_fit(points: &[(f64, f64)]) -> Result<FitResult, PerfError> {
    if points.len() < 3 {
        return Err(PerfError::TooFewPoints(points.len()));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(PerfError::NonPositive { x, y });
    }
    let m = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(PerfError::DegenerateFit);
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let ln_a = my - b * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - ln_a - b * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(FitResult {
        a: ln_a.exp(),
        b,
        r_squared,
    })
}

/// Fastest record; ties go to the smaller block width, then the smaller work factor.
pub fn best_config(records: &[TimingRecord]) -> Result<&TimingRecord, PerfError> {
    records
        .iter()
        .min_by(|x, y| {
            x.avg_us_per_step
                .total_cmp(&y.avg_us_per_step)
                .then(x.w.cmp(&y.w))
                .then(x.wf.cmp(&y.wf))
        })
        .ok_or(PerfError::NoRecords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(w: usize, wf: usize, avg: f64) -> TimingRecord {
        TimingRecord {
            equation: Equation::Heat,
            method: Method::Lengthening,
            scheme: Decomposition::Swept,
            n: 1024,
            w,
            wf,
            ranks: 2,
            steps: 10,
            mode: ClockMode::Virtual,
            avg_us_per_step: avg,
            msgs: 0,
            bytes: 0,
            rounds: 0,
            virtual_comm_us: 0.0,
            setup_us: 0.0,
        }
    }

    #[test]
    fn speedup_examples() {
        assert_eq!(speedup(10.0, 5.0), 2.0);
        assert_eq!(speedup(3.0, 3.0), 1.0);
        assert_eq!(flattening_speedup(3.4, 1.0), 3.4);
        assert_eq!(flattening_speedup(2.0, 2.0), 1.0);
    }

    #[test]
    fn exact_linear_fit() {
        let pts: Vec<(f64, f64)> = (1..6).map(|x| (x as f64, 2.0 * x as f64)).collect();
        let fit = power_law_fit(&pts).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-12);
        assert!((fit.b - 1.0).abs() < 1e-12);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            power_law_fit(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(PerfError::TooFewPoints(2))
        );
        assert_eq!(
            power_law_fit(&[(4.0, 1.0), (4.0, 2.0), (4.0, 3.0)]),
            Err(PerfError::DegenerateFit)
        );
        assert!(matches!(
            power_law_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 3.0)]),
            Err(PerfError::NonPositive { .. })
        ));
    }

    #[test]
    fn best_config_rules() {
        let one = [record(64, 0, 10.0)];
        assert_eq!(best_config(&one).unwrap(), &one[0]);
        let two = [record(64, 0, 10.0), record(128, 0, 8.0)];
        assert_eq!(best_config(&two).unwrap().w, 128);
        let tie = [record(128, 0, 8.0), record(64, 2, 8.0), record(64, 0, 8.0)];
        let best = best_config(&tie).unwrap();
        assert_eq!((best.w, best.wf), (64, 0));
        assert_eq!(best_config(&[]), Err(PerfError::NoRecords));
    }

    proptest! {
        #[test]
        fn fit_round_trip(a in 1e-6f64..1e3, b in 0.5f64..1.5) {
            let pts: Vec<(f64, f64)> = (10..17)
                .map(|k| {
                    let x = (1u64 << k) as f64;
                    (x, a * x.powf(b))
                })
                .collect();
            let fit = power_law_fit(&pts).unwrap();
            prop_assert!(((fit.a - a) / a).abs() < 1e-6);
            prop_assert!(((fit.b - b) / b).abs() < 1e-6);
            prop_assert!(fit.r_squared >= 1.0 - 1e-12);
        }

        #[test]
        fn r_squared_in_unit_interval(ys in proptest::collection::vec(1e-3f64..1e3, 3..12)) {
            let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect();
            let fit = power_law_fit(&pts).unwrap();
            prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        }

        #[test]
        fn speedup_antisymmetry(a in 1e-9f64..1e9, b in 1e-9f64..1e9) {
            prop_assert!((speedup(a, b) * speedup(b, a) - 1.0).abs() < 1e-15);
        }
    }
}
