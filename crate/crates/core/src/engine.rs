//! Runs a configuration under a decomposition and collects the results.
//!
//! [`run`] is generic over the scheme. [`solve`] and [`verify`] pick the
//! scheme from the config at run time and return observable fields.

use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classic::{classic_advance, ClassicWorkspace, HaloOrder};
use crate::kernels::{
    Equation, EulerFlattening, EulerLengthening, HeatFtcs, KernelError, Method, StateCell, Stencil,
};
use crate::partition::{
    allocate_working_array, initial_cells, initial_condition, partition, ConfigError, LaunchConfig,
};
use crate::rank::{CoverageRecord, Item, RankPart, Worker};
use crate::serial::serial_advance;
use crate::swept::{cycle_plan, swept_advance, SweptWorkspace};
use crate::transport::{
    merge_logs, ring, ClockMode, CommStats, LogRecord, PhaseContract, RankComm, TransportError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("rank {rank}: kernel failed at point {index}, substep {substep}: {source}")]
    Kernel {
        rank: usize,
        index: usize,
        substep: u64,
        #[source]
        source: KernelError,
    },
    #[error("rank {rank}: {context}: {source}")]
    Transport {
        rank: usize,
        context: &'static str,
        #[source]
        source: TransportError,
    },
    #[error("rank {rank}: point {index} read at level {found:?} while computing substep {substep}")]
    StaleRead {
        rank: usize,
        index: usize,
        substep: u64,
        found: Option<u64>,
    },
    #[error("block width {w} cannot be swept with half-width {h}")]
    InvalidWidth { w: usize, h: usize },
    #[error("rank {rank} is at substep {found}, expected {expected}")]
    PhaseSkew { rank: usize, expected: u64, found: u64 },
    #[error("gather failed: {0}")]
    Gather(String),
    #[error("scheme {scheme} does not match the configured {configured}")]
    SchemeMismatch { scheme: String, configured: String },
    #[error("rank {rank} panicked")]
    RankPanicked { rank: usize },
}

impl EngineError {
    /// True when the error only reports that some other rank failed first.
    pub fn is_secondary(&self) -> bool {
        matches!(self, EngineError::Transport { source, .. } if source.is_secondary())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decomposition {
    Classic,
    Swept,
    Serial,
}

impl fmt::Display for Decomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decomposition::Classic => "classic",
            Decomposition::Swept => "swept",
            Decomposition::Serial => "serial",
        })
    }
}

impl FromStr for Decomposition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "classic" => Ok(Decomposition::Classic),
            "swept" => Ok(Decomposition::Swept),
            "serial" => Ok(Decomposition::Serial),
            other => Err(format!(
                "unknown scheme `{other}` (expected classic | swept | serial)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record every computed (point, substep) pair.
    pub record_coverage: bool,
    /// Nudge this global point by one ulp on the final substep of swept runs.
    pub inject_ulp: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput<C> {
    /// Global state in index order.
    pub cells: Vec<C>,
    /// Substep level of every cell.
    pub level: u64,
    pub stats: CommStats,
    pub log: Vec<LogRecord>,
    pub coverage: Option<Vec<CoverageRecord>>,
    /// Point updates performed.
    pub kernel_calls: u64,
    pub elapsed: Duration,
    pub setup: Duration,
    /// Largest rank clock at the end, seconds; zero in wall-clock mode.
    pub virtual_time: f64,
}

/// Exchange rounds a run performs.
pub fn expected_rounds(cfg: &LaunchConfig, decomposition: Decomposition) -> Result<u64, EngineError> {
    let total = cfg.total_substeps();
    Ok(match decomposition {
        Decomposition::Serial => 0,
        Decomposition::Classic => total,
        Decomposition::Swept => {
            let (cycles, rem) = cycle_plan(total, cfg.block_width, cfg.spec.stencil_half_width)?;
            cycles + rem
        }
    })
}

/// Messages sent across all ranks in a run.
pub fn expected_messages(cfg: &LaunchConfig, decomposition: Decomposition) -> Result<u64, EngineError> {
    let r = cfg.ranks as u64;
    let total = cfg.total_substeps();
    Ok(match decomposition {
        Decomposition::Serial => 0,
        Decomposition::Classic => 2 * r * total,
        Decomposition::Swept => {
            let (cycles, rem) = cycle_plan(total, cfg.block_width, cfg.spec.stencil_half_width)?;
            r * cycles + 2 * r * rem
        }
    })
}

/// Assembles rank parts into the global state; all parts must share a level.
pub fn gather_global<C: Copy + Default>(
    parts: &[RankPart<C>],
    n: usize,
) -> Result<(Vec<C>, u64), EngineError> {
    let first = parts
        .first()
        .ok_or_else(|| EngineError::Gather("no rank parts".into()))?;
    if let Some(p) = parts.iter().find(|p| p.level != first.level) {
        return Err(EngineError::PhaseSkew {
            rank: p.rank,
            expected: first.level,
            found: p.level,
        });
    }
    let mut out = vec![C::default(); n];
    let mut seen = vec![false; n];
    for part in parts {
        for (i, cell) in part.cells.iter().enumerate() {
            let g = (part.start + i) % n;
            if std::mem::replace(&mut seen[g], true) {
                return Err(EngineError::Gather(format!(
                    "point {g} delivered twice (rank {})",
                    part.rank
                )));
            }
            out[g] = *cell;
        }
    }
    if let Some(g) = seen.iter().position(|s| !s) {
        return Err(EngineError::Gather(format!("point {g} missing")));
    }
    Ok((out, first.level))
}

enum Work<C> {
    Classic(ClassicWorkspace<C>),
    Swept(SweptWorkspace<C>),
}

struct RankOutcome<C> {
    part: RankPart<C>,
    stats: RankComm,
    log: Vec<LogRecord>,
    clock: f64,
    coverage: Option<Vec<CoverageRecord>>,
    kernel_calls: u64,
}

fn run_rank<S: Stencil>(
    scheme: &S,
    ep: crate::transport::Endpoint<Item<S::Cell>>,
    work: Work<S::Cell>,
    n: usize,
    total: u64,
    record_coverage: bool,
) -> Result<RankOutcome<S::Cell>, EngineError> {
    let mut worker = Worker::new(scheme, ep, n, record_coverage);
    let result = match work {
        Work::Classic(mut ws) => classic_advance(&mut worker, &mut ws, total, HaloOrder::ComputeFirst)
            .map(|()| ws.into_part()),
        Work::Swept(ws) => swept_advance(&mut worker, ws, total),
    };
    match result {
        Ok(part) => {
            let Worker {
                ep,
                coverage,
                kernel_calls,
                ..
            } = worker;
            let (stats, log, clock) = ep.finish();
            Ok(RankOutcome {
                part,
                stats,
                log,
                clock,
                coverage,
                kernel_calls,
            })
        }
        Err(e) => {
            worker.ep.abort();
            Err(e)
        }
    }
}

/// Runs `cfg` with `scheme` under `decomposition`.
pub fn run<S: Stencil>(
    cfg: &LaunchConfig,
    scheme: &S,
    decomposition: Decomposition,
    opts: &RunOptions,
) -> Result<RunOutput<S::Cell>, EngineError> {
    let setup_timer = Instant::now();
    cfg.validate()?;
    if scheme.spec() != cfg.spec {
        return Err(EngineError::SchemeMismatch {
            scheme: format!("{}/{}", scheme.spec().equation, scheme.spec().method),
            configured: format!("{}/{}", cfg.spec.equation, cfg.spec.method),
        });
    }
    let n = cfg.grid_size;
    let field = initial_condition(cfg.initial, n, cfg.spec.equation, cfg.phys.gamma)?;
    let global = initial_cells(scheme, &field);
    let total = cfg.total_substeps();

    if decomposition == Decomposition::Serial {
        let setup = setup_timer.elapsed();
        let timer = Instant::now();
        let cells = serial_advance(scheme, &global, total)?;
        let kernel_calls = n as u64 * total;
        return Ok(RunOutput {
            cells,
            level: total,
            stats: CommStats::default(),
            log: Vec::new(),
            coverage: None,
            kernel_calls,
            elapsed: timer.elapsed(),
            setup,
            virtual_time: match cfg.mode {
                ClockMode::Virtual => kernel_calls as f64 * cfg.cost.compute_cost,
                ClockMode::Wall => 0.0,
            },
        });
    }

    let layout = partition(cfg)?;
    let (w, h) = (cfg.block_width, cfg.spec.stencil_half_width);
    let contract = PhaseContract {
        halo: h,
        swept: w / 2 + h,
    };
    let endpoints = ring::<Item<S::Cell>>(
        cfg.ranks,
        cfg.mode,
        cfg.cost,
        contract,
        cfg.spec.cell_bytes(),
    );
    let works: Vec<Work<S::Cell>> = (0..cfg.ranks)
        .map(|r| {
            let start = layout.starts[r];
            match decomposition {
                Decomposition::Classic => Work::Classic(ClassicWorkspace::from_global(
                    r,
                    &global,
                    start,
                    layout.points(r),
                    h,
                )),
                _ => {
                    let blocks = layout.blocks[r];
                    let arr = allocate_working_array(blocks, w, &cfg.spec, &global, start);
                    Work::Swept(SweptWorkspace::new(r, start, blocks, w, h, arr))
                }
            }
        })
        .collect();
    let setup = setup_timer.elapsed();

    let timer = Instant::now();
    let record = opts.record_coverage;
    let results: Vec<Result<RankOutcome<S::Cell>, EngineError>> = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(works)
            .map(|(ep, work)| s.spawn(move || run_rank(scheme, ep, work, n, total, record)))
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(rank, handle)| {
                handle
                    .join()
                    .unwrap_or(Err(EngineError::RankPanicked { rank }))
            })
            .collect()
    });
    let elapsed = timer.elapsed();

    let mut outcomes = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let pick = errors.iter().position(|e| !e.is_secondary()).unwrap_or(0);
        return Err(errors.swap_remove(pick));
    }

    let parts: Vec<RankPart<S::Cell>> = outcomes.iter().map(|o| o.part.clone()).collect();
    let (cells, level) = gather_global(&parts, n)?;
    let virtual_time = outcomes.iter().map(|o| o.clock).fold(0.0, f64::max);
    let kernel_calls = outcomes.iter().map(|o| o.kernel_calls).sum();
    let coverage = record.then(|| {
        let mut all: Vec<CoverageRecord> = outcomes
            .iter_mut()
            .flat_map(|o| o.coverage.take().unwrap_or_default())
            .collect();
        all.sort();
        all
    });
    let stats = CommStats::from_ranks(outcomes.iter().map(|o| o.stats).collect());
    let log = merge_logs(outcomes.into_iter().map(|o| o.log));
    Ok(RunOutput {
        cells,
        level,
        stats,
        log,
        coverage,
        kernel_calls,
        elapsed,
        setup,
        virtual_time,
    })
}

/// Wraps a scheme and nudges one point by one ulp at one substep.
#[derive(Debug, Clone, Copy)]
pub struct Perturbed<S> {
    pub inner: S,
    pub index: usize,
    pub substep: u64,
}

impl<S: Stencil> Stencil for Perturbed<S> {
    type Cell = S::Cell;

    fn spec(&self) -> crate::kernels::EquationSpec {
        self.inner.spec()
    }

    fn init_cell(&self, field: &[f64]) -> S::Cell {
        self.inner.init_cell(field)
    }

    fn step_update(
        &self,
        window: &[S::Cell],
        global_index: usize,
        counter: u64,
    ) -> Result<S::Cell, KernelError> {
        let mut cell = self.inner.step_update(window, global_index, counter)?;
        if global_index == self.index && counter == self.substep {
            cell.map_values(f64::next_up);
        }
        Ok(cell)
    }

    fn observe(&self, cell: &S::Cell, level: u64, out: &mut Vec<f64>) {
        self.inner.observe(cell, level, out)
    }
}

/// Result of a run with the observable field flattened point by point.
#[derive(Debug, Clone)]
pub struct Summary {
    pub decomposition: Decomposition,
    pub field: Vec<f64>,
    /// Observable values per point.
    pub field_width: usize,
    pub substep: u64,
    pub stats: CommStats,
    pub log: Vec<LogRecord>,
    pub coverage: Option<Vec<CoverageRecord>>,
    pub kernel_calls: u64,
    pub elapsed: Duration,
    pub setup: Duration,
    pub virtual_time: f64,
    pub mode: ClockMode,
    pub steps: u64,
}

fn summarize<S: Stencil>(
    cfg: &LaunchConfig,
    scheme: &S,
    decomposition: Decomposition,
    opts: &RunOptions,
) -> Result<Summary, EngineError> {
    let out = run(cfg, scheme, decomposition, opts)?;
    let mut field = Vec::with_capacity(out.cells.len() * cfg.spec.field_width());
    for cell in &out.cells {
        scheme.observe(cell, out.level, &mut field);
    }
    Ok(Summary {
        decomposition,
        field,
        field_width: cfg.spec.field_width(),
        substep: out.level,
        stats: out.stats,
        log: out.log,
        coverage: out.coverage,
        kernel_calls: out.kernel_calls,
        elapsed: out.elapsed,
        setup: out.setup,
        virtual_time: out.virtual_time,
        mode: cfg.mode,
        steps: cfg.steps,
    })
}

fn summarize_maybe_perturbed<S: Stencil + Copy>(
    cfg: &LaunchConfig,
    scheme: S,
    decomposition: Decomposition,
    opts: &RunOptions,
) -> Result<Summary, EngineError> {
    match opts.inject_ulp {
        Some(index) if decomposition == Decomposition::Swept => {
            let wrapped = Perturbed {
                inner: scheme,
                index: index % cfg.grid_size.max(1),
                substep: cfg.total_substeps(),
            };
            summarize(cfg, &wrapped, decomposition, opts)
        }
        _ => summarize(cfg, &scheme, decomposition, opts),
    }
}

/// Runs `cfg` with the scheme its equation and method select.
pub fn solve(
    cfg: &LaunchConfig,
    decomposition: Decomposition,
    opts: &RunOptions,
) -> Result<Summary, EngineError> {
    let params = cfg.phys;
    match (cfg.spec.equation, cfg.spec.method) {
        (Equation::Heat, Method::Lengthening) => {
            summarize_maybe_perturbed(cfg, HeatFtcs { params }, decomposition, opts)
        }
        (Equation::Euler, Method::Lengthening) => {
            summarize_maybe_perturbed(cfg, EulerLengthening { params }, decomposition, opts)
        }
        (Equation::Euler, Method::Flattening) => {
            summarize_maybe_perturbed(cfg, EulerFlattening { params }, decomposition, opts)
        }
        (equation, method) => Err(ConfigError::from(KernelError::Unsupported {
            equation,
            method,
        })
        .into()),
    }
}

/// Largest absolute and relative difference between two fields.
pub fn field_diff(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "fields differ in length");
    a.iter().zip(b).fold((0.0_f64, 0.0_f64), |(abs, rel), (x, y)| {
        let d = (x - y).abs();
        let scale = x.abs().max(y.abs());
        let r = if scale > 0.0 { d / scale } else { 0.0 };
        (abs.max(d), rel.max(r))
    })
}

fn bitwise_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub swept_vs_classic: bool,
    pub classic_vs_serial: bool,
    pub swept_vs_serial: bool,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

impl VerifyReport {
    pub fn bitwise(&self) -> bool {
        self.swept_vs_classic && self.classic_vs_serial && self.swept_vs_serial
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bitwise: {}, max|diff| = ", self.bitwise())?;
        if self.max_abs_diff == 0.0 {
            f.write_str("0")
        } else {
            write!(f, "{:e}", self.max_abs_diff)
        }
    }
}

/// Runs swept, classic and the serial oracle and compares the fields.
pub fn verify(cfg: &LaunchConfig, opts: &RunOptions) -> Result<VerifyReport, EngineError> {
    let plain = RunOptions {
        inject_ulp: None,
        ..*opts
    };
    let serial = solve(cfg, Decomposition::Serial, &plain)?;
    let classic = solve(cfg, Decomposition::Classic, &plain)?;
    let swept = solve(cfg, Decomposition::Swept, opts)?;
    let pairs = [
        (&swept.field, &classic.field),
        (&classic.field, &serial.field),
        (&swept.field, &serial.field),
    ];
    let (mut abs, mut rel) = (0.0_f64, 0.0_f64);
    for (a, b) in pairs {
        let (da, dr) = field_diff(a, b);
        abs = abs.max(da);
        rel = rel.max(dr);
    }
    Ok(VerifyReport {
        swept_vs_classic: bitwise_equal(&swept.field, &classic.field),
        classic_vs_serial: bitwise_equal(&classic.field, &serial.field),
        swept_vs_serial: bitwise_equal(&swept.field, &serial.field),
        max_abs_diff: abs,
        max_rel_diff: rel,
    })
}

pub fn write_coverage(records: &[CoverageRecord], mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "{}", CoverageRecord::HEADER)?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_single_rank_is_verbatim() {
        let parts = [RankPart {
            rank: 0,
            start: 0,
            cells: vec![1.0, 2.0, 3.0],
            level: 4,
        }];
        assert_eq!(gather_global(&parts, 3).unwrap(), (vec![1.0, 2.0, 3.0], 4));
    }

    #[test]
    fn gather_two_ranks_in_order() {
        let a: Vec<f64> = (0..8).map(f64::from).collect();
        let b: Vec<f64> = (8..16).map(f64::from).collect();
        let parts = [
            RankPart {
                rank: 1,
                start: 8,
                cells: b,
                level: 1,
            },
            RankPart {
                rank: 0,
                start: 0,
                cells: a,
                level: 1,
            },
        ];
        let (cells, _) = gather_global(&parts, 16).unwrap();
        assert_eq!(cells, (0..16).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn gather_wraps_shifted_windows() {
        let parts = [
            RankPart {
                rank: 0,
                start: 2,
                cells: vec![2.0, 3.0],
                level: 0,
            },
            RankPart {
                rank: 1,
                start: 4 % 4,
                cells: vec![0.0, 1.0],
                level: 0,
            },
        ];
        assert_eq!(gather_global(&parts, 4).unwrap().0, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gather_rejects_skew() {
        let parts = [
            RankPart {
                rank: 0,
                start: 0,
                cells: vec![0.0],
                level: 3,
            },
            RankPart {
                rank: 1,
                start: 1,
                cells: vec![0.0],
                level: 2,
            },
        ];
        assert!(matches!(
            gather_global(&parts, 2),
            Err(EngineError::PhaseSkew {
                rank: 1,
                expected: 3,
                found: 2
            })
        ));
    }

    fn heat(n: usize, ranks: usize, w: usize, wf: usize, steps: u64) -> LaunchConfig {
        LaunchConfig::new(Equation::Heat, Method::Lengthening, n, ranks, w, wf, steps).unwrap()
    }

    #[test]
    fn zero_steps_returns_the_initial_condition() {
        let cfg = heat(64, 2, 8, 0, 0);
        let init = solve(&cfg, Decomposition::Serial, &RunOptions::default()).unwrap();
        for d in [Decomposition::Classic, Decomposition::Swept] {
            let s = solve(&cfg, d, &RunOptions::default()).unwrap();
            assert_eq!(s.field, init.field);
            assert_eq!(s.stats.exchange_rounds, 0);
        }
    }

    #[test]
    fn heat_rounds_match_the_formulas() {
        let cfg = heat(64, 2, 8, 0, 40);
        let classic = solve(&cfg, Decomposition::Classic, &RunOptions::default()).unwrap();
        let swept = solve(&cfg, Decomposition::Swept, &RunOptions::default()).unwrap();
        assert_eq!(classic.stats.exchange_rounds, 40);
        assert_eq!(swept.stats.exchange_rounds, 10);
    }

    #[test]
    fn small_heat_verifies_bitwise() {
        let report = verify(&heat(96, 3, 8, 0, 13), &RunOptions::default()).unwrap();
        assert!(report.bitwise(), "{report}");
        assert_eq!(report.to_string(), "bitwise: true, max|diff| = 0");
    }

    #[test]
    fn injected_ulp_is_detected() {
        let opts = RunOptions {
            inject_ulp: Some(5),
            ..RunOptions::default()
        };
        let report = verify(&heat(64, 2, 8, 0, 8), &opts).unwrap();
        assert!(!report.bitwise());
        assert!(report.max_abs_diff > 0.0);
    }

    #[test]
    fn kernel_failures_surface_with_context() {
        let mut cfg =
            LaunchConfig::new(Equation::Euler, Method::Lengthening, 64, 2, 8, 0, 200).unwrap();
        // an oversized time step drives the shock tube non-physical
        cfg.phys.dt *= 40.0;
        for d in [Decomposition::Classic, Decomposition::Swept] {
            let err = solve(&cfg, d, &RunOptions::default()).unwrap_err();
            assert!(matches!(err, EngineError::Kernel { .. }), "{d}: {err}");
        }
    }
}
