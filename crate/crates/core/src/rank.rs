//! Per-rank execution context shared by both decompositions.

use std::fmt;
use std::str::FromStr;

use crate::engine::EngineError;
use crate::kernels::Stencil;
use crate::partition::WorkingArray;
use crate::transport::{ClockMode, Direction, Endpoint, Phase, Tag};

/// What travels on the wire: a cell and the substep level it holds.
pub type Item<C> = (C, Option<u64>);

/// Payloads received from the left and right neighbours.
pub type Received<C> = (Vec<Item<C>>, Vec<Item<C>>);

/// Phase that produced a point update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoveragePhase {
    Up,
    Diamond,
    Down,
    Classic,
}

impl fmt::Display for CoveragePhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoveragePhase::Up => "up",
            CoveragePhase::Diamond => "diamond",
            CoveragePhase::Down => "down",
            CoveragePhase::Classic => "classic",
        })
    }
}

impl FromStr for CoveragePhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(CoveragePhase::Up),
            "diamond" => Ok(CoveragePhase::Diamond),
            "down" => Ok(CoveragePhase::Down),
            "classic" => Ok(CoveragePhase::Classic),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// One computed (point, substep) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoverageRecord {
    pub index: usize,
    pub substep: u64,
    pub rank: usize,
    pub phase: CoveragePhase,
}

impl CoverageRecord {
    pub const HEADER: &'static str = "index,substep,rank,phase";
}

impl fmt::Display for CoverageRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.index, self.substep, self.rank, self.phase)
    }
}

/// A rank's finished contribution: `cells[i]` is global point `(start + i) % n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankPart<C> {
    pub rank: usize,
    pub start: usize,
    pub cells: Vec<C>,
    pub level: u64,
}

pub(crate) struct Worker<'a, S: Stencil> {
    pub scheme: &'a S,
    pub ep: Endpoint<Item<S::Cell>>,
    pub n: usize,
    pub h: usize,
    pub coverage: Option<Vec<CoverageRecord>>,
    pub kernel_calls: u64,
    round: u64,
}

impl<'a, S: Stencil> Worker<'a, S> {
    pub fn new(scheme: &'a S, ep: Endpoint<Item<S::Cell>>, n: usize, record_coverage: bool) -> Self {
        Self {
            scheme,
            ep,
            n,
            h: scheme.spec().stencil_half_width,
            coverage: record_coverage.then(Vec::new),
            kernel_calls: 0,
            round: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.ep.rank()
    }

    /// Updates slots `lo..hi` of `arr` to substep `level`, left to right in
    /// place. `origin` is the global index of slot 0.
    pub fn update(
        &mut self,
        arr: &mut WorkingArray<S::Cell>,
        lo: usize,
        hi: usize,
        origin: usize,
        level: u64,
        phase: CoveragePhase,
    ) -> Result<(), EngineError> {
        let h = self.h;
        debug_assert!(lo >= h && hi + h <= arr.cells.len(), "window leaves the array");
        for p in lo..hi {
            self.check_inputs(arr, p, origin, level)?;
            let index = (origin + p) % self.n;
            let next = self
                .scheme
                .step_update(&arr.cells[p - h..=p + h], index, level)
                .map_err(|source| EngineError::Kernel {
                    rank: self.rank(),
                    index,
                    substep: level,
                    source,
                })?;
            arr.cells[p] = next;
            arr.levels[p] = Some(level);
            if let Some(cov) = self.coverage.as_mut() {
                cov.push(CoverageRecord {
                    index,
                    substep: level,
                    rank: self.ep.rank(),
                    phase,
                });
            }
        }
        let count = hi.saturating_sub(lo) as u64;
        self.kernel_calls += count;
        if self.ep.mode() == ClockMode::Virtual {
            self.ep
                .virtual_clock_advance(count)
                .map_err(|source| self.transport_error("compute", source))?;
        }
        Ok(())
    }

    /// Two-slot discipline: the centre holds `level - 1` and every neighbour
    /// in the stencil holds `level - 1` or at most one level more.
    fn check_inputs(
        &self,
        arr: &WorkingArray<S::Cell>,
        p: usize,
        origin: usize,
        level: u64,
    ) -> Result<(), EngineError> {
        let prev = Some(level - 1);
        let stale = |q: usize| EngineError::StaleRead {
            rank: self.ep.rank(),
            index: (origin + q) % self.n,
            substep: level,
            found: arr.levels[q],
        };
        if arr.levels[p] != prev {
            return Err(stale(p));
        }
        for q in p - self.h..=p + self.h {
            let l = arr.levels[q];
            if l != prev && l != Some(level) {
                return Err(stale(q));
            }
        }
        Ok(())
    }

    pub fn exchange(
        &mut self,
        left: Vec<Item<S::Cell>>,
        right: Vec<Item<S::Cell>>,
    ) -> Result<Received<S::Cell>, EngineError> {
        let tag = self.next_tag(Phase::Halo);
        self.ep
            .exchange(left, right, tag)
            .map_err(|source| self.transport_error("halo exchange", source))
    }

    pub fn shift(
        &mut self,
        direction: Direction,
        payload: Vec<Item<S::Cell>>,
    ) -> Result<Vec<Item<S::Cell>>, EngineError> {
        let phase = match direction {
            Direction::Left => Phase::SweptLeft,
            Direction::Right => Phase::SweptRight,
        };
        let tag = self.next_tag(phase);
        self.ep
            .shift(direction, payload, tag)
            .map_err(|source| self.transport_error("swept pass", source))
    }

    fn next_tag(&mut self, phase: Phase) -> Tag {
        let tag = Tag {
            phase,
            round: self.round,
        };
        self.round += 1;
        tag
    }

    fn transport_error(&self, context: &'static str, source: crate::transport::TransportError) -> EngineError {
        EngineError::Transport {
            rank: self.ep.rank(),
            context,
            source,
        }
    }
}

pub(crate) fn items<C: Copy>(arr: &WorkingArray<C>, range: std::ops::Range<usize>) -> Vec<Item<C>> {
    range.map(|p| (arr.cells[p], arr.levels[p])).collect()
}

pub(crate) fn place<C: Copy>(arr: &mut WorkingArray<C>, at: usize, items: Vec<Item<C>>) {
    for (i, (cell, level)) in items.into_iter().enumerate() {
        arr.cells[at + i] = cell;
        arr.levels[at + i] = level;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{HeatCell, HeatFtcs, PhysParams};
    use crate::transport::{ring, CostModel, PhaseContract};

    fn worker(scheme: &HeatFtcs) -> Worker<'_, HeatFtcs> {
        let contract = PhaseContract { halo: 1, swept: 1 };
        let ep = ring(2, ClockMode::Virtual, CostModel::default(), contract, 16)
            .into_iter()
            .next()
            .unwrap();
        Worker::new(scheme, ep, 8, true)
    }

    fn array(levels: &[u64]) -> WorkingArray<HeatCell> {
        WorkingArray {
            cells: vec![HeatCell::default(); levels.len()],
            levels: levels.iter().map(|&l| Some(l)).collect(),
            initialized: levels.len(),
        }
    }

    #[test]
    fn neighbour_one_level_ahead_is_allowed() {
        let scheme = HeatFtcs {
            params: PhysParams::heat(8, 0.4),
        };
        let mut w = worker(&scheme);
        let mut arr = array(&[1, 0, 0, 0]);
        w.update(&mut arr, 1, 3, 0, 1, CoveragePhase::Up).unwrap();
        assert_eq!(arr.levels[1..3], [Some(1), Some(1)]);
        assert_eq!(w.kernel_calls, 2);
        assert_eq!(w.coverage.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn overwritten_neighbour_is_a_stale_read() {
        let scheme = HeatFtcs {
            params: PhysParams::heat(8, 0.4),
        };
        let mut w = worker(&scheme);
        // the left neighbour is two levels ahead: its slot for level 0 is gone
        let mut arr = array(&[2, 0, 0]);
        let err = w.update(&mut arr, 1, 2, 5, 1, CoveragePhase::Diamond).unwrap_err();
        assert!(matches!(
            err,
            EngineError::StaleRead {
                index: 5,
                substep: 1,
                found: Some(2),
                ..
            }
        ));
        // recomputing a finished point is caught too
        let mut arr = array(&[1, 1, 1]);
        assert!(w.update(&mut arr, 1, 2, 0, 1, CoveragePhase::Up).is_err());
    }
}
