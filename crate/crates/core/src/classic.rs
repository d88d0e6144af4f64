//! Baseline decomposition: every substep ends with an `h`-deep halo exchange.

use crate::engine::EngineError;
use crate::kernels::Stencil;
use crate::partition::WorkingArray;
use crate::rank::{items, place, CoveragePhase, Item, RankPart, Worker};

/// Owned cells at `[h, h + owned)` framed by `h` ghost slots on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicWorkspace<C> {
    pub rank: usize,
    /// Global index of the first owned point.
    pub start: usize,
    pub owned: usize,
    pub h: usize,
    pub arr: WorkingArray<C>,
    pub level: u64,
}

/// When the halo round happens relative to a substep's compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaloOrder {
    /// Ghosts are valid on entry; exchange after computing.
    ComputeFirst,
    /// Ghosts are stale on entry; exchange before computing.
    ExchangeFirst,
}

impl<C: Copy + Default> ClassicWorkspace<C> {
    /// Workspace at level 0 with ghosts copied from the periodic global field.
    pub fn from_global(rank: usize, global: &[C], start: usize, owned: usize, h: usize) -> Self {
        let n = global.len();
        let cells = (0..owned + 2 * h)
            .map(|p| global[(start + n * h + p - h) % n])
            .collect();
        Self {
            rank,
            start,
            owned,
            h,
            arr: WorkingArray {
                cells,
                levels: vec![Some(0); owned + 2 * h],
                initialized: owned + 2 * h,
            },
            level: 0,
        }
    }

    /// Workspace over cells that all sit at `level`; ghosts start empty.
    pub fn from_window(rank: usize, cells: &[C], start: usize, h: usize, level: u64) -> Self {
        let owned = cells.len();
        let mut arr = WorkingArray {
            cells: vec![C::default(); owned + 2 * h],
            levels: vec![None; owned + 2 * h],
            initialized: owned,
        };
        arr.cells[h..h + owned].copy_from_slice(cells);
        arr.levels[h..h + owned].fill(Some(level));
        Self {
            rank,
            start,
            owned,
            h,
            arr,
            level,
        }
    }

    fn origin(&self, n: usize) -> usize {
        (self.start + n - self.h % n) % n
    }

    pub fn into_part(self) -> RankPart<C> {
        RankPart {
            rank: self.rank,
            start: self.start,
            cells: self.arr.cells[self.h..self.h + self.owned].to_vec(),
            level: self.level,
        }
    }

    fn halo_payloads(&self) -> (Vec<Item<C>>, Vec<Item<C>>) {
        let h = self.h;
        (
            items(&self.arr, h..2 * h),
            items(&self.arr, self.owned..self.owned + h),
        )
    }
}

fn halo_round<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut ClassicWorkspace<S::Cell>,
) -> Result<(), EngineError> {
    let (left, right) = ws.halo_payloads();
    let (from_left, from_right) = worker.exchange(left, right)?;
    place(&mut ws.arr, 0, from_left);
    place(&mut ws.arr, ws.h + ws.owned, from_right);
    Ok(())
}

/// Advances `ws` by `substeps` substeps, one halo round each.
pub(crate) fn classic_advance<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut ClassicWorkspace<S::Cell>,
    substeps: u64,
    order: HaloOrder,
) -> Result<(), EngineError> {
    let origin = ws.origin(worker.n);
    for _ in 0..substeps {
        if order == HaloOrder::ExchangeFirst {
            halo_round(worker, ws)?;
        }
        let level = ws.level + 1;
        worker.update(
            &mut ws.arr,
            ws.h,
            ws.h + ws.owned,
            origin,
            level,
            CoveragePhase::Classic,
        )?;
        ws.level = level;
        if order == HaloOrder::ComputeFirst {
            halo_round(worker, ws)?;
        }
    }
    Ok(())
}
