//! The swept decomposition.
//!
//! Each rank first advances every point it can from local data (an up-triangle
//! per block), then alternates edge passes with diamonds that straddle block
//! seams, and closes with down-triangles so every point ends at the same
//! substep. A cycle advances all points by `K = w / (2h)` substeps and costs a
//! single message per rank.
//!
//! The working array is addressed in one of two frames. In frame A slot `p`
//! holds global point `start + p`; diamonds sit on block boundaries and the
//! array's tail receives the right neighbour's edge. In frame B slot `p` holds
//! `start - h + p`; diamonds sit on block centres and the array's head
//! receives the left neighbour's edge. Left passes end in frame A and right
//! passes in frame B.

use std::ops::Range;

use crate::classic::{classic_advance, ClassicWorkspace, HaloOrder};
use crate::engine::EngineError;
use crate::kernels::Stencil;
use crate::partition::WorkingArray;
use crate::rank::{items, place, CoveragePhase, RankPart, Worker};
use crate::transport::Direction;

/// Ordered `(relative substep, active range)` pairs of one phase.
///
/// Triangle ranges are relative to the start of a block; diamond ranges are
/// relative to the seam they straddle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSchedule {
    pub steps: Vec<(u64, Range<isize>)>,
}

impl PhaseSchedule {
    pub fn widths(&self) -> Vec<usize> {
        self.steps.iter().map(|(_, r)| r.len()).collect()
    }
}

fn check_width(w: usize, h: usize) -> Result<usize, EngineError> {
    if h == 0 || w < 2 * h || !w.is_multiple_of(2) || !w.is_multiple_of(2 * h) {
        return Err(EngineError::InvalidWidth { w, h });
    }
    Ok(w / (2 * h))
}

/// Substeps reachable inside one block: substep `k` covers `[k h, w - k h)`.
pub fn triangle_schedule(w: usize, h: usize) -> Result<PhaseSchedule, EngineError> {
    let k_max = check_width(w, h)? as u64;
    let (w, h) = (w as isize, h as isize);
    Ok(PhaseSchedule {
        steps: (1..k_max)
            .map(|k| (k, k as isize * h..w - k as isize * h))
            .collect(),
    })
}

/// Diamond on a seam: widens by `2h` per substep up to the full width, then
/// narrows again. `2K - 1` substeps in all.
pub fn diamond_schedule(w: usize, h: usize) -> Result<PhaseSchedule, EngineError> {
    let k = check_width(w, h)? as u64;
    Ok(PhaseSchedule {
        steps: (1..2 * k).map(|j| (j, seam_window(j, k, h))).collect(),
    })
}

/// Lower half of a diamond, which levels every point to the cycle's end.
pub fn down_triangle_schedule(w: usize, h: usize) -> Result<PhaseSchedule, EngineError> {
    let k = check_width(w, h)? as u64;
    Ok(PhaseSchedule {
        steps: (1..=k).map(|j| (j, seam_window(j, k, h))).collect(),
    })
}

fn seam_window(j: u64, k: u64, h: usize) -> Range<isize> {
    let reach = if j <= k { j } else { 2 * k - j } as isize * h as isize;
    -reach..reach
}

/// Number of full cycles and classic remainder substeps for `total` substeps.
pub fn cycle_plan(total_substeps: u64, w: usize, h: usize) -> Result<(u64, u64), EngineError> {
    let k = check_width(w, h)? as u64;
    Ok((total_substeps / k, total_substeps % k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Frame {
    A,
    B,
}

/// A rank's swept state.
#[derive(Debug, Clone)]
pub struct SweptWorkspace<C> {
    pub rank: usize,
    /// Global index of the rank's first owned point.
    pub start: usize,
    pub n_blocks: usize,
    pub w: usize,
    pub h: usize,
    pub arr: WorkingArray<C>,
    /// Cycles completed.
    pub cycle: u64,
    /// Substep level every point has reached after the last completed phase.
    pub substep: u64,
    frame: Frame,
}

impl<C: Copy + Default> SweptWorkspace<C> {
    pub fn new(rank: usize, start: usize, n_blocks: usize, w: usize, h: usize, arr: WorkingArray<C>) -> Self {
        Self {
            rank,
            start,
            n_blocks,
            w,
            h,
            arr,
            cycle: 0,
            substep: 0,
            frame: Frame::A,
        }
    }

    /// Edge buffer length.
    pub fn buffer_len(&self) -> usize {
        self.w / 2 + self.h
    }

    fn origin(&self, n: usize) -> usize {
        match self.frame {
            Frame::A => self.start,
            Frame::B => (self.start + n - self.h % n) % n,
        }
    }

    fn seams(&self) -> Vec<usize> {
        let (w, h, nb) = (self.w, self.h, self.n_blocks);
        match self.frame {
            Frame::A => (1..=nb).map(|k| k * w).collect(),
            Frame::B => (0..nb).map(|k| h + w / 2 + k * w).collect(),
        }
    }

    /// Slots owned after the last phase, and the global index of the first.
    fn window(&self, n: usize) -> (Range<usize>, usize) {
        let span = self.n_blocks * self.w;
        match self.frame {
            Frame::A => (self.w / 2..self.w / 2 + span, (self.start + self.w / 2) % n),
            Frame::B => (self.h..self.h + span, self.start),
        }
    }

    /// Copies the kept region `from` to slot `to` and forgets every other slot.
    fn slide(&mut self, from: Range<usize>, to: usize) {
        let len = from.len();
        self.arr.cells.copy_within(from.clone(), to);
        self.arr.levels.copy_within(from, to);
        for (p, level) in self.arr.levels.iter_mut().enumerate() {
            if p < to || p >= to + len {
                *level = None;
            }
        }
    }
}

fn up_triangle<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut SweptWorkspace<S::Cell>,
) -> Result<(), EngineError> {
    let schedule = triangle_schedule(ws.w, ws.h)?;
    let origin = ws.origin(worker.n);
    for (k, range) in &schedule.steps {
        for b in 0..ws.n_blocks {
            let base = (b * ws.w) as isize;
            let (lo, hi) = ((base + range.start) as usize, (base + range.end) as usize);
            worker.update(&mut ws.arr, lo, hi, origin, *k, CoveragePhase::Up)?;
        }
    }
    Ok(())
}

fn seam_phase<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut SweptWorkspace<S::Cell>,
    schedule: &PhaseSchedule,
    phase: CoveragePhase,
) -> Result<(), EngineError> {
    let origin = ws.origin(worker.n);
    let seams = ws.seams();
    for (j, range) in &schedule.steps {
        let level = ws.substep + j;
        for &s in &seams {
            let s = s as isize;
            let (lo, hi) = ((s + range.start) as usize, (s + range.end) as usize);
            worker.update(&mut ws.arr, lo, hi, origin, level, phase)?;
        }
    }
    Ok(())
}

/// Sends the rank's leading edge left and receives the right neighbour's
/// edge into the tail, ending in frame A.
fn pass_left<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut SweptWorkspace<S::Cell>,
) -> Result<(), EngineError> {
    let (w, h, span) = (ws.w, ws.h, ws.n_blocks * ws.w);
    let len = ws.buffer_len();
    let payload = match ws.frame {
        Frame::A => items(&ws.arr, 0..len),
        Frame::B => {
            let payload = items(&ws.arr, h..h + len);
            ws.slide(w / 2..span + h, w / 2 - h);
            ws.frame = Frame::A;
            payload
        }
    };
    let received = worker.shift(Direction::Left, payload)?;
    place(&mut ws.arr, span, received);
    Ok(())
}

/// Sends the rank's trailing edge right and receives the left neighbour's
/// edge into the head, ending in frame B.
fn pass_right<S: Stencil>(
    worker: &mut Worker<'_, S>,
    ws: &mut SweptWorkspace<S::Cell>,
) -> Result<(), EngineError> {
    debug_assert_eq!(ws.frame, Frame::A, "right passes follow left passes");
    let (w, h, span) = (ws.w, ws.h, ws.n_blocks * ws.w);
    let payload = items(&ws.arr, span - h..span + w / 2);
    ws.slide(w / 2..span + h, w / 2 + h);
    ws.frame = Frame::B;
    let received = worker.shift(Direction::Right, payload)?;
    place(&mut ws.arr, 0, received);
    Ok(())
}

/// Advances a rank by `total_substeps`. Whole cycles run swept; any remainder
/// runs as classic substeps on the final window.
pub(crate) fn swept_advance<S: Stencil>(
    worker: &mut Worker<'_, S>,
    mut ws: SweptWorkspace<S::Cell>,
    total_substeps: u64,
) -> Result<RankPart<S::Cell>, EngineError> {
    let (cycles, rem) = cycle_plan(total_substeps, ws.w, ws.h)?;
    let span = ws.n_blocks * ws.w;
    if cycles == 0 {
        let mut classic =
            ClassicWorkspace::from_window(ws.rank, &ws.arr.cells[..span], ws.start, ws.h, 0);
        classic_advance(worker, &mut classic, rem, HaloOrder::ExchangeFirst)?;
        return Ok(classic.into_part());
    }

    let k = (ws.w / (2 * ws.h)) as u64;
    let diamond = diamond_schedule(ws.w, ws.h)?;
    let down = down_triangle_schedule(ws.w, ws.h)?;
    up_triangle(worker, &mut ws)?;
    for c in 1..=cycles {
        if c % 2 == 1 {
            pass_left(worker, &mut ws)?;
        } else {
            pass_right(worker, &mut ws)?;
        }
        if c < cycles {
            seam_phase(worker, &mut ws, &diamond, CoveragePhase::Diamond)?;
        } else {
            seam_phase(worker, &mut ws, &down, CoveragePhase::Down)?;
        }
        ws.substep += k;
        ws.cycle = c;
    }

    let (slots, start) = ws.window(worker.n);
    if rem == 0 {
        return Ok(RankPart {
            rank: ws.rank,
            start,
            cells: ws.arr.cells[slots].to_vec(),
            level: ws.substep,
        });
    }
    let mut classic =
        ClassicWorkspace::from_window(ws.rank, &ws.arr.cells[slots], start, ws.h, ws.substep);
    classic_advance(worker, &mut classic, rem, HaloOrder::ExchangeFirst)?;
    Ok(classic.into_part())
}
