//! Single-sequence reference solver.
//!
//! Double-buffers the whole periodic grid and applies the same per-point
//! kernels, so it shares no scheduling logic with either decomposition.

use crate::engine::EngineError;
use crate::kernels::Stencil;

/// Advances `cells` (all at level 0) by `substeps` substeps.
pub fn serial_advance<S: Stencil>(
    scheme: &S,
    cells: &[S::Cell],
    substeps: u64,
) -> Result<Vec<S::Cell>, EngineError> {
    let n = cells.len();
    let h = scheme.spec().stencil_half_width;
    let mut current = cells.to_vec();
    let mut next = current.clone();
    let mut window = Vec::with_capacity(2 * h + 1);
    for level in 1..=substeps {
        for i in 0..n {
            window.clear();
            window.extend((0..=2 * h).map(|d| current[(i + n * h + d - h) % n]));
            next[i] = scheme
                .step_update(&window, i, level)
                .map_err(|source| EngineError::Kernel {
                    rank: 0,
                    index: i,
                    substep: level,
                    source,
                })?;
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{HeatCell, HeatFtcs, PhysParams};

    #[test]
    fn four_point_heat_by_hand() {
        let scheme = HeatFtcs {
            params: PhysParams {
                fo: 0.25,
                ..PhysParams::heat(4, 0.25)
            },
        };
        let cells: Vec<HeatCell> = [0.0, 1.0, 0.0, -1.0]
            .iter()
            .map(|&t| HeatCell { t: [t, t] })
            .collect();
        let out = serial_advance(&scheme, &cells, 1).unwrap();
        let t: Vec<f64> = out.iter().map(|c| c.t[1]).collect();
        assert_eq!(t, vec![0.0, 0.5, 0.0, -0.5]);
    }

    #[test]
    fn zero_steps_is_identity() {
        let scheme = HeatFtcs {
            params: PhysParams::heat(4, 0.25),
        };
        let cells = vec![HeatCell { t: [1.0, 2.0] }; 4];
        assert_eq!(serial_advance(&scheme, &cells, 0).unwrap(), cells);
    }
}
