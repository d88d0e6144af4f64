//! Global grid construction, block-to-rank assignment and working-array sizing.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kernels::{
    Conserved, Equation, EquationSpec, KernelError, Method, PhysParams, Stencil, DEFAULT_CFL,
    DEFAULT_FOURIER, DEFAULT_GAMMA,
};
use crate::transport::{ClockMode, CostModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown initial condition `{0}`")]
    UnknownInitialCondition(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::InvalidConfig(msg.into())
}

/// Deterministic initial fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InitialCondition {
    /// `T(x) = sin(2 pi x / n)` at the grid points `x = 0..n`.
    HeatSine,
    /// Periodic square wave: `rho = 1, p = 1` on the left half and
    /// `rho = 0.125, p = 0.1` on the right half, at rest.
    EulerSodPeriodic,
    /// Constant valid state.
    Uniform,
}

impl InitialCondition {
    pub fn default_for(equation: Equation) -> Self {
        match equation {
            Equation::Heat => InitialCondition::HeatSine,
            Equation::Euler => InitialCondition::EulerSodPeriodic,
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialCondition::HeatSine => "heat-sine",
            InitialCondition::EulerSodPeriodic => "euler-sod-periodic",
            InitialCondition::Uniform => "uniform",
        })
    }
}

impl FromStr for InitialCondition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heat-sine" => Ok(InitialCondition::HeatSine),
            "euler-sod-periodic" => Ok(InitialCondition::EulerSodPeriodic),
            "uniform" => Ok(InitialCondition::Uniform),
            other => Err(ConfigError::UnknownInitialCondition(other.to_string())),
        }
    }
}

/// Global initial field, in observable variables.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalField {
    Heat(Vec<f64>),
    Euler(Vec<Conserved>),
}

impl GlobalField {
    pub fn len(&self) -> usize {
        match self {
            GlobalField::Heat(v) => v.len(),
            GlobalField::Euler(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[f64] {
        match self {
            GlobalField::Heat(v) => std::slice::from_ref(&v[i]),
            GlobalField::Euler(v) => &v[i],
        }
    }

    /// Largest `|u| + c`; zero for heat.
    pub fn max_wave_speed(&self, gamma: f64) -> f64 {
        match self {
            GlobalField::Heat(_) => 0.0,
            GlobalField::Euler(v) => v
                .iter()
                .map(|q| {
                    let u = q[1] / q[0];
                    let p = (gamma - 1.0) * (q[2] - 0.5 * q[1] * u);
                    u.abs() + (gamma * p / q[0]).sqrt()
                })
                .fold(0.0, f64::max),
        }
    }
}

fn euler_state(rho: f64, u: f64, p: f64, gamma: f64) -> Conserved {
    [rho, rho * u, p / (gamma - 1.0) + 0.5 * rho * u * u]
}

pub fn initial_condition(
    id: InitialCondition,
    n: usize,
    equation: Equation,
    gamma: f64,
) -> Result<GlobalField, ConfigError> {
    match (equation, id) {
        (Equation::Heat, InitialCondition::HeatSine) => Ok(GlobalField::Heat(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
                .collect(),
        )),
        (Equation::Heat, InitialCondition::Uniform) => Ok(GlobalField::Heat(vec![1.0; n])),
        (Equation::Euler, InitialCondition::EulerSodPeriodic) => Ok(GlobalField::Euler(
            (0..n)
                .map(|i| {
                    if i < n / 2 {
                        euler_state(1.0, 0.0, 1.0, gamma)
                    } else {
                        euler_state(0.125, 0.0, 0.1, gamma)
                    }
                })
                .collect(),
        )),
        (Equation::Euler, InitialCondition::Uniform) => Ok(GlobalField::Euler(vec![
            euler_state(1.0, 0.0, 1.0, gamma);
            n
        ])),
        (equation, id) => Err(ConfigError::UnknownInitialCondition(format!(
            "{id} (not defined for {equation})"
        ))),
    }
}

/// Level-0 cells for a scheme.
pub fn initial_cells<S: Stencil>(scheme: &S, field: &GlobalField) -> Vec<S::Cell> {
    (0..field.len())
        .map(|i| scheme.init_cell(field.point(i)))
        .collect()
}

/// Everything needed to launch one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LaunchConfig {
    pub grid_size: usize,
    pub ranks: usize,
    pub block_width: usize,
    pub work_factor: usize,
    pub steps: u64,
    pub spec: EquationSpec,
    pub phys: PhysParams,
    pub cost: CostModel,
    pub mode: ClockMode,
    pub initial: InitialCondition,
}

impl LaunchConfig {
    /// Config with default physics, derived time step and virtual clock.
    pub fn new(
        equation: Equation,
        method: Method,
        grid_size: usize,
        ranks: usize,
        block_width: usize,
        work_factor: usize,
        steps: u64,
    ) -> Result<Self, ConfigError> {
        let spec = EquationSpec::new(equation, method)?;
        let initial = InitialCondition::default_for(equation);
        let mut cfg = Self {
            grid_size,
            ranks,
            block_width,
            work_factor,
            steps,
            spec,
            phys: PhysParams::heat(grid_size.max(1), DEFAULT_FOURIER),
            cost: CostModel::default(),
            mode: ClockMode::Virtual,
            initial,
        };
        cfg.rederive_phys(DEFAULT_FOURIER, DEFAULT_GAMMA, DEFAULT_CFL)?;
        Ok(cfg)
    }

    /// Recomputes `dt`/`dx` for the current grid, initial condition and constants.
    pub fn rederive_phys(&mut self, fo: f64, gamma: f64, cfl: f64) -> Result<(), ConfigError> {
        if self.grid_size == 0 {
            return Err(invalid("grid size must be positive"));
        }
        self.phys = match self.spec.equation {
            Equation::Heat => PhysParams {
                gamma,
                ..PhysParams::heat(self.grid_size, fo)
            },
            Equation::Euler => {
                let field = initial_condition(self.initial, self.grid_size, Equation::Euler, gamma)?;
                PhysParams {
                    fo,
                    ..PhysParams::euler(self.grid_size, gamma, cfl, field.max_wave_speed(gamma))
                }
            }
        };
        Ok(())
    }

    pub fn total_blocks(&self) -> usize {
        self.grid_size / self.block_width
    }

    /// Shares the blocks are divided into; the fat rank holds `work_factor` of them.
    pub fn shares(&self) -> usize {
        if self.work_factor > 0 {
            self.ranks - 1 + self.work_factor
        } else {
            self.ranks
        }
    }

    pub fn total_substeps(&self) -> u64 {
        self.steps * self.spec.substeps_per_step as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = self.block_width;
        let h = self.spec.stencil_half_width;
        if self.ranks < 2 {
            return Err(invalid(format!("need at least 2 ranks, got {}", self.ranks)));
        }
        if w < 4 || !w.is_multiple_of(2) {
            return Err(invalid(format!("block width {w} must be even and >= 4")));
        }
        if !w.is_multiple_of(2 * h) {
            return Err(invalid(format!(
                "block width {w} must be a multiple of 2h = {}",
                2 * h
            )));
        }
        if self.grid_size == 0 || !self.grid_size.is_multiple_of(w) {
            return Err(invalid(format!(
                "grid size {} is not divisible by block width {w}",
                self.grid_size
            )));
        }
        let blocks = self.total_blocks();
        let shares = self.shares();
        if !blocks.is_multiple_of(shares) {
            return Err(invalid(format!(
                "{blocks} blocks are not divisible into {shares} shares \
                 ({} ranks, work factor {})",
                self.ranks, self.work_factor
            )));
        }
        self.phys.validate()?;
        self.cost.validate().map_err(invalid)?;
        Ok(())
    }
}

/// Contiguous block ownership on a periodic ring of ranks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub block_width: usize,
    pub grid_size: usize,
    /// Blocks owned by each rank.
    pub blocks: Vec<usize>,
    /// Global index of each rank's first point.
    pub starts: Vec<usize>,
}

impl Partition {
    pub fn ranks(&self) -> usize {
        self.blocks.len()
    }

    pub fn left(&self, rank: usize) -> usize {
        (rank + self.ranks() - 1) % self.ranks()
    }

    pub fn right(&self, rank: usize) -> usize {
        (rank + 1) % self.ranks()
    }

    pub fn points(&self, rank: usize) -> usize {
        self.blocks[rank] * self.block_width
    }

    pub fn range(&self, rank: usize) -> std::ops::Range<usize> {
        self.starts[rank]..self.starts[rank] + self.points(rank)
    }
}

pub fn partition(config: &LaunchConfig) -> Result<Partition, ConfigError> {
    config.validate()?;
    let per_share = config.total_blocks() / config.shares();
    let blocks: Vec<usize> = (0..config.ranks)
        .map(|r| {
            if r == 0 && config.work_factor > 0 {
                config.work_factor * per_share
            } else {
                per_share
            }
        })
        .collect();
    let starts = blocks
        .iter()
        .scan(0, |acc, &b| {
            let start = *acc;
            *acc += b * config.block_width;
            Some(start)
        })
        .collect();
    Ok(Partition {
        block_width: config.block_width,
        grid_size: config.grid_size,
        blocks,
        starts,
    })
}

/// `N_blocks * w + w/2 + h` cells; `h = 1` gives the three-point layout.
pub fn working_array_len(n_blocks: usize, w: usize, h: usize) -> usize {
    n_blocks * w + w / 2 + h
}

/// Owned points plus `2h` neighbour slots.
pub fn initialized_len(n_blocks: usize, w: usize, h: usize) -> usize {
    n_blocks * w + 2 * h
}

/// Per-rank storage for the swept scheme. Slots past the initialized prefix
/// carry no level until an exchange fills them.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingArray<C> {
    pub cells: Vec<C>,
    /// Substep level held by each slot, `None` when the slot holds no data.
    pub levels: Vec<Option<u64>>,
    pub initialized: usize,
}

impl<C: Copy + Default> WorkingArray<C> {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Allocates a rank's working array and fills the initialized prefix from the
/// global level-0 cells starting at `start` (wrapping periodically).
pub fn allocate_working_array<C: Copy + Default>(
    n_blocks: usize,
    w: usize,
    spec: &EquationSpec,
    global: &[C],
    start: usize,
) -> WorkingArray<C> {
    debug_assert!(w.is_multiple_of(2), "block width must be even");
    let h = spec.stencil_half_width;
    let len = working_array_len(n_blocks, w, h);
    let initialized = initialized_len(n_blocks, w, h);
    let mut cells = vec![C::default(); len];
    let mut levels = vec![None; len];
    let n = global.len();
    for p in 0..initialized {
        cells[p] = global[(start + p) % n];
        levels[p] = Some(0);
    }
    WorkingArray {
        cells,
        levels,
        initialized,
    }
}
