//! Per-point update formulas for the heat and Euler equations.
//!
//! Every kernel is a pure function of a small window of neighbouring cells and
//! produces the new record for the centre cell. Two storage strategies are
//! supported for the Euler equations:
//!
//! * **lengthening** keeps the stencil at three points and splits one time step
//!   into four substeps (pressure ratio, predictor, pressure ratio, corrector).
//!   The pressure ratio is carried in the cell, seven doubles per point.
//! * **flattening** fuses each pressure-ratio pass into the following flux pass,
//!   giving two substeps per time step on a five-point stencil and six doubles
//!   per point.
//!
//! Both routes share the same face-flux arithmetic, so they produce the same
//! bits for the same input.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Conserved variables `(rho, rho*u, rho*E)`.
pub type Conserved = [f64; 3];

/// Default ratio of specific heats.
pub const DEFAULT_GAMMA: f64 = 1.4;
/// Default Fourier number for the heat equation.
pub const DEFAULT_FOURIER: f64 = 0.4;
/// Default CFL number used to pick the Euler time step from the initial state.
pub const DEFAULT_CFL: f64 = 0.4;

/// Stored in [`EulerCell::pr`] when the pressure-ratio denominator vanishes.
/// Both face weights evaluate to zero for it, so the limited slope is zero.
pub const DEGENERATE_RATIO: f64 = 0.0;

/// Relative size of `|p_right - p_center|` below which the ratio is degenerate.
pub const RATIO_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("non-physical state: rho = {rho}, pressure = {pressure}")]
    NonPhysicalState { rho: f64, pressure: f64 },
    #[error("degenerate pressure ratio: |p_right - p_center| = {denominator:e}")]
    DegenerateRatio { denominator: f64 },
    #[error("{equation} has no {method} formulation")]
    Unsupported { equation: Equation, method: Method },
    #[error("invalid physical parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Heat,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lengthening,
    Flattening,
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Equation::Heat => "heat",
            Equation::Euler => "euler",
        })
    }
}

impl FromStr for Equation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "heat" => Ok(Equation::Heat),
            "euler" => Ok(Equation::Euler),
            other => Err(format!("unknown equation `{other}` (expected heat | euler)")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lengthening => "lengthening",
            Method::Flattening => "flattening",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lengthening" => Ok(Method::Lengthening),
            "flattening" => Ok(Method::Flattening),
            other => Err(format!(
                "unknown method `{other}` (expected lengthening | flattening)"
            )),
        }
    }
}

/// Shape of one equation/method pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EquationSpec {
    pub equation: Equation,
    pub method: Method,
    /// Kernel substeps per physical time step.
    pub substeps_per_step: usize,
    /// Points on each side of the centre read by one substep.
    pub stencil_half_width: usize,
    /// Doubles stored per grid point.
    pub state_slots: usize,
}

impl EquationSpec {
    pub fn new(equation: Equation, method: Method) -> Result<Self, KernelError> {
        let (substeps_per_step, stencil_half_width, state_slots) = match (equation, method) {
            (Equation::Heat, Method::Lengthening) => (1, 1, 2),
            (Equation::Euler, Method::Lengthening) => (4, 1, 7),
            (Equation::Euler, Method::Flattening) => (2, 2, 6),
            (Equation::Heat, Method::Flattening) => {
                return Err(KernelError::Unsupported { equation, method })
            }
        };
        Ok(Self {
            equation,
            method,
            substeps_per_step,
            stencil_half_width,
            state_slots,
        })
    }

    pub fn heat() -> Self {
        Self::new(Equation::Heat, Method::Lengthening).expect("heat is always defined")
    }

    pub fn euler_lengthening() -> Self {
        Self::new(Equation::Euler, Method::Lengthening).expect("always defined")
    }

    pub fn euler_flattening() -> Self {
        Self::new(Equation::Euler, Method::Flattening).expect("always defined")
    }

    /// Bytes of one cell record on the wire.
    pub fn cell_bytes(&self) -> usize {
        self.state_slots * std::mem::size_of::<f64>()
    }

    /// Number of values in the observable field (temperature, or the conserved triple).
    pub fn field_width(&self) -> usize {
        match self.equation {
            Equation::Heat => 1,
            Equation::Euler => 3,
        }
    }
}

/// Scheme constants. `fo` is only used by the heat kernel, `gamma` by Euler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    pub fo: f64,
    pub gamma: f64,
    pub dt: f64,
    pub dx: f64,
}

impl PhysParams {
    /// Heat on the unit interval with diffusivity 1: `dt = Fo * dx^2`.
    pub fn heat(n: usize, fo: f64) -> Self {
        let dx = 1.0 / n as f64;
        Self {
            fo,
            gamma: DEFAULT_GAMMA,
            dt: fo * dx * dx,
            dx,
        }
    }

    /// Euler on the unit interval with `dt` set so that `cfl = max(|u| + c) * dt / dx`.
    pub fn euler(n: usize, gamma: f64, cfl: f64, max_wave_speed: f64) -> Self {
        let dx = 1.0 / n as f64;
        Self {
            fo: DEFAULT_FOURIER,
            gamma,
            dt: cfl * dx / max_wave_speed,
            dx,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.fo > 0.0 && self.fo <= 0.5) {
            return Err(KernelError::InvalidParams(format!(
                "Fourier number {} outside (0, 0.5]",
                self.fo
            )));
        }
        if !(self.gamma > 1.0) {
            return Err(KernelError::InvalidParams(format!(
                "gamma {} must exceed 1",
                self.gamma
            )));
        }
        if !(self.dt > 0.0 && self.dx > 0.0 && self.dt.is_finite() && self.dx.is_finite()) {
            return Err(KernelError::InvalidParams(format!(
                "step sizes must be positive (dt = {}, dx = {})",
                self.dt, self.dx
            )));
        }
        Ok(())
    }

    fn lambda(&self) -> f64 {
        self.dt / self.dx
    }
}

// ---------------------------------------------------------------------------
// Scalar formulas
// ---------------------------------------------------------------------------

/// Forward-time central-space update of one point.
#[inline]
pub fn heat_step(left: f64, center: f64, right: f64, fo: f64) -> f64 {
    center + fo * (left - 2.0 * center + right)
}

#[inline]
pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        a.signum() * a.abs().min(b.abs())
    } else {
        0.0
    }
}

/// Ideal-gas pressure of a conserved triple.
#[inline]
pub fn pressure(q: &Conserved, gamma: f64) -> Result<f64, KernelError> {
    let [rho, mom, energy] = *q;
    if !(rho > 0.0) {
        return Err(KernelError::NonPhysicalState {
            rho,
            pressure: f64::NAN,
        });
    }
    let p = (gamma - 1.0) * (energy - mom * mom / (2.0 * rho));
    if !(p > 0.0) {
        return Err(KernelError::NonPhysicalState { rho, pressure: p });
    }
    Ok(p)
}

/// `(p_center - p_left) / (p_right - p_center)`, or `DegenerateRatio` when the
/// denominator is negligible.
pub fn try_pressure_ratio(p_left: f64, p_center: f64, p_right: f64) -> Result<f64, KernelError> {
    let denominator = p_right - p_center;
    if denominator.abs() <= RATIO_TOLERANCE * p_center.abs() {
        return Err(KernelError::DegenerateRatio { denominator });
    }
    Ok((p_center - p_left) / denominator)
}

/// Pressure ratio with the degenerate case folded into [`DEGENERATE_RATIO`].
#[inline]
pub fn pressure_ratio(p_left: f64, p_center: f64, p_right: f64) -> f64 {
    try_pressure_ratio(p_left, p_center, p_right).unwrap_or(DEGENERATE_RATIO)
}

/// Fraction of the right-hand difference used to reconstruct the `i+1/2` face.
/// Equal to `minmod(dp_left, dp_right) / dp_right`.
#[inline]
fn right_face_weight(ratio: f64) -> f64 {
    minmod(1.0, ratio)
}

/// Fraction of the left-hand difference used to reconstruct the `i-1/2` face.
/// Equal to `minmod(dp_left, dp_right) / dp_left`; the sentinel maps to zero.
#[inline]
fn left_face_weight(ratio: f64) -> f64 {
    if ratio > 0.0 {
        minmod(1.0, 1.0 / ratio)
    } else {
        0.0
    }
}

#[inline]
fn reconstruct(own: &Conserved, other: &Conserved, weight: f64) -> Conserved {
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = own[k] + 0.5 * weight * (other[k] - own[k]);
    }
    out
}

/// Physical flux and fastest signal speed of a state.
#[inline]
fn flux_and_speed(q: &Conserved, gamma: f64) -> Result<(Conserved, f64), KernelError> {
    let p = pressure(q, gamma)?;
    let u = q[1] / q[0];
    let c = (gamma * p / q[0]).sqrt();
    Ok(([q[1], q[1] * u + p, u * (q[2] + p)], u.abs() + c))
}

/// Local Lax-Friedrichs flux between two reconstructed face states.
fn rusanov(left: &Conserved, right: &Conserved, gamma: f64) -> Result<Conserved, KernelError> {
    let (fl, sl) = flux_and_speed(left, gamma)?;
    let (fr, sr) = flux_and_speed(right, gamma)?;
    let s = sl.max(sr);
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = 0.5 * (fl[k] + fr[k]) - 0.5 * s * (right[k] - left[k]);
    }
    Ok(out)
}

/// Numerical flux through the face between cell `a` (left) and cell `b` (right).
///
/// Both cells adjacent to a face call this with identical arguments, which is
/// what makes the flux-form update conservative to round-off.
pub fn interface_flux(
    qa: &Conserved,
    ratio_a: f64,
    qb: &Conserved,
    ratio_b: f64,
    gamma: f64,
) -> Result<Conserved, KernelError> {
    let left = reconstruct(qa, qb, right_face_weight(ratio_a));
    let right = reconstruct(qb, qa, left_face_weight(ratio_b));
    rusanov(&left, &right, gamma)
}

/// `F(i-1/2) - F(i+1/2)` for the centre of a three-cell window.
fn flux_divergence(
    q: [&Conserved; 3],
    ratio: [f64; 3],
    gamma: f64,
) -> Result<Conserved, KernelError> {
    let west = interface_flux(q[0], ratio[0], q[1], ratio[1], gamma)?;
    let east = interface_flux(q[1], ratio[1], q[2], ratio[2], gamma)?;
    Ok([west[0] - east[0], west[1] - east[1], west[2] - east[2]])
}

#[inline]
fn predictor_update(q: &Conserved, div: &Conserved, lambda: f64) -> Conserved {
    let half = 0.5 * lambda;
    [q[0] + half * div[0], q[1] + half * div[1], q[2] + half * div[2]]
}

#[inline]
fn corrector_update(base: &Conserved, div: &Conserved, lambda: f64) -> Conserved {
    [
        base[0] + lambda * div[0],
        base[1] + lambda * div[1],
        base[2] + lambda * div[2],
    ]
}

// ---------------------------------------------------------------------------
// Cell records
// ---------------------------------------------------------------------------

/// Fixed-width per-point record exchanged between ranks.
pub trait StateCell: Copy + Default + PartialEq + Send + Sync + fmt::Debug + 'static {
    /// Doubles in the record.
    const SLOTS: usize;

    /// Appends the raw record to `out`.
    fn write_values(&self, out: &mut Vec<f64>);

    /// Applies `f` to every stored double.
    fn map_values(&mut self, f: impl Fn(f64) -> f64);
}

/// Two temperature slots; level `L` lives in slot `L % 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeatCell {
    pub t: [f64; 2],
}

/// Lengthening record: two conserved triples plus the stored pressure ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EulerCell {
    pub q: [Conserved; 2],
    pub pr: f64,
}

/// Flattening record: two conserved triples, the ratio is recomputed inline.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlatEulerCell {
    pub q: [Conserved; 2],
}

impl StateCell for HeatCell {
    const SLOTS: usize = 2;

    fn write_values(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.t);
    }

    fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        self.t = self.t.map(&f);
    }
}

impl StateCell for EulerCell {
    const SLOTS: usize = 7;

    fn write_values(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.q[0]);
        out.extend_from_slice(&self.q[1]);
        out.push(self.pr);
    }

    fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        self.q = self.q.map(|q| q.map(&f));
        self.pr = f(self.pr);
    }
}

impl StateCell for FlatEulerCell {
    const SLOTS: usize = 6;

    fn write_values(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.q[0]);
        out.extend_from_slice(&self.q[1]);
    }

    fn map_values(&mut self, f: impl Fn(f64) -> f64) {
        self.q = self.q.map(|q| q.map(&f));
    }
}

// ---------------------------------------------------------------------------
// Substep kernels
// ---------------------------------------------------------------------------

/// Flux substep flavour: the predictor overwrites the alternate slot, the
/// corrector accumulates onto the time-level slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxSubstep {
    Predictor,
    Corrector,
}

/// Pressure ratio of the centre of a three-cell window, read from `slot`.
pub fn pressure_ratio_substep(
    window: &[EulerCell; 3],
    slot: usize,
    gamma: f64,
) -> Result<f64, KernelError> {
    let p_left = pressure(&window[0].q[slot], gamma)?;
    let p_center = pressure(&window[1].q[slot], gamma)?;
    let p_right = pressure(&window[2].q[slot], gamma)?;
    Ok(pressure_ratio(p_left, p_center, p_right))
}

/// Flux update of the centre cell using the stored pressure ratios.
pub fn euler_flux_substep(
    window: &[EulerCell; 3],
    substep: FluxSubstep,
    params: &PhysParams,
) -> Result<Conserved, KernelError> {
    let slot = match substep {
        FluxSubstep::Predictor => 0,
        FluxSubstep::Corrector => 1,
    };
    let div = flux_divergence(
        [&window[0].q[slot], &window[1].q[slot], &window[2].q[slot]],
        [window[0].pr, window[1].pr, window[2].pr],
        params.gamma,
    )?;
    Ok(match substep {
        FluxSubstep::Predictor => predictor_update(&window[1].q[0], &div, params.lambda()),
        FluxSubstep::Corrector => corrector_update(&window[1].q[0], &div, params.lambda()),
    })
}

/// Fused predictor (`final_step = false`) or corrector on a five-cell window.
pub fn flattened_euler_step(
    window: &[FlatEulerCell; 5],
    final_step: bool,
    params: &PhysParams,
) -> Result<Conserved, KernelError> {
    let slot = usize::from(final_step);
    let gamma = params.gamma;
    let mut p = [0.0; 5];
    for (pk, cell) in p.iter_mut().zip(window) {
        *pk = pressure(&cell.q[slot], gamma)?;
    }
    let ratio = [
        pressure_ratio(p[0], p[1], p[2]),
        pressure_ratio(p[1], p[2], p[3]),
        pressure_ratio(p[2], p[3], p[4]),
    ];
    let div = flux_divergence(
        [&window[1].q[slot], &window[2].q[slot], &window[3].q[slot]],
        ratio,
        gamma,
    )?;
    Ok(if final_step {
        corrector_update(&window[2].q[0], &div, params.lambda())
    } else {
        predictor_update(&window[2].q[0], &div, params.lambda())
    })
}

/// Which lengthening substep a 1-based substep counter selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengtheningSubstep {
    /// Pressure ratio from the given conserved slot.
    PressureRatio(usize),
    Flux(FluxSubstep),
}

/// Counter `c` produces substep level `c`; odd counters compute pressure ratios.
pub fn lengthening_substep(counter: u64) -> LengtheningSubstep {
    match counter % 4 {
        1 => LengtheningSubstep::PressureRatio(0),
        2 => LengtheningSubstep::Flux(FluxSubstep::Predictor),
        3 => LengtheningSubstep::PressureRatio(1),
        _ => LengtheningSubstep::Flux(FluxSubstep::Corrector),
    }
}

// ---------------------------------------------------------------------------
// Stencil dispatch
// ---------------------------------------------------------------------------

/// An equation/method pairing the decomposition engines can drive.
pub trait Stencil: Send + Sync {
    type Cell: StateCell;

    fn spec(&self) -> EquationSpec;

    /// Level-0 record from the observable field of one point.
    fn init_cell(&self, field: &[f64]) -> Self::Cell;

    /// New centre record for substep level `counter` from a window of
    /// `2h + 1` cells.
    fn step_update(
        &self,
        window: &[Self::Cell],
        global_index: usize,
        counter: u64,
    ) -> Result<Self::Cell, KernelError>;

    /// Appends the observable field of a cell that sits at substep `level`.
    fn observe(&self, cell: &Self::Cell, level: u64, out: &mut Vec<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct HeatFtcs {
    pub params: PhysParams,
}

impl Stencil for HeatFtcs {
    type Cell = HeatCell;

    fn spec(&self) -> EquationSpec {
        EquationSpec::heat()
    }

    fn init_cell(&self, field: &[f64]) -> HeatCell {
        HeatCell {
            t: [field[0], field[0]],
        }
    }

    #[inline]
    fn step_update(
        &self,
        window: &[HeatCell],
        _global_index: usize,
        counter: u64,
    ) -> Result<HeatCell, KernelError> {
        let read = ((counter + 1) % 2) as usize;
        let write = (counter % 2) as usize;
        let mut cell = window[1];
        cell.t[write] = heat_step(
            window[0].t[read],
            window[1].t[read],
            window[2].t[read],
            self.params.fo,
        );
        Ok(cell)
    }

    fn observe(&self, cell: &HeatCell, level: u64, out: &mut Vec<f64>) {
        out.push(cell.t[(level % 2) as usize]);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EulerLengthening {
    pub params: PhysParams,
}

impl Stencil for EulerLengthening {
    type Cell = EulerCell;

    fn spec(&self) -> EquationSpec {
        EquationSpec::euler_lengthening()
    }

    fn init_cell(&self, field: &[f64]) -> EulerCell {
        let q = [field[0], field[1], field[2]];
        EulerCell {
            q: [q, q],
            pr: DEGENERATE_RATIO,
        }
    }

    #[inline]
    fn step_update(
        &self,
        window: &[EulerCell],
        _global_index: usize,
        counter: u64,
    ) -> Result<EulerCell, KernelError> {
        let window: &[EulerCell; 3] = window.try_into().expect("three-cell window");
        let mut cell = window[1];
        match lengthening_substep(counter) {
            LengtheningSubstep::PressureRatio(slot) => {
                cell.pr = pressure_ratio_substep(window, slot, self.params.gamma)?;
            }
            LengtheningSubstep::Flux(FluxSubstep::Predictor) => {
                cell.q[1] = euler_flux_substep(window, FluxSubstep::Predictor, &self.params)?;
            }
            LengtheningSubstep::Flux(FluxSubstep::Corrector) => {
                cell.q[0] = euler_flux_substep(window, FluxSubstep::Corrector, &self.params)?;
            }
        }
        Ok(cell)
    }

    fn observe(&self, cell: &EulerCell, _level: u64, out: &mut Vec<f64>) {
        out.extend_from_slice(&cell.q[0]);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EulerFlattening {
    pub params: PhysParams,
}

impl Stencil for EulerFlattening {
    type Cell = FlatEulerCell;

    fn spec(&self) -> EquationSpec {
        EquationSpec::euler_flattening()
    }

    fn init_cell(&self, field: &[f64]) -> FlatEulerCell {
        let q = [field[0], field[1], field[2]];
        FlatEulerCell { q: [q, q] }
    }

    #[inline]
    fn step_update(
        &self,
        window: &[FlatEulerCell],
        _global_index: usize,
        counter: u64,
    ) -> Result<FlatEulerCell, KernelError> {
        let window: &[FlatEulerCell; 5] = window.try_into().expect("five-cell window");
        let mut cell = window[2];
        if counter % 2 == 1 {
            cell.q[1] = flattened_euler_step(window, false, &self.params)?;
        } else {
            cell.q[0] = flattened_euler_step(window, true, &self.params)?;
        }
        Ok(cell)
    }

    fn observe(&self, cell: &FlatEulerCell, _level: u64, out: &mut Vec<f64>) {
        out.extend_from_slice(&cell.q[0]);
    }
}
