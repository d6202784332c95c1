//! Method-of-lines integration of the three-level Maxwell-Bloch equations.
//!
//! The atomic coherences on the z lattice are advanced with an adaptive
//! embedded Runge-Kutta pair; at every stage the signal field is regenerated
//! from the entrance boundary by the spatial sweep.

mod stepper;
mod sweep;
mod tableau;

use serde::{Deserialize, Serialize};

pub use stepper::{fixed_step, step_controller, EmbeddedPair, StepDecision, MIN_STEP};
pub use sweep::spatial_sweep;

use crate::error::{Error, Result};
use crate::model::{ComplexEnvelope, EnsembleParams, FieldState, SimGrid, C64};
use crate::protocol::{DriveSample, ProtocolSchedule};
use stepper::{integrate_adaptive, OdeSystem, Tolerance};
use sweep::{sweep_into, SweepWeights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tolerance: f64,
    /// Absolute tolerance relative to the peak input amplitude.
    pub abs_tolerance: f64,
    /// Largest step (us).
    pub max_step: f64,
    pub embedded_pair_order: EmbeddedPair,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tolerance: 1e-5,
            abs_tolerance: 1e-8,
            max_step: 0.05,
            embedded_pair_order: EmbeddedPair::Rk45,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0 && self.rel_tolerance.is_finite()) {
            return Err(Error::param("rel_tolerance", "must be finite and > 0"));
        }
        if !(self.abs_tolerance > 0.0 && self.abs_tolerance.is_finite()) {
            return Err(Error::param("abs_tolerance", "must be finite and > 0"));
        }
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return Err(Error::param("max_step", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Time derivatives of (sigma_ge, sigma_gs) at one lattice point:
///
/// d sigma_ge = i g E + i Omega sigma_gs - (gamma_ge + i Delta) sigma_ge
/// d sigma_gs = i Omega* sigma_ge - (gamma_gs + i delta + i delta_ac) sigma_gs
///
/// The light-shift term carries the sign that cancels the shift induced by a
/// far-detuned control.
#[inline]
pub fn obe_rhs(sigma_ge: C64, sigma_gs: C64, e: C64, drive: &DriveSample, params: &EnsembleParams) -> (C64, C64) {
    let i = C64::i();
    let d_ge = i * params.g * e + i * drive.omega * sigma_gs - C64::new(params.gamma_ge, drive.delta_1) * sigma_ge;
    let d_gs = i * drive.omega.conj() * sigma_ge
        - C64::new(params.spinwave_decay(), drive.delta_2 + drive.delta_acstark) * sigma_gs;
    (d_ge, d_gs)
}

struct ObeSystem<'a, B: Fn(f64) -> C64> {
    params: &'a EnsembleParams,
    schedule: &'a ProtocolSchedule,
    boundary: B,
    weights: SweepWeights,
    z: Vec<f64>,
    segment: usize,
    phase: Vec<C64>,
    e: Vec<C64>,
}

impl<B: Fn(f64) -> C64> ObeSystem<'_, B> {
    fn set_segment(&mut self, segment: usize) {
        self.segment = segment;
        let k = self.schedule.segments[segment].control_spatial_freq;
        for (p, &z) in self.phase.iter_mut().zip(&self.z) {
            *p = if k == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, k * z)
            };
        }
    }
}

impl<B: Fn(f64) -> C64> OdeSystem for ObeSystem<'_, B> {
    fn dim(&self) -> usize {
        2 * self.z.len()
    }

    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        let nz = self.z.len();
        let (ge, gs) = y.split_at(nz);
        let (dge, dgs) = dy.split_at_mut(nz);
        sweep_into(ge, (self.boundary)(t), &self.weights, &mut self.e);
        let td = self.schedule.time_drive_in(self.segment, t);
        let delta_ac = crate::protocol::ac_stark_shift(td.omega_amplitude, td.delta_1);
        for j in 0..nz {
            let drive = DriveSample {
                omega: self.phase[j] * td.omega_amplitude,
                delta_1: td.delta_1,
                delta_2: td.gradient_slope * (self.z[j] - td.gradient_center) + td.gradient_offset,
                delta_acstark: delta_ac,
            };
            let (a, b) = obe_rhs(ge[j], gs[j], self.e[j], &drive, self.params);
            dge[j] = a;
            dgs[j] = b;
        }
    }
}

/// Integrates from zero initial coherence with `input` injected at z_min.
pub fn integrate(
    input: &ComplexEnvelope,
    schedule: &ProtocolSchedule,
    params: &EnsembleParams,
    grid: &SimGrid,
    config: &SolverConfig,
) -> Result<FieldState> {
    integrate_with_boundary(|t| input.sample_at(t), input.peak(), schedule, params, grid, config)
}

/// As [`integrate`], with the entrance field given as a function of time.
/// `amplitude_ref` sets the scale of the absolute tolerance.
pub fn integrate_with_boundary(
    boundary: impl Fn(f64) -> C64,
    amplitude_ref: f64,
    schedule: &ProtocolSchedule,
    params: &EnsembleParams,
    grid: &SimGrid,
    config: &SolverConfig,
) -> Result<FieldState> {
    config.validate()?;
    schedule.validate()?;
    if schedule.t_max() < grid.t_max - 1e-9 {
        return Err(Error::InvalidSchedule(format!(
            "schedule ends at {} us but the grid runs to {} us",
            schedule.t_max(),
            grid.t_max
        )));
    }
    let mut state = FieldState::zeros(grid);
    if !(amplitude_ref > 0.0) {
        // zero input and zero initial coherence stay exactly zero
        return Ok(state);
    }
    let nz = grid.nz;
    let z = grid.z_axis();
    let weights = SweepWeights::new(params, grid);
    let mut sys = ObeSystem {
        params,
        schedule,
        boundary: &boundary,
        weights: weights.clone(),
        z,
        segment: 0,
        phase: vec![C64::new(1.0, 0.0); nz],
        e: vec![C64::new(0.0, 0.0); nz],
    };
    let breakpoints: Vec<f64> = schedule
        .breakpoints()
        .into_iter()
        .filter(|&t| t < grid.t_max - 1e-12)
        .chain(std::iter::once(grid.t_max))
        .collect();
    let tol = Tolerance {
        rtol: config.rel_tolerance,
        atol: config.abs_tolerance * amplitude_ref,
    };
    let times = grid.times();
    let y0 = vec![C64::new(0.0, 0.0); 2 * nz];
    let mut e_col = vec![C64::new(0.0, 0.0); nz];
    let stats = integrate_adaptive(
        &mut sys,
        config.embedded_pair_order,
        tol,
        config.max_step,
        &y0,
        &breakpoints,
        &times,
        |sys, _, a, b| {
            let mid = 0.5 * (a + b);
            let seg = schedule.segment_index(mid).unwrap_or(schedule.segments.len() - 1);
            sys.set_segment(seg);
        },
        |k, t, y| {
            let off = k * nz;
            state.sigma_ge[off..off + nz].copy_from_slice(&y[..nz]);
            state.sigma_gs[off..off + nz].copy_from_slice(&y[nz..]);
            sweep_into(&y[..nz], boundary(t), &weights, &mut e_col);
            state.e[off..off + nz].copy_from_slice(&e_col);
        },
    )?;
    state.stats = stats;
    if !state.is_finite() {
        return Err(Error::NonFinite { t: grid.t_max });
    }
    Ok(state)
}
