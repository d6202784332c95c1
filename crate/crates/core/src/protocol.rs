//! Time-resolved control-field and gradient schedules for GEM write,
//! gradient flip/hold and EIT (or GEM) readout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EnsembleParams, SimGrid, C64};

pub const DEFAULT_EDGE_TIME: f64 = 0.2;

/// One piece of the schedule. Control amplitude and gradient slope share a
/// raised-cosine switching envelope of width `edge_time` at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    /// Peak control Rabi frequency Omega_0 (rad/us).
    pub control_amplitude: f64,
    /// One-photon detuning Delta (rad/us).
    pub control_detuning: f64,
    /// Spatial frequency of the control phase, Omega ~ exp(i k z) (rad/mm).
    /// The spinwave it writes carries momentum `-control_spatial_freq`.
    pub control_spatial_freq: f64,
    /// Two-photon detuning slope eta (rad/us per mm).
    pub gradient_slope: f64,
    /// Global two-photon offset delta_0 (rad/us).
    pub gradient_offset: f64,
    pub edge_time: f64,
}

impl Segment {
    pub fn off(t_start: f64, t_end: f64, edge_time: f64) -> Self {
        Segment {
            t_start,
            t_end,
            control_amplitude: 0.0,
            control_detuning: 0.0,
            control_spatial_freq: 0.0,
            gradient_slope: 0.0,
            gradient_offset: 0.0,
            edge_time,
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Raised-cosine switching envelope in [0, 1].
    pub fn envelope(&self, t: f64) -> f64 {
        if self.edge_time <= 0.0 {
            return 1.0;
        }
        let ramp = |u: f64| {
            if u >= self.edge_time {
                1.0
            } else if u <= 0.0 {
                0.0
            } else {
                0.5 * (1.0 - (PI * u / self.edge_time).cos())
            }
        };
        ramp(t - self.t_start).min(ramp(self.t_end - t))
    }

    pub fn is_active(&self) -> bool {
        self.control_amplitude != 0.0 || self.gradient_slope != 0.0 || self.gradient_offset != 0.0
    }
}

/// Spatially resolved drive at one (z, t).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSample {
    pub omega: C64,
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_acstark: f64,
}

/// The z-independent part of the drive at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDrive {
    /// Omega_0 times the switching envelope.
    pub omega_amplitude: f64,
    pub delta_1: f64,
    pub spatial_freq: f64,
    pub gradient_slope: f64,
    pub gradient_offset: f64,
    pub gradient_center: f64,
}

impl TimeDrive {
    pub fn at(&self, z: f64) -> DriveSample {
        let omega = if self.spatial_freq == 0.0 {
            C64::new(self.omega_amplitude, 0.0)
        } else {
            C64::from_polar(self.omega_amplitude, self.spatial_freq * z)
        };
        DriveSample {
            omega,
            delta_1: self.delta_1,
            delta_2: self.gradient_slope * (z - self.gradient_center) + self.gradient_offset,
            delta_acstark: ac_stark_shift(self.omega_amplitude, self.delta_1),
        }
    }
}

/// Lowest-order light shift |Omega|^2 / Delta; zero on resonance.
pub fn ac_stark_shift(omega_abs: f64, delta_1: f64) -> f64 {
    if delta_1.abs() > 0.0 {
        omega_abs * omega_abs / delta_1
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSchedule {
    pub segments: Vec<Segment>,
    /// Position where the gradient detuning vanishes (mm).
    pub gradient_center: f64,
}

impl ProtocolSchedule {
    pub fn new(segments: Vec<Segment>, gradient_center: f64) -> Result<Self> {
        let s = ProtocolSchedule {
            segments,
            gradient_center,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .segments
            .first()
            .ok_or_else(|| Error::InvalidSchedule("no segments".into()))?;
        if first.t_start != 0.0 {
            return Err(Error::InvalidSchedule(format!(
                "first segment starts at {} us, expected 0",
                first.t_start
            )));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.t_end > seg.t_start) {
                return Err(Error::InvalidSchedule(format!("segment {i} has non-positive duration")));
            }
            if seg.edge_time < 0.0 || seg.edge_time > 0.5 * seg.duration() + 1e-12 {
                return Err(Error::InvalidSchedule(format!(
                    "segment {i}: edge_time {} must lie in [0, duration/2 = {}]",
                    seg.edge_time,
                    0.5 * seg.duration()
                )));
            }
            let finite = [
                seg.control_amplitude,
                seg.control_detuning,
                seg.control_spatial_freq,
                seg.gradient_slope,
                seg.gradient_offset,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidSchedule(format!("segment {i} has non-finite settings")));
            }
            if i > 0 {
                let prev = &self.segments[i - 1];
                if (prev.t_end - seg.t_start).abs() > 1e-12 {
                    return Err(Error::InvalidSchedule(format!(
                        "segments {} and {i} are not contiguous ({} vs {})",
                        i - 1,
                        prev.t_end,
                        seg.t_start
                    )));
                }
            }
        }
        if !self.gradient_center.is_finite() {
            return Err(Error::InvalidSchedule("gradient center is not finite".into()));
        }
        Ok(())
    }

    pub fn t_max(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end)
    }

    /// Segment containing `t`; boundaries belong to the later segment except at t_max.
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0) || t > self.t_max() {
            return None;
        }
        let i = self.segments.partition_point(|s| s.t_end <= t);
        Some(i.min(self.segments.len() - 1))
    }

    pub fn time_drive_in(&self, segment: usize, t: f64) -> TimeDrive {
        let s = &self.segments[segment];
        let w = s.envelope(t);
        TimeDrive {
            omega_amplitude: s.control_amplitude * w,
            delta_1: s.control_detuning,
            spatial_freq: s.control_spatial_freq,
            gradient_slope: s.gradient_slope * w,
            gradient_offset: s.gradient_offset,
            gradient_center: self.gradient_center,
        }
    }

    pub fn time_drive(&self, t: f64) -> Result<TimeDrive> {
        let i = self
            .segment_index(t)
            .ok_or(Error::OutsideSchedule { t, t_max: self.t_max() })?;
        Ok(self.time_drive_in(i, t))
    }

    /// Times where the drive or its first derivatives switch: segment
    /// boundaries and the ends of each switching ramp.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        for s in &self.segments {
            if s.edge_time > 0.0 && s.is_active() {
                pts.push(s.t_start + s.edge_time);
                pts.push(s.t_end - s.edge_time);
            }
            pts.push(s.t_end);
        }
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        pts
    }

    /// Builds from rows of (t_start, t_end, rabi, detuning, spatial_freq,
    /// slope, offset, edge_time), the layout of [`to_config_text`](Self::to_config_text).
    pub fn from_rows(gradient_center: f64, rows: &[[f64; 8]]) -> Result<Self> {
        let segments = rows
            .iter()
            .map(|r| Segment {
                t_start: r[0],
                t_end: r[1],
                control_amplitude: r[2],
                control_detuning: r[3],
                control_spatial_freq: r[4],
                gradient_slope: r[5],
                gradient_offset: r[6],
                edge_time: r[7],
            })
            .collect();
        ProtocolSchedule::new(segments, gradient_center)
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::from("[schedule]\n");
        out.push_str(&format!("gradient_center = {}\n", self.gradient_center));
        out.push_str("# t_start, t_end, rabi, detuning, spatial_freq, slope, offset, edge_time\n");
        for s in &self.segments {
            out.push_str(&format!(
                "segment = {}, {}, {}, {}, {}, {}, {}, {}\n",
                s.t_start,
                s.t_end,
                s.control_amplitude,
                s.control_detuning,
                s.control_spatial_freq,
                s.gradient_slope,
                s.gradient_offset,
                s.edge_time
            ));
        }
        out
    }
}

/// Drive at (z, t): Omega = Omega_0(t) exp(i k z), delta = eta(t) (z - z_c) + delta_0,
/// and the light shift |Omega|^2 / Delta.
pub fn drive_at(schedule: &ProtocolSchedule, z: f64, t: f64) -> Result<DriveSample> {
    Ok(schedule.time_drive(t)?.at(z))
}

/// Gradient settings of the GEM stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientProfile {
    pub slope: f64,
    pub center: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GemParams {
    pub control_amplitude: f64,
    pub detuning: f64,
    pub gradient: GradientProfile,
    /// Slope during the rephasing window; defaults to `-gradient.slope`.
    pub flip_slope: Option<f64>,
    /// Temporal centroid of the input, used for the idealized momentum launch.
    pub launch_centroid: Option<f64>,
    /// Extra spatial frequency added to the launch (rad/mm), typically the
    /// signal's own dispersive wavenumber so the spinwave ends at zero momentum.
    #[serde(default)]
    pub launch_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EitParams {
    pub control_amplitude: f64,
    pub detuning: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTiming {
    pub t_write_end: f64,
    pub t_flip_end: f64,
    pub t_read_start: f64,
    pub t_max: f64,
    pub edge_time: f64,
}

/// Spatial frequency that brings a spinwave written at the centroid of the
/// write window back to zero momentum at the end of the write, given that
/// the gradient walks the momentum at dk/dt = -eta.
pub fn momentum_launch_k0(eta: f64, write_duration: f64, t_centroid: f64) -> f64 {
    eta * (write_duration - t_centroid)
}

/// Wavenumber the signal picks up from the detuned optical transition,
/// Re of the steady-state propagation constant averaged over the lattice:
/// <gN/c> g Delta / (gamma_ge^2 + Delta^2).
pub fn signal_dispersion_momentum(params: &EnsembleParams, grid: &SimGrid, delta_1: f64) -> f64 {
    let mean =
        params.coupling_gn_over_c * params.pumping_efficiency * params.density_profile.integral(grid) / grid.length();
    mean * params.g * delta_1 / (params.gamma_ge * params.gamma_ge + delta_1 * delta_1)
}

/// End of the rephasing window at which the flipped gradient returns the
/// momentum centroid of a pulse written at `t_centroid` to zero.
pub fn auto_flip_end(eta: f64, flip_slope: f64, t_write_end: f64, t_centroid: f64) -> Result<f64> {
    if flip_slope == 0.0 || flip_slope.signum() == eta.signum() {
        return Err(Error::InvalidSchedule(
            "flip slope must be non-zero and opposite in sign to the write slope".into(),
        ));
    }
    Ok(t_write_end + (t_write_end - t_centroid) * (eta / flip_slope).abs())
}

/// Flip slope that re-centres the momentum of a pulse written at
/// `t_centroid` exactly at the end of a rephasing window of given duration.
pub fn flip_slope_for_window(eta: f64, t_write_end: f64, t_centroid: f64, flip_duration: f64) -> f64 {
    -eta * (t_write_end - t_centroid) / flip_duration
}

/// GEM write followed by EIT read.
///
/// Experimental mode: write (far-detuned control, +eta), rephase (control
/// off, flipped gradient), optional hold (all off), read (resonant control,
/// no gradient). Idealized mode: the write control carries a spatial phase
/// that launches the spinwave so it finishes the write at zero momentum; no
/// flip segment is used and any gap before the read is a hold.
pub fn build_gem_eit_schedule(
    timing: &ScheduleTiming,
    gem: &GemParams,
    eit: &EitParams,
    idealized: bool,
) -> Result<ProtocolSchedule> {
    let ScheduleTiming {
        t_write_end,
        t_flip_end,
        t_read_start,
        t_max,
        edge_time,
    } = *timing;
    let ordered = if idealized {
        0.0 < t_write_end && t_write_end <= t_read_start && t_read_start < t_max
    } else {
        0.0 < t_write_end && t_write_end < t_flip_end && t_flip_end <= t_read_start && t_read_start < t_max
    };
    if !ordered {
        return Err(Error::InvalidSchedule(format!(
            "inconsistent timing: write end {t_write_end}, flip end {t_flip_end}, read start {t_read_start}, t_max {t_max}"
        )));
    }

    let mut write = Segment {
        t_start: 0.0,
        t_end: t_write_end,
        control_amplitude: gem.control_amplitude,
        control_detuning: gem.detuning,
        control_spatial_freq: 0.0,
        gradient_slope: gem.gradient.slope,
        gradient_offset: gem.gradient.offset,
        edge_time,
    };
    let mut segments = Vec::with_capacity(4);
    if idealized {
        let centroid = gem.launch_centroid.unwrap_or(0.5 * t_write_end);
        let k0 = momentum_launch_k0(gem.gradient.slope, t_write_end, centroid);
        write.control_spatial_freq = gem.launch_offset - k0;
        segments.push(write);
        if t_read_start > t_write_end {
            segments.push(Segment::off(t_write_end, t_read_start, edge_time));
        }
    } else {
        segments.push(write);
        segments.push(Segment {
            gradient_slope: gem.flip_slope.unwrap_or(-gem.gradient.slope),
            gradient_offset: gem.gradient.offset,
            ..Segment::off(t_write_end, t_flip_end, edge_time)
        });
        if t_read_start > t_flip_end {
            segments.push(Segment::off(t_flip_end, t_read_start, edge_time));
        }
    }
    segments.push(Segment {
        control_amplitude: eit.control_amplitude,
        control_detuning: eit.detuning,
        ..Segment::off(t_read_start, t_max, edge_time)
    });
    clamp_edges(&mut segments);
    ProtocolSchedule::new(segments, gem.gradient.center)
}

/// GEM write followed by GEM recall: same far-detuned control, flipped gradient.
pub fn build_gem_gem_schedule(
    t_write_end: f64,
    t_max: f64,
    edge_time: f64,
    gem: &GemParams,
) -> Result<ProtocolSchedule> {
    if !(0.0 < t_write_end && t_write_end < t_max) {
        return Err(Error::InvalidSchedule(format!(
            "inconsistent timing: write end {t_write_end}, t_max {t_max}"
        )));
    }
    let write = Segment {
        t_start: 0.0,
        t_end: t_write_end,
        control_amplitude: gem.control_amplitude,
        control_detuning: gem.detuning,
        control_spatial_freq: 0.0,
        gradient_slope: gem.gradient.slope,
        gradient_offset: gem.gradient.offset,
        edge_time,
    };
    let recall = Segment {
        t_start: t_write_end,
        t_end: t_max,
        gradient_slope: gem.flip_slope.unwrap_or(-gem.gradient.slope),
        ..write
    };
    let mut segments = vec![write, recall];
    clamp_edges(&mut segments);
    ProtocolSchedule::new(segments, gem.gradient.center)
}

/// Control off, no gradient: plain two-level absorption.
pub fn build_passive_schedule(t_max: f64) -> Result<ProtocolSchedule> {
    ProtocolSchedule::new(vec![Segment::off(0.0, t_max, 0.0)], 0.0)
}

fn clamp_edges(segments: &mut [Segment]) {
    for s in segments {
        s.edge_time = s.edge_time.min(0.5 * s.duration());
    }
}
