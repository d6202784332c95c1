//! IQ demodulation of a heterodyne trace and phase alignment of shots.

use std::f64::consts::PI;

use crate::dsp::butter::Sos;
use crate::dsp::trace::HeterodyneTrace;
use crate::error::{Error, Result};
use crate::model::{ComplexEnvelope, C64};

/// Order of the demodulation low-pass.
pub const LOWPASS_ORDER: usize = 4;

/// Zero-phase Butterworth band-pass centred on `center` MHz.
pub fn bandpass(trace: &HeterodyneTrace, center: f64, half_width: f64, order: usize) -> Result<HeterodyneTrace> {
    let sos = Sos::bandpass(order, center - half_width, center + half_width, trace.rate_mhz())?;
    Ok(trace.with_samples(sos.filtfilt(&trace.samples)))
}

/// Mixes down by `f_c`, low-passes I and Q at `lp_cutoff` and decimates so
/// the analysis rate is about eight times the cutoff. A unit envelope maps to
/// unit |I + iQ|.
pub fn demodulate(trace: &HeterodyneTrace, f_c: f64, lp_cutoff: f64) -> Result<ComplexEnvelope> {
    if !(f_c > 0.0 && f_c < trace.nyquist_mhz()) {
        return Err(Error::param(
            "f_c",
            format!("must lie in (0, {}) MHz", trace.nyquist_mhz()),
        ));
    }
    if lp_cutoff >= f_c {
        return Err(Error::ImageLeakage {
            cutoff: lp_cutoff,
            carrier: f_c,
        });
    }
    let fs = trace.rate_mhz();
    let sos = Sos::lowpass(LOWPASS_ORDER, lp_cutoff, fs)?;
    let (mut i, mut q): (Vec<f64>, Vec<f64>) = trace
        .samples
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let ph = 2.0 * PI * f_c * trace.t(n);
            (v * ph.cos(), -v * ph.sin())
        })
        .unzip();
    i = sos.filtfilt(&i);
    q = sos.filtfilt(&q);
    let step = ((fs / (8.0 * lp_cutoff)).floor() as usize).max(1);
    let samples: Vec<C64> = (0..i.len()).step_by(step).map(|n| C64::new(i[n], q[n])).collect();
    ComplexEnvelope::new(samples, trace.t0, step as f64 * trace.dt())
}

#[derive(Debug, Clone)]
pub struct AlignedShots {
    pub shots: Vec<ComplexEnvelope>,
    /// Phase removed from each shot; the first is always zero.
    pub theta: Vec<f64>,
    /// Shots with no overlap with the reference, left unaligned.
    pub flagged: Vec<bool>,
}

/// Rotates every shot onto the first: shot_j * exp(-i arg<shot_1, shot_j>).
pub fn phase_reference(shots: &[ComplexEnvelope]) -> Result<AlignedShots> {
    let first = shots
        .first()
        .ok_or_else(|| Error::param("shots", "need at least one shot"))?;
    let ref_norm = first.samples.iter().map(|s| s.norm_sqr()).sum::<f64>().sqrt();
    let mut out = AlignedShots {
        shots: Vec::with_capacity(shots.len()),
        theta: Vec::with_capacity(shots.len()),
        flagged: Vec::with_capacity(shots.len()),
    };
    for (j, s) in shots.iter().enumerate() {
        if j == 0 {
            out.shots.push(s.clone());
            out.theta.push(0.0);
            out.flagged.push(false);
            continue;
        }
        let overlap: C64 = first.samples.iter().zip(&s.samples).map(|(a, b)| a.conj() * b).sum();
        let norm = s.samples.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if !(overlap.norm() > 1e-12 * ref_norm * norm) {
            out.shots.push(s.clone());
            out.theta.push(0.0);
            out.flagged.push(true);
            continue;
        }
        let theta = overlap.arg();
        out.shots.push(s.scaled(C64::from_polar(1.0, -theta)));
        out.theta.push(theta);
        out.flagged.push(false);
    }
    Ok(out)
}

/// Sample-wise mean over the common length of the shots.
pub fn average_shots(shots: &[ComplexEnvelope]) -> Result<ComplexEnvelope> {
    let first = shots
        .first()
        .ok_or_else(|| Error::param("shots", "need at least one shot"))?;
    let n = shots.iter().map(|s| s.len()).min().unwrap_or(0);
    let inv = 1.0 / shots.len() as f64;
    let samples = (0..n)
        .map(|k| shots.iter().map(|s| s.samples[k]).sum::<C64>() * inv)
        .collect();
    ComplexEnvelope::new(samples, first.t0, first.dt)
}
