//! Heterodyne detection model and analysis chain: trace synthesis, band-pass
//! filtering, IQ demodulation, shot alignment and averaging, and
//! chirped-Gaussian fitting.

pub mod butter;
pub mod demod;
pub mod fit;
pub mod trace;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use butter::Sos;
pub use demod::{average_shots, bandpass, demodulate, phase_reference, AlignedShots};
pub use fit::{fit_chirped_gaussian, fringe_report, levenberg_marquardt, ChirpedGaussianFit, FringeReport, LmOptions};
pub use trace::{synthesize_trace, HeterodyneTrace};

use crate::error::Result;
use crate::model::ComplexEnvelope;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DspSettings {
    /// Local-oscillator offset from the signal (MHz); its magnitude is the beat.
    pub lo_detuning: f64,
    /// GS/s.
    pub sample_rate: f64,
    pub noise_rms: f64,
    pub bandpass_half_width: f64,
    pub filter_order: usize,
    pub lp_cutoff: f64,
    pub shots: usize,
}

impl Default for DspSettings {
    fn default() -> Self {
        DspSettings {
            lo_detuning: 50.0,
            sample_rate: 1.0,
            noise_rms: 0.0,
            bandpass_half_width: 15.0,
            filter_order: 4,
            lp_cutoff: 15.0,
            shots: 1,
        }
    }
}

/// Band-pass and demodulate one trace at its beat frequency.
pub fn recover_envelope(trace: &HeterodyneTrace, s: &DspSettings) -> Result<ComplexEnvelope> {
    let fc = s.lo_detuning.abs();
    let bp = bandpass(trace, fc, s.bandpass_half_width, s.filter_order)?;
    demodulate(&bp, fc, s.lp_cutoff)
}

/// Synthesizes `s.shots` noisy traces of `env` (each with a random global
/// phase when `random_phase` is set), recovers them in parallel, aligns to
/// the first shot and averages.
pub fn shot_average(env: &ComplexEnvelope, s: &DspSettings, seed: u64, random_phase: bool) -> Result<ComplexEnvelope> {
    use rand::{Rng, SeedableRng};
    let n = s.shots.max(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(u64, f64)> = (0..n)
        .map(|_| {
            let phase = if random_phase {
                rng.random_range(0.0..std::f64::consts::TAU)
            } else {
                0.0
            };
            (rng.random::<u64>(), phase)
        })
        .collect();
    let recovered = jobs
        .par_iter()
        .enumerate()
        .map(|(j, &(shot_seed, phase))| {
            let shot = env.scaled(crate::model::C64::from_polar(1.0, phase));
            let mut tr = synthesize_trace(&shot, s.lo_detuning, s.sample_rate, s.noise_rms, shot_seed)?;
            tr.shot_id = j as u32;
            recover_envelope(&tr, s)
        })
        .collect::<Result<Vec<_>>>()?;
    let aligned = phase_reference(&recovered)?;
    average_shots(&aligned.shots)
}
