use std::f64::consts::TAU;

use gemeit::dsp::fit::fit_chirped_gaussian;
use gemeit::dsp::{
    average_shots, bandpass, demodulate, phase_reference, shot_average, synthesize_trace, ChirpedGaussianFit,
    DspSettings, HeterodyneTrace,
};
use gemeit::model::{ComplexEnvelope, C64};
use gemeit::pulses::{synthesize, PulseSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn aligned_l2(reference: &ComplexEnvelope, test: &ComplexEnvelope) -> f64 {
    let pairs: Vec<(C64, C64)> = (0..reference.len())
        .map(|n| (reference.samples[n], test.sample_at(reference.t(n))))
        .collect();
    let ov: C64 = pairs.iter().map(|(a, b)| a * b.conj()).sum();
    let rot = ov / ov.norm();
    let num: f64 = pairs.iter().map(|(a, b)| (a - b * rot).norm_sqr()).sum();
    let den: f64 = pairs.iter().map(|(a, _)| a.norm_sqr()).sum();
    (num / den).sqrt()
}

fn double_pulse() -> ComplexEnvelope {
    synthesize(&PulseSpec::double_gaussian(6.0, 0.5, 3.0, 2.0), 0.01, 12.0).unwrap()
}

#[test]
fn noiseless_round_trip_under_three_percent() {
    let env = double_pulse();
    let s = DspSettings::default();
    let trace = synthesize_trace(&env, s.lo_detuning, s.sample_rate, 0.0, 0).unwrap();
    let filtered = bandpass(&trace, 50.0, 15.0, 4).unwrap();
    let rec = demodulate(&filtered, 50.0, 15.0).unwrap();
    let aligned = phase_reference(&[rec.clone(), rec]).unwrap();
    let avg = average_shots(&aligned.shots).unwrap();
    assert!(aligned_l2(&env, &avg) < 0.03);
}

#[test]
fn thirty_shots_at_snr_ten_under_ten_percent() {
    let env = double_pulse();
    let s = DspSettings {
        noise_rms: 0.1 * env.peak(),
        shots: 30,
        ..DspSettings::default()
    };
    let avg = shot_average(&env, &s, 11, true).unwrap();
    let e = aligned_l2(&env, &avg);
    assert!(e < 0.10, "{e}");
}

#[test]
fn shot_average_is_seed_deterministic() {
    let env = double_pulse();
    let s = DspSettings {
        noise_rms: 0.1,
        shots: 4,
        ..DspSettings::default()
    };
    assert_eq!(
        shot_average(&env, &s, 5, true).unwrap(),
        shot_average(&env, &s, 5, true).unwrap()
    );
    assert_ne!(
        shot_average(&env, &s, 5, true).unwrap(),
        shot_average(&env, &s, 6, true).unwrap()
    );
}

#[test]
fn phase_alignment_keeps_coherent_amplitude() {
    // 30 copies with random global phases and complex noise at SNR 10
    let env = synthesize(&PulseSpec::gaussian(5.0, 0.8), 0.02, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let noise = Normal::new(0.0, 0.1 / 2f64.sqrt()).unwrap();
    let shots: Vec<ComplexEnvelope> = (0..30)
        .map(|_| {
            let rot = C64::from_polar(1.0, rng.random_range(0.0..TAU));
            let samples = env
                .samples
                .iter()
                .map(|v| v * rot + C64::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            ComplexEnvelope::new(samples, env.t0, env.dt).unwrap()
        })
        .collect();
    let aligned = phase_reference(&shots).unwrap();
    assert!(aligned.flagged.iter().all(|f| !f));
    let mean = average_shots(&aligned.shots).unwrap();
    let coherent = mean
        .samples
        .iter()
        .zip(&env.samples)
        .map(|(m, e)| m * e.conj())
        .sum::<C64>()
        .norm();
    let ideal: f64 = env.samples.iter().map(|e| e.norm_sqr()).sum();
    assert!(coherent / ideal >= 0.95, "{}", coherent / ideal);
}

fn model_data(truth: &ChirpedGaussianFit, noise_rms: f64, seed: u64) -> ComplexEnvelope {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_rms.max(1e-300)).unwrap();
    let samples = (0..801)
        .map(|k| {
            let v = truth.value(k as f64 * 0.0125);
            if noise_rms > 0.0 {
                v + C64::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                v
            }
        })
        .collect();
    ComplexEnvelope::new(samples, 0.0, 0.0125).unwrap()
}

fn truth(chirp: f64) -> ChirpedGaussianFit {
    ChirpedGaussianFit {
        amplitude: 1.0,
        t0: 5.0,
        sigma: 1.0,
        freq: 0.3,
        phase: -0.5,
        chirp,
        residual_rms: 0.0,
        stderr: [0.0; 6],
    }
}

#[test]
fn zero_chirp_estimate_is_within_its_uncertainty() {
    let fit = fit_chirped_gaussian(&model_data(&truth(0.0), 0.05, 1), None).unwrap();
    assert!(
        fit.chirp.abs() < 3.0 * fit.stderr[5],
        "{} vs {}",
        fit.chirp,
        fit.stderr[5]
    );
}

#[test]
fn fit_errors_shrink_with_snr() {
    let t = truth(0.05);
    let mut last = f64::INFINITY;
    for snr in [5.0, 10.0, 20.0, 40.0] {
        let err: f64 = (0..8)
            .map(|seed| {
                let f = fit_chirped_gaussian(&model_data(&t, 1.0 / snr, seed), None).unwrap();
                (f.sigma - t.sigma).abs() + (f.freq - t.freq).abs() + (f.chirp - t.chirp).abs()
            })
            .sum::<f64>()
            / 8.0;
        assert!(err < last, "snr {snr}: {err} >= {last}");
        last = err;
    }
}

#[test]
fn trace_files_round_trip() {
    let env = double_pulse();
    let tr = synthesize_trace(&env, 50.0, 1.0, 0.01, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("t.bin");
    tr.write_binary(&bin).unwrap();
    let back = HeterodyneTrace::read_binary(&bin, 50.0).unwrap();
    assert_eq!(back.samples, tr.samples);
    assert_eq!(back.sample_rate, tr.sample_rate);
    std::fs::write(&bin, b"GMTR").unwrap();
    assert!(HeterodyneTrace::read_binary(&bin, 50.0).is_err());
}
