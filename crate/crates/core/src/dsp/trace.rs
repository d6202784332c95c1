//! Sampled detector voltage and its on-disk formats.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ComplexEnvelope;

const MAGIC: &[u8; 4] = b"GMTR";
const VERSION: u32 = 1;

/// Real-valued heterodyne record. Times are in us, rates in GS/s, frequencies in MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterodyneTrace {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub carrier_freq: f64,
    pub shot_id: u32,
    /// Time of the first sample (us).
    pub t0: f64,
}

impl HeterodyneTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64, carrier_freq: f64, shot_id: u32, t0: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::param("sample_rate", "must be finite and > 0"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("samples", "must be finite"));
        }
        Ok(HeterodyneTrace {
            samples,
            sample_rate,
            carrier_freq,
            shot_id,
            t0,
        })
    }

    /// Sample spacing in us.
    pub fn dt(&self) -> f64 {
        1e-3 / self.sample_rate
    }

    /// Sampling rate in MHz (samples per us).
    pub fn rate_mhz(&self) -> f64 {
        self.sample_rate * 1e3
    }

    pub fn nyquist_mhz(&self) -> f64 {
        0.5 * self.rate_mhz()
    }

    pub fn t(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        HeterodyneTrace {
            samples,
            ..self.clone()
        }
    }

    /// Two columns: time (us), voltage.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["time_us", "voltage"])?;
        for (n, v) in self.samples.iter().enumerate() {
            w.write_record([self.t(n).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv); the sample rate is
    /// recovered from the time column.
    pub fn read_csv(path: &Path, carrier_freq: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut t = Vec::new();
        let mut v = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::TraceFormat(format!("expected 2 columns, found {}", rec.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::TraceFormat(format!("`{s}`: {e}")))
            };
            t.push(parse(&rec[0])?);
            v.push(parse(&rec[1])?);
        }
        if t.len() < 2 {
            return Err(Error::TraceFormat("need at least two samples".into()));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::TraceFormat("time column must increase".into()));
        }
        HeterodyneTrace::new(v, 1e-3 / dt, carrier_freq, 0, t[0])
    }

    /// Header: magic "GMTR", u32 version, f64 sample rate (GS/s), u64 length,
    /// then f64 samples, all little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(24 + 8 * self.samples.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.sample_rate.to_le_bytes());
        buf.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for v in &self.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    /// The binary header carries no carrier or start time; the trace starts at t = 0.
    pub fn read_binary(path: &Path, carrier_freq: f64) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 24 || &buf[..4] != MAGIC {
            return Err(Error::TraceFormat("bad magic".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::TraceFormat(format!("unsupported version {version}")));
        }
        let rate = f64::from_le_bytes(buf[8..16].try_into().unwrap());
        let n = u64::from_le_bytes(buf[16..24].try_into().unwrap()) as usize;
        if buf.len() != 24 + 8 * n {
            return Err(Error::TraceFormat(format!(
                "header says {n} samples, payload has {}",
                (buf.len() - 24) / 8
            )));
        }
        let samples = buf[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        HeterodyneTrace::new(samples, rate, carrier_freq, 0, 0.0)
    }
}

/// Beat note 2|env| cos(2 pi f_b t + arg env) plus white Gaussian noise, sampled
/// over the span of the envelope.
pub fn synthesize_trace(
    envelope: &ComplexEnvelope,
    lo_detuning: f64,
    sample_rate: f64,
    noise_rms: f64,
    seed: u64,
) -> Result<HeterodyneTrace> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::param("sample_rate", "must be finite and > 0"));
    }
    if !(noise_rms >= 0.0 && noise_rms.is_finite()) {
        return Err(Error::param("noise_rms", "must be finite and >= 0"));
    }
    let fb = lo_detuning.abs();
    let nyquist = 0.5 * sample_rate * 1e3;
    if fb >= nyquist {
        return Err(Error::Aliasing { beat: fb, nyquist });
    }
    let dt = 1e-3 / sample_rate;
    let n = ((envelope.t_end() - envelope.t0) / dt).floor() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_rms).map_err(|e| Error::param("noise_rms", e.to_string()))?;
    let samples = (0..n)
        .map(|k| {
            let t = envelope.t0 + k as f64 * dt;
            let e = envelope.sample_at(t);
            let v = 2.0 * e.norm() * (2.0 * PI * fb * t + e.arg()).cos();
            if noise_rms > 0.0 {
                v + noise.sample(&mut rng)
            } else {
                v
            }
        })
        .collect();
    HeterodyneTrace::new(samples, sample_rate, fb, 0, envelope.t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::C64;

    fn flat(v: C64, span: f64) -> ComplexEnvelope {
        ComplexEnvelope::new(vec![v; 11], 0.0, span / 10.0).unwrap()
    }

    #[test]
    fn zero_envelope_zero_trace() {
        let tr = synthesize_trace(&flat(C64::new(0.0, 0.0), 1.0), 50.0, 1.0, 0.0, 1).unwrap();
        assert_eq!(tr.len(), 1001);
        assert!(tr.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_envelope_is_cosine_of_amplitude_two() {
        let tr = synthesize_trace(&flat(C64::new(1.0, 0.0), 1.0), 50.0, 1.0, 0.0, 1).unwrap();
        for (n, v) in tr.samples.iter().enumerate() {
            let t = n as f64 * 1e-3;
            assert!((v - 2.0 * (2.0 * PI * 50.0 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn aliasing_is_rejected() {
        assert!(matches!(
            synthesize_trace(&flat(C64::new(1.0, 0.0), 1.0), 600.0, 1.0, 0.0, 1),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn noise_is_seeded() {
        let env = flat(C64::new(0.5, 0.0), 0.2);
        let a = synthesize_trace(&env, 50.0, 1.0, 0.1, 7).unwrap();
        let b = synthesize_trace(&env, 50.0, 1.0, 0.1, 7).unwrap();
        let c = synthesize_trace(&env, 50.0, 1.0, 0.1, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tr = synthesize_trace(&flat(C64::new(0.3, 0.2), 0.1), 50.0, 1.0, 0.01, 3).unwrap();
        let p = dir.path().join("t.csv");
        tr.write_csv(&p).unwrap();
        let back = HeterodyneTrace::read_csv(&p, 50.0).unwrap();
        assert_eq!(back.samples, tr.samples);
        assert!((back.sample_rate - 1.0).abs() < 1e-9);
        let p = dir.path().join("t.bin");
        tr.write_binary(&p).unwrap();
        let back = HeterodyneTrace::read_binary(&p, 50.0).unwrap();
        assert_eq!(back.samples, tr.samples);
        assert_eq!(back.sample_rate, 1.0);
        std::fs::write(&p, b"nope").unwrap();
        assert!(matches!(
            HeterodyneTrace::read_binary(&p, 50.0),
            Err(Error::TraceFormat(_))
        ));
    }
}
