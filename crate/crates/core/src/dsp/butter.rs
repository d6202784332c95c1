//! Butterworth IIR design by bilinear transform, cascaded biquads, and
//! zero-phase forward-backward filtering.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::C64;

/// Second-order sections `[b0, b1, b2, 1, a1, a2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 6]>,
}

fn prototype_poles(order: usize) -> Vec<C64> {
    (0..order)
        .map(|k| C64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
        .collect()
}

fn bilinear(s: C64, fs: f64) -> C64 {
    (C64::new(2.0 * fs, 0.0) + s) / (C64::new(2.0 * fs, 0.0) - s)
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

fn check_stable(poles: &[C64]) -> Result<()> {
    if poles.iter().any(|p| !(p.norm() < 1.0 - 1e-12)) {
        return Err(Error::FilterDesign("digital pole on or outside the unit circle".into()));
    }
    Ok(())
}

/// Groups digital poles into conjugate-pair sections with the given numerator.
fn pair_sections(poles: &[C64], num: [f64; 3]) -> Vec<[f64; 6]> {
    let mut upper: Vec<C64> = poles.iter().copied().filter(|p| p.im > 1e-14).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    upper
        .into_iter()
        .map(|p| [num[0], num[1], num[2], 1.0, -2.0 * p.re, p.norm_sqr()])
        .collect()
}

fn normalize(mut sos: Sos, f: f64, fs: f64) -> Result<Sos> {
    let g = sos.response(f, fs).norm();
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::FilterDesign(
            "degenerate gain at the normalization frequency".into(),
        ));
    }
    let per = g.powf(-1.0 / sos.sections.len() as f64);
    for s in &mut sos.sections {
        for b in &mut s[..3] {
            *b *= per;
        }
    }
    Ok(sos)
}

impl Sos {
    /// Band-pass on [low, high] MHz at `fs` MHz sampling. `order` is the
    /// prototype order; the resulting filter has `2 * order` poles.
    pub fn bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(Error::FilterDesign("order must be >= 1".into()));
        }
        if !(low > 0.0 && high > low && high < 0.5 * fs) {
            return Err(Error::FilterDesign(format!(
                "band [{low}, {high}] MHz must satisfy 0 < low < high < {} MHz",
                0.5 * fs
            )));
        }
        let (w1, w2) = (prewarp(low, fs), prewarp(high, fs));
        let bw = w2 - w1;
        let w0sq = w1 * w2;
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let b = p * bw;
            let disc = (b * b - 4.0 * w0sq).sqrt();
            poles.push(bilinear((b + disc) * 0.5, fs));
            poles.push(bilinear((b - disc) * 0.5, fs));
        }
        check_stable(&poles)?;
        let sections = pair_sections(&poles, [1.0, 0.0, -1.0]);
        if sections.len() != order {
            return Err(Error::FilterDesign("pole pairing failed".into()));
        }
        let f0 = fs / PI * (w0sq.sqrt() / (2.0 * fs)).atan();
        normalize(Sos { sections }, f0, fs)
    }

    /// Low-pass with -3 dB point at `cutoff` MHz, unit gain at DC.
    pub fn lowpass(order: usize, cutoff: f64, fs: f64) -> Result<Sos> {
        if order == 0 {
            return Err(Error::FilterDesign("order must be >= 1".into()));
        }
        if !(cutoff > 0.0 && cutoff < 0.5 * fs) {
            return Err(Error::FilterDesign(format!(
                "cutoff {cutoff} MHz must lie in (0, {}) MHz",
                0.5 * fs
            )));
        }
        let wc = prewarp(cutoff, fs);
        let poles: Vec<C64> = prototype_poles(order)
            .into_iter()
            .map(|p| bilinear(p * wc, fs))
            .collect();
        check_stable(&poles)?;
        let mut sections = pair_sections(&poles, [1.0, 2.0, 1.0]);
        if let Some(p) = poles.iter().find(|p| p.im.abs() <= 1e-14) {
            sections.push([1.0, 1.0, 0.0, 1.0, -p.re, 0.0]);
        }
        normalize(Sos { sections }, 0.0, fs)
    }

    /// Complex frequency response at `f` MHz.
    pub fn response(&self, f: f64, fs: f64) -> C64 {
        let z1 = C64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        self.sections.iter().fold(C64::new(1.0, 0.0), |h, s| {
            h * (s[0] + z1 * s[1] + z2 * s[2]) / (1.0 + z1 * s[4] + z2 * s[5])
        })
    }

    /// Initial conditions giving the steady state for a unit step input.
    pub fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
                let z2 = s[2] - s[5] * g;
                let z1 = s[1] - s[4] * g + z2;
                let zi = [z1 * scale, z2 * scale];
                scale *= g;
                zi
            })
            .collect()
    }

    /// Transposed direct form II cascade; `zi` is updated in place.
    pub fn filter_with(&self, x: &[f64], zi: &mut [[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(zi.iter_mut()) {
            for v in y.iter_mut() {
                let xin = *v;
                let out = s[0] * xin + z[0];
                z[0] = s[1] * xin - s[4] * out + z[1];
                z[1] = s[2] * xin - s[5] * out;
                *v = out;
            }
        }
        y
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut zi = vec![[0.0; 2]; self.sections.len()];
        self.filter_with(x, &mut zi)
    }

    fn pad_len(&self) -> usize {
        let zb = self.sections.iter().filter(|s| s[2] == 0.0).count();
        let za = self.sections.iter().filter(|s| s[5] == 0.0).count();
        3 * (2 * self.sections.len() + 1 - zb.min(za))
    }

    /// Zero-phase filtering: odd extension at both ends, forward pass and
    /// reverse pass each started from the scaled step steady state. The
    /// magnitude response is squared relative to a single pass.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let zi = self.step_zi();
        let scaled = |z: &[[f64; 2]], v: f64| z.iter().map(|c| [c[0] * v, c[1] * v]).collect::<Vec<_>>();
        let mut z = scaled(&zi, ext[0]);
        let mut y = self.filter_with(&ext, &mut z);
        y.reverse();
        let mut z = scaled(&zi, y[0]);
        let mut y = self.filter_with(&y, &mut z);
        y.reverse();
        y[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1000.0;

    fn tone(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 / FS).cos()).collect()
    }

    #[test]
    fn band_edges_are_half_power_single_pass() {
        let sos = Sos::bandpass(4, 35.0, 65.0, FS).unwrap();
        for f in [35.0, 65.0] {
            let g = sos.response(f, FS).norm();
            assert!((g / 0.5f64.sqrt() - 1.0).abs() < 0.05, "f={f} g={g}");
        }
        let f0 = FS / PI * ((prewarp(35.0, FS) * prewarp(65.0, FS)).sqrt() / (2.0 * FS)).atan();
        assert!((sos.response(f0, FS).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_band_tone_is_attenuated() {
        let sos = Sos::bandpass(4, 35.0, 65.0, FS).unwrap();
        let g = sos.response(120.0, FS).norm();
        assert!(20.0 * g.log10() < -40.0, "{g}");
    }

    #[test]
    fn lowpass_edge_and_dc() {
        let sos = Sos::lowpass(4, 15.0, FS).unwrap();
        assert!((sos.response(0.0, FS).norm() - 1.0).abs() < 1e-12);
        assert!((sos.response(15.0, FS).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        let odd = Sos::lowpass(3, 15.0, FS).unwrap();
        assert_eq!(odd.sections.len(), 2);
        assert!((odd.response(15.0, FS).norm() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn in_band_tone_is_preserved() {
        let sos = Sos::bandpass(4, 35.0, 65.0, FS).unwrap();
        let x = tone(50.0, 4000);
        let y = sos.filtfilt(&x);
        let amp = y[1000..3000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((amp - 1.0).abs() < 0.01, "{amp}");
    }

    #[test]
    fn dc_is_removed() {
        let sos = Sos::bandpass(4, 35.0, 65.0, FS).unwrap();
        let y = sos.filtfilt(&vec![0.7; 4000]);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 1e-3 * 0.7, "{mean}");
    }

    #[test]
    fn step_zi_gives_steady_state() {
        let sos = Sos::lowpass(4, 20.0, FS).unwrap();
        let mut zi = sos.step_zi();
        let y = sos.filter_with(&[1.0; 50], &mut zi);
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bad_designs_are_rejected() {
        assert!(Sos::bandpass(4, 0.0, 10.0, FS).is_err());
        assert!(Sos::bandpass(4, 40.0, 600.0, FS).is_err());
        assert!(Sos::lowpass(0, 10.0, FS).is_err());
    }
}
