//! Input envelopes and their closed-form Fourier transforms.
//!
//! The transform convention is F(w) = int f(t) exp(-i w (t - t_c)) dt, i.e.
//! phases are referred to the pulse centre `t_c`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComplexEnvelope, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKind {
    Gaussian,
    DoubleGaussian,
    ModulatedGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub kind: PulseKind,
    /// Centre t_c (us).
    pub center: f64,
    /// Gaussian standard deviation sigma_t (us).
    pub width: f64,
    /// Pulse separation tau (us), double only.
    pub separation: f64,
    /// Phase of the second pulse (rad), double only.
    pub relative_phase: f64,
    /// Height of the second pulse relative to the first, double only.
    pub amplitude_ratio: f64,
    /// Modulation frequency f_m (cycles/us), modulated only.
    pub mod_freq: f64,
    pub mod_depth: f64,
    /// Overall scale applied after normalisation.
    pub amplitude: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        PulseSpec {
            kind: PulseKind::Gaussian,
            center: 5.0,
            width: 0.5,
            separation: 4.0,
            relative_phase: 0.0,
            amplitude_ratio: 1.0,
            mod_freq: 0.3,
            mod_depth: 1.0,
            amplitude: 1.0,
        }
    }
}

impl PulseSpec {
    pub fn gaussian(center: f64, width: f64) -> Self {
        PulseSpec {
            kind: PulseKind::Gaussian,
            center,
            width,
            ..Default::default()
        }
    }

    pub fn double_gaussian(center: f64, width: f64, separation: f64, relative_phase: f64) -> Self {
        PulseSpec {
            kind: PulseKind::DoubleGaussian,
            center,
            width,
            separation,
            relative_phase,
            ..Default::default()
        }
    }

    pub fn modulated_gaussian(center: f64, width: f64, mod_freq: f64, mod_depth: f64) -> Self {
        PulseSpec {
            kind: PulseKind::ModulatedGaussian,
            center,
            width,
            mod_freq,
            mod_depth,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::param("width", "must be finite and > 0"));
        }
        if !self.center.is_finite() || !self.amplitude.is_finite() {
            return Err(Error::param("center", "center and amplitude must be finite"));
        }
        match self.kind {
            PulseKind::Gaussian => {}
            PulseKind::DoubleGaussian => {
                if !(self.separation > 0.0 && self.separation.is_finite()) {
                    return Err(Error::param("separation", "must be finite and > 0"));
                }
                if !(self.amplitude_ratio >= 0.0 && self.amplitude_ratio.is_finite()) {
                    return Err(Error::param("amplitude_ratio", "must be finite and >= 0"));
                }
                if !self.relative_phase.is_finite() {
                    return Err(Error::param("relative_phase", "must be finite"));
                }
            }
            PulseKind::ModulatedGaussian => {
                if !(0.0..=1.0).contains(&self.mod_depth) {
                    return Err(Error::param("mod_depth", "must lie in [0, 1]"));
                }
                if !(self.mod_freq >= 0.0 && self.mod_freq.is_finite()) {
                    return Err(Error::param("mod_freq", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Time interval that must lie inside the synthesis span.
    pub fn support(&self) -> (f64, f64) {
        let half = match self.kind {
            PulseKind::DoubleGaussian => 0.5 * self.separation,
            _ => 0.0,
        } + 4.0 * self.width;
        (self.center - half, self.center + half)
    }

    /// Divisor that gives the (larger) pulse unit height.
    fn norm(&self) -> f64 {
        match self.kind {
            PulseKind::DoubleGaussian => self.amplitude_ratio.max(1.0),
            _ => 1.0,
        }
    }

    fn gauss(&self, u: f64) -> f64 {
        (-0.5 * u * u / (self.width * self.width)).exp()
    }

    /// Envelope value at time t.
    pub fn value(&self, t: f64) -> C64 {
        let u = t - self.center;
        let scale = self.amplitude / self.norm();
        let v = match self.kind {
            PulseKind::Gaussian => C64::new(self.gauss(u), 0.0),
            PulseKind::DoubleGaussian => {
                let h = 0.5 * self.separation;
                C64::new(self.gauss(u + h), 0.0)
                    + C64::from_polar(self.amplitude_ratio, self.relative_phase) * self.gauss(u - h)
            }
            PulseKind::ModulatedGaussian => {
                let s = (PI * self.mod_freq * u).sin();
                C64::new(self.gauss(u) * (1.0 - self.mod_depth * s * s), 0.0)
            }
        };
        v * scale
    }

    /// Closed-form transform, phase-referenced to the pulse centre.
    pub fn ft(&self, w: f64) -> C64 {
        let sig = self.width;
        let g = |w: f64| sig * (2.0 * PI).sqrt() * (-0.5 * sig * sig * w * w).exp();
        let scale = self.amplitude / self.norm();
        let v = match self.kind {
            PulseKind::Gaussian => C64::new(g(w), 0.0),
            PulseKind::DoubleGaussian => {
                let h = 0.5 * self.separation;
                (C64::from_polar(1.0, w * h) + C64::from_polar(self.amplitude_ratio, self.relative_phase - w * h))
                    * g(w)
            }
            PulseKind::ModulatedGaussian => {
                let m = self.mod_depth;
                let wm = 2.0 * PI * self.mod_freq;
                C64::new((1.0 - 0.5 * m) * g(w) + 0.25 * m * (g(w - wm) + g(w + wm)), 0.0)
            }
        };
        v * scale
    }

    /// Transform with phases referred to `t_ref` instead of the centre.
    pub fn ft_about(&self, w: f64, t_ref: f64) -> C64 {
        self.ft(w) * C64::from_polar(1.0, -w * (self.center - t_ref))
    }
}

/// Samples the envelope at t = 0, dt, ..., up to `span`.
pub fn synthesize(spec: &PulseSpec, dt: f64, span: f64) -> Result<ComplexEnvelope> {
    spec.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be finite and > 0"));
    }
    let (lo, hi) = spec.support();
    if lo < 0.0 || hi > span {
        return Err(Error::SpanTooSmall {
            need_from: lo,
            need_to: hi,
            span,
        });
    }
    let n = (span / dt + 1e-9).floor() as usize + 1;
    ComplexEnvelope::new((0..n).map(|k| spec.value(k as f64 * dt)).collect(), 0.0, dt)
}

/// The closed-form transform as a function of angular frequency (rad/us).
pub fn analytic_ft(spec: &PulseSpec) -> impl Fn(f64) -> C64 {
    let s = *spec;
    move |w| s.ft(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rustfft::FftPlanner;

    /// Discrete approximation of the continuous transform on the FFT grid,
    /// phase-referenced to the pulse centre.
    fn fft_transform(env: &ComplexEnvelope, t_c: f64) -> Vec<(f64, C64)> {
        let n = env.len();
        let mut buf = env.samples.clone();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        (0..n)
            .map(|k| {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                let w = 2.0 * PI * kk / (n as f64 * env.dt);
                (w, buf[k] * env.dt * C64::from_polar(1.0, w * (t_c - env.t0)))
            })
            .collect()
    }

    fn rel_l2(spec: &PulseSpec, env: &ComplexEnvelope) -> f64 {
        let pairs = fft_transform(env, spec.center);
        let num: f64 = pairs.iter().map(|(w, v)| (v - spec.ft(*w)).norm_sqr()).sum();
        let den: f64 = pairs.iter().map(|(w, _)| spec.ft(*w).norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn gaussian_is_symmetric_with_unit_peak() {
        let s = PulseSpec::gaussian(5.0, 0.5);
        let e = synthesize(&s, 0.01, 10.0).unwrap();
        assert_relative_eq!(e.samples[500].re, 1.0);
        for k in 1..400 {
            assert_relative_eq!(e.samples[500 - k].re, e.samples[500 + k].re, max_relative = 1e-10);
        }
        assert_relative_eq!(e.peak(), 1.0);
    }

    #[test]
    fn double_gaussian_peaks_four_apart() {
        let s = PulseSpec::double_gaussian(10.0, 0.5, 4.0, 0.0);
        let e = synthesize(&s, 0.01, 20.0).unwrap();
        assert!((e.samples[800].norm() - 1.0).abs() < 1e-12);
        assert!((e.samples[1200].norm() - 1.0).abs() < 1e-12);
        // local maxima
        assert!(e.samples[799].norm() < 1.0 && e.samples[1201].norm() < 1.0);
        assert!(e.samples[1000].norm() < 1e-3);
    }

    #[test]
    fn modulated_minima_spacing() {
        let s = PulseSpec::modulated_gaussian(12.5, 3.0, 0.3, 1.0);
        let e = synthesize(&s, 0.001, 25.0).unwrap();
        let mags: Vec<f64> = e.samples.iter().map(|c| c.norm()).collect();
        let minima: Vec<f64> = (1..mags.len() - 1)
            .filter(|&k| mags[k] < mags[k - 1] && mags[k] <= mags[k + 1] && mags[k] < 1e-6)
            .map(|k| e.t(k))
            .collect();
        assert!(minima.len() >= 2);
        for w in minima.windows(2) {
            assert!((w[1] - w[0] - 1.0 / 0.3).abs() < 2e-3, "{minima:?}");
        }
        assert_relative_eq!(e.peak(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn span_too_small() {
        let s = PulseSpec::double_gaussian(2.0, 0.5, 4.0, 0.0);
        assert!(matches!(synthesize(&s, 0.01, 20.0), Err(Error::SpanTooSmall { .. })));
        let s = PulseSpec::gaussian(5.0, 0.5);
        assert!(synthesize(&s, 0.01, 6.0).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(PulseSpec::gaussian(5.0, 0.0).validate().is_err());
        assert!(PulseSpec::double_gaussian(5.0, 0.5, 0.0, 0.0).validate().is_err());
        assert!(PulseSpec::modulated_gaussian(5.0, 0.5, 0.3, 1.5).validate().is_err());
    }

    #[test]
    fn single_gaussian_spectral_width() {
        let s = PulseSpec::gaussian(0.0, 0.5);
        let f = analytic_ft(&s);
        // Gaussian of angular std 1/sigma_t
        let ratio = f(1.0 / 0.5).re / f(0.0).re;
        assert_relative_eq!(ratio, (-0.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn analytic_matches_fft_for_all_kinds() {
        let specs = [
            PulseSpec::gaussian(10.0, 0.7),
            PulseSpec::double_gaussian(10.0, 0.5, 4.0, 0.0),
            PulseSpec {
                amplitude_ratio: 0.6,
                ..PulseSpec::double_gaussian(10.0, 0.4, 3.0, 1.3)
            },
            PulseSpec::modulated_gaussian(10.0, 2.0, 0.3, 1.0),
            PulseSpec::modulated_gaussian(10.0, 1.5, 0.2, 0.4),
        ];
        for s in specs {
            let e = synthesize(&s, 0.01, 20.0).unwrap();
            let err = rel_l2(&s, &e);
            assert!(err < 1e-3, "{s:?}: {err}");
        }
    }

    #[test]
    fn odd_pair_vanishes_at_dc() {
        let s = PulseSpec::double_gaussian(10.0, 0.5, 4.0, PI);
        assert!(s.ft(0.0).norm() < 1e-14);
    }

    #[test]
    fn fringe_period_in_frequency() {
        let s = PulseSpec::double_gaussian(10.0, 0.5, 4.0, 0.0);
        let period = 2.0 * PI / 4.0;
        // |F|^2 / gaussian envelope is 2 + 2cos(w tau)
        let g = |w: f64| PulseSpec::gaussian(10.0, 0.5).ft(w).norm_sqr();
        for w in [0.1, 0.4, 0.9] {
            assert_relative_eq!(
                s.ft(w).norm_sqr() / g(w),
                s.ft(w + period).norm_sqr() / g(w + period),
                max_relative = 1e-10
            );
        }
    }
}
