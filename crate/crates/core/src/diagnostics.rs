//! Analysis of a solved [`FieldState`]: spinwave maps in position and
//! momentum space, the exit envelope, and the Fourier-relationship metrics.

use std::f64::consts::PI;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComplexEnvelope, FieldState, SimGrid, C64};
use crate::protocol::ProtocolSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapDomain {
    Position,
    Momentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumOptions {
    /// Zero-padding factor of the spatial FFT (>= 1).
    pub pad_factor: usize,
    pub window: Window,
}

impl Default for MomentumOptions {
    fn default() -> Self {
        MomentumOptions {
            pad_factor: 4,
            window: Window::None,
        }
    }
}

/// Spinwave intensity over (axis, time). Row `k` holds the profile at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinwaveMap {
    pub domain: MapDomain,
    pub axis: Vec<f64>,
    pub times: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl SpinwaveMap {
    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.axis.len();
        &self.intensity[k * n..(k + 1) * n]
    }

    /// Profile at the sample nearest to `t`.
    pub fn cross_section(&self, t: f64) -> &[f64] {
        let k = nearest(&self.times, t);
        self.row(k)
    }

    pub fn max(&self) -> f64 {
        self.intensity.iter().copied().fold(0.0, f64::max)
    }

    /// Intensity-weighted mean of the axis for row `k`.
    pub fn centroid(&self, k: usize) -> Option<f64> {
        let row = self.row(k);
        let w: f64 = row.iter().sum();
        (w > 0.0).then(|| row.iter().zip(&self.axis).map(|(i, a)| i * a).sum::<f64>() / w)
    }
}

fn nearest(times: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (k, &tk) in times.iter().enumerate() {
        if (tk - t).abs() < (times[best] - t).abs() {
            best = k;
        }
    }
    best
}

/// Complex spatial spectrum S(k) = sum_j w_j sigma(z_j) exp(-i k z_j) dz on an
/// ascending momentum axis with spacing 2 pi / (M dz), M = pad_factor * nz.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSpectrum {
    pub k: Vec<f64>,
    pub s: Vec<C64>,
    z_min: f64,
    dz: f64,
}

impl MomentumSpectrum {
    pub fn dk(&self) -> f64 {
        2.0 * PI / (self.k.len() as f64 * self.dz)
    }

    /// Inverse transform back onto the first `nz` lattice points.
    pub fn to_position(&self, nz: usize) -> Vec<C64> {
        let m = self.k.len();
        // undo the shift and the z_min phase reference
        let mut buf = vec![C64::new(0.0, 0.0); m];
        for (i, (&k, &s)) in self.k.iter().zip(&self.s).enumerate() {
            let bin = (i + m - m / 2) % m;
            buf[bin] = s * C64::from_polar(1.0, k * self.z_min) / self.dz;
        }
        FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
        buf.truncate(nz);
        for v in &mut buf {
            *v /= m as f64;
        }
        buf
    }
}

pub fn momentum_spectrum(column: &[C64], grid: &SimGrid, opts: &MomentumOptions) -> MomentumSpectrum {
    let nz = column.len();
    let m = nz * opts.pad_factor.max(1);
    let dz = grid.dz();
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for (j, &v) in column.iter().enumerate() {
        let w = match opts.window {
            Window::None => 1.0,
            Window::Hann if nz > 1 => 0.5 - 0.5 * (2.0 * PI * j as f64 / (nz - 1) as f64).cos(),
            Window::Hann => 1.0,
        };
        buf[j] = v * w;
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    let dk = 2.0 * PI / (m as f64 * dz);
    let mut k = Vec::with_capacity(m);
    let mut s = Vec::with_capacity(m);
    for i in 0..m {
        let bin = (i + m - m / 2) % m;
        let kv = (i as f64 - (m / 2) as f64) * dk;
        k.push(kv);
        s.push(buf[bin] * dz * C64::from_polar(1.0, -kv * grid.z_min));
    }
    MomentumSpectrum {
        k,
        s,
        z_min: grid.z_min,
        dz,
    }
}

pub fn spinwave_momentum_map(state: &FieldState, grid: &SimGrid) -> SpinwaveMap {
    spinwave_momentum_map_with(state, grid, &MomentumOptions::default())
}

pub fn spinwave_momentum_map_with(state: &FieldState, grid: &SimGrid, opts: &MomentumOptions) -> SpinwaveMap {
    let mut axis = Vec::new();
    let mut intensity = Vec::new();
    for k in 0..state.n_samples() {
        let spec = momentum_spectrum(state.sigma_gs_row(k), grid, opts);
        if k == 0 {
            axis = spec.k.clone();
        }
        intensity.extend(spec.s.iter().map(|c| c.norm_sqr()));
    }
    SpinwaveMap {
        domain: MapDomain::Momentum,
        axis,
        times: state.times.clone(),
        intensity,
    }
}

pub fn spinwave_position_map(state: &FieldState, grid: &SimGrid) -> SpinwaveMap {
    SpinwaveMap {
        domain: MapDomain::Position,
        axis: grid.z_axis(),
        times: state.times.clone(),
        intensity: state.sigma_gs.iter().map(|c| c.norm_sqr()).collect(),
    }
}

/// Momentum that the spinwave component written at `t_write` carries at
/// `t_end`: the launch momentum minus the accumulated gradient area.
pub fn written_momentum(schedule: &ProtocolSchedule, t_write: f64, t_end: f64) -> f64 {
    let Some(i) = schedule.segment_index(t_write) else {
        return 0.0;
    };
    let launch = -schedule.segments[i].control_spatial_freq;
    // midpoint rule is plenty for the smooth ramp profile
    let n = 2000;
    let h = (t_end - t_write) / n as f64;
    let area: f64 = (0..n)
        .map(|m| {
            let t = t_write + (m as f64 + 0.5) * h;
            schedule.time_drive(t).map_or(0.0, |d| d.gradient_slope)
        })
        .sum::<f64>()
        * h;
    launch - area
}

/// Pearson correlation between the input magnitude |E(t)| and the spinwave
/// momentum magnitude at k(t), where k(t) is the protocol's written momentum
/// shifted so the input centroid lands on the measured momentum centroid.
pub fn momentum_envelope_correlation(
    map: &SpinwaveMap,
    t_map: f64,
    input: &ComplexEnvelope,
    schedule: &ProtocolSchedule,
) -> Option<f64> {
    let k = nearest(&map.times, t_map);
    let t_end = map.times[k];
    let k_measured = map.centroid(k)?;
    let support = trim_to_support(input, SUPPORT_THRESHOLD);
    let t_c = support.centroid()?;
    let shift = k_measured - written_momentum(schedule, t_c, t_end);
    let row = map.row(k);
    let (a, b): (Vec<f64>, Vec<f64>) = support
        .samples
        .iter()
        .enumerate()
        .map(|(n, e)| {
            let kt = written_momentum(schedule, support.t(n), t_end) + shift;
            (e.norm(), interp(&map.axis, row, kt).max(0.0).sqrt())
        })
        .unzip();
    pearson(&a, &b)
}

/// Exit field E(z_max, t) for the samples at or after `t_from`.
pub fn output_envelope(state: &FieldState, grid: &SimGrid, t_from: f64) -> ComplexEnvelope {
    let n = state.n_samples();
    let first = state
        .times
        .iter()
        .position(|&t| t >= t_from - 1e-9)
        .unwrap_or(n - 1)
        .min(n - 2);
    let exit = state.exit_field();
    ComplexEnvelope {
        samples: exit[first..].to_vec(),
        t0: state.times[first],
        dt: grid.dt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub fidelity: f64,
    /// Signed time-frequency scale s (rad/us of input spectrum per us of output).
    pub scale: f64,
    /// Output time at which the reference spectrum is centred (us).
    pub offset: f64,
    /// L2 distance between the unit-normalised, phase-aligned envelopes.
    pub residual_l2: f64,
}

/// Search ranges for [`fourier_fidelity_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelitySearch {
    /// Bracket of |s|.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Try negative scales too (time-reversed spectra).
    pub both_signs: bool,
    /// Half-width of the offset search about the output centroid (us); 0 pins it.
    pub offset_span: Option<f64>,
}

impl Default for FidelitySearch {
    fn default() -> Self {
        FidelitySearch {
            scale_min: 0.01,
            scale_max: 100.0,
            both_signs: true,
            offset_span: None,
        }
    }
}

/// Input spectrum about its intensity centroid, tabulated for interpolation.
struct SpectrumTable {
    w0: f64,
    dw: f64,
    values: Vec<C64>,
}

impl SpectrumTable {
    fn new(input: &ComplexEnvelope) -> Result<Self> {
        let tc = input.centroid().ok_or(Error::ZeroEnergy)?;
        let n = input.len();
        let m = (16 * n).next_power_of_two().max(1 << 12);
        let mut buf = vec![C64::new(0.0, 0.0); m];
        buf[..n].copy_from_slice(&input.samples);
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        let dw = 2.0 * PI / (m as f64 * input.dt);
        let mut values = Vec::with_capacity(m);
        for i in 0..m {
            let bin = (i + m - m / 2) % m;
            let w = (i as f64 - (m / 2) as f64) * dw;
            values.push(buf[bin] * input.dt * C64::from_polar(1.0, w * (tc - input.t0)));
        }
        Ok(SpectrumTable {
            w0: -((m / 2) as f64) * dw,
            dw,
            values,
        })
    }

    fn at(&self, w: f64) -> C64 {
        let x = (w - self.w0) / self.dw;
        if !(x >= 0.0) || x >= (self.values.len() - 1) as f64 {
            return C64::new(0.0, 0.0);
        }
        let i = x as usize;
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// Intensity-weighted mean frequency.
    fn centroid(&self) -> f64 {
        let mut s = 0.0;
        let mut m = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let p = v.norm_sqr();
            s += p;
            m += p * (self.w0 + i as f64 * self.dw);
        }
        m / s
    }
}

fn rms_width(env: &ComplexEnvelope) -> f64 {
    let c = env.centroid().unwrap_or(env.t0);
    let s: f64 = env.samples.iter().map(|v| v.norm_sqr()).sum();
    let m: f64 = env
        .samples
        .iter()
        .enumerate()
        .map(|(n, v)| v.norm_sqr() * (env.t(n) - c).powi(2))
        .sum();
    (m / s).sqrt()
}

fn overlap(output: &ComplexEnvelope, out_norm2: f64, table: &SpectrumTable, w_c: f64, s: f64, offset: f64) -> f64 {
    let mut dot = C64::new(0.0, 0.0);
    let mut rn = 0.0;
    for (n, o) in output.samples.iter().enumerate() {
        let r = table.at(w_c + s * (output.t(n) - offset));
        dot += o * r.conj();
        rn += r.norm_sqr();
    }
    if rn <= 0.0 {
        return 0.0;
    }
    (dot.norm_sqr() / (out_norm2 * rn)).clamp(0.0, 1.0)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub fn fourier_fidelity(input: &ComplexEnvelope, output: &ComplexEnvelope) -> Result<OverlapReport> {
    fourier_fidelity_with(input, output, &FidelitySearch::default())
}

/// Best normalised overlap between the output and the input spectrum
/// F(s (t - t_off)), maximised over the signed scale s and the offset.
pub fn fourier_fidelity_with(
    input: &ComplexEnvelope,
    output: &ComplexEnvelope,
    search: &FidelitySearch,
) -> Result<OverlapReport> {
    let out_norm2: f64 = output.samples.iter().map(|v| v.norm_sqr()).sum();
    if !(out_norm2 > 0.0) || !(input.energy() > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    if !(search.scale_min > 0.0 && search.scale_max > search.scale_min) {
        return Err(Error::param("scale bracket", "need 0 < scale_min < scale_max"));
    }
    let table = SpectrumTable::new(input)?;
    let w_c = table.centroid();
    let t_c = output.centroid().ok_or(Error::ZeroEnergy)?;
    let span = search
        .offset_span
        .unwrap_or_else(|| 0.5 * rms_width(output).max(output.dt));

    let signs: &[f64] = if search.both_signs { &[1.0, -1.0] } else { &[1.0] };
    let (ls_min, ls_max) = (search.scale_min.ln(), search.scale_max.ln());
    let n_coarse = 96;
    let mut best = (0.0, search.scale_min, t_c);
    for &sg in signs {
        for i in 0..=n_coarse {
            let s = sg * (ls_min + (ls_max - ls_min) * i as f64 / n_coarse as f64).exp();
            let f = overlap(output, out_norm2, &table, w_c, s, t_c);
            if f > best.0 {
                best = (f, s, t_c);
            }
        }
    }
    let step = (ls_max - ls_min) / n_coarse as f64;
    let (mut fid, mut s, mut off) = best;
    for _ in 0..3 {
        let sg = s.signum();
        let ls = s.abs().ln();
        let (l, f) = golden_max(
            |l| overlap(output, out_norm2, &table, w_c, sg * l.exp(), off),
            (ls - step).max(ls_min),
            (ls + step).min(ls_max),
            40,
        );
        if f >= fid {
            fid = f;
            s = sg * l.exp();
        }
        if span > 0.0 {
            // coarse scan then golden refinement of the offset
            let n = 24;
            let mut bo = (fid, off);
            for i in 0..=n {
                let o = t_c - span + 2.0 * span * i as f64 / n as f64;
                let f = overlap(output, out_norm2, &table, w_c, s, o);
                if f > bo.0 {
                    bo = (f, o);
                }
            }
            let h = 2.0 * span / n as f64;
            let (o, f) = golden_max(
                |o| overlap(output, out_norm2, &table, w_c, s, o),
                bo.1 - h,
                bo.1 + h,
                40,
            );
            if f >= bo.0 {
                bo = (f, o);
            }
            fid = bo.0;
            off = bo.1;
        }
    }
    Ok(OverlapReport {
        fidelity: fid,
        scale: s,
        offset: off,
        residual_l2: (2.0 - 2.0 * fid.sqrt()).max(0.0).sqrt(),
    })
}

/// The scaled input spectrum that [`fourier_fidelity`] compared against,
/// sampled on the output times and fitted to the output by one complex factor.
pub fn fourier_reference(
    input: &ComplexEnvelope,
    output: &ComplexEnvelope,
    report: &OverlapReport,
) -> Result<ComplexEnvelope> {
    let table = SpectrumTable::new(input)?;
    let w_c = table.centroid();
    let r: Vec<C64> = (0..output.len())
        .map(|n| table.at(w_c + report.scale * (output.t(n) - report.offset)))
        .collect();
    let rn: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    if !(rn > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let alpha = output.samples.iter().zip(&r).map(|(o, v)| o * v.conj()).sum::<C64>() / rn;
    ComplexEnvelope::new(r.iter().map(|v| v * alpha).collect(), output.t0, output.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeAnalysis {
    /// cycles/us
    pub fringe_freq: f64,
    /// Phase of the intensity fringe referred to t = 0 (rad, in (-pi, pi]).
    pub fringe_phase: f64,
    pub visibility: f64,
}

fn hann(n: usize, len: usize) -> f64 {
    if len < 2 {
        1.0
    } else {
        0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()
    }
}

/// Part of the envelope whose intensity exceeds `rel` of the peak, so that
/// long empty tails do not dilute the fringe spectrum.
pub fn trim_to_support(env: &ComplexEnvelope, rel: f64) -> ComplexEnvelope {
    let peak = env.samples.iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    let thr = rel * peak;
    let first = env.samples.iter().position(|c| c.norm_sqr() > thr).unwrap_or(0);
    let last = env
        .samples
        .iter()
        .rposition(|c| c.norm_sqr() > thr)
        .unwrap_or(env.len() - 1);
    let last = last.max(first + 1).min(env.len() - 1);
    let first = first.min(last - 1);
    ComplexEnvelope {
        samples: env.samples[first..=last].to_vec(),
        t0: env.t(first),
        dt: env.dt,
    }
}

const SUPPORT_THRESHOLD: f64 = 1e-3;

/// Windowed, mean-removed intensity.
fn fringe_signal(output: &ComplexEnvelope) -> Vec<f64> {
    let n = output.len();
    let intensity: Vec<f64> = output.samples.iter().map(|c| c.norm_sqr()).collect();
    let wsum: f64 = (0..n).map(|k| hann(k, n)).sum();
    let mean: f64 = intensity.iter().enumerate().map(|(k, v)| v * hann(k, n)).sum::<f64>() / wsum;
    intensity
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean) * hann(k, n))
        .collect()
}

/// Phase of the intensity fringe at frequency `f` (cycles/us), referred to `t_ref`.
pub fn fringe_phase_at(output: &ComplexEnvelope, f: f64, t_ref: f64) -> f64 {
    let output = &trim_to_support(output, SUPPORT_THRESHOLD);
    let x = fringe_signal(output);
    let mut acc = C64::new(0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        acc += C64::from_polar(*v, -2.0 * PI * f * (output.t(k) - t_ref));
    }
    acc.arg()
}

/// Dominant intensity sideband of the output: frequency, phase and visibility.
pub fn fringe_analysis(output: &ComplexEnvelope) -> Result<FringeAnalysis> {
    let trimmed = trim_to_support(output, SUPPORT_THRESHOLD);
    let output = &trimmed;
    let n = output.len();
    if n < 8 {
        return Err(Error::NoSideband);
    }
    let x = fringe_signal(output);
    let m = (8 * n).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for (b, v) in buf.iter_mut().zip(&x) {
        *b = C64::new(*v, 0.0);
    }
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf[..m / 2].iter().map(|c| c.norm()).collect();
    // leave the DC lobe: walk down to its first local minimum
    let mut start = 1;
    while start + 1 < mag.len() && mag[start + 1] < mag[start] {
        start += 1;
    }
    let (peak, &pv) = mag[start..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i + start, v))
        .ok_or(Error::NoSideband)?;
    let mut sorted = mag.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let floor = sorted[sorted.len() / 2];
    if !(pv > 0.0) || start + 1 >= mag.len() || pv < 10.0 * floor || peak == 0 || peak + 1 >= mag.len() {
        return Err(Error::NoSideband);
    }
    let (a, b, c) = (mag[peak - 1], mag[peak], mag[peak + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let freq = (peak as f64 + delta.clamp(-0.5, 0.5)) / (m as f64 * output.dt);
    let phase = fringe_phase_at(output, freq, 0.0);

    let intensity: Vec<f64> = output.samples.iter().map(|c| c.norm_sqr()).collect();
    let centre = output.centroid().ok_or(Error::ZeroEnergy)?;
    let period = 1.0 / freq;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, v) in intensity.iter().enumerate() {
        if (output.t(k) - centre).abs() <= period {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let visibility = if hi + lo > 0.0 {
        ((hi - lo) / (hi + lo)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(FringeAnalysis {
        fringe_freq: freq,
        fringe_phase: phase,
        visibility,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePair {
    /// Time between the two outer pulses (us).
    pub separation: f64,
    pub center: f64,
    /// Common Gaussian amplitude std (us).
    pub width: f64,
    /// Amplitudes of the left, central and right pulses.
    pub amplitudes: [f64; 3],
    /// RMS misfit relative to the peak magnitude.
    pub residual: f64,
}

fn triplet(p: &[f64], t: f64) -> f64 {
    let g = |u: f64| (-u * u / (2.0 * p[5] * p[5])).exp();
    p[0].abs() * g(t - p[3] + p[4]) + p[1].abs() * g(t - p[3]) + p[2].abs() * g(t - p[3] - p[4])
}

/// Separation of the outer pulses of a modulated-input output, from a
/// least-squares fit of |out| to three equal-width Gaussians at c - d, c, c + d.
/// Overlapping pulses are handled by the fit rather than by peak picking.
pub fn pulse_pair_separation(output: &ComplexEnvelope) -> Result<PulsePair> {
    use crate::dsp::fit::{levenberg_marquardt, LmOptions};
    let env = trim_to_support(output, SUPPORT_THRESHOLD);
    let mag: Vec<f64> = env.samples.iter().map(|c| c.norm()).collect();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || env.len() < 8 {
        return Err(Error::ZeroEnergy);
    }
    let times = env.times();
    let centre = env.centroid().ok_or(Error::ZeroEnergy)?;
    let w: f64 = mag.iter().map(|v| v * v).sum();
    let rms = (times
        .iter()
        .zip(&mag)
        .map(|(t, v)| (t - centre).powi(2) * v * v)
        .sum::<f64>()
        / w)
        .sqrt();
    let resid = |p: &[f64]| -> Vec<f64> {
        times
            .iter()
            .zip(&mag)
            .map(|(t, v)| (triplet(p, *t) - v) / peak)
            .collect()
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for df in [0.3, 0.6, 1.0, 1.4, 1.8, 2.2] {
        for wf in [0.35, 0.7] {
            let x0 = [0.5 * peak, peak, 0.5 * peak, centre, df * rms, wf * rms];
            let Ok(r) = levenberg_marquardt(resid, &x0, &LmOptions::default()) else {
                continue;
            };
            let valid = r.x[4].abs() > 0.0 && r.x[5].abs() > 0.0 && r.x.iter().all(|v| v.is_finite());
            if valid && best.as_ref().is_none_or(|b| r.sse < b.0) {
                best = Some((r.sse, r.x));
            }
        }
    }
    let (sse, p) = best.ok_or_else(|| Error::FitFailed("pulse triplet fit did not converge".into()))?;
    let (left, right) = if p[4] >= 0.0 {
        (p[0].abs(), p[2].abs())
    } else {
        (p[2].abs(), p[0].abs())
    };
    Ok(PulsePair {
        separation: 2.0 * p[4].abs(),
        center: p[3],
        width: p[5].abs(),
        amplitudes: [left, p[1].abs(), right],
        residual: (sse / mag.len() as f64).sqrt(),
    })
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Removes 2 pi jumps from a sequence of angles.
pub fn unwrap_phases(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut offset = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            let prev = xs[i - 1];
            offset -= 2.0 * PI * ((x - prev) / (2.0 * PI)).round();
        }
        out.push(x + offset);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares y = slope x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Linear interpolation of (xs, ys) at x; xs ascending. Zero outside.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let f = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    ys[i - 1] * (1.0 - f) + ys[i] * f
}

/// Cross-correlation of two envelopes' magnitudes at the best lag,
/// normalised to 1 for identical shapes.
pub fn envelope_correlation(a: &ComplexEnvelope, b: &ComplexEnvelope, time_reversed: bool) -> f64 {
    let dt = a.dt.min(b.dt);
    let ta = a.t_end() - a.t0;
    let tb = b.t_end() - b.t0;
    let na = (ta / dt).round() as usize + 1;
    let nb = (tb / dt).round() as usize + 1;
    let xa: Vec<f64> = (0..na).map(|k| a.sample_at(a.t0 + k as f64 * dt).norm()).collect();
    let mut xb: Vec<f64> = (0..nb).map(|k| b.sample_at(b.t0 + k as f64 * dt).norm()).collect();
    if time_reversed {
        xb.reverse();
    }
    let ea: f64 = xa.iter().map(|v| v * v).sum();
    let eb: f64 = xb.iter().map(|v| v * v).sum();
    if !(ea > 0.0 && eb > 0.0) {
        return 0.0;
    }
    let mut best = 0.0f64;
    for lag in -(nb as isize - 1)..na as isize {
        let mut acc = 0.0;
        for (j, v) in xb.iter().enumerate() {
            let i = j as isize + lag;
            if i >= 0 && (i as usize) < na {
                acc += xa[i as usize] * v;
            }
        }
        best = best.max(acc);
    }
    best / (ea * eb).sqrt()
}
