//! Config-driven runs: calibration, simulation, analysis, acceptance checks,
//! sweeps and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, FlipSlope, InputSpec, LaunchOffset, ProtocolMode, SweepMetric};
use crate::diagnostics::{
    envelope_correlation, fourier_fidelity, fourier_reference, fringe_analysis, fringe_phase_at, linear_fit,
    momentum_envelope_correlation, momentum_spectrum, output_envelope, pulse_pair_separation,
    spinwave_momentum_map_with, spinwave_position_map, trim_to_support, unwrap_phases, FringeAnalysis, LinearFit,
    OverlapReport, PulsePair, SpinwaveMap,
};
use crate::dsp::{fit_chirped_gaussian, fringe_report, shot_average, ChirpedGaussianFit, FringeReport};
use crate::error::{Error, Result};
use crate::model::{make_grid, ComplexEnvelope, EnsembleParams, FieldState, IntegrationStats, SimGrid, C64};
use crate::plot::{heatmap_png, line_chart, Series};
use crate::protocol::{
    build_gem_eit_schedule, build_gem_gem_schedule, build_passive_schedule, signal_dispersion_momentum, EitParams,
    GemParams, GradientProfile, ProtocolSchedule, ScheduleTiming,
};
use crate::pulses::{synthesize, PulseKind, PulseSpec};
use crate::solver::integrate;

/// Spinwave spectra must satisfy Parseval and FFT duality to this level.
pub const SPECTRAL_TOLERANCE: f64 = 1e-6;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Quantities measured by the calibration pulse and the values derived from them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Rephasing slope for experimental GEM-EIT (None: reverse of the write slope).
    pub flip_slope: Option<f64>,
    /// Launch wavenumber offset for idealized GEM-EIT.
    pub launch_offset: f64,
    /// Momentum centroid at the end of the write (rad/mm), when measured.
    pub write_momentum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    /// `>=`, `<=` or `==` (within tolerance).
    pub relation: String,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_least(name: &str, value: Option<f64>, min: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: ">=".into(),
            threshold: min,
            passed: value.is_some_and(|v| v >= min),
        }
    }

    pub fn at_most(name: &str, value: Option<f64>, max: f64) -> Self {
        Check {
            name: name.into(),
            value,
            relation: "<=".into(),
            threshold: max,
            passed: value.is_some_and(|v| v <= max),
        }
    }

    fn flag(name: &str, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: Some(if ok { 1.0 } else { 0.0 }),
            relation: "==".into(),
            threshold: 1.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmission {
    pub measured: f64,
    /// exp(-d_eff).
    pub expected: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinwaveSummary {
    pub map_time: f64,
    pub momentum_centroid: Option<f64>,
    pub momentum_correlation: Option<f64>,
    pub parseval_error: f64,
    pub duality_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspSummary {
    pub shots: usize,
    /// Relative L2 distance between the recovered and simulated output after
    /// removing the global phase.
    pub l2_error: f64,
    pub reference_fits: Option<[ChirpedGaussianFit; 2]>,
    pub fringe_report: Option<FringeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub sweep_parameter: Option<String>,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub efficiency: f64,
    /// Energy leaving before the read window, relative to the input.
    pub leakage: f64,
    pub input_energy: f64,
    pub output_energy: f64,
    pub output_centroid: Option<f64>,
    pub transmission: Option<Transmission>,
    pub fidelity: Option<OverlapReport>,
    pub fringe: Option<FringeAnalysis>,
    pub pulse_pair: Option<PulsePair>,
    pub spinwave: Option<SpinwaveSummary>,
    pub echo_correlation: Option<f64>,
    pub dsp: Option<DspSummary>,
    pub calibration: Calibration,
    pub stats: IntegrationStats,
    pub runtime_s: f64,
    pub notes: Vec<String>,
    pub checks: Vec<Check>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Everything a run produced; the field state is large, so sweeps drop it
/// once the artifacts are written.
pub struct RunOutcome {
    pub summary: RunSummary,
    pub input: ComplexEnvelope,
    pub output: ComplexEnvelope,
    pub reference: Option<ComplexEnvelope>,
    pub recovered: Option<ComplexEnvelope>,
    pub state: FieldState,
    pub grid: SimGrid,
    pub schedule: ProtocolSchedule,
    pub momentum_map: Option<SpinwaveMap>,
}

fn run_err(cfg: &ExperimentConfig, e: Error) -> Error {
    Error::Run {
        context: cfg.name.clone(),
        source: Box::new(e),
    }
}

fn gem_params(cfg: &ExperimentConfig, flip_slope: Option<f64>, launch_offset: f64) -> GemParams {
    let p = &cfg.protocol;
    GemParams {
        control_amplitude: p.write_rabi,
        detuning: p.write_detuning,
        gradient: GradientProfile {
            slope: p.gradient_slope,
            center: p.gradient_center,
            offset: p.gradient_offset,
        },
        flip_slope,
        launch_centroid: Some(p.launch_centroid),
        launch_offset,
    }
}

fn timing(cfg: &ExperimentConfig, t_max: f64) -> ScheduleTiming {
    let p = &cfg.protocol;
    ScheduleTiming {
        t_write_end: p.t_write_end,
        t_flip_end: p.t_flip_end,
        t_read_start: p.t_read_start,
        t_max,
        edge_time: p.edge_time,
    }
}

fn needs_calibration(cfg: &ExperimentConfig) -> bool {
    let p = &cfg.protocol;
    p.mode == ProtocolMode::GemEit
        && if p.idealized {
            p.launch_offset == LaunchOffset::Auto
        } else {
            p.flip_slope == FlipSlope::Auto
        }
}

/// Writes a single Gaussian centred on the launch centroid and measures the
/// momentum centroid of the spinwave at the end of the write. Experimental
/// runs turn it into the rephasing slope that brings that centroid back to
/// zero at the end of the flip window; idealized runs add it to the launch
/// offset.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    let grid = cfg.sim_grid()?;
    let params = cfg.ensemble_params(&grid)?;
    let p = &cfg.protocol;
    let dispersion = signal_dispersion_momentum(&params, &grid, p.write_detuning);
    let base_offset = match p.launch_offset {
        LaunchOffset::None => 0.0,
        LaunchOffset::Dispersion | LaunchOffset::Auto => dispersion,
        LaunchOffset::Value(v) => v,
    };
    let mut cal = Calibration {
        flip_slope: match p.flip_slope {
            FlipSlope::Reverse | FlipSlope::Auto => None,
            FlipSlope::Value(v) => Some(v),
        },
        launch_offset: base_offset,
        write_momentum: None,
    };
    if !needs_calibration(cfg) {
        return Ok(cal);
    }
    let width = match &cfg.input {
        InputSpec::Pulse { spec } => spec.width,
        _ => return Err(Error::param("flip_slope", "automatic calibration needs a pulse input")),
    };
    let probe = synthesize(
        &PulseSpec::gaussian(p.launch_centroid, width),
        cfg.input_dt,
        cfg.input_span,
    )?;
    let write_grid = make_grid(grid.z_min, grid.z_max, grid.nz, p.t_write_end, 2)?;
    let schedule = build_gem_eit_schedule(
        &timing(cfg, grid.t_max),
        &gem_params(cfg, None, base_offset),
        &read_params(cfg),
        p.idealized,
    )?;
    let state = integrate(&probe, &schedule, &params, &write_grid, &cfg.solver)?;
    let spec = momentum_spectrum(state.sigma_gs_row(1), &write_grid, &cfg.analysis.momentum);
    let w: f64 = spec.s.iter().map(|c| c.norm_sqr()).sum();
    if !(w > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let k_w = spec.k.iter().zip(&spec.s).map(|(k, s)| k * s.norm_sqr()).sum::<f64>() / w;
    cal.write_momentum = Some(k_w);
    if p.idealized {
        cal.launch_offset = base_offset + k_w;
    } else {
        let d = p.t_flip_end - p.t_write_end;
        let ramp = p.edge_time.min(0.5 * d);
        cal.flip_slope = Some(k_w / (d - ramp));
    }
    Ok(cal)
}

fn read_params(cfg: &ExperimentConfig) -> EitParams {
    EitParams {
        control_amplitude: cfg.protocol.read_rabi,
        detuning: cfg.protocol.read_detuning,
    }
}

pub fn build_schedule(cfg: &ExperimentConfig, grid: &SimGrid, cal: &Calibration) -> Result<ProtocolSchedule> {
    let p = &cfg.protocol;
    match p.mode {
        ProtocolMode::GemEit => build_gem_eit_schedule(
            &timing(cfg, grid.t_max),
            &gem_params(cfg, cal.flip_slope, cal.launch_offset),
            &read_params(cfg),
            p.idealized,
        ),
        ProtocolMode::GemGem => {
            let flip = match p.flip_slope {
                FlipSlope::Value(v) => Some(v),
                _ => None,
            };
            build_gem_gem_schedule(p.t_write_end, grid.t_max, p.edge_time, &gem_params(cfg, flip, 0.0))
        }
        ProtocolMode::Passive => build_passive_schedule(grid.t_max),
        ProtocolMode::Custom => p
            .custom_schedule
            .clone()
            .ok_or_else(|| Error::InvalidSchedule("custom mode without segments".into())),
    }
}

/// Input envelope described by the config.
pub fn input_envelope(cfg: &ExperimentConfig) -> Result<ComplexEnvelope> {
    match &cfg.input {
        InputSpec::Pulse { spec } => synthesize(spec, cfg.input_dt, cfg.input_span),
        InputSpec::Constant { amplitude } => {
            let n = (cfg.input_span / cfg.input_dt + 1e-9).floor() as usize + 1;
            ComplexEnvelope::new(vec![C64::new(*amplitude, 0.0); n.max(2)], 0.0, cfg.input_dt)
        }
        InputSpec::File { path } => read_envelope_csv(&cfg.base_dir.join(path)),
    }
}

/// Reads a uniformly sampled envelope from CSV columns t, re, im (header optional).
pub fn read_envelope_csv(path: &Path) -> Result<ComplexEnvelope> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().take(3).map(str::parse::<f64>).collect();
        match nums {
            Ok(n) if n.len() == 3 => {
                t.push(n[0]);
                v.push(C64::new(n[1], n[2]));
            }
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Artifact(format!(
                    "{}: row {} is not t, re, im",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    if t.len() < 2 {
        return Err(Error::Artifact(format!(
            "{}: need at least two samples",
            path.display()
        )));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if t.windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.abs().max(1e-12))
    {
        return Err(Error::Artifact(format!(
            "{}: samples are not uniformly spaced",
            path.display()
        )));
    }
    ComplexEnvelope::new(v, t[0], dt)
}

fn relative_l2_aligned(reference: &ComplexEnvelope, test: &ComplexEnvelope) -> f64 {
    let (lo, hi) = (test.t0, test.t_end());
    let pairs: Vec<(C64, C64)> = (0..reference.len())
        .filter(|&n| (lo..=hi).contains(&reference.t(n)))
        .map(|n| (reference.samples[n], test.sample_at(reference.t(n))))
        .collect();
    let overlap: C64 = pairs.iter().map(|(r, x)| r * x.conj()).sum();
    let rot = if overlap.norm() > 0.0 {
        overlap / overlap.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let num: f64 = pairs.iter().map(|(r, x)| (r - x * rot).norm_sqr()).sum();
    let den: f64 = pairs.iter().map(|(r, _)| r.norm_sqr()).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        f64::INFINITY
    }
}

fn spectral_errors(state: &FieldState, grid: &SimGrid, k: usize, cfg: &ExperimentConfig) -> (f64, f64) {
    let col = state.sigma_gs_row(k);
    let spec = momentum_spectrum(col, grid, &cfg.analysis.momentum);
    let lhs: f64 = col.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid.dz();
    if !(lhs > 0.0) {
        return (0.0, 0.0);
    }
    let rhs: f64 = spec.s.iter().map(|c| c.norm_sqr()).sum::<f64>() * spec.dk() / (2.0 * std::f64::consts::PI);
    let window_free = cfg.analysis.momentum.window == crate::diagnostics::Window::None;
    // a window changes the norm on purpose; compare against the windowed column then
    let parseval = if window_free { (lhs - rhs).abs() / lhs } else { 0.0 };
    let back = spec.to_position(grid.nz);
    let duality = if window_free {
        let num: f64 = back
            .iter()
            .zip(col)
            .map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).powi(2))
            .sum();
        let den: f64 = col.iter().map(|b| b.norm_sqr().powi(2)).sum();
        (num / den).sqrt()
    } else {
        0.0
    };
    (parseval, duality)
}

/// The two single pulses of a double-Gaussian input, each with its share of
/// amplitude and phase.
fn single_pulses(spec: &PulseSpec, dt: f64, span: f64) -> Result<[ComplexEnvelope; 2]> {
    let h = 0.5 * spec.separation;
    let norm = spec.amplitude_ratio.max(1.0);
    let first = PulseSpec {
        amplitude: spec.amplitude / norm,
        ..PulseSpec::gaussian(spec.center - h, spec.width)
    };
    let second = PulseSpec {
        amplitude: spec.amplitude * spec.amplitude_ratio / norm,
        ..PulseSpec::gaussian(spec.center + h, spec.width)
    };
    Ok([
        synthesize(&first, dt, span)?,
        synthesize(&second, dt, span)?.scaled(C64::from_polar(1.0, spec.relative_phase)),
    ])
}

/// Solves one configuration and analyses the result.
pub fn simulate(cfg: &ExperimentConfig, cal: &Calibration, seed: u64) -> Result<RunOutcome> {
    simulate_inner(cfg, cal, seed).map_err(|e| match e {
        Error::Run { .. } => e,
        e => run_err(cfg, e),
    })
}

fn simulate_inner(cfg: &ExperimentConfig, cal: &Calibration, seed: u64) -> Result<RunOutcome> {
    let started = Instant::now();
    let grid = cfg.sim_grid()?;
    let params: EnsembleParams = cfg.ensemble_params(&grid)?;
    let schedule = build_schedule(cfg, &grid, cal)?;
    let input = input_envelope(cfg)?;
    let state = integrate(&input, &schedule, &params, &grid, &cfg.solver)?;
    let a = &cfg.analysis;
    let output = output_envelope(&state, &grid, a.output_from);
    let full = output_envelope(&state, &grid, 0.0);

    let mut notes = Vec::new();
    let input_energy = input.energy();
    let output_energy = output.energy();
    let has_signal = input_energy > 0.0 && output_energy > 0.0;
    let (efficiency, leakage) = if input_energy > 0.0 {
        let before: f64 = full
            .samples
            .iter()
            .enumerate()
            .filter(|(k, _)| full.t(*k) < a.output_from - 1e-9)
            .map(|(_, c)| c.norm_sqr())
            .sum::<f64>()
            * full.dt;
        (output_energy / input_energy, before / input_energy)
    } else {
        notes.push("input has zero energy; signal analyses skipped".into());
        (0.0, 0.0)
    };

    let transmission = (a.transmission && input_energy > 0.0).then(|| {
        let expected = (-params.effective_optical_depth()).exp();
        let measured = match &cfg.input {
            InputSpec::Constant { amplitude } => full.samples[full.len() - 1].norm_sqr() / (amplitude * amplitude),
            _ => full.energy() / input_energy,
        };
        Transmission {
            measured,
            expected,
            relative_error: (measured - expected).abs() / expected,
        }
    });

    let mut note_err = |what: &str, e: &Error| notes.push(format!("{what}: {e}"));
    let mut fidelity = None;
    let mut reference = None;
    if a.fidelity && has_signal {
        match fourier_fidelity(&input, &output) {
            Ok(r) => {
                reference = fourier_reference(&input, &output, &r).ok();
                fidelity = Some(r);
            }
            Err(e) => note_err("fidelity", &e),
        }
    }
    let fringe = if a.fringes && has_signal {
        fringe_analysis(&output).map_err(|e| note_err("fringes", &e)).ok()
    } else {
        None
    };
    let pulse_pair = if a.pulse_pair && has_signal {
        pulse_pair_separation(&output)
            .map_err(|e| note_err("pulse pair", &e))
            .ok()
    } else {
        None
    };
    let echo_correlation = (a.echo_correlation && has_signal).then(|| envelope_correlation(&input, &output, true));

    let momentum_map =
        (a.momentum_correlation || cfg.plots).then(|| spinwave_momentum_map_with(&state, &grid, &a.momentum));
    let spinwave = if a.momentum_correlation && input_energy > 0.0 {
        let map = momentum_map.as_ref().expect("map computed above");
        let k = grid.sample_index(a.map_time);
        let (parseval_error, duality_error) = spectral_errors(&state, &grid, k, cfg);
        Some(SpinwaveSummary {
            map_time: grid.t(k),
            momentum_centroid: map.centroid(k),
            momentum_correlation: momentum_envelope_correlation(map, a.map_time, &input, &schedule),
            parseval_error,
            duality_error,
        })
    } else {
        None
    };

    let mut recovered = None;
    let dsp = if cfg.dsp.enabled && has_signal {
        let s = &cfg.dsp.settings;
        let rec = shot_average(&output, s, seed, cfg.dsp.random_phase)?;
        let l2_error = relative_l2_aligned(&output, &rec);
        recovered = Some(rec);
        let mut reference_fits = None;
        let mut report = None;
        if let (true, InputSpec::Pulse { spec }) = (cfg.dsp.references, &cfg.input) {
            if spec.kind == PulseKind::DoubleGaussian {
                let mut fits = Vec::with_capacity(2);
                for (j, single) in single_pulses(spec, cfg.input_dt, cfg.input_span)?.iter().enumerate() {
                    let st = integrate(single, &schedule, &params, &grid, &cfg.solver)?;
                    let out = output_envelope(&st, &grid, a.output_from);
                    let rec = shot_average(
                        &out,
                        s,
                        seed.wrapping_add((j as u64 + 1).wrapping_mul(GOLDEN)),
                        cfg.dsp.random_phase,
                    )?;
                    match fit_chirped_gaussian(&trim_to_support(&rec, 1e-3), None) {
                        Ok(f) => fits.push(f),
                        Err(e) => note_err("reference fit", &e),
                    }
                }
                if let [f1, f2] = fits[..] {
                    report = Some(fringe_report(&f1, &f2));
                    reference_fits = Some([f1, f2]);
                }
            }
        }
        Some(DspSummary {
            shots: s.shots,
            l2_error,
            reference_fits,
            fringe_report: report,
        })
    } else {
        None
    };

    let acc = &cfg.acceptance;
    let mut checks = vec![Check::at_most("efficiency", Some(efficiency), acc.max_efficiency)];
    if let Some(min) = acc.min_fidelity {
        checks.push(Check::at_least("fidelity", fidelity.map(|f| f.fidelity), min));
    }
    if let Some(min) = acc.min_momentum_correlation {
        let v = spinwave.and_then(|s| s.momentum_correlation);
        checks.push(Check::at_least("momentum_correlation", v, min));
    }
    if let Some(sw) = &spinwave {
        checks.push(Check::at_most(
            "parseval_error",
            Some(sw.parseval_error),
            SPECTRAL_TOLERANCE,
        ));
        checks.push(Check::at_most(
            "duality_error",
            Some(sw.duality_error),
            SPECTRAL_TOLERANCE,
        ));
    }
    if let Some(min) = acc.min_echo_correlation {
        checks.push(Check::at_least("echo_correlation", echo_correlation, min));
    }
    if let Some(tol) = acc.transmission_tolerance {
        checks.push(Check::at_most(
            "transmission_error",
            transmission.map(|t| t.relative_error),
            tol,
        ));
    }
    if let Some(max) = acc.max_dsp_error {
        checks.push(Check::at_most("dsp_l2_error", dsp.as_ref().map(|d| d.l2_error), max));
    }

    let summary = RunSummary {
        name: cfg.name.clone(),
        sweep_parameter: None,
        sweep_value: None,
        seed,
        efficiency,
        leakage,
        input_energy,
        output_energy,
        output_centroid: output.centroid(),
        transmission,
        fidelity,
        fringe,
        pulse_pair,
        spinwave,
        echo_correlation,
        dsp,
        calibration: *cal,
        stats: state.stats,
        runtime_s: started.elapsed().as_secs_f64(),
        notes,
        checks,
    };
    Ok(RunOutcome {
        summary,
        input,
        output,
        reference,
        recovered,
        state,
        grid,
        schedule,
        momentum_map,
    })
}

/// Calibrates and simulates one configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let cal = calibrate(cfg).map_err(|e| run_err(cfg, e))?;
    simulate(cfg, &cal, cfg.seed)
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_envelope(path: &Path, env: &ComplexEnvelope) -> Result<()> {
    write_rows(
        path,
        &["t_us", "re", "im", "abs"],
        env.samples
            .iter()
            .enumerate()
            .map(|(n, c)| vec![env.t(n), c.re, c.im, c.norm()]),
    )
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes the CSV tables, summary and plots of one run into `dir`.
pub fn write_run_artifacts(out: &RunOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("summary.json"), &out.summary)?;
    fs::write(dir.join("config.resolved.cfg"), cfg.raw.to_text())?;
    write_envelope(&dir.join("input.csv"), &out.input)?;
    write_envelope(&dir.join("output.csv"), &out.output)?;
    let exit = output_envelope(&out.state, &out.grid, 0.0);
    write_envelope(&dir.join("exit.csv"), &exit)?;
    if let Some(rec) = &out.recovered {
        write_envelope(&dir.join("dsp_recovered.csv"), rec)?;
    }

    let t_map = cfg.analysis.map_time;
    let position = spinwave_position_map(&out.state, &out.grid);
    write_rows(
        &dir.join("spinwave_position.csv"),
        &["z_mm", "intensity"],
        position
            .axis
            .iter()
            .zip(position.cross_section(t_map))
            .map(|(z, v)| vec![*z, *v]),
    )?;
    if let Some(map) = &out.momentum_map {
        write_rows(
            &dir.join("spinwave_momentum.csv"),
            &["k_per_mm", "intensity"],
            map.axis.iter().zip(map.cross_section(t_map)).map(|(k, v)| vec![*k, *v]),
        )?;
    }

    if cfg.plots {
        let pts = |e: &ComplexEnvelope| -> Vec<(f64, f64)> {
            let peak = e.peak().max(f64::MIN_POSITIVE);
            e.samples
                .iter()
                .enumerate()
                .map(|(n, c)| (e.t(n), c.norm() / peak))
                .collect()
        };
        let mut series = vec![
            Series::line("input", "#1f77b4", pts(&out.input)),
            Series::line("output", "#ff7f0e", pts(&out.output)),
        ];
        if let Some(r) = &out.reference {
            let out_peak = out.output.peak().max(f64::MIN_POSITIVE);
            let mut s = Series::line(
                "scaled FT",
                "#333333",
                r.samples
                    .iter()
                    .enumerate()
                    .map(|(n, c)| (r.t(n), c.norm() / out_peak))
                    .collect(),
            );
            s.dashed = true;
            series.push(s);
        }
        let svg = line_chart(
            &format!("{}: envelopes (peak-normalised)", cfg.name),
            "time (us)",
            "|E|",
            &series,
        );
        fs::write(dir.join("envelopes.svg"), svg)?;
        heatmap_png(
            &dir.join("position_map.png"),
            position.times.len(),
            position.axis.len(),
            &position.intensity,
            400,
        )?;
        if let Some(map) = &out.momentum_map {
            heatmap_png(
                &dir.join("momentum_map.png"),
                map.times.len(),
                map.axis.len(),
                &map.intensity,
                400,
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub parameter: String,
    pub metric: String,
    pub values: Vec<f64>,
    pub metrics: Vec<Option<f64>>,
    pub fit: Option<LinearFit>,
    /// Largest distance of a point from the fitted line (or from the line of
    /// the required slope when one is set).
    pub max_deviation: Option<f64>,
    pub checks: Vec<Check>,
    pub points: Vec<RunSummary>,
    pub runtime_s: f64,
}

impl SweepSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.points.iter().all(RunSummary::passed)
    }
}

/// Per-point seed: independent of execution order.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(GOLDEN))
}

fn calibration_shared(parameter: &str) -> bool {
    parameter
        .strip_prefix("pulse.")
        .is_some_and(|k| !matches!(k, "center" | "width" | "dt" | "span"))
        || parameter.starts_with("dsp.")
        || parameter.starts_with("acceptance.")
        || parameter.starts_with("analysis.")
}

/// Runs every sweep point on a pool of `jobs` workers, writing each point's
/// artifacts to `point_NN` under the output directory, then fits the metric.
/// Returns the summary and the output envelopes in sweep order.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<(SweepSummary, Vec<ComplexEnvelope>)> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::param("sweep", "config has no [sweep] section"))?;
    let started = Instant::now();
    let configs = sweep
        .values
        .iter()
        .map(|&v| cfg.with_override(&sweep.parameter, v))
        .collect::<Result<Vec<_>>>()?;
    let shared = if calibration_shared(&sweep.parameter) {
        Some(calibrate(&configs[0]).map_err(|e| run_err(cfg, e))?)
    } else {
        None
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    let results = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| -> Result<(RunSummary, ComplexEnvelope)> {
                let cal = match shared {
                    Some(cal) => cal,
                    None => calibrate(c).map_err(|e| run_err(c, e))?,
                };
                let mut c = c.clone();
                c.name = format!("{}[{}={}]", cfg.name, sweep.parameter, sweep.values[i]);
                let mut out = simulate(&c, &cal, point_seed(cfg.seed, i))?;
                out.summary.sweep_parameter = Some(sweep.parameter.clone());
                out.summary.sweep_value = Some(sweep.values[i]);
                write_run_artifacts(&out, &c, &cfg.output_dir.join(format!("point_{i:02}")))?;
                Ok((out.summary, out.output))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (points, outputs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let metrics = sweep_metric(sweep.metric, &points, &outputs);
    let summary = summarise_sweep(cfg, points, metrics, started.elapsed().as_secs_f64());
    Ok((summary, outputs))
}

/// Metric per point. Fringe phases are evaluated at the mean fringe frequency
/// and a common reference time so that they are comparable across points,
/// then unwrapped along the sweep.
pub fn sweep_metric(metric: SweepMetric, points: &[RunSummary], outputs: &[ComplexEnvelope]) -> Vec<Option<f64>> {
    match metric {
        SweepMetric::FringeFreq => points.iter().map(|p| p.fringe.map(|f| f.fringe_freq)).collect(),
        SweepMetric::PairSeparation => points.iter().map(|p| p.pulse_pair.map(|f| f.separation)).collect(),
        SweepMetric::Transmission => points.iter().map(|p| p.transmission.map(|t| t.measured)).collect(),
        SweepMetric::Fidelity => points.iter().map(|p| p.fidelity.map(|f| f.fidelity)).collect(),
        SweepMetric::Efficiency => points.iter().map(|p| Some(p.efficiency)).collect(),
        SweepMetric::FringePhase => {
            let freqs: Vec<f64> = points.iter().filter_map(|p| p.fringe.map(|f| f.fringe_freq)).collect();
            let cents: Vec<f64> = points.iter().filter_map(|p| p.output_centroid).collect();
            if freqs.len() != points.len() || cents.len() != points.len() {
                return vec![None; points.len()];
            }
            let f = freqs.iter().sum::<f64>() / freqs.len() as f64;
            let t_ref = cents.iter().sum::<f64>() / cents.len() as f64;
            let raw: Vec<f64> = outputs.iter().map(|o| fringe_phase_at(o, f, t_ref)).collect();
            unwrap_phases(&raw).into_iter().map(Some).collect()
        }
    }
}

fn summarise_sweep(
    cfg: &ExperimentConfig,
    points: Vec<RunSummary>,
    metrics: Vec<Option<f64>>,
    runtime_s: f64,
) -> SweepSummary {
    let sweep = cfg.sweep.as_ref().expect("sweep config");
    let acc = &cfg.acceptance;
    let complete: Option<Vec<f64>> = metrics.iter().copied().collect();
    let fit = complete.as_ref().and_then(|y| linear_fit(&sweep.values, y));
    let max_deviation = complete.as_ref().zip(fit).map(|(y, fit)| {
        let slope = acc.slope.unwrap_or(fit.slope);
        let x = &sweep.values;
        let intercept = y.iter().zip(x).map(|(y, x)| y - slope * x).sum::<f64>() / x.len() as f64;
        y.iter()
            .zip(x)
            .map(|(y, x)| (y - slope * x - intercept).abs())
            .fold(0.0, f64::max)
    });

    let mut checks = vec![Check::flag(
        &format!("{} measured at every point", sweep.metric.name()),
        complete.is_some(),
    )];
    if let Some(min) = acc.min_r_squared {
        checks.push(Check::at_least("r_squared", fit.map(|f| f.r_squared), min));
    }
    if let (Some(target), Some(tol)) = (acc.slope, acc.slope_tolerance) {
        let mut c = Check::at_most("slope_error", fit.map(|f| (f.slope - target).abs()), tol);
        c.name = format!("|slope - {target}|");
        checks.push(c);
    }
    if let Some(sign) = acc.slope_sign {
        checks.push(Check::flag(
            "slope_sign",
            fit.is_some_and(|f| f.slope.signum() == sign.signum()),
        ));
    }
    if acc.monotonic {
        let dir = fit.map_or(1.0, |f| f.slope.signum());
        let ok = complete
            .as_ref()
            .is_some_and(|y| y.windows(2).all(|w| (w[1] - w[0]) * dir > 0.0));
        checks.push(Check::flag("monotonic", ok));
    }
    if let Some(max) = acc.max_deviation {
        checks.push(Check::at_most("max_deviation", max_deviation, max));
    }
    SweepSummary {
        name: cfg.name.clone(),
        parameter: sweep.parameter.clone(),
        metric: sweep.metric.name().into(),
        values: sweep.values.clone(),
        metrics,
        fit,
        max_deviation,
        checks,
        points,
        runtime_s,
    }
}

/// Writes sweep.json, sweep.csv and sweep.svg.
pub fn write_sweep_artifacts(summary: &SweepSummary, cfg: &ExperimentConfig) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    write_json(&dir.join("sweep.json"), summary)?;
    fs::write(dir.join("config.resolved.cfg"), cfg.raw.to_text())?;
    let nan = f64::NAN;
    write_rows(
        &dir.join("sweep.csv"),
        &[
            summary.parameter.as_str(),
            summary.metric.as_str(),
            "efficiency",
            "fidelity",
            "fringe_freq",
            "pair_separation",
        ],
        summary
            .values
            .iter()
            .zip(&summary.metrics)
            .zip(&summary.points)
            .map(|((v, m), p)| {
                vec![
                    *v,
                    m.unwrap_or(nan),
                    p.efficiency,
                    p.fidelity.map_or(nan, |f| f.fidelity),
                    p.fringe.map_or(nan, |f| f.fringe_freq),
                    p.pulse_pair.map_or(nan, |f| f.separation),
                ]
            }),
    )?;
    if cfg.plots {
        let pts: Vec<(f64, f64)> = summary
            .values
            .iter()
            .zip(&summary.metrics)
            .filter_map(|(v, m)| m.map(|m| (*v, m)))
            .collect();
        let mut series = vec![Series {
            markers: true,
            ..Series::line("measured", "#1f77b4", pts)
        }];
        if let Some(fit) = summary.fit {
            let (lo, hi) = summary
                .values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let mut s = Series::line(
                "linear fit",
                "#d62728",
                vec![
                    (lo, fit.intercept + fit.slope * lo),
                    (hi, fit.intercept + fit.slope * hi),
                ],
            );
            s.dashed = true;
            series.push(s);
        }
        let title = match summary.fit {
            Some(f) => format!("{}: slope {:.4}, R^2 {:.5}", summary.name, f.slope, f.r_squared),
            None => summary.name.clone(),
        };
        fs::write(
            dir.join("sweep.svg"),
            line_chart(&title, &summary.parameter, &summary.metric, &series),
        )?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn check_lines(checks: &[Check], out: &mut String) {
    for c in checks {
        let _ = std::fmt::Write::write_fmt(
            out,
            format_args!(
                "  [{}] {} = {} ({} {})\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.value.map_or_else(|| "missing".into(), |v| format!("{v:.6}")),
                c.relation,
                c.threshold
            ),
        );
    }
}

fn run_row(p: &RunSummary) -> String {
    format!(
        "{:>12} {:>10} {:>10} {:>10} {:>10} {:>6}\n",
        p.sweep_value.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
        format!("{:.4}", p.efficiency),
        fmt_opt(p.fidelity.map(|f| f.fidelity)),
        fmt_opt(p.fringe.map(|f| f.fringe_freq)),
        fmt_opt(p.pulse_pair.map(|f| f.separation)),
        if p.passed() { "ok" } else { "FAIL" }
    )
}

const TABLE_HEADER: &str = "       value efficiency   fidelity fringe_frq   pair_sep status\n";

/// Human-readable summary of a finished run or sweep directory, and whether
/// every embedded acceptance check passed.
pub fn report(dir: &Path) -> Result<(String, bool)> {
    let sweep_path = dir.join("sweep.json");
    let run_path = dir.join("summary.json");
    let read = |p: &PathBuf| -> Result<String> {
        fs::read_to_string(p).map_err(|e| Error::Artifact(format!("{}: {e}", p.display())))
    };
    let corrupt = |p: &PathBuf, e: serde_json::Error| Error::Artifact(format!("{}: {e}", p.display()));
    let mut s = String::new();
    if sweep_path.is_file() {
        let sw: SweepSummary = serde_json::from_str(&read(&sweep_path)?).map_err(|e| corrupt(&sweep_path, e))?;
        s.push_str(&format!(
            "sweep {} over {} ({} points), metric {}\n",
            sw.name,
            sw.parameter,
            sw.points.len(),
            sw.metric
        ));
        s.push_str(TABLE_HEADER);
        for (p, m) in sw.points.iter().zip(&sw.metrics) {
            s.push_str(run_row(p).trim_end());
            s.push_str(&format!("  {} = {}\n", sw.metric, fmt_opt(*m)));
        }
        if let Some(f) = sw.fit {
            s.push_str(&format!(
                "fit: slope {:.6}, intercept {:.6}, R^2 {:.6}\n",
                f.slope, f.intercept, f.r_squared
            ));
        }
        check_lines(&sw.checks, &mut s);
        for p in &sw.points {
            if !p.passed() {
                s.push_str(&format!("point {}:\n", p.name));
                check_lines(&p.checks, &mut s);
            }
        }
        let ok = sw.passed();
        s.push_str(if ok {
            "all checks passed\n"
        } else {
            "some checks FAILED\n"
        });
        Ok((s, ok))
    } else if run_path.is_file() {
        let p: RunSummary = serde_json::from_str(&read(&run_path)?).map_err(|e| corrupt(&run_path, e))?;
        s.push_str(&format!("run {}\n{TABLE_HEADER}", p.name));
        s.push_str(&run_row(&p));
        check_lines(&p.checks, &mut s);
        for n in &p.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        let ok = p.passed();
        s.push_str(if ok {
            "all checks passed\n"
        } else {
            "some checks FAILED\n"
        });
        Ok((s, ok))
    } else {
        Err(Error::Artifact(format!(
            "{} holds neither sweep.json nor summary.json",
            dir.display()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const PASSIVE: &str = "
[grid]
z_max = 1
nz = 32
t_max = 20
n_samples = 201
[ensemble]
optical_depth = 1
gamma_ge = 1
[protocol]
mode = passive
[pulse]
kind = constant
amplitude = 1
[acceptance]
transmission_tolerance = 0.01
";

    #[test]
    fn passive_constant_input_obeys_beer_lambert() {
        let cfg = parse_config(PASSIVE).unwrap();
        let out = run(&cfg).unwrap();
        let t = out.summary.transmission.unwrap();
        assert!(t.relative_error < 0.01, "{t:?}");
        assert!(out.summary.passed(), "{:?}", out.summary.checks);
    }

    #[test]
    fn zero_amplitude_gives_zero_efficiency() {
        let cfg = parse_config(&PASSIVE.replace("amplitude = 1", "amplitude = 0")).unwrap();
        let out = run(&cfg).unwrap();
        assert_eq!(out.summary.efficiency, 0.0);
        assert!(out.summary.fringe.is_none() && out.summary.transmission.is_none());
        assert!(out.state.is_zero());
    }

    #[test]
    fn report_of_empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(report(dir.path()), Err(Error::Artifact(_))));
    }

    #[test]
    fn single_run_report_has_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = parse_config(PASSIVE).unwrap();
        let out = run(&cfg).unwrap();
        write_run_artifacts(&out, &cfg, dir.path()).unwrap();
        let (text, ok) = report(dir.path()).unwrap();
        assert!(ok, "{text}");
        assert_eq!(
            text.lines().filter(|l| l.trim_end().ends_with(" ok")).count(),
            1,
            "{text}"
        );
    }

    #[test]
    fn sweep_metric_checks() {
        let mut cfg = parse_config(&format!(
            "{PASSIVE}[sweep]\nparameter = ensemble.optical_depth\nvalues = 1, 2, 4\nmetric = transmission\n[acceptance]\nmonotonic = true\nslope_sign = -1\n"
        ))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        cfg.output_dir = dir.path().to_path_buf();
        let (s, _) = run_sweep(&cfg, 2).unwrap();
        assert_eq!(s.points.len(), 3);
        assert!(s.passed(), "{:?}", s.checks);
        assert!(dir.path().join("point_02/summary.json").is_file());
    }
}
