//! Experiment definitions: a flat, sectioned `key = value` text format with
//! includes, parsed into a validated [`ExperimentConfig`].
//!
//! ```text
//! include = base.cfg          # resolved relative to this file
//! [grid]
//! nz = 256
//! [pulse]
//! relative_phase = pi / 3     # products and quotients of numbers, pi, tau
//! [sweep]
//! parameter = pulse.separation
//! values = 2.0, 2.6, 3.2      # or linspace(a, b, n)
//! ```
//!
//! Later assignments override earlier ones, including those pulled in by an
//! include; `segment` lines in `[schedule]` accumulate.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{MomentumOptions, Window};
use crate::dsp::DspSettings;
use crate::error::{Error, Result};
use crate::model::{make_grid, DensityProfile, EnsembleParams, SimGrid};
use crate::protocol::ProtocolSchedule;
use crate::pulses::{PulseKind, PulseSpec};
use crate::solver::{EmbeddedPair, SolverConfig};

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["z_min", "z_max", "nz", "t_max", "n_samples"]),
    (
        "ensemble",
        &[
            "optical_depth",
            "gamma_ge",
            "gamma_gs",
            "profile",
            "profile_center",
            "profile_width",
            "pumping_efficiency",
            "literal_spinwave_decay",
        ],
    ),
    (
        "protocol",
        &[
            "mode",
            "idealized",
            "t_write_end",
            "t_flip_end",
            "t_read_start",
            "edge_time",
            "write_rabi",
            "write_detuning",
            "gradient_slope",
            "gradient_center",
            "gradient_offset",
            "flip_slope",
            "launch_centroid",
            "launch_offset",
            "read_rabi",
            "read_detuning",
        ],
    ),
    ("schedule", &["gradient_center", "segment"]),
    (
        "pulse",
        &[
            "kind",
            "center",
            "width",
            "separation",
            "relative_phase",
            "amplitude_ratio",
            "mod_freq",
            "mod_depth",
            "amplitude",
            "dt",
            "span",
            "file",
        ],
    ),
    ("solver", &["rel_tolerance", "abs_tolerance", "max_step", "pair"]),
    (
        "analysis",
        &[
            "output_from",
            "fidelity",
            "fringes",
            "pulse_pair",
            "momentum_correlation",
            "echo_correlation",
            "transmission",
            "momentum_pad",
            "momentum_window",
            "map_time",
        ],
    ),
    (
        "dsp",
        &[
            "enabled",
            "lo_detuning",
            "sample_rate",
            "noise_rms",
            "bandpass_half_width",
            "filter_order",
            "lp_cutoff",
            "shots",
            "random_phase",
            "references",
        ],
    ),
    ("sweep", &["parameter", "values", "metric"]),
    (
        "acceptance",
        &[
            "min_fidelity",
            "max_efficiency",
            "min_r_squared",
            "slope",
            "slope_tolerance",
            "slope_sign",
            "monotonic",
            "max_deviation",
            "min_momentum_correlation",
            "min_echo_correlation",
            "transmission_tolerance",
            "max_dsp_error",
        ],
    ),
    ("output", &["name", "dir", "plots", "seed"]),
];

/// Keys that only make sense as numbers and can therefore be swept.
fn is_numeric_key(section: &str, key: &str) -> bool {
    !matches!(
        (section, key),
        ("ensemble", "profile")
            | ("ensemble", "literal_spinwave_decay")
            | ("protocol", "mode")
            | ("protocol", "idealized")
            | ("schedule", "segment")
            | ("pulse", "kind")
            | ("pulse", "file")
            | ("solver", "pair")
            | ("analysis", _)
            | ("dsp", "enabled")
            | ("dsp", "random_phase")
            | ("dsp", "references")
            | ("sweep", _)
            | ("acceptance", _)
            | ("output", _)
    )
}

fn known(section: &str, key: &str) -> bool {
    SCHEMA.iter().any(|(s, keys)| *s == section && keys.contains(&key))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub path: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

/// Parsed assignments in file order, includes expanded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub entries: Vec<RawEntry>,
}

fn config_err(origin: &Origin, message: impl Into<String>) -> Error {
    Error::Config {
        path: origin.path.clone(),
        line: origin.line,
        message: message.into(),
    }
}

impl RawConfig {
    pub fn parse(text: &str, path: &str, base_dir: Option<&Path>) -> Result<RawConfig> {
        let mut raw = RawConfig::default();
        raw.parse_into(text, path, base_dir, 0)?;
        Ok(raw)
    }

    pub fn from_file(path: &Path) -> Result<RawConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        RawConfig::parse(&text, &path.display().to_string(), path.parent())
    }

    fn parse_into(&mut self, text: &str, path: &str, base_dir: Option<&Path>, depth: usize) -> Result<()> {
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let origin = Origin {
                path: path.to_string(),
                line: n + 1,
            };
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(&origin, "unterminated section header"))?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(config_err(&origin, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(&origin, format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "include" {
                if depth >= 16 {
                    return Err(config_err(&origin, "includes nested too deeply (cycle?)"));
                }
                let target: PathBuf = match base_dir {
                    Some(d) => d.join(value),
                    None => PathBuf::from(value),
                };
                let text = std::fs::read_to_string(&target)
                    .map_err(|e| config_err(&origin, format!("cannot include {}: {e}", target.display())))?;
                self.parse_into(&text, &target.display().to_string(), target.parent(), depth + 1)?;
                continue;
            }
            if section.is_empty() {
                return Err(config_err(&origin, format!("key `{key}` outside any section")));
            }
            if !known(&section, key) {
                return Err(config_err(&origin, format!("unknown key `{key}` in [{section}]")));
            }
            self.entries.push(RawEntry {
                section: section.clone(),
                key: key.to_string(),
                value: value.to_string(),
                origin,
            });
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&RawEntry> {
        self.entries.iter().rev().find(|e| e.section == section && e.key == key)
    }

    pub fn all(&self, section: &str, key: &str) -> impl Iterator<Item = &RawEntry> {
        let (s, k) = (section.to_string(), key.to_string());
        self.entries.iter().filter(move |e| e.section == s && e.key == k)
    }

    /// Appends an override for a dotted `section.key` name.
    pub fn set(&mut self, name: &str, value: &str, origin: Origin) -> Result<()> {
        let (section, key) = name
            .split_once('.')
            .filter(|(s, k)| known(s, k))
            .ok_or_else(|| config_err(&origin, format!("unknown parameter `{name}`")))?;
        self.entries.push(RawEntry {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            origin,
        });
        Ok(())
    }

    /// Effective settings as config text, one line per key, includes flattened.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, keys) in SCHEMA {
            let mut lines = Vec::new();
            for key in keys.iter() {
                if *key == "segment" {
                    lines.extend(self.all(section, key).map(|e| format!("segment = {}", e.value)));
                } else if let Some(e) = self.get(section, key) {
                    lines.push(format!("{key} = {}", e.value));
                }
            }
            if !lines.is_empty() {
                out.push_str(&format!("[{section}]\n"));
                for l in lines {
                    out.push_str(&l);
                    out.push('\n');
                }
            }
        }
        out
    }

    fn section_origin(&self, section: &str) -> Origin {
        self.entries
            .iter()
            .find(|e| e.section == section)
            .map(|e| e.origin.clone())
            .unwrap_or(Origin {
                path: self
                    .entries
                    .first()
                    .map_or_else(|| "<config>".into(), |e| e.origin.path.clone()),
                line: 0,
            })
    }
}

/// Evaluates a product/quotient of numbers and the constants `pi` and `tau`.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty value".into());
    }
    let mut acc = 1.0;
    let mut op = '*';
    let mut rest = s;
    loop {
        let cut = rest.find(['*', '/']).unwrap_or(rest.len());
        let tok = rest[..cut].trim();
        let (neg, body) = match tok.strip_prefix('-') {
            Some(b) => (true, b.trim()),
            None => (false, tok),
        };
        let v = match body {
            "pi" => PI,
            "tau" => 2.0 * PI,
            _ => body.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))?,
        };
        let v = if neg { -v } else { v };
        acc = if op == '*' { acc * v } else { acc / v };
        if cut == rest.len() {
            break;
        }
        op = rest.as_bytes()[cut] as char;
        rest = &rest[cut + 1..];
    }
    if !acc.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(acc)
}

/// Comma-separated numbers or `linspace(start, stop, n)`.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix("linspace(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err("linspace takes (start, stop, n)".into());
        }
        let a = parse_number(parts[0])?;
        let b = parse_number(parts[1])?;
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| "linspace count must be an integer")?;
        if n < 1 {
            return Err("linspace count must be >= 1".into());
        }
        if n == 1 {
            return Ok(vec![a]);
        }
        return Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect());
    }
    s.split(',').map(parse_number).collect()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
}

impl Reader<'_> {
    fn typed<T>(
        &self,
        section: &str,
        key: &str,
        f: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.raw.get(section, key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .map_err(|m| config_err(&e.origin, format!("{section}.{key}: {m}"))),
        }
    }

    fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.typed(section, key, parse_number)
    }

    /// Optional threshold; `none` clears a value set by an included file.
    fn threshold(&self, key: &str) -> Result<Option<f64>> {
        Ok(self
            .typed("acceptance", key, |s| match s.trim() {
                "none" => Ok(None),
                v => parse_number(v).map(Some),
            })?
            .flatten())
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(section, key)?.unwrap_or(default))
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self
            .typed(section, key, |s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("`{s}` is not a non-negative integer"))
            })?
            .unwrap_or(default))
    }

    fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        Ok(self.typed(section, key, parse_bool)?.unwrap_or(default))
    }

    fn string(&self, section: &str, key: &str) -> Option<String> {
        self.raw.get(section, key).map(|e| e.value.clone())
    }

    fn origin(&self, section: &str, key: &str) -> Origin {
        self.raw
            .get(section, key)
            .map(|e| e.origin.clone())
            .unwrap_or_else(|| self.raw.section_origin(section))
    }

    fn fail(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        config_err(&self.origin(section, key), message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    GemEit,
    GemGem,
    Passive,
    Custom,
}

/// How the rephasing slope is chosen in experimental GEM-EIT runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipSlope {
    /// Opposite of the write slope.
    Reverse,
    /// From the measured end-of-write momentum of a calibration pulse.
    Auto,
    Value(f64),
}

/// Extra launch wavenumber in idealized GEM-EIT runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchOffset {
    None,
    /// The signal's dispersive wavenumber.
    Dispersion,
    /// Dispersion estimate refined by a calibration pulse.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub mode: ProtocolMode,
    pub idealized: bool,
    pub t_write_end: f64,
    pub t_flip_end: f64,
    pub t_read_start: f64,
    pub edge_time: f64,
    pub write_rabi: f64,
    pub write_detuning: f64,
    pub gradient_slope: f64,
    pub gradient_center: f64,
    pub gradient_offset: f64,
    pub flip_slope: FlipSlope,
    pub launch_centroid: f64,
    pub launch_offset: LaunchOffset,
    pub read_rabi: f64,
    pub read_detuning: f64,
    /// Explicit segments, for custom mode.
    pub custom_schedule: Option<ProtocolSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSpec {
    Pulse {
        spec: PulseSpec,
    },
    /// Constant amplitude over the whole run.
    Constant {
        amplitude: f64,
    },
    /// Envelope loaded from a CSV with columns t, re, im.
    File {
        path: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub output_from: f64,
    pub fidelity: bool,
    pub fringes: bool,
    pub pulse_pair: bool,
    pub momentum_correlation: bool,
    pub echo_correlation: bool,
    pub transmission: bool,
    pub momentum: MomentumOptions,
    /// Time of the spinwave cross-sections (us).
    pub map_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DspSpec {
    pub enabled: bool,
    pub settings: DspSettings,
    pub random_phase: bool,
    /// Also store and recall each pulse of a double input alone and fit them.
    pub references: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    FringeFreq,
    FringePhase,
    PairSeparation,
    Transmission,
    Fidelity,
    Efficiency,
}

impl SweepMetric {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMetric::FringeFreq => "fringe_freq",
            SweepMetric::FringePhase => "fringe_phase",
            SweepMetric::PairSeparation => "pair_separation",
            SweepMetric::Transmission => "transmission",
            SweepMetric::Fidelity => "fidelity",
            SweepMetric::Efficiency => "efficiency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    pub metric: SweepMetric,
}

/// Thresholds checked by `run`/`sweep` and re-checked by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct AcceptanceSpec {
    pub min_fidelity: Option<f64>,
    pub max_efficiency: f64,
    pub min_r_squared: Option<f64>,
    pub slope: Option<f64>,
    pub slope_tolerance: Option<f64>,
    pub slope_sign: Option<f64>,
    pub monotonic: bool,
    pub max_deviation: Option<f64>,
    pub min_momentum_correlation: Option<f64>,
    pub min_echo_correlation: Option<f64>,
    pub transmission_tolerance: Option<f64>,
    pub max_dsp_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    pub t_max: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub optical_depth: f64,
    pub gamma_ge: f64,
    pub gamma_gs: f64,
    pub profile: DensityProfile,
    pub pumping_efficiency: f64,
    pub literal_spinwave_decay: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub grid: GridSpec,
    pub ensemble: EnsembleSpec,
    pub protocol: ProtocolSpec,
    pub input: InputSpec,
    /// Sampling step and span of the synthesized input (us).
    pub input_dt: f64,
    pub input_span: f64,
    pub solver: SolverConfig,
    pub analysis: AnalysisSpec,
    pub dsp: DspSpec,
    pub sweep: Option<SweepSpec>,
    pub acceptance: AcceptanceSpec,
    pub output_dir: PathBuf,
    pub plots: bool,
    pub seed: u64,
    /// Directory that relative paths (input files) are resolved against.
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub raw: RawConfig,
}

/// Parses config text; includes resolve against the working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw = RawConfig::parse(text, "<config>", None)?;
    ExperimentConfig::from_raw(raw, "experiment", Path::new("."))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let raw = RawConfig::from_file(path)?;
    let name = path
        .file_stem()
        .map_or_else(|| "experiment".into(), |s| s.to_string_lossy().into_owned());
    ExperimentConfig::from_raw(raw, &name, path.parent().unwrap_or(Path::new(".")))
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig, default_name: &str, base_dir: &Path) -> Result<ExperimentConfig> {
        let r = Reader { raw: &raw };

        let grid = GridSpec {
            z_min: r.f64_or("grid", "z_min", 0.0)?,
            z_max: r.f64_or("grid", "z_max", 1.0)?,
            nz: r.usize_or("grid", "nz", 800)?,
            t_max: r.f64_or("grid", "t_max", 25.0)?,
            n_samples: r.usize_or("grid", "n_samples", 1250)?,
        };
        let sim_grid = make_grid(grid.z_min, grid.z_max, grid.nz, grid.t_max, grid.n_samples).map_err(|e| {
            let key = match &e {
                Error::InvalidGrid(m) if m.starts_with("nz") => "nz",
                Error::InvalidGrid(m) if m.starts_with("n_samples") => "n_samples",
                Error::InvalidGrid(m) if m.starts_with("t_max") => "t_max",
                _ => "z_max",
            };
            r.fail("grid", key, e.to_string())
        })?;
        let mid = 0.5 * (grid.z_min + grid.z_max);

        let profile = match r.string("ensemble", "profile").as_deref().unwrap_or("flat") {
            "flat" => DensityProfile::Flat,
            "gaussian" => DensityProfile::Gaussian {
                center: r.f64_or("ensemble", "profile_center", mid)?,
                width: r.f64_or("ensemble", "profile_width", 2.0 / 3.0 * sim_grid.length())?,
            },
            other => {
                return Err(r.fail(
                    "ensemble",
                    "profile",
                    format!("unknown profile `{other}` (flat, gaussian)"),
                ))
            }
        };
        let ensemble = EnsembleSpec {
            optical_depth: r.f64_or("ensemble", "optical_depth", 2000.0)?,
            gamma_ge: r.f64_or("ensemble", "gamma_ge", 2.0 * PI * 3.0)?,
            gamma_gs: r.f64_or("ensemble", "gamma_gs", 0.0)?,
            profile,
            pumping_efficiency: r.f64_or("ensemble", "pumping_efficiency", 1.0)?,
            literal_spinwave_decay: r.bool_or("ensemble", "literal_spinwave_decay", false)?,
        };

        let mode = match r.string("protocol", "mode").as_deref().unwrap_or("gem_eit") {
            "gem_eit" => ProtocolMode::GemEit,
            "gem_gem" => ProtocolMode::GemGem,
            "passive" => ProtocolMode::Passive,
            "custom" => ProtocolMode::Custom,
            other => {
                return Err(r.fail(
                    "protocol",
                    "mode",
                    format!("unknown mode `{other}` (gem_eit, gem_gem, passive, custom)"),
                ))
            }
        };
        let t_write_end = r.f64_or("protocol", "t_write_end", 0.5 * grid.t_max)?;
        let t_flip_end = r.f64_or("protocol", "t_flip_end", t_write_end)?;
        let t_read_start = r.f64_or("protocol", "t_read_start", t_flip_end)?;
        let flip_slope = match r.string("protocol", "flip_slope").as_deref() {
            None | Some("reverse") => FlipSlope::Reverse,
            Some("auto") => FlipSlope::Auto,
            Some(v) => FlipSlope::Value(parse_number(v).map_err(|m| r.fail("protocol", "flip_slope", m))?),
        };
        let idealized = r.bool_or("protocol", "idealized", false)?;
        let launch_offset = match r.string("protocol", "launch_offset").as_deref() {
            None if idealized => LaunchOffset::Dispersion,
            None | Some("none") => LaunchOffset::None,
            Some("dispersion") => LaunchOffset::Dispersion,
            Some("auto") => LaunchOffset::Auto,
            Some(v) => LaunchOffset::Value(parse_number(v).map_err(|m| r.fail("protocol", "launch_offset", m))?),
        };

        let custom_schedule = if mode == ProtocolMode::Custom {
            let center = r.f64_or("schedule", "gradient_center", mid)?;
            let mut rows = Vec::new();
            for e in raw.all("schedule", "segment") {
                let v = parse_list(&e.value).map_err(|m| config_err(&e.origin, m))?;
                let row: [f64; 8] = v.try_into().map_err(|_| {
                    config_err(
                        &e.origin,
                        "segment needs 8 values: t_start, t_end, rabi, detuning, spatial_freq, slope, offset, edge_time",
                    )
                })?;
                rows.push(row);
            }
            let schedule =
                ProtocolSchedule::from_rows(center, &rows).map_err(|e| r.fail("schedule", "segment", e.to_string()))?;
            Some(schedule)
        } else {
            None
        };

        let kind = r.string("pulse", "kind").unwrap_or_else(|| "gaussian".into());
        let mut spec = PulseSpec {
            center: r.f64_or("pulse", "center", 0.5 * t_write_end)?,
            width: r.f64_or("pulse", "width", 0.5)?,
            ..PulseSpec::default()
        };
        spec.separation = r.f64_or("pulse", "separation", spec.separation)?;
        spec.relative_phase = r.f64_or("pulse", "relative_phase", spec.relative_phase)?;
        spec.amplitude_ratio = r.f64_or("pulse", "amplitude_ratio", spec.amplitude_ratio)?;
        spec.mod_freq = r.f64_or("pulse", "mod_freq", spec.mod_freq)?;
        spec.mod_depth = r.f64_or("pulse", "mod_depth", spec.mod_depth)?;
        spec.amplitude = r.f64_or("pulse", "amplitude", spec.amplitude)?;
        let input = if let Some(path) = r.string("pulse", "file") {
            InputSpec::File { path }
        } else {
            spec.kind = match kind.as_str() {
                "gaussian" => PulseKind::Gaussian,
                "double_gaussian" => PulseKind::DoubleGaussian,
                "modulated_gaussian" => PulseKind::ModulatedGaussian,
                "constant" => PulseKind::Gaussian,
                other => {
                    return Err(r.fail(
                        "pulse",
                        "kind",
                        format!("unknown kind `{other}` (gaussian, double_gaussian, modulated_gaussian, constant)"),
                    ))
                }
            };
            if kind == "constant" {
                InputSpec::Constant {
                    amplitude: spec.amplitude,
                }
            } else {
                spec.validate().map_err(|e| r.fail("pulse", "kind", e.to_string()))?;
                InputSpec::Pulse { spec }
            }
        };
        let input_dt = r.f64_or("pulse", "dt", 0.01)?;
        if !(input_dt > 0.0) {
            return Err(r.fail("pulse", "dt", "pulse.dt must be > 0"));
        }
        let default_span = match mode {
            ProtocolMode::GemEit | ProtocolMode::GemGem => t_write_end,
            _ => grid.t_max,
        };
        let input_span = r.f64_or("pulse", "span", default_span)?;

        let protocol = ProtocolSpec {
            mode,
            idealized,
            t_write_end,
            t_flip_end,
            t_read_start,
            edge_time: r.f64_or("protocol", "edge_time", crate::protocol::DEFAULT_EDGE_TIME)?,
            write_rabi: r.f64_or("protocol", "write_rabi", 11.0)?,
            write_detuning: r.f64_or("protocol", "write_detuning", 2.0 * PI * 100.0)?,
            gradient_slope: r.f64_or("protocol", "gradient_slope", 6.0)?,
            gradient_center: r.f64_or("protocol", "gradient_center", mid)?,
            gradient_offset: r.f64_or("protocol", "gradient_offset", 0.0)?,
            flip_slope,
            launch_centroid: r.f64_or("protocol", "launch_centroid", spec.center)?,
            launch_offset,
            read_rabi: r.f64_or("protocol", "read_rabi", 42.0)?,
            read_detuning: r.f64_or("protocol", "read_detuning", 0.0)?,
            custom_schedule,
        };

        let pair = match r.string("solver", "pair").as_deref().unwrap_or("rk45") {
            "rk45" => EmbeddedPair::Rk45,
            "rk89" => EmbeddedPair::Rk89,
            other => return Err(r.fail("solver", "pair", format!("unknown pair `{other}` (rk45, rk89)"))),
        };
        let solver = SolverConfig {
            rel_tolerance: r.f64_or("solver", "rel_tolerance", 1e-5)?,
            abs_tolerance: r.f64_or("solver", "abs_tolerance", 1e-8)?,
            max_step: r.f64_or("solver", "max_step", 0.05)?,
            embedded_pair_order: pair,
        };
        solver
            .validate()
            .map_err(|e| r.fail("solver", "rel_tolerance", e.to_string()))?;

        let default_output_from = match mode {
            ProtocolMode::GemEit => t_read_start,
            ProtocolMode::GemGem => t_write_end,
            _ => 0.0,
        };
        let is_pulse = |k: PulseKind| matches!(&input, InputSpec::Pulse { spec } if spec.kind == k);
        let gem = matches!(mode, ProtocolMode::GemEit | ProtocolMode::GemGem);
        let window = match r.string("analysis", "momentum_window").as_deref().unwrap_or("none") {
            "none" => Window::None,
            "hann" => Window::Hann,
            other => {
                return Err(r.fail(
                    "analysis",
                    "momentum_window",
                    format!("unknown window `{other}` (none, hann)"),
                ))
            }
        };
        let analysis = AnalysisSpec {
            output_from: r.f64_or("analysis", "output_from", default_output_from)?,
            fidelity: r.bool_or("analysis", "fidelity", mode == ProtocolMode::GemEit)?,
            fringes: r.bool_or("analysis", "fringes", is_pulse(PulseKind::DoubleGaussian) && gem)?,
            pulse_pair: r.bool_or("analysis", "pulse_pair", is_pulse(PulseKind::ModulatedGaussian) && gem)?,
            momentum_correlation: r.bool_or("analysis", "momentum_correlation", gem)?,
            echo_correlation: r.bool_or("analysis", "echo_correlation", mode == ProtocolMode::GemGem)?,
            transmission: r.bool_or("analysis", "transmission", mode == ProtocolMode::Passive)?,
            momentum: MomentumOptions {
                pad_factor: r.usize_or("analysis", "momentum_pad", 4)?.max(1),
                window,
            },
            map_time: r.f64_or("analysis", "map_time", t_write_end)?,
        };

        let defaults = DspSettings::default();
        let dsp = DspSpec {
            enabled: r.bool_or("dsp", "enabled", false)?,
            settings: DspSettings {
                lo_detuning: r.f64_or("dsp", "lo_detuning", defaults.lo_detuning)?,
                sample_rate: r.f64_or("dsp", "sample_rate", defaults.sample_rate)?,
                noise_rms: r.f64_or("dsp", "noise_rms", defaults.noise_rms)?,
                bandpass_half_width: r.f64_or("dsp", "bandpass_half_width", defaults.bandpass_half_width)?,
                filter_order: r.usize_or("dsp", "filter_order", defaults.filter_order)?,
                lp_cutoff: r.f64_or("dsp", "lp_cutoff", defaults.lp_cutoff)?,
                shots: r.usize_or("dsp", "shots", defaults.shots)?.max(1),
            },
            random_phase: r.bool_or("dsp", "random_phase", true)?,
            references: r.bool_or("dsp", "references", is_pulse(PulseKind::DoubleGaussian))?,
        };

        let sweep = match r.string("sweep", "parameter") {
            None => None,
            Some(parameter) => {
                let parameter = parameter.trim().to_string();
                let ok = parameter
                    .split_once('.')
                    .is_some_and(|(s, k)| known(s, k) && is_numeric_key(s, k));
                if !ok {
                    return Err(r.fail(
                        "sweep",
                        "parameter",
                        format!("`{parameter}` is not a numeric config parameter"),
                    ));
                }
                let values = r
                    .typed("sweep", "values", parse_list)?
                    .ok_or_else(|| r.fail("sweep", "parameter", "sweep needs `values`"))?;
                if values.is_empty() {
                    return Err(r.fail("sweep", "values", "sweep value list is empty"));
                }
                let metric = match r.string("sweep", "metric").as_deref().unwrap_or("efficiency") {
                    "fringe_freq" => SweepMetric::FringeFreq,
                    "fringe_phase" => SweepMetric::FringePhase,
                    "pair_separation" => SweepMetric::PairSeparation,
                    "transmission" => SweepMetric::Transmission,
                    "fidelity" => SweepMetric::Fidelity,
                    "efficiency" => SweepMetric::Efficiency,
                    other => return Err(r.fail("sweep", "metric", format!("unknown metric `{other}`"))),
                };
                Some(SweepSpec {
                    parameter,
                    values,
                    metric,
                })
            }
        };

        let acceptance = AcceptanceSpec {
            min_fidelity: r.threshold("min_fidelity")?,
            max_efficiency: r.f64_or("acceptance", "max_efficiency", 1.0 + 1e-6)?,
            min_r_squared: r.threshold("min_r_squared")?,
            slope: r.threshold("slope")?,
            slope_tolerance: r.threshold("slope_tolerance")?,
            slope_sign: r.threshold("slope_sign")?,
            monotonic: r.bool_or("acceptance", "monotonic", false)?,
            max_deviation: r.threshold("max_deviation")?,
            min_momentum_correlation: r.threshold("min_momentum_correlation")?,
            min_echo_correlation: r.threshold("min_echo_correlation")?,
            transmission_tolerance: r.threshold("transmission_tolerance")?,
            max_dsp_error: r.threshold("max_dsp_error")?,
        };

        let name = r.string("output", "name").unwrap_or_else(|| default_name.to_string());
        let output_dir = r
            .string("output", "dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out").join(&name));
        let seed = r
            .typed("output", "seed", |s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| format!("`{s}` is not an unsigned integer"))
            })?
            .unwrap_or(0);

        let cfg = ExperimentConfig {
            name,
            grid,
            ensemble,
            protocol,
            input,
            input_dt,
            input_span,
            solver,
            analysis,
            dsp,
            sweep,
            acceptance,
            output_dir,
            plots: r.bool_or("output", "plots", true)?,
            seed,
            base_dir: base_dir.to_path_buf(),
            raw: raw.clone(),
        };
        cfg.ensemble_params(&sim_grid)
            .map_err(|e| r.fail("ensemble", "optical_depth", e.to_string()))?;
        Ok(cfg)
    }

    pub fn sim_grid(&self) -> Result<SimGrid> {
        let g = &self.grid;
        make_grid(g.z_min, g.z_max, g.nz, g.t_max, g.n_samples)
    }

    pub fn ensemble_params(&self, grid: &SimGrid) -> Result<EnsembleParams> {
        let e = &self.ensemble;
        EnsembleParams::new(
            e.optical_depth,
            e.gamma_ge,
            e.gamma_gs,
            e.profile,
            e.pumping_efficiency,
            e.literal_spinwave_decay,
            grid,
        )
    }

    /// Copy with one dotted parameter overridden, re-validated.
    pub fn with_override(&self, name: &str, value: f64) -> Result<ExperimentConfig> {
        let mut raw = self.raw.clone();
        raw.set(
            name,
            &format!("{value:?}"),
            Origin {
                path: "<override>".into(),
                line: 0,
            },
        )?;
        let mut cfg = ExperimentConfig::from_raw(raw, &self.name, &self.base_dir)?;
        cfg.output_dir = self.output_dir.clone();
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn pulse_spec(&self) -> Option<&PulseSpec> {
        match &self.input {
            InputSpec::Pulse { spec } => Some(spec),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
[grid]
z_max = 1
nz = 32
t_max = 10
n_samples = 101
[protocol]
mode = gem_eit
idealized = true
t_write_end = 5
[pulse]
kind = gaussian
center = 2.5
width = 0.4
";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.grid.nz, 32);
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.protocol.t_read_start, 5.0);
        assert_eq!(c.protocol.launch_offset, LaunchOffset::Dispersion);
        assert_eq!(c.analysis.output_from, 5.0);
        assert!(c.analysis.fidelity && !c.analysis.fringes);
        assert!(c.sweep.is_none());
    }

    #[test]
    fn nz_one_names_the_invariant() {
        let text = MINIMAL.replace("nz = 32", "nz = 1");
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("nz must be >= 2"), "{err}");
        assert!(err.contains(":4:"), "{err}");
    }

    #[test]
    fn none_clears_a_threshold() {
        let c = parse_config(&format!(
            "{MINIMAL}[acceptance]\nmin_fidelity = 0.9\nmin_fidelity = none\n"
        ))
        .unwrap();
        assert_eq!(c.acceptance.min_fidelity, None);
    }

    #[test]
    fn unknown_key_has_line() {
        let err = parse_config(&format!("{MINIMAL}bogus = 3\n")).unwrap_err();
        match err {
            Error::Config { line, message, .. } => {
                assert_eq!(line, 15);
                assert!(message.contains("bogus"));
            }
            other => panic!("{other}"),
        }
        assert!(parse_config("[nope]\n").is_err());
        assert!(parse_config("nz = 3\n").is_err());
    }

    #[test]
    fn numbers_and_lists() {
        assert_eq!(parse_number("2*pi*100").unwrap(), 2.0 * PI * 100.0);
        assert_eq!(parse_number("pi / 3").unwrap(), PI / 3.0);
        assert_eq!(parse_number("-1.5e2").unwrap(), -150.0);
        assert!(parse_number("abc").is_err());
        let l = parse_list("linspace(0, tau, 7)").unwrap();
        assert_eq!(l.len(), 7);
        assert!((l[6] - 2.0 * PI).abs() < 1e-15);
        assert_eq!(parse_list("2.0, 2.6").unwrap(), vec![2.0, 2.6]);
    }

    #[test]
    fn sweep_parameter_must_exist() {
        let ok = format!("{MINIMAL}[sweep]\nparameter = pulse.width\nvalues = 0.3, 0.4\n");
        let c = parse_config(&ok).unwrap();
        assert_eq!(c.sweep.unwrap().values, vec![0.3, 0.4]);
        let bad = format!("{MINIMAL}[sweep]\nparameter = pulse.nothing\nvalues = 1\n");
        assert!(parse_config(&bad).is_err());
        let empty = format!("{MINIMAL}[sweep]\nparameter = pulse.width\nvalues = linspace(0, 1, 0)\n");
        assert!(parse_config(&empty).is_err());
    }

    #[test]
    fn includes_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), MINIMAL).unwrap();
        std::fs::write(
            dir.path().join("child.cfg"),
            "include = base.cfg\n[pulse]\nwidth = 0.7\n",
        )
        .unwrap();
        let c = load_config(&dir.path().join("child.cfg")).unwrap();
        assert_eq!(c.pulse_spec().unwrap().width, 0.7);
        assert_eq!(c.name, "child");
        let o = c.with_override("pulse.center", 3.0).unwrap();
        assert_eq!(o.pulse_spec().unwrap().center, 3.0);
        assert!(c.with_override("pulse.bogus", 1.0).is_err());
        let flat = parse_config(&c.raw.to_text()).unwrap();
        assert_eq!(flat.pulse_spec(), c.pulse_spec());
    }

    #[test]
    fn custom_schedule_round_trips() {
        let text = format!(
            "{MINIMAL}[schedule]\ngradient_center = 0.5\nsegment = 0, 5, 11, 628, 0, 6, 0, 0.2\nsegment = 5, 10, 42, 0, 0, 0, 0, 0.2\n"
        )
        .replace("mode = gem_eit", "mode = custom");
        let c = parse_config(&text).unwrap();
        let sched = c.protocol.custom_schedule.clone().unwrap();
        assert_eq!(sched.segments.len(), 2);
        assert_eq!(sched.segments[1].control_amplitude, 42.0);
        let again = format!(
            "{}{}",
            MINIMAL.replace("mode = gem_eit", "mode = custom"),
            sched.to_config_text()
        );
        assert_eq!(parse_config(&again).unwrap().protocol.custom_schedule.unwrap(), sched);
        let none = MINIMAL.replace("mode = gem_eit", "mode = custom");
        assert!(parse_config(&none).is_err());
    }
}
