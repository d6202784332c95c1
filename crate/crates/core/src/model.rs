//! Domain types shared by the solver, the protocol builder and the analysis code.
//!
//! Units throughout: time in microseconds, length in millimetres, angular
//! frequencies (Rabi frequencies, detunings, decay rates) in rad/us.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Uniform space-time lattice: `nz` points on `[z_min, z_max]` and
/// `n_samples` output times on `[0, t_max]` (both ends included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    pub t_max: f64,
    pub n_samples: usize,
}

pub fn make_grid(z_min: f64, z_max: f64, nz: usize, t_max: f64, n_samples: usize) -> Result<SimGrid> {
    if nz < 2 {
        return Err(Error::InvalidGrid(format!("nz must be >= 2, got {nz}")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidGrid(format!("n_samples must be >= 2, got {n_samples}")));
    }
    if !(z_min.is_finite() && z_max.is_finite()) || z_max <= z_min {
        return Err(Error::InvalidGrid(format!(
            "z_max must exceed z_min (got z_min = {z_min}, z_max = {z_max})"
        )));
    }
    if !t_max.is_finite() || t_max <= 0.0 {
        return Err(Error::InvalidGrid(format!("t_max must be positive, got {t_max}")));
    }
    Ok(SimGrid {
        z_min,
        z_max,
        nz,
        t_max,
        n_samples,
    })
}

impl SimGrid {
    pub fn length(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn dz(&self) -> f64 {
        self.length() / (self.nz - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.n_samples - 1) as f64
    }

    pub fn z(&self, j: usize) -> f64 {
        self.z_min + j as f64 * self.dz()
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    pub fn z_axis(&self) -> Vec<f64> {
        (0..self.nz).map(|j| self.z(j)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples).map(|k| self.t(k)).collect()
    }

    /// Index of the output sample closest to `t`.
    pub fn sample_index(&self, t: f64) -> usize {
        let k = (t / self.dt()).round();
        (k.max(0.0) as usize).min(self.n_samples - 1)
    }
}

/// Relative atomic density along z, peak-normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityProfile {
    Flat,
    /// Gaussian with full 1/e^2 width `width` (mm) centred at `center` (mm),
    /// truncated by the grid ends.
    Gaussian {
        center: f64,
        width: f64,
    },
}

impl DensityProfile {
    pub fn at(&self, z: f64) -> f64 {
        match *self {
            DensityProfile::Flat => 1.0,
            DensityProfile::Gaussian { center, width } => {
                let u = (z - center) / width;
                (-8.0 * u * u).exp()
            }
        }
    }

    /// Integral over the grid with the same node/midpoint Simpson rule the
    /// spatial sweep uses, so the calibration is exact for the discrete model.
    pub fn integral(&self, grid: &SimGrid) -> f64 {
        let dz = grid.dz();
        (0..grid.nz - 1)
            .map(|j| {
                let z = grid.z(j);
                dz / 6.0 * (self.at(z) + 4.0 * self.at(z + 0.5 * dz) + self.at(z + dz))
            })
            .sum()
    }
}

/// Atomic and optical constants of the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    /// Optical coherence decay rate (rad/us).
    pub gamma_ge: f64,
    /// Spinwave decay rate (rad/us); ignored when `literal_spinwave_decay` is set.
    pub gamma_gs: f64,
    /// Resonant intensity optical depth of the fully pumped ensemble.
    pub optical_depth: f64,
    pub density_profile: DensityProfile,
    /// Fraction of atoms in the memory level; scales the density linearly.
    pub pumping_efficiency: f64,
    /// Single-atom coupling g (rad/us per unit field amplitude).
    pub g: f64,
    /// Peak gN/c (rad/us per mm per unit coherence), from [`calibrate_coupling`].
    pub coupling_gn_over_c: f64,
    /// Use gamma_ge as the spinwave decay rate, as the three-level equations are
    /// literally written.
    pub literal_spinwave_decay: bool,
}

impl EnsembleParams {
    /// Builds a parameter set and calibrates gN/c on `grid`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        optical_depth: f64,
        gamma_ge: f64,
        gamma_gs: f64,
        density_profile: DensityProfile,
        pumping_efficiency: f64,
        literal_spinwave_decay: bool,
        grid: &SimGrid,
    ) -> Result<Self> {
        if !(optical_depth >= 0.0 && optical_depth.is_finite()) {
            return Err(Error::param("optical_depth", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&pumping_efficiency) {
            return Err(Error::param("pumping_efficiency", "must lie in [0, 1]"));
        }
        if !(gamma_ge > 0.0 && gamma_ge.is_finite()) {
            return Err(Error::param("gamma_ge", "must be finite and > 0"));
        }
        if !(gamma_gs >= 0.0 && gamma_gs.is_finite()) {
            return Err(Error::param("gamma_gs", "must be finite and >= 0"));
        }
        if let DensityProfile::Gaussian { width, .. } = density_profile {
            if !(width > 0.0) {
                return Err(Error::param("profile_width", "must be > 0"));
            }
        }
        let g = 1.0;
        let coupling = calibrate_coupling(optical_depth, gamma_ge, g, &density_profile, grid)?;
        Ok(EnsembleParams {
            gamma_ge,
            gamma_gs,
            optical_depth,
            density_profile,
            pumping_efficiency,
            g,
            coupling_gn_over_c: coupling,
            literal_spinwave_decay,
        })
    }

    pub fn spinwave_decay(&self) -> f64 {
        if self.literal_spinwave_decay {
            self.gamma_ge
        } else {
            self.gamma_gs
        }
    }

    /// Local gN(z)/c including the pumping efficiency.
    pub fn coupling_at(&self, z: f64) -> f64 {
        self.coupling_gn_over_c * self.pumping_efficiency * self.density_profile.at(z)
    }

    /// Optical depth actually seen by the signal.
    pub fn effective_optical_depth(&self) -> f64 {
        self.optical_depth * self.pumping_efficiency
    }
}

/// Peak gN/c such that resonant, control-off steady-state propagation through
/// the whole profile attenuates the amplitude by exp(-d/2):
/// `gN/c = d * gamma_ge / (2 * g * integral(profile))`.
pub fn calibrate_coupling(
    optical_depth: f64,
    gamma_ge: f64,
    g: f64,
    profile: &DensityProfile,
    grid: &SimGrid,
) -> Result<f64> {
    let integral = profile.integral(grid);
    if !(integral > 0.0) {
        return Err(Error::ZeroDensityIntegral);
    }
    Ok(optical_depth * gamma_ge / (2.0 * g * integral))
}

/// Uniformly sampled complex envelope starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    pub samples: Vec<C64>,
    pub t0: f64,
    pub dt: f64,
}

impl ComplexEnvelope {
    pub fn new(samples: Vec<C64>, t0: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param("dt", "must be finite and > 0"));
        }
        if samples.len() < 2 {
            return Err(Error::param("samples", "need at least two samples"));
        }
        Ok(ComplexEnvelope { samples, t0, dt })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.samples.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples.len()).map(|n| self.t(n)).collect()
    }

    /// Linear interpolation; zero outside the sampled span.
    pub fn sample_at(&self, t: f64) -> C64 {
        let x = (t - self.t0) / self.dt;
        if !(x >= 0.0) {
            return C64::new(0.0, 0.0);
        }
        let last = self.samples.len() - 1;
        let i = x.floor() as usize;
        if i >= last {
            return if x <= last as f64 + 1e-9 {
                self.samples[last]
            } else {
                C64::new(0.0, 0.0)
            };
        }
        let w = x - i as f64;
        self.samples[i] * (1.0 - w) + self.samples[i + 1] * w
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() * self.dt
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Intensity-weighted mean time.
    pub fn centroid(&self) -> Option<f64> {
        let w: f64 = self.samples.iter().map(|s| s.norm_sqr()).sum();
        if w <= 0.0 {
            return None;
        }
        let m: f64 = self
            .samples
            .iter()
            .enumerate()
            .map(|(n, s)| s.norm_sqr() * self.t(n))
            .sum();
        Some(m / w)
    }

    pub fn scaled(&self, factor: C64) -> Self {
        ComplexEnvelope {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            t0: self.t0,
            dt: self.dt,
        }
    }

    /// Resamples onto a new uniform axis by linear interpolation.
    pub fn resample(&self, t0: f64, dt: f64, n: usize) -> Self {
        ComplexEnvelope {
            samples: (0..n).map(|k| self.sample_at(t0 + k as f64 * dt)).collect(),
            t0,
            dt,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
    pub min_step: f64,
    pub max_step: f64,
}

/// Full space-time record on the output sampling grid. Arrays are stored
/// time-major: entry `(k, j)` is at `k * nz + j`.
#[derive(Debug, Clone)]
pub struct FieldState {
    pub nz: usize,
    pub times: Vec<f64>,
    pub e: Vec<C64>,
    pub sigma_ge: Vec<C64>,
    pub sigma_gs: Vec<C64>,
    pub stats: IntegrationStats,
}

impl FieldState {
    pub fn zeros(grid: &SimGrid) -> Self {
        let n = grid.nz * grid.n_samples;
        FieldState {
            nz: grid.nz,
            times: grid.times(),
            e: vec![C64::new(0.0, 0.0); n],
            sigma_ge: vec![C64::new(0.0, 0.0); n],
            sigma_gs: vec![C64::new(0.0, 0.0); n],
            stats: IntegrationStats::default(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.times.len()
    }

    pub fn e_row(&self, k: usize) -> &[C64] {
        &self.e[k * self.nz..(k + 1) * self.nz]
    }

    pub fn sigma_ge_row(&self, k: usize) -> &[C64] {
        &self.sigma_ge[k * self.nz..(k + 1) * self.nz]
    }

    pub fn sigma_gs_row(&self, k: usize) -> &[C64] {
        &self.sigma_gs[k * self.nz..(k + 1) * self.nz]
    }

    /// Field at the exit face, one value per output sample.
    pub fn exit_field(&self) -> Vec<C64> {
        (0..self.n_samples())
            .map(|k| self.e[k * self.nz + self.nz - 1])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.e
            .iter()
            .chain(&self.sigma_ge)
            .chain(&self.sigma_gs)
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.e
            .iter()
            .chain(&self.sigma_ge)
            .chain(&self.sigma_gs)
            .all(|c| c.re == 0.0 && c.im == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn experimental_grid() {
        let g = make_grid(0.0, 30.0, 256, 100.0, 2500).unwrap();
        assert_relative_eq!(g.dz(), 30.0 / 255.0);
        assert_relative_eq!(g.t(2499), 100.0);
    }

    #[test]
    fn minimal_and_idealized_grids() {
        let g = make_grid(0.0, 1.0, 2, 1.0, 2).unwrap();
        assert_eq!(g.dz(), 1.0);
        let g = make_grid(0.0, 1.0, 800, 25.0, 1250).unwrap();
        assert_relative_eq!(g.dz(), 1.0 / 799.0);
        assert_relative_eq!(g.dt(), 25.0 / 1249.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(make_grid(0.0, 1.0, 1, 1.0, 2).is_err());
        assert!(make_grid(0.0, 1.0, 2, 1.0, 1).is_err());
        assert!(make_grid(1.0, 1.0, 4, 1.0, 2).is_err());
        assert!(make_grid(0.0, 1.0, 4, 0.0, 2).is_err());
        assert!(make_grid(0.0, 1.0, 4, -1.0, 2).is_err());
    }

    #[test]
    fn zero_depth_gives_zero_coupling() {
        let g = make_grid(0.0, 1.0, 64, 1.0, 2).unwrap();
        let c = calibrate_coupling(0.0, 18.0, 1.0, &DensityProfile::Flat, &g).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn flat_profile_coupling_formula() {
        let g = make_grid(0.0, 1.0, 800, 25.0, 2).unwrap();
        let c = calibrate_coupling(2000.0, 18.0, 1.0, &DensityProfile::Flat, &g).unwrap();
        assert_relative_eq!(c, 2000.0 * 18.0 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_integral_profile_is_rejected() {
        let g = make_grid(0.0, 1.0, 16, 1.0, 2).unwrap();
        // centred far outside the grid: underflows to zero everywhere
        let p = DensityProfile::Gaussian {
            center: 1e6,
            width: 1.0,
        };
        assert!(matches!(
            calibrate_coupling(1.0, 1.0, 1.0, &p, &g),
            Err(Error::ZeroDensityIntegral)
        ));
    }

    #[test]
    fn gaussian_integral_matches_closed_form() {
        let g = make_grid(-20.0, 20.0, 401, 1.0, 2).unwrap();
        let p = DensityProfile::Gaussian {
            center: 0.0,
            width: 8.0,
        };
        // exp(-8 z^2 / w^2) integrates to w * sqrt(pi / 8)
        let exact = 8.0 * (std::f64::consts::PI / 8.0).sqrt();
        assert_relative_eq!(p.integral(&g), exact, max_relative = 1e-10);
    }

    #[test]
    fn envelope_interpolation() {
        let env = ComplexEnvelope::new(vec![C64::new(0.0, 0.0), C64::new(2.0, -2.0)], 1.0, 0.5).unwrap();
        assert_eq!(env.sample_at(1.25), C64::new(1.0, -1.0));
        assert_eq!(env.sample_at(0.5), C64::new(0.0, 0.0));
        assert_eq!(env.sample_at(3.0), C64::new(0.0, 0.0));
        assert_eq!(env.sample_at(1.5), C64::new(2.0, -2.0));
    }

    #[test]
    fn envelope_invariants() {
        assert!(ComplexEnvelope::new(vec![C64::new(1.0, 0.0)], 0.0, 0.1).is_err());
        assert!(ComplexEnvelope::new(vec![C64::new(1.0, 0.0); 3], 0.0, 0.0).is_err());
    }

    #[test]
    fn ensemble_validation() {
        let g = make_grid(0.0, 1.0, 16, 1.0, 2).unwrap();
        assert!(EnsembleParams::new(-1.0, 18.0, 0.0, DensityProfile::Flat, 1.0, false, &g).is_err());
        assert!(EnsembleParams::new(1.0, 18.0, 0.0, DensityProfile::Flat, 1.5, false, &g).is_err());
        let p = EnsembleParams::new(4.0, 18.0, 0.01, DensityProfile::Flat, 0.5, false, &g).unwrap();
        assert_relative_eq!(p.effective_optical_depth(), 2.0);
        assert_eq!(p.spinwave_decay(), 0.01);
        let lit = EnsembleParams {
            literal_spinwave_decay: true,
            ..p
        };
        assert_eq!(lit.spinwave_decay(), 18.0);
    }
}
