//! Levenberg-Marquardt least squares and the chirped-Gaussian pulse model.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComplexEnvelope, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter change falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            ftol: 1e-14,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals.
    pub sse: f64,
    pub n_residuals: usize,
    pub iterations: usize,
    /// Residual-variance scaled covariance, when J^T J is invertible.
    pub covariance: Option<DMatrix<f64>>,
}

fn sse(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian(f: &impl Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for c in 0..x.len() {
        let h = 1e-6 * x[c].abs().max(1e-3);
        xp[c] = x[c] + h;
        let fp = f(&xp);
        xp[c] = x[c] - h;
        let fm = f(&xp);
        xp[c] = x[c];
        for r in 0..m {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Minimizes the sum of squares of `f(x)` from `x0` with central-difference
/// Jacobians and diagonal (Marquardt) damping.
pub fn levenberg_marquardt(f: impl Fn(&[f64]) -> Vec<f64>, x0: &[f64], opts: &LmOptions) -> Result<LmResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = f(&x);
    let m = r.len();
    if m < n {
        return Err(Error::FitFailed(format!("{m} residuals for {n} parameters")));
    }
    let mut cost = sse(&r);
    if !cost.is_finite() {
        return Err(Error::FitFailed("non-finite residual at the initial guess".into()));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&f, &x, m);
        let a = j.tr_mul(&j);
        let g = j.tr_mul(&DVector::from_column_slice(&r));
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for d in 0..n {
                damped[(d, d)] += lambda * a[(d, d)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let ct = sse(&rt);
            if ct.is_finite() && ct <= cost {
                let small_x = step
                    .iter()
                    .zip(&x)
                    .all(|(d, v)| d.abs() <= opts.xtol * (v.abs() + opts.xtol));
                let small_f = cost - ct <= opts.ftol * cost;
                x = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small_x || small_f;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision: at a minimum
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailed(format!(
            "no convergence after {iterations} iterations"
        )));
    }
    let j = jacobian(&f, &x, m);
    let covariance = if m > n {
        j.tr_mul(&j).try_inverse().map(|inv| inv * (cost / (m - n) as f64))
    } else {
        None
    };
    Ok(LmResult {
        x,
        sse: cost,
        n_residuals: m,
        iterations,
        covariance,
    })
}

/// A exp(-(t-t0)^2 / 2 sigma^2) exp(i [2 pi f (t-t0) + pi chirp (t-t0)^2 + phase]),
/// so the instantaneous frequency is f + chirp (t - t0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpedGaussianFit {
    pub amplitude: f64,
    pub t0: f64,
    pub sigma: f64,
    pub freq: f64,
    pub phase: f64,
    pub chirp: f64,
    pub residual_rms: f64,
    /// One-sigma uncertainties in the order amplitude, t0, sigma, freq, phase, chirp.
    pub stderr: [f64; 6],
}

impl ChirpedGaussianFit {
    pub fn value(&self, t: f64) -> C64 {
        model(
            &[self.amplitude, self.t0, self.sigma, self.freq, self.phase, self.chirp],
            t,
        )
    }
}

fn model(p: &[f64], t: f64) -> C64 {
    let u = t - p[1];
    let a = p[0] * (-u * u / (2.0 * p[2] * p[2])).exp();
    C64::from_polar(a, 2.0 * PI * p[3] * u + PI * p[5] * u * u + p[4])
}

/// Initial guess: peak time, width from the amplitude FWHM, frequency from the
/// spectral peak, phase at the peak, no chirp.
pub fn initial_guess(env: &ComplexEnvelope) -> Result<[f64; 6]> {
    let mags: Vec<f64> = env.samples.iter().map(|s| s.norm()).collect();
    let (ip, &peak) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::ZeroEnergy)?;
    if !(peak > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    let half = 0.5 * peak;
    let mut lo = ip;
    while lo > 0 && mags[lo] > half {
        lo -= 1;
    }
    let mut hi = ip;
    while hi + 1 < mags.len() && mags[hi] > half {
        hi += 1;
    }
    let fwhm = ((hi - lo) as f64 * env.dt).max(2.0 * env.dt);
    let sigma = fwhm / (2.0 * (2.0 * 2f64.ln()).sqrt());

    let n = (env.len() * 8).next_power_of_two();
    let mut buf = vec![C64::new(0.0, 0.0); n];
    buf[..env.len()].copy_from_slice(&env.samples);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (kp, _) = buf
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm_sqr().total_cmp(&b.1.norm_sqr()))
        .unwrap();
    let kf = if kp > n / 2 { kp as f64 - n as f64 } else { kp as f64 };
    let freq = kf / (n as f64 * env.dt);
    Ok([peak, env.t(ip), sigma, freq, env.samples[ip].arg(), 0.0])
}

/// Joint least-squares fit of I and Q to the chirped Gaussian model.
pub fn fit_chirped_gaussian(env: &ComplexEnvelope, init: Option<&ChirpedGaussianFit>) -> Result<ChirpedGaussianFit> {
    let x0 = match init {
        Some(f) => [f.amplitude, f.t0, f.sigma, f.freq, f.phase, f.chirp],
        None => initial_guess(env)?,
    };
    let times = env.times();
    let data = &env.samples;
    let resid = |p: &[f64]| -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * data.len());
        for (t, d) in times.iter().zip(data) {
            let v = model(p, *t) - d;
            r.push(v.re);
            r.push(v.im);
        }
        r
    };
    let res = levenberg_marquardt(resid, &x0, &LmOptions::default())?;
    let mut p = res.x.clone();
    let span = env.t_end() - env.t0;
    if !(p[2].is_finite() && p[2].abs() > 0.1 * env.dt && p[2].abs() < 10.0 * span) {
        return Err(Error::FitFailed(format!("degenerate width sigma = {}", p[2])));
    }
    p[2] = p[2].abs();
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[4] += PI;
    }
    p[4] = crate::diagnostics::wrap_phase(p[4]);
    let mut stderr = [f64::NAN; 6];
    if let Some(cov) = &res.covariance {
        for (i, s) in stderr.iter_mut().enumerate() {
            *s = cov[(i, i)].max(0.0).sqrt();
        }
    }
    Ok(ChirpedGaussianFit {
        amplitude: p[0],
        t0: p[1],
        sigma: p[2],
        freq: p[3],
        phase: p[4],
        chirp: p[5],
        residual_rms: (res.sse / data.len() as f64).sqrt(),
        stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeReport {
    pub modulation_freq: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub delta_f: f64,
    pub hwhm: f64,
    pub sigma_res: f64,
}

/// Combines two single-pulse fits: sigma_res = sqrt((s1^2 + s2^2) / 2),
/// HWHM = 2.335 sigma_res / 2, delta_+- = HWHM * chirp_{1,2}.
pub fn fringe_report(fit1: &ChirpedGaussianFit, fit2: &ChirpedGaussianFit) -> FringeReport {
    let sigma_res = ((fit1.sigma * fit1.sigma + fit2.sigma * fit2.sigma) / 2.0).sqrt();
    let hwhm = 2.335 * sigma_res / 2.0;
    let delta_plus = hwhm * fit1.chirp;
    let delta_minus = hwhm * fit2.chirp;
    FringeReport {
        modulation_freq: (fit2.freq - fit1.freq).abs(),
        delta_plus,
        delta_minus,
        delta_f: delta_plus - delta_minus,
        hwhm,
        sigma_res,
    }
}
