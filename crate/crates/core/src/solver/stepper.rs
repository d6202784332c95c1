//! Embedded explicit Runge-Kutta pairs with error control and cubic Hermite
//! dense output, over complex state vectors.

use serde::{Deserialize, Serialize};

use super::tableau::*;
use crate::error::{Error, Result};
use crate::model::{IntegrationStats, C64};

pub const MIN_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddedPair {
    /// Dormand-Prince 5(4).
    #[default]
    Rk45,
    /// Dormand-Prince 8(5,3).
    Rk89,
}

impl EmbeddedPair {
    /// Order of the propagated solution.
    pub fn order(self) -> u32 {
        match self {
            EmbeddedPair::Rk45 => 5,
            EmbeddedPair::Rk89 => 8,
        }
    }

    /// Exponent p of the error estimate used by the controller.
    pub fn error_order(self) -> u32 {
        match self {
            EmbeddedPair::Rk45 => 4,
            EmbeddedPair::Rk89 => 7,
        }
    }

    fn stages(self) -> usize {
        match self {
            EmbeddedPair::Rk45 => 6,
            EmbeddedPair::Rk89 => 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    pub accepted: bool,
    pub next_step: f64,
}

/// Accept when the weighted error is at most 1; rescale the step by
/// `clamp(0.9 err^(-1/(p+1)), 0.2, 5)` and cap it at `max_step`.
pub fn step_controller(error_estimate: f64, current_step: f64, p: u32, max_step: f64) -> StepDecision {
    let factor = if error_estimate == 0.0 {
        5.0
    } else {
        (0.9 * error_estimate.powf(-1.0 / (p as f64 + 1.0))).clamp(0.2, 5.0)
    };
    StepDecision {
        accepted: error_estimate <= 1.0,
        next_step: (current_step * factor).min(max_step),
    }
}

pub(crate) trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]);
}

/// Tolerances in the form the error norm needs: `atol` is absolute.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

pub(crate) struct Stepper {
    pair: EmbeddedPair,
    k: Vec<Vec<C64>>,
    ytmp: Vec<C64>,
}

impl Stepper {
    pub fn new(pair: EmbeddedPair, dim: usize) -> Self {
        Stepper {
            pair,
            k: vec![vec![C64::new(0.0, 0.0); dim]; pair.stages() + 1],
            ytmp: vec![C64::new(0.0, 0.0); dim],
        }
    }

    /// One trial step from (t, y) with derivative `f0`. Writes the candidate
    /// solution and its derivative, returns the weighted error norm.
    #[allow(clippy::too_many_arguments)]
    pub fn attempt<S: OdeSystem>(
        &mut self,
        sys: &mut S,
        t: f64,
        y: &[C64],
        f0: &[C64],
        h: f64,
        tol: Tolerance,
        y_new: &mut [C64],
        f_new: &mut [C64],
    ) -> f64 {
        let n = y.len();
        let s = self.pair.stages();
        self.k[0].copy_from_slice(f0);
        for i in 1..s {
            let (a, c): (&[f64], f64) = match self.pair {
                EmbeddedPair::Rk45 => (&DP5_A[i][..i], DP5_C[i]),
                EmbeddedPair::Rk89 => (&DOP853_A[i][..i], DOP853_C[i]),
            };
            for (m, (out, &ym)) in self.ytmp.iter_mut().zip(y).enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, &aij) in a.iter().enumerate() {
                    if aij != 0.0 {
                        acc += self.k[j][m] * aij;
                    }
                }
                *out = ym + acc * h;
            }
            sys.rhs(t + c * h, &self.ytmp, &mut self.k[i]);
        }
        let b: &[f64] = match self.pair {
            EmbeddedPair::Rk45 => &DP5_B,
            EmbeddedPair::Rk89 => &DOP853_B,
        };
        for m in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for (j, &bj) in b.iter().enumerate() {
                if bj != 0.0 {
                    acc += self.k[j][m] * bj;
                }
            }
            y_new[m] = y[m] + acc * h;
        }
        sys.rhs(t + h, y_new, f_new);
        self.k[s].copy_from_slice(f_new);

        let scale = |m: usize| tol.atol + tol.rtol * y[m].norm().max(y_new[m].norm());
        match self.pair {
            EmbeddedPair::Rk45 => {
                let mut sum = 0.0;
                for m in 0..n {
                    let mut e = C64::new(0.0, 0.0);
                    for (j, &ej) in DP5_E.iter().enumerate() {
                        if ej != 0.0 {
                            e += self.k[j][m] * ej;
                        }
                    }
                    sum += (e * h).norm_sqr() / scale(m).powi(2);
                }
                (sum / n as f64).sqrt()
            }
            EmbeddedPair::Rk89 => {
                let mut s5 = 0.0;
                let mut s3 = 0.0;
                for m in 0..n {
                    let mut e5 = C64::new(0.0, 0.0);
                    let mut e3 = C64::new(0.0, 0.0);
                    for j in 0..=s {
                        e5 += self.k[j][m] * DOP853_E5[j];
                        e3 += self.k[j][m] * DOP853_E3[j];
                    }
                    let sc = scale(m).powi(2);
                    s5 += e5.norm_sqr() / sc;
                    s3 += e3.norm_sqr() / sc;
                }
                let denom = s5 + 0.01 * s3;
                if denom > 0.0 {
                    h.abs() * s5 / (denom * n as f64).sqrt()
                } else {
                    0.0
                }
            }
        }
    }
}

struct ClosureSystem<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(f64, &[C64], &mut [C64])> OdeSystem for ClosureSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        (self.f)(t, y, dy)
    }
}

/// Integrates y' = f(t, y) from `t0` to `t1` in `steps` equal steps of the
/// pair's propagating method, without error control. Used to measure the
/// convergence order of the tableaus.
pub fn fixed_step(
    pair: EmbeddedPair,
    f: impl FnMut(f64, &[C64], &mut [C64]),
    y0: &[C64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Vec<C64> {
    let n = y0.len();
    let mut sys = ClosureSystem { dim: n, f };
    let mut stepper = Stepper::new(pair, n);
    let h = (t1 - t0) / steps.max(1) as f64;
    let tol = Tolerance { rtol: 1.0, atol: 1.0 };
    let mut y = y0.to_vec();
    let mut f0 = vec![C64::new(0.0, 0.0); n];
    let mut y_new = y.clone();
    let mut f_new = f0.clone();
    sys.rhs(t0, &y, &mut f0);
    for i in 0..steps.max(1) {
        stepper.attempt(&mut sys, t0 + i as f64 * h, &y, &f0, h, tol, &mut y_new, &mut f_new);
        std::mem::swap(&mut y, &mut y_new);
        std::mem::swap(&mut f0, &mut f_new);
    }
    y
}

/// Cubic Hermite interpolation between two accepted points.
pub(crate) fn hermite(theta: f64, h: f64, y0: &[C64], f0: &[C64], y1: &[C64], f1: &[C64], out: &mut [C64]) {
    let t2 = theta * theta;
    let om = 1.0 - theta;
    let h00 = (1.0 + 2.0 * theta) * om * om;
    let h10 = theta * om * om * h;
    let h01 = t2 * (3.0 - 2.0 * theta);
    let h11 = t2 * (theta - 1.0) * h;
    for m in 0..out.len() {
        out[m] = y0[m] * h00 + f0[m] * h10 + y1[m] * h01 + f1[m] * h11;
    }
}

/// Adaptive integration through the ordered `breakpoints`, starting from
/// `y0` at `breakpoints[0]`. Steps never cross a breakpoint. `on_interval` is
/// called with the index of the interval before it is entered, and
/// `on_sample` receives every requested output time with the interpolated
/// state (sample times must be sorted).
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate_adaptive<S: OdeSystem>(
    sys: &mut S,
    pair: EmbeddedPair,
    tol: Tolerance,
    max_step: f64,
    y0: &[C64],
    breakpoints: &[f64],
    sample_times: &[f64],
    mut on_interval: impl FnMut(&mut S, usize, f64, f64),
    mut on_sample: impl FnMut(usize, f64, &[C64]),
) -> Result<IntegrationStats> {
    let n = sys.dim();
    let mut stepper = Stepper::new(pair, n);
    let mut y = y0.to_vec();
    let mut f = vec![C64::new(0.0, 0.0); n];
    let mut y_new = vec![C64::new(0.0, 0.0); n];
    let mut f_new = vec![C64::new(0.0, 0.0); n];
    let mut interp = vec![C64::new(0.0, 0.0); n];
    let mut stats = IntegrationStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut next_sample = 0;
    let mut h = max_step.min(1e-3);
    let p = pair.error_order();

    while next_sample < sample_times.len() && sample_times[next_sample] <= breakpoints[0] {
        on_sample(next_sample, sample_times[next_sample], &y);
        next_sample += 1;
    }

    for (iv, w) in breakpoints.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        on_interval(sys, iv, a, b);
        let mut t = a;
        sys.rhs(t, &y, &mut f);
        stats.rhs_evaluations += 1;
        while t < b {
            let mut clipped = false;
            let mut step = h;
            if t + 1.05 * step >= b {
                step = b - t;
                clipped = true;
            }
            if !clipped && step < MIN_STEP {
                return Err(Error::StepUnderflow { t, h: step });
            }
            let err = stepper.attempt(sys, t, &y, &f, step, tol, &mut y_new, &mut f_new);
            stats.rhs_evaluations += pair.stages();
            let decision = step_controller(err, step, p, max_step);
            if !err.is_finite() {
                h = step * 0.2;
                stats.rejected_steps += 1;
                if h < MIN_STEP {
                    return Err(Error::NonFinite { t });
                }
                continue;
            }
            if !decision.accepted {
                stats.rejected_steps += 1;
                h = decision.next_step;
                if h < MIN_STEP {
                    return Err(Error::StepUnderflow { t, h });
                }
                continue;
            }
            let t_new = if clipped { b } else { t + step };
            if y_new.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
                return Err(Error::NonFinite { t: t_new });
            }
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let ts = sample_times[next_sample];
                let theta = ((ts - t) / step).clamp(0.0, 1.0);
                hermite(theta, step, &y, &f, &y_new, &f_new, &mut interp);
                on_sample(next_sample, ts, &interp);
                next_sample += 1;
            }
            stats.accepted_steps += 1;
            stats.min_step = stats.min_step.min(step);
            stats.max_step = stats.max_step.max(step);
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut f, &mut f_new);
            t = t_new;
            // a clipped step says nothing about the achievable step size
            if !clipped || decision.next_step < h {
                h = decision.next_step;
            }
        }
    }
    if !stats.min_step.is_finite() {
        stats.min_step = 0.0;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn controller_examples() {
        let d = step_controller(0.0, 0.1, 4, 10.0);
        assert!(d.accepted);
        assert_relative_eq!(d.next_step, 0.5);
        let d = step_controller(1.0, 0.1, 4, 10.0);
        assert!(d.accepted);
        assert_relative_eq!(d.next_step, 0.09, max_relative = 1e-12);
        let d = step_controller(32.0, 1.0, 4, 10.0);
        assert!(!d.accepted);
        assert_relative_eq!(d.next_step, 0.45, max_relative = 1e-12);
        assert_eq!(step_controller(0.0, 1.0, 4, 2.0).next_step, 2.0);
        assert_relative_eq!(step_controller(1e12, 1.0, 4, 2.0).next_step, 0.2);
    }

    #[test]
    fn tableau_rows_sum_to_nodes() {
        for i in 0..6 {
            let s: f64 = DP5_A[i].iter().sum();
            assert!((s - DP5_C[i]).abs() < 1e-14);
        }
        for i in 0..12 {
            let s: f64 = DOP853_A[i].iter().sum();
            assert!((s - DOP853_C[i]).abs() < 1e-13);
        }
        assert!((DP5_B.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((DOP853_B.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    struct Decay(C64);
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&mut self, _t: f64, y: &[C64], dy: &mut [C64]) {
            dy[0] = self.0 * y[0];
        }
    }

    #[test]
    fn adaptive_decay_meets_tolerance() {
        for pair in [EmbeddedPair::Rk45, EmbeddedPair::Rk89] {
            let lambda = C64::new(-1.0, 3.0);
            let mut sys = Decay(lambda);
            let samples: Vec<f64> = (0..=20).map(|k| k as f64 * 0.25).collect();
            let mut worst = 0.0f64;
            integrate_adaptive(
                &mut sys,
                pair,
                Tolerance {
                    rtol: 1e-9,
                    atol: 1e-12,
                },
                0.02,
                &[C64::new(1.0, 0.0)],
                &[0.0, 2.0, 5.0],
                &samples,
                |_, _, _, _| {},
                |_, t, y| worst = worst.max((y[0] - (lambda * t).exp()).norm()),
            )
            .unwrap();
            // dense output is third order, hence the bound looser than the tolerance
            assert!(worst < 1e-6, "{pair:?}: {worst}");
        }
    }
}
