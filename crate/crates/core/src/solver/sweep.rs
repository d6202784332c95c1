//! Cross-propagation of the signal: E(z) = E(z_min) + i * int gN/c * sigma_ge dz,
//! Simpson per cell with cubic-interpolated midpoint coherences.

use crate::model::{EnsembleParams, SimGrid, C64};

/// Local couplings at the nodes and the cell midpoints.
#[derive(Debug, Clone)]
pub(crate) struct SweepWeights {
    pub node: Vec<f64>,
    pub mid: Vec<f64>,
    pub dz: f64,
}

impl SweepWeights {
    pub fn new(params: &EnsembleParams, grid: &SimGrid) -> Self {
        let dz = grid.dz();
        SweepWeights {
            node: (0..grid.nz).map(|j| params.coupling_at(grid.z(j))).collect(),
            mid: (0..grid.nz - 1)
                .map(|j| params.coupling_at(grid.z(j) + 0.5 * dz))
                .collect(),
            dz,
        }
    }
}

/// Value at the midpoint of cell `j` (between nodes j and j+1).
#[inline]
pub(crate) fn midpoint(s: &[C64], j: usize) -> C64 {
    let n = s.len();
    match n {
        2 => (s[0] + s[1]) * 0.5,
        3 => {
            if j == 0 {
                (s[0] * 3.0 + s[1] * 6.0 - s[2]) / 8.0
            } else {
                (s[2] * 3.0 + s[1] * 6.0 - s[0]) / 8.0
            }
        }
        _ => {
            if j == 0 {
                (s[0] * 5.0 + s[1] * 15.0 - s[2] * 5.0 + s[3]) / 16.0
            } else if j == n - 2 {
                (s[n - 1] * 5.0 + s[n - 2] * 15.0 - s[n - 3] * 5.0 + s[n - 4]) / 16.0
            } else {
                ((s[j] + s[j + 1]) * 9.0 - s[j - 1] - s[j + 2]) / 16.0
            }
        }
    }
}

pub(crate) fn sweep_into(sigma_ge: &[C64], boundary: C64, w: &SweepWeights, out: &mut [C64]) {
    let n = sigma_ge.len();
    let i_h6 = C64::new(0.0, w.dz / 6.0);
    out[0] = boundary;
    let mut acc = boundary;
    for j in 0..n - 1 {
        let f = sigma_ge[j] * w.node[j] + midpoint(sigma_ge, j) * (4.0 * w.mid[j]) + sigma_ge[j + 1] * w.node[j + 1];
        acc += i_h6 * f;
        out[j + 1] = acc;
    }
}

/// Signal field along the lattice generated from the entrance value.
pub fn spatial_sweep(sigma_ge: &[C64], boundary_e: C64, params: &EnsembleParams, grid: &SimGrid) -> Vec<C64> {
    assert_eq!(sigma_ge.len(), grid.nz, "coherence column must span the lattice");
    let w = SweepWeights::new(params, grid);
    let mut out = vec![C64::new(0.0, 0.0); grid.nz];
    sweep_into(sigma_ge, boundary_e, &w, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_grid, DensityProfile};
    use std::f64::consts::PI;

    fn flat(grid: &SimGrid, od: f64) -> EnsembleParams {
        EnsembleParams::new(od, 1.0, 0.0, DensityProfile::Flat, 1.0, false, grid).unwrap()
    }

    #[test]
    fn zero_coherence_is_free_propagation() {
        let grid = make_grid(0.0, 1.0, 64, 1.0, 2).unwrap();
        let p = flat(&grid, 4.0);
        let e = spatial_sweep(&vec![C64::new(0.0, 0.0); 64], C64::new(0.3, -0.2), &p, &grid);
        assert!(e.iter().all(|v| *v == C64::new(0.3, -0.2)));
    }

    #[test]
    fn constant_coherence_gives_linear_ramp() {
        for nz in [2, 3, 4, 17] {
            let grid = make_grid(-1.0, 2.0, nz, 1.0, 2).unwrap();
            let p = flat(&grid, 6.0);
            let s = C64::new(0.4, 0.7);
            let b = C64::new(1.0, 0.5);
            let e = spatial_sweep(&vec![s; nz], b, &p, &grid);
            assert_eq!(e[0], b);
            for (j, v) in e.iter().enumerate() {
                let expect = b + C64::i() * p.coupling_gn_over_c * s * (grid.z(j) - grid.z_min);
                assert!((v - expect).norm() < 1e-12, "nz={nz} j={j}");
            }
        }
    }

    #[test]
    fn sine_matches_fine_quadrature() {
        let grid = make_grid(0.0, 1.0, 256, 1.0, 2).unwrap();
        let p = flat(&grid, 2.0);
        let c = p.coupling_gn_over_c;
        let sigma: Vec<C64> = (0..256).map(|j| C64::new((PI * grid.z(j)).sin(), 0.0)).collect();
        let e = spatial_sweep(&sigma, C64::new(0.0, 0.0), &p, &grid);
        // independent oracle: composite Simpson on a 16x finer lattice of the exact integrand
        let fine = 255 * 16;
        let h = 1.0 / fine as f64;
        let mut exact = vec![0.0; 256];
        let mut acc = 0.0;
        for m in 0..fine {
            let a = m as f64 * h;
            acc += h / 6.0 * ((PI * a).sin() + 4.0 * (PI * (a + 0.5 * h)).sin() + (PI * (a + h)).sin());
            if (m + 1) % 16 == 0 {
                exact[(m + 1) / 16] = acc;
            }
        }
        let max = exact.iter().fold(0.0f64, |m, v| m.max(v.abs())) * c;
        for j in 0..256 {
            let expect = C64::new(0.0, c * exact[j]);
            assert!((e[j] - expect).norm() / max < 1e-8, "j={j}");
        }
    }

    #[test]
    fn cubic_midpoints_are_exact_for_cubics() {
        let z: Vec<f64> = (0..6).map(|j| j as f64 * 0.3).collect();
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x * x;
        let s: Vec<C64> = z.iter().map(|&x| C64::new(f(x), -f(x))).collect();
        for (j, &zj) in z.iter().take(5).enumerate() {
            let m = midpoint(&s, j);
            let x = zj + 0.15;
            assert!((m - C64::new(f(x), -f(x))).norm() < 1e-13);
        }
    }
}
