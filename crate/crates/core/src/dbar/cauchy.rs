//! Planar Cauchy–Pompeiu transform `v(z) = −(1/π)∬ α(w)/(w − z) dA(w)`.
//!
//! `α` is averaged over uniform square cells (cells cut by the boundary are
//! subsampled 8×8), the discrete convolution with the cell kernel is done by
//! FFT, and the leading `h²` error term is removed locally. Values off the
//! cell centres come from tensor quintic Lagrange interpolation, which also
//! supplies `∂̄v`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::{DbarData, SingularCellRule, SolverSettings};
use crate::error::{Error, Result};

const PAD_CELLS: usize = 3;
const SUBCELLS: usize = 32;

#[derive(Clone, Debug)]
pub struct GridField {
    x0: f64,
    y0: f64,
    h: f64,
    nx: usize,
    ny: usize,
    rule: SingularCellRule,
    /// Cell averages of `α·1_G`, index `i + nx·j`.
    density: Vec<C64>,
    /// `v` at the cell centres.
    values: Vec<C64>,
}

/// `∬_{[x1,x2]×[y1,y2]} dA(u)/u`.
pub fn rect_inverse_integral(x1: f64, x2: f64, y1: f64, y2: f64) -> C64 {
    if x1 < 0.0 && x2 > 0.0 {
        return rect_inverse_integral(x1, 0.0, y1, y2) + rect_inverse_integral(0.0, x2, y1, y2);
    }
    if x2 <= 0.0 && x1 < 0.0 {
        // u ↦ −u moves the rectangle off the branch cut of log
        return -rect_inverse_integral(-x2, -x1, -y2, -y1);
    }
    // F(u) = −i(u log u − u) satisfies ∂x∂y F = 1/u, continuous on Re u ≥ 0.
    let f = |x: f64, y: f64| -> C64 {
        let u = C64::new(x, y);
        if u.norm() == 0.0 {
            return C64::new(0.0, 0.0);
        }
        C64::new(0.0, -1.0) * (u * u.ln() - u)
    };
    f(x2, y2) - f(x1, y2) - f(x2, y1) + f(x1, y1)
}

fn fast_len(min: usize) -> usize {
    let mut n = min.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

fn fft2(buf: &mut [C64], px: usize, py: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (fx, fy) = if inverse {
        (planner.plan_fft_inverse(px), planner.plan_fft_inverse(py))
    } else {
        (planner.plan_fft_forward(px), planner.plan_fft_forward(py))
    };
    buf.par_chunks_mut(px).for_each(|row| fx.process(row));
    let mut t = vec![C64::new(0.0, 0.0); px * py];
    for j in 0..py {
        for i in 0..px {
            t[j + py * i] = buf[i + px * j];
        }
    }
    t.par_chunks_mut(py).for_each(|col| fy.process(col));
    for j in 0..py {
        for i in 0..px {
            buf[i + px * j] = t[j + py * i];
        }
    }
}

/// Stencil width of the tensor Lagrange interpolant.
const STENCIL: usize = 6;

/// Weights and derivative weights of degree-5 Lagrange interpolation on nodes
/// `−2, …, 3` at fraction `f ∈ [0, 1)`.
fn lagrange(f: f64) -> ([f64; STENCIL], [f64; STENCIL]) {
    let nodes: [f64; STENCIL] = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    let mut w = [0.0; STENCIL];
    let mut dw = [0.0; STENCIL];
    for k in 0..STENCIL {
        let mut denom = 1.0;
        let mut prod = 1.0;
        for m in 0..STENCIL {
            if m != k {
                denom *= nodes[k] - nodes[m];
                prod *= f - nodes[m];
            }
        }
        w[k] = prod / denom;
        let mut d = 0.0;
        for skip in 0..STENCIL {
            if skip == k {
                continue;
            }
            let mut p = 1.0;
            for m in 0..STENCIL {
                if m != k && m != skip {
                    p *= f - nodes[m];
                }
            }
            d += p;
        }
        dw[k] = d / denom;
    }
    (w, dw)
}

impl GridField {
    pub fn build(data: &dyn DbarData, s: &SolverSettings) -> Result<Self> {
        if s.quadrature_cells < 4 {
            return Err(Error::InvalidInput(format!("quadrature_cells = {} is too small", s.quadrature_cells)));
        }
        let bbox = data.bbox();
        let (wx, wy) = (bbox.hi[0] - bbox.lo[0], bbox.hi[1] - bbox.lo[1]);
        let h = wx.max(wy) / s.quadrature_cells as f64;
        let nx = (wx / h - 1e-9).ceil() as usize + 2 * PAD_CELLS;
        let ny = (wy / h - 1e-9).ceil() as usize + 2 * PAD_CELLS;
        let x0 = 0.5 * (bbox.lo[0] + bbox.hi[0]) - 0.5 * nx as f64 * h;
        let y0 = 0.5 * (bbox.lo[1] + bbox.hi[1]) - 0.5 * ny as f64 * h;

        let density: Vec<C64> = (0..nx * ny)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx % nx, idx / nx);
                let c = C64::new(x0 + (i as f64 + 0.5) * h, y0 + (j as f64 + 0.5) * h);
                let level = data.level(&[c]);
                let grad = data.level_gradient_norm(&[c]);
                let cut = grad > 0.0 && level.abs() <= grad * h;
                if cut {
                    let mut acc = C64::new(0.0, 0.0);
                    for a in 0..SUBCELLS {
                        for b in 0..SUBCELLS {
                            let w = c + C64::new(
                                ((a as f64 + 0.5) / SUBCELLS as f64 - 0.5) * h,
                                ((b as f64 + 0.5) / SUBCELLS as f64 - 0.5) * h,
                            );
                            if data.level(&[w]) < 0.0 {
                                acc += data.alpha(&[w])[0];
                            }
                        }
                    }
                    acc / (SUBCELLS * SUBCELLS) as f64
                } else if level < 0.0 {
                    data.alpha(&[c])[0]
                } else {
                    C64::new(0.0, 0.0)
                }
            })
            .collect();

        let mut field = GridField { x0, y0, h, nx, ny, rule: s.singular_rule, density, values: Vec::new() };
        field.values = field.convolve();
        if s.local_correction {
            field.correct(data);
        }
        Ok(field)
    }

    /// Contribution weight of a cell at offset `(dx, dy)` cells from a target cell centre.
    fn kernel(&self, dx: i64, dy: i64) -> C64 {
        let h = self.h;
        match self.rule {
            SingularCellRule::EqualAreaDisc => {
                if dx == 0 && dy == 0 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(h / PI, 0.0) / C64::new(dx as f64, dy as f64)
                }
            }
            SingularCellRule::ExactCell => {
                if dx.abs().max(dy.abs()) <= 2 {
                    // (1/π)∬_cell dA(w)/(c − w) with w − c over the offset cell
                    let (ux, uy) = (-(dx as f64) * h, -(dy as f64) * h);
                    -rect_inverse_integral(ux - 0.5 * h, ux + 0.5 * h, uy - 0.5 * h, uy + 0.5 * h) / PI
                } else {
                    C64::new(h / PI, 0.0) / C64::new(dx as f64, dy as f64)
                }
            }
        }
    }

    fn convolve(&self) -> Vec<C64> {
        let (nx, ny) = (self.nx, self.ny);
        let px = fast_len(2 * nx - 1);
        let py = fast_len(2 * ny - 1);
        let zero = C64::new(0.0, 0.0);
        let mut a = vec![zero; px * py];
        for j in 0..ny {
            for i in 0..nx {
                a[i + px * j] = self.density[i + nx * j];
            }
        }
        let mut k = vec![zero; px * py];
        for dy in -(ny as i64 - 1)..=(ny as i64 - 1) {
            for dx in -(nx as i64 - 1)..=(nx as i64 - 1) {
                let ix = dx.rem_euclid(px as i64) as usize;
                let iy = dy.rem_euclid(py as i64) as usize;
                k[ix + px * iy] = self.kernel(dx, dy);
            }
        }
        fft2(&mut a, px, py, false);
        fft2(&mut k, px, py, false);
        a.iter_mut().zip(&k).for_each(|(x, y)| *x *= y);
        fft2(&mut a, px, py, true);
        let norm = 1.0 / (px * py) as f64;
        let mut out = vec![zero; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                out[i + nx * j] = a[i + px * j] * norm;
            }
        }
        out
    }

    /// Removes the leading `h²` error of the punctured rule, `−(h²/π)·∂α(z)`, at
    /// centres inside the domain.
    fn correct(&mut self, data: &dyn DbarData) {
        let h = self.h;
        let e = 1e-3 * h;
        let corrections: Vec<C64> = (0..self.nx * self.ny)
            .into_par_iter()
            .map(|idx| {
                let c = self.center(idx % self.nx, idx / self.nx);
                if data.level(&[c]) >= 0.0 {
                    return C64::new(0.0, 0.0);
                }
                let a = |w: C64| data.alpha(&[w])[0];
                let dx = (a(c + e) - a(c - e)) / (2.0 * e);
                let dy = (a(c + C64::new(0.0, e)) - a(c - C64::new(0.0, e))) / (2.0 * e);
                let d = 0.5 * (dx - C64::new(0.0, 1.0) * dy);
                -d * (h * h / PI)
            })
            .collect();
        self.values.iter_mut().zip(corrections).for_each(|(v, c)| *v += c);
    }

    pub fn cell_size(&self) -> f64 {
        self.h
    }

    fn center(&self, i: usize, j: usize) -> C64 {
        C64::new(self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    /// First stencil index per axis and the weights.
    #[allow(clippy::type_complexity)]
    fn stencil(&self, z: C64) -> (usize, usize, [f64; STENCIL], [f64; STENCIL], [f64; STENCIL], [f64; STENCIL]) {
        let px = ((z.re - self.x0) / self.h - 0.5).clamp(2.0, self.nx as f64 - 4.0);
        let py = ((z.im - self.y0) / self.h - 0.5).clamp(2.0, self.ny as f64 - 4.0);
        let (i, j) = ((px.floor() as usize).min(self.nx - 4), (py.floor() as usize).min(self.ny - 4));
        let (wx, dwx) = lagrange(px - i as f64);
        let (wy, dwy) = lagrange(py - j as f64);
        (i - 2, j - 2, wx, dwx, wy, dwy)
    }

    /// Interpolated `v(z)`.
    pub fn value(&self, z: C64) -> C64 {
        let (i, j, wx, _, wy, _) = self.stencil(z);
        let mut acc = C64::new(0.0, 0.0);
        for b in 0..STENCIL {
            for a in 0..STENCIL {
                acc += self.values[(i + a) + self.nx * (j + b)] * (wx[a] * wy[b]);
            }
        }
        acc
    }

    /// `∂v/∂z̄ = ½(∂x + i∂y)` of the interpolant.
    pub fn dbar(&self, z: C64) -> C64 {
        let (i, j, wx, dwx, wy, dwy) = self.stencil(z);
        let mut dx = C64::new(0.0, 0.0);
        let mut dy = C64::new(0.0, 0.0);
        for b in 0..STENCIL {
            for a in 0..STENCIL {
                let v = self.values[(i + a) + self.nx * (j + b)];
                dx += v * (dwx[a] * wy[b]);
                dy += v * (wx[a] * dwy[b]);
            }
        }
        (dx + C64::new(0.0, 1.0) * dy) * (0.5 / self.h)
    }

    /// Quadrature sum of the finest grid at an arbitrary point with the configured singular-cell rule.
    pub fn value_direct(&self, z: C64) -> C64 {
        let h = self.h;
        let rho = h / PI.sqrt();
        let ci = ((z.re - self.x0) / h).floor() as i64;
        let cj = ((z.im - self.y0) / h).floor() as i64;
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let m = self.density[i + self.nx * j];
                if m.norm() == 0.0 {
                    continue;
                }
                let c = self.center(i, j);
                let near = (i as i64 - ci).abs().max((j as i64 - cj).abs());
                let d = z - c;
                acc += match self.rule {
                    SingularCellRule::ExactCell if near <= 2 => {
                        let (ux, uy) = (c.re - z.re, c.im - z.im);
                        -m * rect_inverse_integral(ux - 0.5 * h, ux + 0.5 * h, uy - 0.5 * h, uy + 0.5 * h) / PI
                    }
                    _ if d.norm() < rho => m * d.conj(),
                    _ => m * (h * h / PI) / d,
                };
            }
        }
        acc
    }

    /// `max |v|` over cell centres inside the domain.
    pub fn sup_norm(&self, data: &dyn DbarData) -> f64 {
        (0..self.nx * self.ny)
            .into_par_iter()
            .filter(|idx| data.level(&[self.center(idx % self.nx, idx / self.nx)]) < 0.0)
            .map(|idx| self.values[idx].norm())
            .reduce(|| 0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::BallData;
    use super::super::*;
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rect_integral_matches_midpoint_far_away() {
        let exact = rect_inverse_integral(3.0, 3.1, -2.0, -1.9);
        let mid = C64::new(0.01, 0.0) / c(3.05, -1.95);
        assert!((exact - mid).norm() < 1e-6);
        // symmetric square about the singularity integrates to zero
        assert!(rect_inverse_integral(-0.5, 0.5, -0.5, 0.5).norm() < 1e-14);
        // rectangle straddling the negative real axis
        let left = rect_inverse_integral(-2.0, -1.0, -0.5, 0.5);
        let mut quad = C64::new(0.0, 0.0);
        let m = 400;
        for a in 0..m {
            for b in 0..m {
                let u = c(-2.0 + (a as f64 + 0.5) / m as f64, -0.5 + (b as f64 + 0.5) / m as f64);
                quad += u.inv() / (m * m) as f64;
            }
        }
        assert!((left - quad).norm() < 1e-6, "{left} vs {quad}");
    }

    fn unit_disc_one() -> DbarProblem {
        let data = BallData { center: vec![c(0.0, 0.0)], radius: 1.0, alpha: |_z: &[C64]| vec![c(1.0, 0.0)] };
        DbarProblem { data: std::sync::Arc::new(data), settings: SolverSettings::default() }
    }

    #[test]
    fn zero_density_gives_zero() {
        let data = BallData { center: vec![c(0.0, 0.0)], radius: 1.0, alpha: |_z: &[C64]| vec![c(0.0, 0.0)] };
        let p = DbarProblem { data: std::sync::Arc::new(data), settings: SolverSettings { quadrature_cells: 64, ..Default::default() } };
        let sol = solve_dbar(&p).unwrap();
        assert_eq!(sol.sup_norm, 0.0);
        assert_eq!(sol.value(&[c(0.3, 0.2)]), c(0.0, 0.0));
    }

    #[test]
    fn constant_density_on_disc_reproduces_zbar() {
        for rule in [SingularCellRule::EqualAreaDisc, SingularCellRule::ExactCell] {
            let mut p = unit_disc_one();
            p.settings.singular_rule = rule;
            let sol = solve_dbar(&p).unwrap();
            let mut worst: f64 = 0.0;
            for (z, d) in test_points(p.data.as_ref(), 2000) {
                if d >= 0.05 {
                    worst = worst.max((sol.value(&z) - z[0].conj()).norm());
                }
            }
            assert!(worst <= 1e-3, "{rule:?}: {worst}");
            assert!((sol.sup_norm - 1.0).abs() < 1e-2, "{}", sol.sup_norm);
            let direct = sol.value_direct(&[c(0.3, -0.2)]).unwrap();
            assert!((direct - c(0.3, 0.2)).norm() <= 1e-3, "{rule:?}: {direct}");
        }
    }

    #[test]
    fn rotation_equivariance() {
        // α(w) = w̄ has solution w̄²/2; rotating the data by e^{iθ} conjugate-rotates v.
        let theta = 0.7f64;
        let rot = C64::from_polar(1.0, theta);
        let base = BallData { center: vec![c(0.0, 0.0)], radius: 1.0, alpha: |z: &[C64]| vec![z[0].conj()] };
        let rotated = BallData { center: vec![c(0.0, 0.0)], radius: 1.0, alpha: move |z: &[C64]| vec![(z[0] * rot.conj()).conj()] };
        let s = SolverSettings::default();
        let a = solve_dbar(&DbarProblem { data: std::sync::Arc::new(base), settings: s.clone() }).unwrap();
        let b = solve_dbar(&DbarProblem { data: std::sync::Arc::new(rotated), settings: s }).unwrap();
        for z in [c(0.2, 0.1), c(-0.5, 0.3), c(0.0, -0.7)] {
            // v_rot(Rz) = conj(R)·v(z)
            let lhs = b.value(&[z * rot]);
            let rhs = a.value(&[z]) * rot.conj();
            assert!((lhs - rhs).norm() < 1e-3, "{lhs} vs {rhs}");
        }
    }
}
