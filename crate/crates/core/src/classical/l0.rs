use crate::error::{Error, Result};
use crate::imaging::Raster;
use crate::scalar::Scalar;

/// Half-quadratic L0 gradient minimisation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L0Params {
    pub lambda: f64,
    /// Growth factor of the coupling weight per round.
    pub kappa: f64,
    /// Rounds stop once the coupling weight exceeds this.
    pub beta_max: f64,
    /// Relative residual at which the inner CG solve stops.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl L0Params {
    pub fn new(lambda: f64) -> Self {
        L0Params {
            lambda,
            kappa: 2.0,
            beta_max: 1e5,
            cg_tol: 1e-5,
            cg_max_iter: 500,
        }
    }
}

impl Default for L0Params {
    fn default() -> Self {
        Self::new(0.02)
    }
}

/// Diagnostics of one half-quadratic round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct L0Round {
    pub beta: f64,
    /// `sum (S - I)^2 + lambda * #{p : (h_p, v_p) != 0}` at the round's `(S, h, v)`.
    pub energy: f64,
    pub nonzero: usize,
    pub cg_iterations: usize,
}

/// Forward differences with a zero derivative on the last column / row.
struct Grid {
    h: usize,
    w: usize,
}

impl Grid {
    fn dx(&self, s: &[f64], out: &mut [f64]) {
        for y in 0..self.h {
            let row = y * self.w;
            for x in 0..self.w {
                out[row + x] = if x + 1 < self.w { s[row + x + 1] - s[row + x] } else { 0.0 };
            }
        }
    }

    fn dy(&self, s: &[f64], out: &mut [f64]) {
        for y in 0..self.h {
            for x in 0..self.w {
                let i = y * self.w + x;
                out[i] = if y + 1 < self.h { s[i + self.w] - s[i] } else { 0.0 };
            }
        }
    }

    /// `out += Dx^T h + Dy^T v`
    fn adjoint_add(&self, h: &[f64], v: &[f64], out: &mut [f64]) {
        let w = self.w;
        for y in 0..self.h {
            for x in 0..w {
                let i = y * w + x;
                let mut acc = 0.0;
                if x + 1 < w {
                    acc -= h[i];
                }
                if x >= 1 {
                    acc += h[i - 1];
                }
                if y + 1 < self.h {
                    acc -= v[i];
                }
                if y >= 1 {
                    acc += v[i - w];
                }
                out[i] += acc;
            }
        }
    }

    /// `(1 + beta * (Dx^T Dx + Dy^T Dy)) s`, i.e. the 5-point screened Laplacian.
    fn apply(&self, beta: f64, s: &[f64], out: &mut [f64]) {
        let w = self.w;
        for y in 0..self.h {
            for x in 0..w {
                let i = y * w + x;
                let mut lap = 0.0;
                if x + 1 < w {
                    lap += s[i] - s[i + 1];
                }
                if x >= 1 {
                    lap += s[i] - s[i - 1];
                }
                if y + 1 < self.h {
                    lap += s[i] - s[i + w];
                }
                if y >= 1 {
                    lap += s[i] - s[i - w];
                }
                out[i] = s[i] + beta * lap;
            }
        }
    }

    fn diagonal(&self, beta: f64) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.h * self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                let deg = (x + 1 < self.w) as usize + (x >= 1) as usize + (y + 1 < self.h) as usize + (y >= 1) as usize;
                d.push(1.0 + beta * deg as f64);
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients, warm-started from `x`.
fn solve(grid: &Grid, beta: f64, rhs: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize> {
    let n = rhs.len();
    let diag = grid.diagonal(beta);
    let mut ax = vec![0.0; n];
    grid.apply(beta, x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let target = tol * dot(rhs, rhs).sqrt();
    let mut rnorm = dot(&r, &r).sqrt();
    if rnorm <= target {
        return Ok(0);
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        grid.apply(beta, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok(it);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let ratio = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + ratio * p[i];
        }
    }
    Err(Error::NonConvergence {
        solver: "l0 screened-Poisson CG",
        iterations: max_iter,
        residual: rnorm / dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE),
    })
}

/// Pixels whose forward-difference gradient has squared norm above `tol^2`.
pub fn nonzero_gradient_count<T: Scalar>(img: &Raster<T>, tol: f64) -> usize {
    let (h, w) = img.dims();
    let grid = Grid { h, w };
    let s: Vec<f64> = img.pixels().iter().map(|v| v.as_f64()).collect();
    let (mut gx, mut gy) = (vec![0.0; s.len()], vec![0.0; s.len()]);
    grid.dx(&s, &mut gx);
    grid.dy(&s, &mut gy);
    gx.iter().zip(&gy).filter(|(a, b)| *a * *a + *b * *b > tol * tol).count()
}

/// L0 objective `sum (S - I)^2 + lambda * C(S)`, counting gradients above `tol`
/// (`l0_smooth` scores with [`COUNT_TOL`]).
pub fn l0_energy<T: Scalar>(smoothed: &Raster<T>, input: &Raster<T>, lambda: f64, tol: f64) -> f64 {
    let data: f64 = smoothed
        .pixels()
        .iter()
        .zip(input.pixels())
        .map(|(s, i)| (s.as_f64() - i.as_f64()).powi(2))
        .sum();
    data + lambda * nonzero_gradient_count(smoothed, tol) as f64
}

pub fn l0_smooth<T: Scalar>(img: &Raster<T>, lambda: f64) -> Result<Raster<T>> {
    l0_smooth_with(img, &L0Params::new(lambda)).map(|(s, _)| s)
}

/// Gradient magnitude below which a pixel counts as flat when scoring iterates
/// (half an 8-bit quantisation step).
pub const COUNT_TOL: f64 = 1.0 / 512.0;

/// Half-quadratic splitting for `min_S sum (S - I)^2 + lambda * C(S)`.
///
/// Each round hard-thresholds the auxiliary gradient field at `lambda / beta`
/// and then solves `(1 + beta * grad^T grad) S = I + beta * grad^T (h, v)`.
/// The splitting itself is not a descent method on the L0 objective, so every
/// iterate (and the input itself) is scored with [`l0_energy`] and the best one
/// is returned; the energies reported per round are those of the best iterate
/// so far and therefore never increase.
pub fn l0_smooth_with<T: Scalar>(img: &Raster<T>, params: &L0Params) -> Result<(Raster<T>, Vec<L0Round>)> {
    let L0Params {
        lambda,
        kappa,
        beta_max,
        cg_tol,
        cg_max_iter,
    } = *params;
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("l0_smooth: lambda must be positive, got {lambda}")));
    }
    if !(kappa > 1.0) || !(beta_max > 0.0) {
        return Err(Error::invalid("l0_smooth: need kappa > 1 and beta_max > 0"));
    }
    let (h, w) = img.dims();
    let grid = Grid { h, w };
    let n = h * w;
    let input: Vec<f64> = img.pixels().iter().map(|v| v.as_f64()).collect();
    let score = |s: &[f64]| -> f64 {
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        grid.dx(s, &mut gx);
        grid.dy(s, &mut gy);
        let count = gx.iter().zip(&gy).filter(|(a, b)| *a * *a + *b * *b > COUNT_TOL * COUNT_TOL).count();
        let data: f64 = s.iter().zip(&input).map(|(a, b)| (a - b).powi(2)).sum();
        data + lambda * count as f64
    };
    let mut s = input.clone();
    let mut best = input.clone();
    let mut best_energy = score(&input);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut rounds = Vec::new();
    let mut beta = 2.0 * lambda;
    while beta <= beta_max {
        grid.dx(&s, &mut gx);
        grid.dy(&s, &mut gy);
        let cutoff = lambda / beta;
        let mut nonzero = 0;
        for i in 0..n {
            if gx[i] * gx[i] + gy[i] * gy[i] <= cutoff {
                gx[i] = 0.0;
                gy[i] = 0.0;
            } else {
                nonzero += 1;
            }
        }
        let mut adj = vec![0.0; n];
        grid.adjoint_add(&gx, &gy, &mut adj);
        let rhs: Vec<f64> = input.iter().zip(&adj).map(|(i, a)| i + beta * a).collect();
        let iterations = solve(&grid, beta, &rhs, &mut s, cg_tol, cg_max_iter)?;
        let energy = score(&s);
        if energy <= best_energy {
            best_energy = energy;
            best.copy_from_slice(&s);
        }
        rounds.push(L0Round {
            beta,
            energy: best_energy,
            nonzero,
            cg_iterations: iterations,
        });
        beta *= kappa;
    }
    let out = Raster::new(h, w, best.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))).collect())?;
    Ok((out, rounds))
}
