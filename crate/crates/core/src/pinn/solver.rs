//! Method-of-lines reference solver for `u_t = D u_xx − λ(x) u³ + f(x)` on
//! `[−1, 1]` with Dirichlet boundaries: second-order central differences in
//! space, adaptive backward Euler in time with step doubling and Richardson
//! extrapolation, Newton iterations with a tridiagonal solve.

use crate::error::{Result, UqError};
use serde::{Deserialize, Serialize};

/// Coefficient functions of the reaction-diffusion problem.
pub struct PdeCoefficients<'a> {
    pub diffusion: f64,
    pub lambda: &'a (dyn Fn(f64) -> f64 + Sync),
    pub source: &'a (dyn Fn(f64) -> f64 + Sync),
    pub initial: &'a (dyn Fn(f64) -> f64 + Sync),
    pub left: f64,
    pub right: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MolConfig {
    /// Number of space intervals.
    pub nx: usize,
    /// Number of output intervals in time on `[0, t_end]`.
    pub nt: usize,
    pub t_end: f64,
    /// Local error tolerance (max norm) per accepted step.
    pub tol: f64,
    pub dt_initial: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for MolConfig {
    fn default() -> Self {
        Self {
            nx: 512,
            nt: 100,
            t_end: 1.0,
            tol: 1e-7,
            dt_initial: 1e-4,
            max_steps: 1_000_000,
            newton_tol: 1e-12,
            newton_max_iter: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// `u[k][i] = u(t_k, x_i)`
    pub u: Vec<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Solves `a_i y_{i−1} + b_i y_i + c_i y_{i+1} = d_i` in place (Thomas algorithm).
pub fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) -> Result<()> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut m = b[0];
    if m == 0.0 {
        return Err(UqError::Solver("zero pivot in tridiagonal solve".into()));
    }
    cp[0] = c[0] / m;
    d[0] /= m;
    for i in 1..n {
        m = b[i] - a[i] * cp[i - 1];
        if m == 0.0 {
            return Err(UqError::Solver("zero pivot in tridiagonal solve".into()));
        }
        cp[i] = c[i] / m;
        d[i] = (d[i] - a[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
    Ok(())
}

struct Semidiscrete {
    h2: f64,
    diffusion: f64,
    lambda: Vec<f64>,
    source: Vec<f64>,
    left: f64,
    right: f64,
}

impl Semidiscrete {
    /// Right-hand side on interior nodes.
    fn rhs(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let ul = if i == 0 { self.left } else { u[i - 1] };
            let ur = if i + 1 == n { self.right } else { u[i + 1] };
            out[i] = self.diffusion * (ul - 2.0 * u[i] + ur) / self.h2 - self.lambda[i] * u[i].powi(3) + self.source[i];
        }
    }

    /// One backward-Euler step solved by Newton; returns the last update norm on failure.
    fn backward_euler(&self, u0: &[f64], dt: f64, cfg: &MolConfig) -> std::result::Result<Vec<f64>, f64> {
        let n = u0.len();
        let mut u = u0.to_vec();
        let mut f = vec![0.0; n];
        let off = -dt * self.diffusion / self.h2;
        let mut last = f64::INFINITY;
        for _ in 0..cfg.newton_max_iter {
            self.rhs(&u, &mut f);
            let mut g: Vec<f64> = (0..n).map(|i| -(u[i] - u0[i] - dt * f[i])).collect();
            let a = vec![off; n];
            let c = vec![off; n];
            let b: Vec<f64> = (0..n)
                .map(|i| 1.0 + dt * (2.0 * self.diffusion / self.h2 + 3.0 * self.lambda[i] * u[i] * u[i]))
                .collect();
            if solve_tridiagonal(&a, &b, &c, &mut g).is_err() {
                return Err(last);
            }
            last = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            u.iter_mut().zip(&g).for_each(|(ui, gi)| *ui += gi);
            if !last.is_finite() {
                return Err(last);
            }
            if last <= cfg.newton_tol * (1.0 + u.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                return Ok(u);
            }
        }
        Err(last)
    }
}

pub fn reference_solve(pde: &PdeCoefficients<'_>, cfg: &MolConfig) -> Result<ReferenceSolution> {
    if cfg.nx < 64 || cfg.nt < 1 {
        return Err(UqError::Config(format!(
            "reference grid needs at least 64 space intervals and one time interval, got {}x{}",
            cfg.nx, cfg.nt
        )));
    }
    if !(pde.diffusion > 0.0) || !(cfg.t_end > 0.0) || !(cfg.tol > 0.0) {
        return Err(UqError::Config("diffusion, end time and tolerance must be positive".into()));
    }
    let h = 2.0 / cfg.nx as f64;
    let x: Vec<f64> = (0..=cfg.nx).map(|i| -1.0 + i as f64 * h).collect();
    let interior = &x[1..cfg.nx];
    let sys = Semidiscrete {
        h2: h * h,
        diffusion: pde.diffusion,
        lambda: interior.iter().map(|&v| (pde.lambda)(v)).collect(),
        source: interior.iter().map(|&v| (pde.source)(v)).collect(),
        left: pde.left,
        right: pde.right,
    };
    let full = |u: &[f64]| {
        let mut row = Vec::with_capacity(cfg.nx + 1);
        row.push(pde.left);
        row.extend_from_slice(u);
        row.push(pde.right);
        row
    };
    let t_out: Vec<f64> = (0..=cfg.nt).map(|k| cfg.t_end * k as f64 / cfg.nt as f64).collect();
    let mut u: Vec<f64> = interior.iter().map(|&v| (pde.initial)(v)).collect();
    let mut out = vec![full(&u)];
    let (mut t, mut dt) = (0.0, cfg.dt_initial.min(cfg.t_end));
    let (mut accepted, mut rejected) = (0usize, 0usize);
    for &target in &t_out[1..] {
        while target - t > 1e-14 * cfg.t_end {
            if accepted + rejected >= cfg.max_steps {
                return Err(UqError::Solver(format!("step budget exhausted at t = {t}")));
            }
            let step = dt.min(target - t);
            let full_step = sys.backward_euler(&u, step, cfg);
            let half = sys
                .backward_euler(&u, 0.5 * step, cfg)
                .and_then(|v| sys.backward_euler(&v, 0.5 * step, cfg));
            let (one, two) = match (full_step, half) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(r), _) | (_, Err(r)) => {
                    rejected += 1;
                    dt = 0.25 * step;
                    if dt < 1e-14 {
                        return Err(UqError::Solver(format!(
                            "Newton failed to converge at t = {t}, last update norm {r:e}"
                        )));
                    }
                    continue;
                }
            };
            let err = one.iter().zip(&two).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if err <= cfg.tol {
                u = two.iter().zip(&one).map(|(b, a)| 2.0 * b - a).collect();
                t += step;
                accepted += 1;
            } else {
                rejected += 1;
            }
            let factor = if err == 0.0 { 2.0 } else { (0.9 * (cfg.tol / err).sqrt()).clamp(0.2, 2.0) };
            dt = step * factor;
        }
        t = target;
        out.push(full(&u));
    }
    Ok(ReferenceSolution {
        x,
        t: t_out,
        u: out,
        accepted_steps: accepted,
        rejected_steps: rejected,
    })
}

impl ReferenceSolution {
    /// Bilinear interpolation; inputs outside the grid are clamped.
    pub fn interpolate(&self, t: f64, x: f64) -> f64 {
        let locate = |grid: &[f64], v: f64| {
            let n = grid.len();
            let v = v.clamp(grid[0], grid[n - 1]);
            let k = grid.partition_point(|g| *g <= v).clamp(1, n - 1);
            let w = (v - grid[k - 1]) / (grid[k] - grid[k - 1]);
            (k - 1, w)
        };
        let (kt, wt) = locate(&self.t, t);
        let (kx, wx) = locate(&self.x, x);
        let at = |k: usize| self.u[k][kx] * (1.0 - wx) + self.u[k][kx + 1] * wx;
        at(kt) * (1.0 - wt) + at(kt + 1) * wt
    }

    /// Slice at the output time nearest to `t`.
    pub fn at_time(&self, t: f64) -> &[f64] {
        let k = self
            .t
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        &self.u[k]
    }
}
