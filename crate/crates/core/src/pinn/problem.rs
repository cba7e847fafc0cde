//! Problem definition for the 1D diffusion-reaction benchmark
//! `∂_t u = D ∂²_x u − λ(x) u³ + f(x)` on `x ∈ [−1, 1]`, `t ∈ [0, 1]`.

use super::solver::{reference_solve, MolConfig, PdeCoefficients, ReferenceSolution};
use crate::error::{Result, UqError};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Closed-form fields of the steep-boundary case.
pub struct ReferenceFields;

impl ReferenceFields {
    pub const SOURCE_LENGTHSCALE: f64 = 0.4;

    /// `λ(x) = 0.2 + exp(x²)·cos²(3x)`
    pub fn lambda(x: f64) -> f64 {
        0.2 + (x * x).exp() * (3.0 * x).cos().powi(2)
    }

    /// `f(x) = exp(−(x − 0.25)² / (2l²))·sin²(3x)`
    pub fn source(x: f64) -> f64 {
        let l = Self::SOURCE_LENGTHSCALE;
        (-(x - 0.25).powi(2) / (2.0 * l * l)).exp() * (3.0 * x).sin().powi(2)
    }

    /// `u(x, 0) = cos²(πx)`
    pub fn initial(x: f64) -> f64 {
        (PI * x).cos().powi(2)
    }
}

/// Whether λ is a known function or inferred by a second network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRole {
    Reference,
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceId {
    Steep,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialId {
    #[serde(rename = "cos2pi")]
    Cos2Pi,
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub left: f64,
    pub right: f64,
}

/// One standard deviation per data channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNoise {
    pub f: f64,
    pub b: f64,
    pub u: f64,
    pub lambda: f64,
}

impl ChannelNoise {
    pub fn uniform(s: f64) -> Self {
        Self { f: s, b: s, u: s, lambda: s }
    }

    fn validate(&self, what: &str, strict: bool) -> Result<()> {
        for (name, v) in [("f", self.f), ("b", self.b), ("u", self.u), ("lambda", self.lambda)] {
            let ok = if strict { v > 0.0 } else { v >= 0.0 };
            if !(ok && v.is_finite()) {
                return Err(UqError::Config(format!("{what}.{name} must be {}, got {v}", if strict { "positive" } else { "nonnegative" })));
            }
        }
        Ok(())
    }
}

/// Benchmark specification: PDE coefficients plus the measurement layout.
///
/// Measurement layout:
/// - f: `N_f` Chebyshev–Lobatto points `x_i = −cos(πi/(N_f−1))`, denser near
///   both boundaries; each measurement is matched against the residual
///   averaged in log-likelihood over `f_times`.
/// - b: `N_b` initial points uniform in x at t=0 plus `N_b − 1` points per
///   side at `t = k/(N_b−1)`, `k ≥ 1`.
/// - u: `N_u` interior sensors `x_i = −1 + 2(i+1)/(N_u+1)`, each read at every level of `u_times`.
/// - λ: `N_lambda` points uniform on `[−1, 1]`; unused when λ is a reference field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdeProblem {
    #[serde(rename = "D")]
    pub diffusion: f64,
    pub lambda: LambdaRole,
    pub f: SourceId,
    pub bc: BoundarySpec,
    pub ic: InitialId,
    /// Noise added to generated measurements.
    pub noise: ChannelNoise,
    /// Gaussian likelihood standard deviations.
    pub likelihood_sigma: ChannelNoise,
    #[serde(rename = "N_f")]
    pub n_f: usize,
    #[serde(rename = "N_b")]
    pub n_b: usize,
    #[serde(rename = "N_u")]
    pub n_u: usize,
    #[serde(rename = "N_lambda")]
    pub n_lambda: usize,
    pub f_times: Vec<f64>,
    pub u_times: Vec<f64>,
    pub seed: u64,
    pub solver: MolConfig,
}

impl Default for PdeProblem {
    fn default() -> Self {
        Self::steep()
    }
}

impl PdeProblem {
    /// Mixed steep-boundary case: λ inferred, noisy f/u/λ, clean b.
    pub fn steep() -> Self {
        Self {
            diffusion: 0.01,
            lambda: LambdaRole::Network,
            f: SourceId::Steep,
            bc: BoundarySpec { left: 1.0, right: 1.0 },
            ic: InitialId::Cos2Pi,
            noise: ChannelNoise { f: 0.05, b: 0.0, u: 0.05, lambda: 0.05 },
            likelihood_sigma: ChannelNoise::uniform(0.05),
            n_f: 13,
            n_b: 11,
            n_u: 9,
            n_lambda: 11,
            f_times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            u_times: vec![0.25, 0.5, 0.75, 1.0],
            seed: 0,
            solver: MolConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(UqError::Config(format!("D must be positive, got {}", self.diffusion)));
        }
        self.noise.validate("noise", false)?;
        self.likelihood_sigma.validate("likelihood_sigma", true)?;
        if self.n_f == 1 || self.n_b == 1 {
            return Err(UqError::Config("N_f and N_b must be 0 or at least 2".into()));
        }
        if self.n_f > 0 && self.f_times.is_empty() {
            return Err(UqError::Config("f_times must not be empty when N_f > 0".into()));
        }
        if self.n_u > 0 && self.u_times.is_empty() {
            return Err(UqError::Config("u_times must not be empty when N_u > 0".into()));
        }
        if self.lambda == LambdaRole::Reference && self.n_lambda > 0 {
            return Err(UqError::Config("λ measurements require lambda = \"network\"".into()));
        }
        for &t in self.f_times.iter().chain(&self.u_times) {
            if !(0.0..=1.0).contains(&t) {
                return Err(UqError::Config(format!("time level {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn lambda_at(&self, x: f64) -> f64 {
        ReferenceFields::lambda(x)
    }

    pub fn source_at(&self, x: f64) -> f64 {
        match self.f {
            SourceId::Steep => ReferenceFields::source(x),
            SourceId::Zero => 0.0,
        }
    }

    pub fn initial_at(&self, x: f64) -> f64 {
        match self.ic {
            InitialId::Cos2Pi => ReferenceFields::initial(x),
            InitialId::One => 1.0,
        }
    }

    pub fn f_locations(&self) -> Vec<f64> {
        let n = self.n_f;
        (0..n).map(|i| -(PI * i as f64 / (n - 1) as f64).cos()).collect()
    }

    /// `(t, x)` pairs of boundary and initial measurements.
    pub fn b_locations(&self) -> Vec<(f64, f64)> {
        let n = self.n_b;
        if n == 0 {
            return Vec::new();
        }
        let step = 1.0 / (n - 1) as f64;
        let mut out: Vec<(f64, f64)> = (0..n).map(|i| (0.0, -1.0 + 2.0 * i as f64 * step)).collect();
        for k in 1..n {
            out.push((k as f64 * step, -1.0));
            out.push((k as f64 * step, 1.0));
        }
        out
    }

    pub fn u_locations(&self) -> Vec<(f64, f64)> {
        let n = self.n_u;
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i + 1) as f64 / (n + 1) as f64).collect();
        self.u_times
            .iter()
            .flat_map(|&t| xs.iter().map(move |&x| (t, x)))
            .collect()
    }

    pub fn lambda_locations(&self) -> Vec<f64> {
        let n = self.n_lambda;
        match n {
            0 => Vec::new(),
            1 => vec![0.0],
            _ => (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect(),
        }
    }

    /// Boundary operator: Dirichlet data on `x = ±1`, initial data at `t = 0`.
    pub fn boundary_value(&self, t: f64, x: f64) -> f64 {
        if t == 0.0 {
            self.initial_at(x)
        } else if x <= -1.0 {
            self.bc.left
        } else {
            self.bc.right
        }
    }

    pub fn solve_reference(&self) -> Result<ReferenceSolution> {
        let lam = |x: f64| self.lambda_at(x);
        let src = |x: f64| self.source_at(x);
        let ic = |x: f64| self.initial_at(x);
        let pde = PdeCoefficients {
            diffusion: self.diffusion,
            lambda: &lam,
            source: &src,
            initial: &ic,
            left: self.bc.left,
            right: self.bc.right,
        };
        reference_solve(&pde, &self.solver)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_fields_respect_bounds() {
        for i in 0..=2000 {
            let x = -1.0 + i as f64 / 1000.0;
            assert!(ReferenceFields::lambda(x) >= 0.2);
            let f = ReferenceFields::source(x);
            assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn steep_layout_counts() {
        let p = PdeProblem::steep();
        p.validate().unwrap();
        let f = p.f_locations();
        assert_eq!(f.len(), 13);
        assert_eq!(f[0], -1.0);
        assert!((f[12] - 1.0).abs() < 1e-15);
        // denser near the boundaries than in the middle
        assert!(f[1] - f[0] < f[7] - f[6]);
        assert_eq!(p.b_locations().len(), 11 + 2 * 10);
        assert_eq!(p.u_locations().len(), 36);
        assert_eq!(p.lambda_locations().len(), 11);
    }

    #[test]
    fn json_round_trip_uses_short_field_names() {
        let p = PdeProblem::steep();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"D\":0.01") && s.contains("\"N_f\":13") && s.contains("\"cos2pi\""));
        let q: PdeProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn reference_solver_converges_at_second_order_in_space() {
        let solve = |nx: usize| {
            let mut p = PdeProblem::steep();
            p.solver = MolConfig { nx, nt: 4, tol: 1e-10, ..Default::default() };
            p.solve_reference().unwrap()
        };
        let (c, m, f) = (solve(64), solve(128), solve(256));
        // discrepancy at the coarse nodes, final time
        let gap = |a: &ReferenceSolution, b: &ReferenceSolution, stride: usize| {
            let ua = &a.u[4];
            let ub = &b.u[4];
            (0..ua.len()).map(|i| (ua[i] - ub[i * stride]).abs()).fold(0.0f64, f64::max)
        };
        let e1 = gap(&c, &f, 4);
        let e2 = gap(&m, &f, 2);
        let ratio = e1 / e2;
        // with the finest grid as reference, a second-order scheme gives (1 − 1/16)/(1/4 − 1/16) = 5
        assert!((4.0..6.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
    }

    #[test]
    fn invalid_problems_rejected() {
        let mut p = PdeProblem::steep();
        p.diffusion = 0.0;
        assert!(p.validate().is_err());
        let mut p = PdeProblem::steep();
        p.lambda = LambdaRole::Reference;
        assert!(p.validate().is_err());
        let mut p = PdeProblem::steep();
        p.likelihood_sigma.u = 0.0;
        assert!(p.validate().is_err());
    }
}
