//! Post-hoc recalibration: variance scaling, isotonic CDF maps and CRUDE.

use super::metrics::{calibration_levels, mpl, normal_cdf, normal_quantile, pit_values, rmsce_from_curve};
use super::PredictiveSummary;
use crate::error::{shape_err, Result, UqError};
use serde::{Deserialize, Serialize};

pub const QUADRATURE_NODES: usize = 2001;
pub const QUADRATURE_HALF_WIDTH: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleObjective {
    #[default]
    Rmsce,
    /// Maximizes mean predictive likelihood.
    Mpl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibrationMap {
    /// Predictions become `N(μ̄, s²σ̄²)`.
    Scale { s: f64 },
    /// Nondecreasing piecewise-linear `Q` on [0,1] through `(p, Q(p))` knots, endpoints (0,0) and (1,1).
    Isotonic { knots: Vec<(f64, f64)> },
    /// Sorted standardized residuals and their mean and standard deviation.
    Crude {
        residuals: Vec<f64>,
        mu_eps: f64,
        sigma_eps: f64,
    },
}

fn check(s: &PredictiveSummary, u: &[f64], min: usize) -> Result<()> {
    if s.len() != u.len() {
        return Err(shape_err("calibration targets", s.len(), u.len()));
    }
    if u.len() < min {
        return Err(UqError::Config(format!(
            "calibration needs at least {min} points, got {}",
            u.len()
        )));
    }
    Ok(())
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn scaled(s: &PredictiveSummary, factor: f64) -> PredictiveSummary {
    let aleatoric: Vec<f64> = s.aleatoric.iter().map(|v| v * factor).collect();
    let epistemic: Vec<f64> = s.epistemic.iter().map(|v| v * factor).collect();
    let total = aleatoric.iter().zip(&epistemic).map(|(a, e)| a + e).collect();
    PredictiveSummary {
        mean: s.mean.clone(),
        aleatoric,
        epistemic,
        total,
        samples: None,
    }
}

fn scale_loss(s: &PredictiveSummary, u: &[f64], objective: ScaleObjective, levels: &[f64], factor: f64) -> f64 {
    let t = scaled(s, factor * factor);
    match objective {
        ScaleObjective::Rmsce => rmsce_from_curve(&super::metrics::calibration_curve(&t, u, levels).expect("checked lengths"))
            .expect("at least two levels"),
        ScaleObjective::Mpl => -mpl(&t, u).expect("checked lengths"),
    }
}

/// Finds `s` minimizing the objective over `log s ∈ [−3, 3]`. RMSCE is piecewise
/// constant in `s`, so a coarse grid first brackets the minimum for golden-section
/// refinement; `s = 1` is kept whenever nothing beats it.
pub fn calibrate_scale(s: &PredictiveSummary, u: &[f64], objective: ScaleObjective, n_p: usize) -> Result<CalibrationMap> {
    check(s, u, 1)?;
    let levels = calibration_levels(n_p);
    let f = |ls: f64| scale_loss(s, u, objective, &levels, ls.exp());
    let grid: Vec<f64> = (0..=120).map(|i| -3.0 + 6.0 * i as f64 / 120.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&g| f(g)).collect();
    let best = (0..grid.len()).fold(0, |b, i| if vals[i] < vals[b] { i } else { b });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_section(f, lo, hi, 60);
    let mut cands = [(f(0.0), 0.0), (vals[best], grid[best]), (f(refined), refined)];
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.abs().total_cmp(&b.1.abs())));
    Ok(CalibrationMap::Scale { s: cands[0].1.exp() })
}

/// Pool-adjacent-violators least-squares nondecreasing fit of `y` (ordered by x).
pub fn pav(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().expect("two blocks") = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Fits `Q` on pairs `(P̄_i, fraction of P̄_j ≤ P̄_i)` from the calibration set.
pub fn calibrate_isotonic(s: &PredictiveSummary, u: &[f64]) -> Result<CalibrationMap> {
    check(s, u, 2)?;
    let mut p = pit_values(s, u)?;
    p.sort_by(f64::total_cmp);
    let n = p.len();
    // empirical fraction at or below each value; ties share the largest count
    let mut target = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && p[j + 1] == p[i] {
            j += 1;
        }
        for t in &mut target[i..=j] {
            *t = (j + 1) as f64 / n as f64;
        }
        i = j + 1;
    }
    let fitted = pav(&target);
    let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for (x, y) in p.into_iter().zip(fitted) {
        let y = y.clamp(0.0, 1.0);
        match knots.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => knots.push((x, y)),
        }
    }
    if knots.last().is_some_and(|k| k.0 == 1.0) {
        knots.last_mut().expect("nonempty").1 = 1.0;
    } else {
        knots.push((1.0, 1.0));
    }
    Ok(CalibrationMap::Isotonic { knots })
}

/// Sorted standardized residuals `(u_i − μ̄_i)/σ̄_i` with their mean and (population) stdev.
pub fn calibrate_crude(s: &PredictiveSummary, u: &[f64]) -> Result<CalibrationMap> {
    check(s, u, 2)?;
    let mut residuals = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let sd = s.total[i].sqrt();
        if !(sd > 0.0) {
            return Err(UqError::NonPositiveVariance {
                index: i,
                value: s.total[i],
            });
        }
        residuals.push((u[i] - s.mean[i]) / sd);
    }
    residuals.sort_by(f64::total_cmp);
    let n = residuals.len() as f64;
    let mu_eps = residuals.iter().sum::<f64>() / n;
    let sigma_eps = (residuals.iter().map(|r| (r - mu_eps).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CalibrationMap::Crude {
        residuals,
        mu_eps,
        sigma_eps,
    })
}

fn interp_knots(knots: &[(f64, f64)], p: f64) -> f64 {
    if p <= knots[0].0 {
        return knots[0].1;
    }
    let k = knots.partition_point(|k| k.0 <= p);
    if k >= knots.len() {
        return knots[knots.len() - 1].1;
    }
    let (x0, y0) = knots[k - 1];
    let (x1, y1) = knots[k];
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (p - x0) / (x1 - x0)
    }
}

/// Slope of the piecewise-linear map on the segment containing `p`.
fn knot_slope(knots: &[(f64, f64)], p: f64) -> f64 {
    let k = knots.partition_point(|k| k.0 <= p).clamp(1, knots.len() - 1);
    let (x0, y0) = knots[k - 1];
    let (x1, y1) = knots[k];
    if x1 > x0 {
        (y1 - y0) / (x1 - x0)
    } else {
        0.0
    }
}

impl CalibrationMap {
    pub fn kind(&self) -> &'static str {
        match self {
            CalibrationMap::Scale { .. } => "scale",
            CalibrationMap::Isotonic { .. } => "isotonic",
            CalibrationMap::Crude { .. } => "crude",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CalibrationMap::Scale { s } if !(*s > 0.0 && s.is_finite()) => {
                Err(UqError::Config(format!("scale factor must be positive, got {s}")))
            }
            CalibrationMap::Isotonic { knots } => {
                let ok = knots.len() >= 2
                    && knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 >= w[0].1)
                    && knots.iter().all(|k| (0.0..=1.0).contains(&k.0) && (0.0..=1.0).contains(&k.1));
                if ok {
                    Ok(())
                } else {
                    Err(UqError::Config("isotonic knots must be increasing within [0,1]".into()))
                }
            }
            CalibrationMap::Crude { residuals, .. } => {
                if residuals.len() < 2 || residuals.windows(2).any(|w| w[1] < w[0]) {
                    Err(UqError::Config("CRUDE residual table must be sorted with at least two entries".into()))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// `Q(p)` for the isotonic map; identity otherwise.
    pub fn recalibrate_probability(&self, p: f64) -> f64 {
        match self {
            CalibrationMap::Isotonic { knots } => interp_knots(knots, p),
            _ => p,
        }
    }

    /// Calibrated CDF at `u` for a point with predictive `N(mean, var)`.
    pub fn cdf(&self, mean: f64, var: f64, u: f64) -> f64 {
        let sd = var.sqrt();
        match self {
            CalibrationMap::Scale { s } => normal_cdf((u - mean) / (s * sd)),
            CalibrationMap::Isotonic { knots } => interp_knots(knots, normal_cdf((u - mean) / sd)),
            CalibrationMap::Crude { residuals, .. } => {
                let z = (u - mean) / sd;
                residuals.partition_point(|r| *r <= z) as f64 / residuals.len() as f64
            }
        }
    }

    /// Calibrated `p`-percentile.
    pub fn quantile(&self, mean: f64, var: f64, p: f64) -> f64 {
        let sd = var.sqrt();
        match self {
            CalibrationMap::Scale { s } => mean + s * sd * normal_quantile(p),
            CalibrationMap::Isotonic { knots } => {
                // smallest probability whose recalibrated value reaches p
                let k = knots.partition_point(|k| k.1 < p);
                let q = if k == 0 {
                    knots[0].0
                } else if k >= knots.len() {
                    1.0
                } else {
                    let (x0, y0) = knots[k - 1];
                    let (x1, y1) = knots[k];
                    x0 + (x1 - x0) * (p - y0) / (y1 - y0)
                };
                mean + sd * normal_quantile(q.clamp(0.0, 1.0))
            }
            CalibrationMap::Crude { residuals, .. } => {
                let n = residuals.len();
                let idx = ((p * n as f64) as usize).min(n - 1);
                mean + sd * residuals[idx]
            }
        }
    }

    /// Calibrated mean and variance at one point.
    pub fn moments(&self, mean: f64, var: f64) -> (f64, f64) {
        match self {
            CalibrationMap::Scale { s } => (mean, s * s * var),
            CalibrationMap::Crude { mu_eps, sigma_eps, .. } => {
                (mean + var.sqrt() * mu_eps, var * sigma_eps * sigma_eps)
            }
            CalibrationMap::Isotonic { knots } => {
                let sd = var.sqrt();
                if sd == 0.0 {
                    return (mean, 0.0);
                }
                // trapezoid rule on the calibrated density Q'(Φ(z))·φ(z) over z ∈ [−10, 10]
                let n = QUADRATURE_NODES;
                let h = 2.0 * QUADRATURE_HALF_WIDTH / (n - 1) as f64;
                let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
                for k in 0..n {
                    let z = -QUADRATURE_HALF_WIDTH + k as f64 * h;
                    let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                    let d = w * knot_slope(knots, normal_cdf(z)) * (-0.5 * z * z).exp();
                    m0 += d;
                    m1 += d * z;
                    m2 += d * z * z;
                }
                let (e1, e2) = (m1 / m0, m2 / m0);
                (mean + sd * e1, var * (e2 - e1 * e1).max(0.0))
            }
        }
    }

    /// Calibrated predictive moments. The variance split keeps the uncalibrated
    /// aleatoric/epistemic proportions so the decomposition stays exact.
    pub fn apply(&self, s: &PredictiveSummary) -> Result<PredictiveSummary> {
        self.validate()?;
        let n = s.len();
        let mut mean = Vec::with_capacity(n);
        let mut aleatoric = Vec::with_capacity(n);
        let mut epistemic = Vec::with_capacity(n);
        for i in 0..n {
            let (m, v) = self.moments(s.mean[i], s.total[i]);
            let frac = if s.total[i] > 0.0 { s.aleatoric[i] / s.total[i] } else { 1.0 };
            mean.push(m);
            aleatoric.push(v * frac);
            epistemic.push(v * (1.0 - frac));
        }
        PredictiveSummary::from_moments(mean, aleatoric, epistemic)
    }

    /// Calibration curve of the recalibrated predictive distribution.
    pub fn calibration_curve(&self, s: &PredictiveSummary, u: &[f64], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
        check(s, u, 1)?;
        let n = u.len() as f64;
        Ok(levels
            .iter()
            .map(|&p| {
                let hits = match self {
                    CalibrationMap::Isotonic { .. } => (0..u.len())
                        .filter(|&i| self.cdf(s.mean[i], s.total[i], u[i]) <= p)
                        .count(),
                    _ => (0..u.len())
                        .filter(|&i| u[i] <= self.quantile(s.mean[i], s.total[i], p))
                        .count(),
                };
                (p, hits as f64 / n)
            })
            .collect())
    }

    pub fn rmsce(&self, s: &PredictiveSummary, u: &[f64], n_p: usize) -> Result<f64> {
        rmsce_from_curve(&self.calibration_curve(s, u, &calibration_levels(n_p))?)
    }
}
