use super::PredictiveSummary;
use crate::error::{shape_err, Result, UqError};
use crate::probmodel::gaussian_log_density;
use statrs::distribution::{ContinuousCDF, Normal};

pub const DEFAULT_LEVELS: usize = 99;

fn standard_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(z: f64) -> f64 {
    standard_normal().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// `N_p` equispaced interior levels `j/(N_p+1)`.
pub fn calibration_levels(n_p: usize) -> Vec<f64> {
    (1..=n_p).map(|j| j as f64 / (n_p + 1) as f64).collect()
}

fn check_len(s: &PredictiveSummary, u: &[f64]) -> Result<()> {
    if s.len() != u.len() {
        return Err(shape_err("test targets", s.len(), u.len()));
    }
    if u.is_empty() {
        return Err(UqError::Empty("test set"));
    }
    Ok(())
}

/// `sqrt(Σ(μ̄_i − u_i)² / Σu_i²)`
pub fn rl2e(s: &PredictiveSummary, u: &[f64]) -> Result<f64> {
    check_len(s, u)?;
    let den: f64 = u.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(UqError::Config("relative error undefined for an all-zero test set".into()));
    }
    let num: f64 = s.mean.iter().zip(u).map(|(m, v)| (m - v).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Mean over test points of the Gaussian predictive density at `u_i`.
pub fn mpl(s: &PredictiveSummary, u: &[f64]) -> Result<f64> {
    check_len(s, u)?;
    let sum: f64 = (0..u.len())
        .map(|i| gaussian_log_density(u[i], s.mean[i], s.total[i]).exp())
        .sum();
    Ok(sum / u.len() as f64)
}

/// Probability integral transform `Φ((u_i − μ̄_i)/σ̄_i)`.
pub fn pit_values(s: &PredictiveSummary, u: &[f64]) -> Result<Vec<f64>> {
    check_len(s, u)?;
    Ok((0..u.len())
        .map(|i| {
            let sd = s.total[i].sqrt();
            if sd == 0.0 {
                if u[i] >= s.mean[i] {
                    1.0
                } else {
                    0.0
                }
            } else {
                normal_cdf((u[i] - s.mean[i]) / sd)
            }
        })
        .collect())
}

/// `(p_j, p̂_j)` with `p̂_j` the fraction of test points at or below the predictive `p_j`-quantile.
pub fn calibration_curve(s: &PredictiveSummary, u: &[f64], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_len(s, u)?;
    let z: Vec<f64> = levels.iter().map(|&p| normal_quantile(p)).collect();
    let n = u.len() as f64;
    Ok(levels
        .iter()
        .zip(&z)
        .map(|(&p, &zq)| {
            let hits = (0..u.len())
                .filter(|&i| u[i] <= s.mean[i] + s.total[i].sqrt() * zq)
                .count();
            (p, hits as f64 / n)
        })
        .collect())
}

pub fn rmsce_from_curve(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(UqError::Config("calibration error needs at least two levels".into()));
    }
    let ms = curve.iter().map(|(p, q)| (p - q).powi(2)).sum::<f64>() / curve.len() as f64;
    Ok(ms.sqrt())
}

pub fn rmsce(s: &PredictiveSummary, u: &[f64], n_p: usize) -> Result<f64> {
    rmsce_from_curve(&calibration_curve(s, u, &calibration_levels(n_p))?)
}

/// Mean width of the central Gaussian interval at level `p`.
pub fn piw(s: &PredictiveSummary, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(UqError::Config(format!("interval level must lie in (0, 1), got {p}")));
    }
    if s.is_empty() {
        return Err(UqError::Empty("predictions"));
    }
    let z = normal_quantile(0.5 + p / 2.0);
    Ok(s.total.iter().map(|v| 2.0 * z * v.sqrt()).sum::<f64>() / s.len() as f64)
}

/// Coefficient of variation of σ̄(x) (population standard deviation over mean).
pub fn sdcv(s: &PredictiveSummary) -> Result<f64> {
    if s.is_empty() {
        return Err(UqError::Empty("predictions"));
    }
    let sd = s.std_total();
    let n = sd.len() as f64;
    let mu = sd.iter().sum::<f64>() / n;
    if mu == 0.0 {
        return Err(UqError::Config("SDCV undefined for zero predictive spread".into()));
    }
    let var = sd.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mu)
}

/// Cosine similarity of two variance vectors.
pub fn nip_g(var_test: &[f64], var_gold: &[f64]) -> Result<f64> {
    if var_test.len() != var_gold.len() {
        return Err(shape_err("variance vectors", var_gold.len(), var_test.len()));
    }
    let dot: f64 = var_test.iter().zip(var_gold).map(|(a, b)| a * b).sum();
    let na: f64 = var_test.iter().map(|a| a * a).sum();
    let nb: f64 = var_gold.iter().map(|a| a * a).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(UqError::Config("inner product undefined for a zero variance vector".into()));
    }
    // sqrt(fl(s·s)) == s, so identical vectors give exactly 1
    Ok(dot / (na * nb).sqrt())
}

/// `KL(N(μ_g, σ_g²) ‖ N(μ_t, σ_t²))`
pub fn gaussian_kl(mu_g: f64, var_g: f64, mu_t: f64, var_t: f64) -> f64 {
    0.5 * ((var_t / var_g).ln() + (var_g + (mu_g - mu_t).powi(2)) / var_t - 1.0)
}

/// Mean over x of KL(gold ‖ test) between Gaussian predictives.
pub fn kl_g(test: &PredictiveSummary, gold: &PredictiveSummary) -> Result<f64> {
    if test.len() != gold.len() {
        return Err(shape_err("gold predictions", gold.len(), test.len()));
    }
    if test.is_empty() {
        return Err(UqError::Empty("predictions"));
    }
    let s: f64 = (0..test.len())
        .map(|i| gaussian_kl(gold.mean[i], gold.total[i], test.mean[i], test.total[i]))
        .sum();
    Ok(s / test.len() as f64)
}
