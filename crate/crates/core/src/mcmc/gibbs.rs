//! Conjugate inverse-gamma updates of the prior and noise variances.

use crate::error::{Result, UqError};
use crate::probmodel::HyperTarget;
use rand::RngCore;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    /// Shape of the hyperprior on σ_θ².
    pub h1: f64,
    /// Scale of the hyperprior on σ_θ².
    pub h2: f64,
    /// Shape of the hyperprior on σ_u².
    pub h3: f64,
    /// Scale of the hyperprior on σ_u².
    pub h4: f64,
    pub update_prior: bool,
    pub update_noise: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            h1: 2.0,
            h2: 0.25,
            h3: 2.0,
            h4: 10.0,
            update_prior: true,
            update_noise: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.h1, self.h2, self.h3, self.h4].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(UqError::Config(format!("hyperprior constants must be positive: {self:?}")))
        }
    }
}

/// Draws `1/G` with `G ~ Gamma(shape, scale = 1/(1/h + ½·ss))`.
fn inverse_gamma_draw(shape: f64, h: f64, half_ss: f64, rng: &mut dyn RngCore) -> f64 {
    let scale = 1.0 / (1.0 / h + half_ss);
    let g = Gamma::new(shape, scale).expect("gamma parameters are positive");
    1.0 / g.sample(rng)
}

/// One conjugate draw of σ_θ² given θ: shape `h1 + K/2`, scale `(1/h2 + ½Σθ²)⁻¹`.
pub fn gibbs_update_sigma_theta(theta: &[f64], h1: f64, h2: f64, rng: &mut dyn RngCore) -> f64 {
    let ss: f64 = theta.iter().map(|v| v * v).sum();
    inverse_gamma_draw(h1 + 0.5 * theta.len() as f64, h2, 0.5 * ss, rng)
}

/// One conjugate draw of σ_u² from the residual sum of squares over `n` points.
pub fn gibbs_update_sigma_u(residual_ss: f64, n: usize, h3: f64, h4: f64, rng: &mut dyn RngCore) -> f64 {
    inverse_gamma_draw(h3 + 0.5 * n as f64, h4, 0.5 * residual_ss, rng)
}

pub struct GibbsSweep {
    cfg: GibbsConfig,
}

impl GibbsSweep {
    pub fn new(cfg: GibbsConfig) -> Self {
        Self { cfg }
    }

    /// Resamples the configured hyperparameters in place and returns the
    /// current noise variance (NaN when it is not sampled).
    pub fn update<T: HyperTarget>(&mut self, target: &mut T, theta: &[f64], rng: &mut dyn RngCore) -> Result<f64> {
        if self.cfg.update_prior {
            let v = gibbs_update_sigma_theta(theta, self.cfg.h1, self.cfg.h2, rng);
            target.set_prior_variance(v);
        }
        if self.cfg.update_noise {
            let (ss, n) = target.residual_sum_sq(theta)?;
            let v = gibbs_update_sigma_u(ss, n, self.cfg.h3, self.cfg.h4, rng);
            target.set_noise_variance(v);
            return Ok(v);
        }
        Ok(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn mean_of(n: usize, mut f: impl FnMut() -> f64) -> f64 {
        (0..n).map(|_| f()).sum::<f64>() / n as f64
    }

    /// Mean of `1/G`, `G ~ Gamma(a, scale s)`.
    fn inv_gamma_mean(a: f64, s: f64) -> f64 {
        1.0 / (s * (a - 1.0))
    }

    #[test]
    fn degenerate_theta_recovers_hyperprior() {
        let mut rng = stream(1, Purpose::Sampler);
        let (h1, h2) = (3.0, 0.5);
        let m = mean_of(1_000_000, || gibbs_update_sigma_theta(&[], h1, h2, &mut rng));
        let want = inv_gamma_mean(h1, h2);
        assert!((m - want).abs() / want < 0.02, "{m} vs {want}");
        let m = mean_of(1_000_000, || gibbs_update_sigma_u(0.0, 0, h1, h2, &mut rng));
        assert!((m - want).abs() / want < 0.02, "{m} vs {want}");
    }

    #[test]
    fn conjugate_posterior_mean() {
        let mut rng = stream(2, Purpose::Sampler);
        // Σθ² = 2, K = 4
        let theta = [1.0, -1.0, 0.0, 0.0];
        let (h1, h2) = (2.0, 0.25);
        let m = mean_of(1_000_000, || gibbs_update_sigma_theta(&theta, h1, h2, &mut rng));
        let want = (1.0 / h2 + 0.5 * 2.0) / (h1 + 2.0 - 1.0);
        assert!((want - 5.0 / 3.0).abs() < 1e-12);
        assert!((m - want).abs() / want < 0.02, "{m} vs {want}");
    }

    #[test]
    fn larger_norm_increases_mean() {
        let draw = |scale: f64| {
            let mut rng = stream(5, Purpose::Sampler);
            mean_of(20_000, || gibbs_update_sigma_theta(&[scale, scale], 2.0, 0.25, &mut rng))
        };
        assert!(draw(2.0) > draw(1.0));
    }

    #[test]
    fn zero_residuals_shrink_noise() {
        let mut rng = stream(3, Purpose::Sampler);
        let (n, h3, h4) = (10_000, 2.0, 10.0);
        let m = mean_of(10_000, || gibbs_update_sigma_u(0.0, n, h3, h4, &mut rng));
        assert!(m < 10.0 / h4 / (n as f64 / 2.0), "{m}");
    }

    #[test]
    fn noise_scale_recovered_from_residuals() {
        let mut rng = stream(4, Purpose::Noise);
        let n = 10_000;
        let ss: f64 = (0..n)
            .map(|_| {
                let e: f64 = 0.05 * rng.sample::<f64, _>(StandardNormal);
                e * e
            })
            .sum();
        let m = mean_of(10_000, || gibbs_update_sigma_u(ss, n, 2.0, 10.0, &mut rng).sqrt());
        assert!((m - 0.05).abs() / 0.05 < 0.05, "{m}");
    }
}
