//! Target posteriors.
//!
//! A target exposes the unnormalized log-posterior `log L(θ) + log ρ₀(θ)`,
//! i.e. minus the potential `U(θ)`, together with its gradient and support.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Unnormalized posterior density over `R^d`.
pub trait TargetPosterior: Send + Sync {
    fn dim(&self) -> usize;

    /// `−U(θ)`; `−∞` outside the support.
    fn log_density(&self, theta: &[f64]) -> f64;

    /// `∇(−U)(θ)`, defined on the interior of the support.
    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64>;

    fn in_support(&self, theta: &[f64]) -> bool {
        self.log_density(theta) > f64::NEG_INFINITY
    }
}

/// `log Σ exp(x_i)`, returning `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Isotropic Gaussian scaled by a constant: `c · N(θ; μ, σ² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// `log c`; the evidence of this target.
    pub log_scale: f64,
}

impl GaussianTarget {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            sigma: 1.0,
            log_scale: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(Error::Config("gaussian dimension must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !self.log_scale.is_finite() {
            return Err(Error::Config("gaussian sigma must be positive and log_scale finite".into()));
        }
        Ok(())
    }
}

impl TargetPosterior for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.mean.len(), "gaussian target dimension");
        let var = self.sigma * self.sigma;
        let sq: f64 = theta.iter().zip(&self.mean).map(|(x, m)| (x - m) * (x - m)).sum();
        self.log_scale - 0.5 * sq / var - 0.5 * self.mean.len() as f64 * (LN_2PI + var.ln())
    }

    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        let var = self.sigma * self.sigma;
        theta.iter().zip(&self.mean).map(|(x, m)| (m - x) / var).collect()
    }
}

/// Mixture of unit-covariance Gaussians with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureTarget {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    centers: Vec<Vec<f64>>,
}

impl GaussianMixtureTarget {
    pub fn new(weights: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != centers.len() {
            return Err(Error::Config("mixture needs one center per weight".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = centers[0].len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::Config("mixture centers must share a positive dimension".into()));
        }
        if centers.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Config("mixture centers must be finite".into()));
        }
        Ok(Self {
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            centers,
        })
    }

    /// Two modes with weights 2/3 and 1/3 centered at (8, 3, 0, …) and
    /// (−2, 3, 0, …).
    pub fn two_mode(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("two-mode mixture needs dimension at least 2".into()));
        }
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        a[0] = 8.0;
        a[1] = 3.0;
        b[0] = -2.0;
        b[1] = 3.0;
        Self::new(vec![2.0 / 3.0, 1.0 / 3.0], vec![a, b])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn component_logs(&self, theta: &[f64]) -> Vec<f64> {
        let norm = 0.5 * theta.len() as f64 * LN_2PI;
        self.centers
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                let sq: f64 = theta.iter().zip(c).map(|(x, m)| (x - m) * (x - m)).sum();
                lw - 0.5 * sq - norm
            })
            .collect()
    }
}

impl TargetPosterior for GaussianMixtureTarget {
    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim(), "mixture target dimension");
        log_sum_exp(&self.component_logs(theta))
    }

    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        let logs = self.component_logs(theta);
        let total = log_sum_exp(&logs);
        let mut grad = vec![0.0; theta.len()];
        for (c, l) in self.centers.iter().zip(&logs) {
            let resp = (l - total).exp();
            for ((g, x), m) in grad.iter_mut().zip(theta).zip(c) {
                *g += resp * (m - x);
            }
        }
        grad
    }

    fn in_support(&self, _theta: &[f64]) -> bool {
        true
    }
}

/// Prior hyperparameters for the circular-orbit radial-velocity model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvPriorConfig {
    pub ln_period_min: f64,
    pub ln_period_max: f64,
    pub mu_k: f64,
    pub sigma_k: f64,
    pub sigma_v0: f64,
    pub sigma_obs: f64,
}

impl Default for RvPriorConfig {
    fn default() -> Self {
        Self {
            ln_period_min: 3.0,
            ln_period_max: 5.0,
            mu_k: 5.0,
            sigma_k: 3.0,
            sigma_v0: 1.0,
            sigma_obs: 1.8,
        }
    }
}

impl RvPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ln_period_min < self.ln_period_max) {
            return Err(Error::Config("ln_period_min must be below ln_period_max".into()));
        }
        for (name, v) in [
            ("sigma_k", self.sigma_k),
            ("sigma_v0", self.sigma_v0),
            ("sigma_obs", self.sigma_obs),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.mu_k.is_finite() {
            return Err(Error::Config("mu_k must be finite".into()));
        }
        Ok(())
    }
}

/// Parameter vector layout `(v0, K, φ0, ln P)`.
pub mod rv_index {
    pub const V0: usize = 0;
    pub const K: usize = 1;
    pub const PHASE: usize = 2;
    pub const LN_PERIOD: usize = 3;
}

/// `v(t) = v0 + K cos(2π t / P + φ0)` with `P = exp(ln P)`.
pub fn rv_model(t: f64, theta: &[f64]) -> f64 {
    let omega = 2.0 * PI * (-theta[rv_index::LN_PERIOD]).exp();
    theta[rv_index::V0] + theta[rv_index::K] * (omega * t + theta[rv_index::PHASE]).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RvObservation {
    pub t: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvDataset {
    pub observations: Vec<RvObservation>,
}

impl RvDataset {
    pub fn new(observations: Vec<RvObservation>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Config("dataset needs at least one observation".into()));
        }
        if observations.iter().any(|o| !o.t.is_finite() || !o.v.is_finite()) {
            return Err(Error::Config("observations must be finite".into()));
        }
        Ok(Self { observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// CSV with header `t,v` and 17 significant digits per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,v\n");
        for o in &self.observations {
            out.push_str(&format!("{:.16e},{:.16e}\n", o.t, o.v));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("t,v") => {}
            other => {
                return Err(Error::Config(format!("dataset header must be `t,v`, found {other:?}")));
            }
        }
        let mut observations = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = || -> Result<f64> {
                fields
                    .next()
                    .and_then(|f| f.trim().parse().ok())
                    .ok_or_else(|| Error::Config(format!("malformed dataset row {}", i + 2)))
            };
            observations.push(RvObservation { t: next()?, v: next()? });
        }
        Self::new(observations)
    }
}

/// Draws `v_k = v(t_k; truth) + N(0, σ²)` independently per time.
pub fn rv_generate_observations<R: Rng + ?Sized>(
    truth: &[f64],
    times: &[f64],
    sigma_obs: f64,
    rng: &mut R,
) -> Result<RvDataset> {
    if times.is_empty() {
        return Err(Error::Config("need at least one observation time".into()));
    }
    if !(sigma_obs >= 0.0) {
        return Err(Error::Config("sigma_obs must be nonnegative".into()));
    }
    let observations = times
        .iter()
        .map(|&t| {
            let noise = if sigma_obs > 0.0 {
                Normal::new(0.0, sigma_obs).expect("valid sigma").sample(rng)
            } else {
                0.0
            };
            RvObservation {
                t,
                v: rv_model(t, truth) + noise,
            }
        })
        .collect();
    RvDataset::new(observations)
}

/// Posterior over `(v0, K, φ0, ln P)` for noisy radial velocities.
///
/// Priors: `v0 ~ N(0, σ_v0²)`, `K ~ N(μ_K, σ_K²)`, `φ0 ~ U[0, 2π)`,
/// `ln P ~ U[ln P_min, ln P_max]`. The uniform priors contribute their exact
/// log-normalizers inside the support.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialVelocityTarget {
    dataset: RvDataset,
    prior: RvPriorConfig,
    log_norm_const: f64,
}

impl RadialVelocityTarget {
    pub fn new(dataset: RvDataset, prior: RvPriorConfig) -> Result<Self> {
        prior.validate()?;
        let n = dataset.len() as f64;
        let log_norm_const = -n * (prior.sigma_obs.ln() + 0.5 * LN_2PI)
            - (prior.sigma_v0.ln() + 0.5 * LN_2PI)
            - (prior.sigma_k.ln() + 0.5 * LN_2PI)
            - (2.0 * PI).ln()
            - (prior.ln_period_max - prior.ln_period_min).ln();
        Ok(Self {
            dataset,
            prior,
            log_norm_const,
        })
    }

    pub fn dataset(&self) -> &RvDataset {
        &self.dataset
    }

    pub fn prior(&self) -> &RvPriorConfig {
        &self.prior
    }

    /// Gaussian log-likelihood of the dataset, without priors.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let s2 = self.prior.sigma_obs * self.prior.sigma_obs;
        let n = self.dataset.len() as f64;
        let chi2: f64 = self
            .dataset
            .observations
            .iter()
            .map(|o| {
                let r = o.v - rv_model(o.t, theta);
                r * r
            })
            .sum();
        -0.5 * chi2 / s2 - n * (self.prior.sigma_obs.ln() + 0.5 * LN_2PI)
    }
}

impl TargetPosterior for RadialVelocityTarget {
    fn dim(&self) -> usize {
        4
    }

    fn in_support(&self, theta: &[f64]) -> bool {
        let phase = theta[rv_index::PHASE];
        let lnp = theta[rv_index::LN_PERIOD];
        theta.iter().all(|x| x.is_finite())
            && (0.0..2.0 * PI).contains(&phase)
            && lnp >= self.prior.ln_period_min
            && lnp <= self.prior.ln_period_max
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), 4, "radial velocity parameter dimension");
        if !self.in_support(theta) {
            return f64::NEG_INFINITY;
        }
        let p = &self.prior;
        let s2 = p.sigma_obs * p.sigma_obs;
        let chi2: f64 = self
            .dataset
            .observations
            .iter()
            .map(|o| {
                let r = o.v - rv_model(o.t, theta);
                r * r
            })
            .sum();
        let v0 = theta[rv_index::V0];
        let dk = theta[rv_index::K] - p.mu_k;
        self.log_norm_const
            - 0.5 * chi2 / s2
            - 0.5 * v0 * v0 / (p.sigma_v0 * p.sigma_v0)
            - 0.5 * dk * dk / (p.sigma_k * p.sigma_k)
    }

    fn grad_log_density(&self, theta: &[f64]) -> Vec<f64> {
        let p = &self.prior;
        let s2 = p.sigma_obs * p.sigma_obs;
        let k = theta[rv_index::K];
        let omega = 2.0 * PI * (-theta[rv_index::LN_PERIOD]).exp();
        let mut g = [0.0; 4];
        for o in &self.dataset.observations {
            let arg = omega * o.t + theta[rv_index::PHASE];
            let (sin, cos) = arg.sin_cos();
            let w = (o.v - (theta[rv_index::V0] + k * cos)) / s2;
            g[rv_index::V0] += w;
            g[rv_index::K] += w * cos;
            g[rv_index::PHASE] -= w * k * sin;
            // dΩ/d(ln P) = −Ω
            g[rv_index::LN_PERIOD] += w * k * sin * omega * o.t;
        }
        g[rv_index::V0] -= theta[rv_index::V0] / (p.sigma_v0 * p.sigma_v0);
        g[rv_index::K] -= (k - p.mu_k) / (p.sigma_k * p.sigma_k);
        g.to_vec()
    }
}

/// Closed-form MAP estimate of `(v0, K)` at fixed `(φ0, ln P)` under the
/// Gaussian likelihood and Gaussian priors; `None` for a singular system.
pub fn fit_linear_parameters(
    dataset: &RvDataset,
    prior: &RvPriorConfig,
    phase: f64,
    ln_period: f64,
) -> Option<(f64, f64)> {
    let s2 = prior.sigma_obs * prior.sigma_obs;
    let omega = 2.0 * PI * (-ln_period).exp();
    let (mut s1, mut sc, mut scc, mut sv, mut scv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for o in &dataset.observations {
        let c = (omega * o.t + phase).cos();
        s1 += 1.0;
        sc += c;
        scc += c * c;
        sv += o.v;
        scv += c * o.v;
    }
    let a11 = s1 / s2 + 1.0 / (prior.sigma_v0 * prior.sigma_v0);
    let a12 = sc / s2;
    let a22 = scc / s2 + 1.0 / (prior.sigma_k * prior.sigma_k);
    let b1 = sv / s2;
    let b2 = scv / s2 + prior.mu_k / (prior.sigma_k * prior.sigma_k);
    let det = a11 * a22 - a12 * a12;
    if !(det.abs() > 1e-12 * (a11 * a22).abs()) || !det.is_finite() {
        return None;
    }
    let v0 = (a22 * b1 - a12 * b2) / det;
    let k = (a11 * b2 - a12 * b1) / det;
    Some((v0, k))
}

/// Rejection initializer: draws `(φ0, ln P)` from their priors, fits the
/// linear parameters `(v0, K)` in closed form, and keeps each candidate with
/// probability `L(θ) / max L` over the batch.
pub fn joker_initialize<R: Rng + ?Sized>(
    dataset: &RvDataset,
    prior: &RvPriorConfig,
    num_prior_draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if num_prior_draws == 0 {
        return Err(Error::NoSamples);
    }
    prior.validate()?;
    let target = RadialVelocityTarget::new(dataset.clone(), *prior)?;
    let mut candidates = Vec::with_capacity(num_prior_draws);
    for _ in 0..num_prior_draws {
        let phase = rng.random_range(0.0..2.0 * PI);
        let ln_period = rng.random_range(prior.ln_period_min..prior.ln_period_max);
        if let Some((v0, k)) = fit_linear_parameters(dataset, prior, phase, ln_period) {
            let theta = vec![v0, k, phase, ln_period];
            let ll = target.log_likelihood(&theta);
            candidates.push((theta, ll));
        }
    }
    let max_ll = candidates
        .iter()
        .map(|(_, ll)| *ll)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut accepted = Vec::new();
    for (theta, ll) in candidates {
        let u: f64 = rng.random();
        if u.ln() < ll - max_ll {
            accepted.push(theta);
        }
    }
    if accepted.is_empty() {
        return Err(Error::NoJokerAcceptance {
            draws: num_prior_draws,
        });
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_mixture_equal_at_both_centers() {
        let a = vec![1.0, -2.0, 0.5];
        let b = vec![-3.0, 4.0, 1.5];
        let t = GaussianMixtureTarget::new(vec![0.5, 0.5], vec![a.clone(), b.clone()]).unwrap();
        assert_eq!(t.log_density(&a), t.log_density(&b));
    }

    #[test]
    fn two_mode_value_at_heavy_center() {
        let t = GaussianMixtureTarget::two_mode(10).unwrap();
        let a = t.centers()[0].clone();
        // ‖θ_A − θ_B‖² = 100
        let want = ((2.0 / 3.0) * (2.0 * PI).powi(-5) + (1.0 / 3.0) * (2.0 * PI).powi(-5) * (-50f64).exp()).ln();
        assert!((t.log_density(&a) - want).abs() < 1e-13);
    }

    #[test]
    fn mixture_far_tail_is_finite() {
        let t = GaussianMixtureTarget::two_mode(10).unwrap();
        let mut theta = vec![0.0; 10];
        theta[4] = 50.0;
        let v = t.log_density(&theta);
        assert!(v.is_finite());
        // Direct oracle with explicit log-sum-exp over the two components.
        let la = (2.0f64 / 3.0).ln() - 0.5 * (64.0 + 9.0 + 2500.0) - 5.0 * (2.0 * PI).ln();
        let lb = (1.0f64 / 3.0).ln() - 0.5 * (4.0 + 9.0 + 2500.0) - 5.0 * (2.0 * PI).ln();
        let m = la.max(lb);
        let want = m + ((la - m).exp() + (lb - m).exp()).ln();
        assert!((v - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixtureTarget::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(GaussianMixtureTarget::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]]).is_err());
        assert!(GaussianMixtureTarget::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]]).is_err());
    }

    fn truth() -> Vec<f64> {
        vec![0.0, 5.0, 1.0, 4.0]
    }

    #[test]
    fn rv_model_basics() {
        let mut th = truth();
        th[1] = 0.0;
        assert_eq!(rv_model(17.0, &th), th[0]);
        let th = vec![0.3, 2.0, 0.7, 3.5];
        assert_eq!(rv_model(0.0, &th), 0.3 + 2.0 * 0.7f64.cos());
    }

    #[test]
    fn rv_model_is_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let th = vec![
                rng.random_range(-3.0..3.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(3.0..5.0),
            ];
            let t = rng.random_range(0.0..300.0);
            let p = th[3].exp();
            assert!((rv_model(t + p, &th) - rv_model(t, &th)).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_observations_on_curve() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let times = [1.0, 10.0, 55.0];
        let d = rv_generate_observations(&truth(), &times, 0.0, &mut rng).unwrap();
        for o in &d.observations {
            assert_eq!(o.v, rv_model(o.t, &truth()));
        }
        assert!(rv_generate_observations(&truth(), &[], 1.0, &mut rng).is_err());
    }

    #[test]
    fn generated_data_is_reproducible() {
        let times = [1.0, 2.0, 3.0];
        let a = rv_generate_observations(&truth(), &times, 1.8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = rv_generate_observations(&truth(), &times, 1.8, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_spread_matches_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let times = vec![42.0; 10_000];
        let d = rv_generate_observations(&truth(), &times, 1.8, &mut rng).unwrap();
        let m = rv_model(42.0, &truth());
        let res: Vec<f64> = d.observations.iter().map(|o| o.v - m).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64;
        assert!((var.sqrt() / 1.8 - 1.0).abs() < 0.03);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let d = rv_generate_observations(&truth(), &[0.1, 7.3, 123.456], 1.8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let text = d.to_csv();
        assert!(text.starts_with("t,v\n"));
        assert_eq!(RvDataset::from_csv(&text).unwrap(), d);
        assert!(RvDataset::from_csv("x,y\n1,2\n").is_err());
    }

    #[test]
    fn rv_support_boundaries() {
        let d = rv_generate_observations(&truth(), &[1.0, 2.0], 1.8, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let t = RadialVelocityTarget::new(d, RvPriorConfig::default()).unwrap();
        assert!(t.in_support(&truth()));
        for bad in [
            vec![0.0, 5.0, -0.01, 4.0],
            vec![0.0, 5.0, 2.0 * PI, 4.0],
            vec![0.0, 5.0, 1.0, 2.99],
            vec![0.0, 5.0, 1.0, 5.01],
        ] {
            assert!(!t.in_support(&bad));
            assert_eq!(t.log_density(&bad), f64::NEG_INFINITY);
        }
        assert!(t.log_density(&[0.0, 5.0, 0.0, 3.0]).is_finite());
    }

    #[test]
    fn rv_density_includes_prior_constants() {
        // With a single observation exactly on the model the density is the
        // product of normalized factors.
        let th = truth();
        let d = RvDataset::new(vec![RvObservation { t: 3.0, v: rv_model(3.0, &th) }]).unwrap();
        let p = RvPriorConfig::default();
        let t = RadialVelocityTarget::new(d, p).unwrap();
        let want = -(p.sigma_obs * (2.0 * PI).sqrt()).ln()
            - (p.sigma_v0 * (2.0 * PI).sqrt()).ln()
            - (p.sigma_k * (2.0 * PI).sqrt()).ln()
            - (2.0 * PI).ln()
            - 2f64.ln();
        assert!((t.log_density(&th) - want).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_truth_on_noiseless_data() {
        let th = vec![0.7, 4.2, 1.3, 3.9];
        let times: Vec<f64> = (0..6).map(|i| 13.0 * i as f64 + 2.0).collect();
        let d = rv_generate_observations(&th, &times, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let flat = RvPriorConfig {
            sigma_k: 1e6,
            sigma_v0: 1e6,
            ..RvPriorConfig::default()
        };
        let (v0, k) = fit_linear_parameters(&d, &flat, th[2], th[3]).unwrap();
        assert!((v0 - th[0]).abs() < 1e-8 && (k - th[1]).abs() < 1e-8);
    }

    #[test]
    fn joker_never_accepts_more_than_drawn() {
        let times: Vec<f64> = (0..6).map(|i| 40.0 * i as f64 + 5.0).collect();
        let d = rv_generate_observations(&truth(), &times, 1.8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for m in [1, 5, 50] {
            let acc = joker_initialize(&d, &RvPriorConfig::default(), m, &mut ChaCha8Rng::seed_from_u64(m as u64)).unwrap();
            assert!(!acc.is_empty() && acc.len() <= m);
        }
        assert!(matches!(
            joker_initialize(&d, &RvPriorConfig::default(), 0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
