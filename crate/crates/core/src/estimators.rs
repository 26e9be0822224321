//! Importance-sampling estimators built on a trained flow.
//!
//! With flow samples `θ_i ~ ρ̂` and unnormalized weights
//! `ŵ_i = L(θ_i) ρ₀(θ_i) / ρ̂(θ_i)`, the evidence is `Z ≈ (1/n) Σ ŵ_i`.
//! Everything is done on log weights; sums use a fixed pairwise reduction so
//! results do not depend on evaluation order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::RealNvpFlow;
use crate::targets::TargetPosterior;

const CHUNK: usize = 4096;
/// Coefficient of variation below which the weights count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub theta: Vec<f64>,
    /// `log ŵ`; `−∞` outside the target support.
    pub log_weight: f64,
}

/// Euclidean ball `{θ : ‖θ − center‖ ≤ radius}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeIndicator {
    pub label: String,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ModeIndicator {
    pub fn new(label: impl Into<String>, center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config("mode radius must be positive".into()));
        }
        Ok(Self {
            label: label.into(),
            center,
            radius,
        })
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        let sq: f64 = theta
            .iter()
            .zip(&self.center)
            .map(|(x, c)| (x - c) * (x - c))
            .sum();
        sq <= self.radius * self.radius
    }
}

/// Summation by recursive halving with a fixed leaf size.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `log Σ exp(x_i)` with the pairwise reduction.
pub fn log_sum_exp_pairwise(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

/// Draws `count` flow samples and attaches their log importance weights.
pub fn importance_weights<R: Rng + ?Sized>(
    flow: &RealNvpFlow,
    target: &dyn TargetPosterior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<WeightedSample>> {
    if count == 0 {
        return Err(Error::NoSamples);
    }
    if flow.dim() != target.dim() {
        return Err(Error::Shape {
            context: "importance weights",
            expected: target.dim(),
            got: flow.dim(),
        });
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let batch = CHUNK.min(count - out.len());
        for (i, s) in flow.sample(rng, batch)?.into_iter().enumerate() {
            if !s.log_density.is_finite() {
                return Err(Error::NonFiniteFlowDensity { walker: out.len() + i });
            }
            let log_post = target.log_density(&s.theta);
            let log_weight = if log_post == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_post - s.log_density
            };
            out.push(WeightedSample {
                theta: s.theta,
                log_weight,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_z_hat: f64,
    pub z_hat: f64,
    /// Empirical standard deviation of the weights over `√n_eff`; exactly 0
    /// when the weights agree to within rounding.
    pub std_error: f64,
    pub log_std_error: f64,
    pub n_eff: f64,
    pub n: usize,
}

pub fn evidence_estimate(samples: &[WeightedSample]) -> Result<EvidenceEstimate> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    let logs: Vec<f64> = samples.iter().map(|s| s.log_weight).collect();
    if logs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NonFiniteInput("evidence estimate"));
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::NoFiniteWeights);
    }
    let n = samples.len();
    let scaled: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum = pairwise_sum(&scaled);
    let sum_sq = pairwise_sum(&scaled.iter().map(|w| w * w).collect::<Vec<_>>());
    let n_eff = sum * sum / sum_sq;
    let mean = sum / n as f64;
    let mut var = pairwise_sum(&scaled.iter().map(|w| (w - mean) * (w - mean)).collect::<Vec<_>>()) / n as f64;
    // Log weights are differences of rounded log densities, so an exact
    // proposal still scatters them by a few ulps. A spread that small is
    // rounding, not sampling variance.
    if var.sqrt() <= TIE_TOLERANCE * mean {
        var = 0.0;
    }
    let log_z_hat = max + sum.ln() - (n as f64).ln();
    let log_std_error = max + 0.5 * var.ln() - 0.5 * n_eff.ln();
    Ok(EvidenceEstimate {
        log_z_hat,
        z_hat: log_z_hat.exp(),
        std_error: log_std_error.exp(),
        log_std_error,
        n_eff,
        n,
    })
}

/// `log Σ_{A} ŵ_i`, the unnormalized log mass of samples inside `mode`.
pub fn mode_log_mass(samples: &[WeightedSample], mode: &ModeIndicator) -> Result<f64> {
    let logs: Vec<f64> = samples
        .iter()
        .filter(|s| s.log_weight.is_finite() && mode.contains(&s.theta))
        .map(|s| s.log_weight)
        .collect();
    if logs.is_empty() {
        return Err(Error::EmptyMode(mode.label.clone()));
    }
    Ok(log_sum_exp_pairwise(&logs))
}

/// `log Z_A − log Z_B` estimated from the same weighted samples.
pub fn log_evidence_difference(
    samples: &[WeightedSample],
    mode_a: &ModeIndicator,
    mode_b: &ModeIndicator,
) -> Result<f64> {
    Ok(mode_log_mass(samples, mode_a)? - mode_log_mass(samples, mode_b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMass {
    pub label: String,
    pub log_mass: f64,
}

/// Serializable summary of an evidence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub log_z_hat: f64,
    pub std_error: f64,
    pub n_eff: f64,
    pub n: usize,
    pub mode_log_masses: Vec<ModeMass>,
    pub log_evidence_difference: Option<f64>,
}

/// Evidence plus per-mode masses; the difference is reported for the first
/// two modes when both are populated.
pub fn evidence_report(samples: &[WeightedSample], modes: &[ModeIndicator]) -> Result<EvidenceReport> {
    let est = evidence_estimate(samples)?;
    let mut mode_log_masses = Vec::with_capacity(modes.len());
    for m in modes {
        let log_mass = match mode_log_mass(samples, m) {
            Ok(v) => v,
            Err(Error::EmptyMode(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        mode_log_masses.push(ModeMass {
            label: m.label.clone(),
            log_mass,
        });
    }
    let log_evidence_difference = match mode_log_masses.as_slice() {
        [a, b, ..] if a.log_mass.is_finite() && b.log_mass.is_finite() => Some(a.log_mass - b.log_mass),
        _ => None,
    };
    Ok(EvidenceReport {
        log_z_hat: est.log_z_hat,
        std_error: est.std_error,
        n_eff: est.n_eff,
        n: est.n,
        mode_log_masses,
        log_evidence_difference,
    })
}
