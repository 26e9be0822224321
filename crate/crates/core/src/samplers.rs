//! The two MCMC kernels acting on an ensemble of walkers: a Langevin step
//! (unadjusted or Metropolis-adjusted) and an independence Metropolis-Hastings
//! step that proposes from the flow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::RealNvpFlow;
use crate::linalg::Matrix;
use crate::rng::{standard_normal_vec, stream, StreamDomain, StreamRng};
use crate::targets::TargetPosterior;

/// Walker positions with cached log-posteriors and one random stream each.
#[derive(Debug, Clone)]
pub struct WalkerEnsemble {
    positions: Vec<Vec<f64>>,
    log_post: Vec<f64>,
    rngs: Vec<StreamRng>,
}

impl WalkerEnsemble {
    /// Walker `i` draws from stream `i` of the walker domain of `master_seed`.
    pub fn new(target: &dyn TargetPosterior, positions: Vec<Vec<f64>>, master_seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Config("ensemble needs at least one walker".into()));
        }
        let mut log_post = Vec::with_capacity(positions.len());
        for (walker, p) in positions.iter().enumerate() {
            if p.len() != target.dim() {
                return Err(Error::Shape {
                    context: "walker position",
                    expected: target.dim(),
                    got: p.len(),
                });
            }
            let lp = if target.in_support(p) {
                target.log_density(p)
            } else {
                f64::NEG_INFINITY
            };
            if !lp.is_finite() {
                return Err(Error::OutOfSupport { walker });
            }
            log_post.push(lp);
        }
        let rngs = (0..positions.len())
            .map(|i| stream(master_seed, StreamDomain::Walker, i as u64))
            .collect();
        Ok(Self {
            positions,
            log_post,
            rngs,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn log_posteriors(&self) -> &[f64] {
        &self.log_post
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_rows(&self.positions)
    }
}

/// Running proposal and acceptance counts for both kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelStats {
    pub langevin_proposed: u64,
    pub langevin_accepted: u64,
    pub nf_proposed: u64,
    pub nf_accepted: u64,
}

/// Outcome of one sweep over the ensemble.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub proposed: usize,
    pub accepted: usize,
}

impl SweepStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LangevinMode {
    #[serde(rename = "ULA", alias = "ula")]
    Ula,
    #[serde(rename = "MALA", alias = "mala")]
    Mala,
}

/// `x + τ ∇log π(x) + √(2τ) η`.
pub fn langevin_proposal(x: &[f64], grad: &[f64], tau: f64, eta: &[f64]) -> Vec<f64> {
    let noise = (2.0 * tau).sqrt();
    x.iter()
        .zip(grad)
        .zip(eta)
        .map(|((xi, gi), ei)| xi + tau * gi + noise * ei)
        .collect()
}

/// `log q(to | from)` for the Langevin proposal, up to a constant shared by
/// both directions.
fn log_proposal_kernel(to: &[f64], from: &[f64], grad_from: &[f64], tau: f64) -> f64 {
    let sq: f64 = to
        .iter()
        .zip(from)
        .zip(grad_from)
        .map(|((t, f), g)| {
            let r = t - f - tau * g;
            r * r
        })
        .sum();
    -sq / (4.0 * tau)
}

/// Log of the MALA acceptance probability for a move `x → y`.
#[allow(clippy::too_many_arguments)]
pub fn mala_log_acceptance(
    x: &[f64],
    log_post_x: f64,
    grad_x: &[f64],
    y: &[f64],
    log_post_y: f64,
    grad_y: &[f64],
    tau: f64,
) -> f64 {
    if log_post_y == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_r = log_post_y - log_post_x + log_proposal_kernel(x, y, grad_y, tau)
        - log_proposal_kernel(y, x, grad_x, tau);
    if log_r.is_nan() {
        f64::NEG_INFINITY
    } else {
        log_r.min(0.0)
    }
}

/// One Langevin proposal per walker. ULA keeps every in-support proposal;
/// MALA applies the Metropolis correction. Proposals leaving the support are
/// rejected in both modes.
pub fn langevin_step(
    ensemble: &mut WalkerEnsemble,
    target: &dyn TargetPosterior,
    tau: f64,
    mode: LangevinMode,
) -> Result<SweepStats> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config("Langevin step size must be positive".into()));
    }
    let mut stats = SweepStats::default();
    for walker in 0..ensemble.len() {
        let x = &ensemble.positions[walker];
        let grad = target.grad_log_density(x);
        if grad.len() != x.len() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLangevinGradient { walker });
        }
        let rng = &mut ensemble.rngs[walker];
        let eta = standard_normal_vec(rng, x.len());
        let y = langevin_proposal(x, &grad, tau, &eta);
        stats.proposed += 1;
        let log_post_y = if target.in_support(&y) {
            target.log_density(&y)
        } else {
            f64::NEG_INFINITY
        };
        let accept = match mode {
            LangevinMode::Ula => log_post_y.is_finite(),
            LangevinMode::Mala => {
                let u: f64 = rng.random();
                if !log_post_y.is_finite() {
                    false
                } else {
                    let grad_y = target.grad_log_density(&y);
                    let log_a = mala_log_acceptance(x, ensemble.log_post[walker], &grad, &y, log_post_y, &grad_y, tau);
                    u.ln() < log_a
                }
            }
        };
        if accept {
            ensemble.positions[walker] = y;
            ensemble.log_post[walker] = log_post_y;
            stats.accepted += 1;
        }
    }
    Ok(stats)
}

/// `log min{1, ρ̂(θ) π(θ') / (π(θ) ρ̂(θ'))}`; `−∞` when the proposal has zero
/// posterior density.
pub fn nf_log_acceptance(log_rho_hat_cur: f64, log_post_cur: f64, log_rho_hat_prop: f64, log_post_prop: f64) -> f64 {
    if log_post_prop == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let log_r = (log_rho_hat_cur + log_post_prop) - (log_post_cur + log_rho_hat_prop);
    if log_r.is_nan() {
        f64::NEG_INFINITY
    } else {
        log_r.min(0.0)
    }
}

pub fn nf_acceptance(log_rho_hat_cur: f64, log_post_cur: f64, log_rho_hat_prop: f64, log_post_prop: f64) -> f64 {
    nf_log_acceptance(log_rho_hat_cur, log_post_cur, log_rho_hat_prop, log_post_prop).exp()
}

/// Independence Metropolis-Hastings sweep: every walker proposes a fresh
/// flow sample.
pub fn nf_mh_step(
    ensemble: &mut WalkerEnsemble,
    target: &dyn TargetPosterior,
    flow: &RealNvpFlow,
) -> Result<SweepStats> {
    let n = ensemble.len();
    let d = ensemble.dim();
    if flow.dim() != d {
        return Err(Error::Shape {
            context: "flow proposal",
            expected: d,
            got: flow.dim(),
        });
    }
    let current = flow.log_density_batch(&ensemble.to_matrix())?;
    if let Some(walker) = current.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFlowDensity { walker });
    }
    let mut base = Matrix::zeros(n, d);
    let mut uniforms = Vec::with_capacity(n);
    for (walker, rng) in ensemble.rngs.iter_mut().enumerate() {
        base.row_mut(walker).copy_from_slice(&standard_normal_vec(rng, d));
        uniforms.push(rng.random::<f64>());
    }
    let (proposals, proposal_density) = flow.push_forward(&base)?;
    let mut stats = SweepStats::default();
    for walker in 0..n {
        if !proposal_density[walker].is_finite() {
            return Err(Error::NonFiniteFlowDensity { walker });
        }
        let theta = proposals.row(walker);
        stats.proposed += 1;
        let log_post = if target.in_support(theta) {
            target.log_density(theta)
        } else {
            f64::NEG_INFINITY
        };
        let log_a = nf_log_acceptance(current[walker], ensemble.log_post[walker], proposal_density[walker], log_post);
        if uniforms[walker].ln() < log_a {
            ensemble.positions[walker] = theta.to_vec();
            ensemble.log_post[walker] = log_post;
            stats.accepted += 1;
        }
    }
    Ok(stats)
}
