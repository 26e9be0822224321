//! Concurrent sampling and flow training.
//!
//! Sampling step `j` is a flow resampling sweep when `j mod (k_lang + 1) == 0`
//! and a Langevin sweep otherwise. Every step pushes the new ensemble into a
//! FIFO buffer of recent snapshots. Iteration `k` runs `steps_per_update`
//! sampling steps and then one Adam step on the negative mean flow
//! log-density over the buffer. With the default of one step per update,
//! iterations and sampling steps coincide.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, LossDiagnostics, Result};
use crate::flow::RealNvpFlow;
use crate::linalg::Matrix;
use crate::nn::{Adam, AdamConfig};
use crate::samplers::{langevin_step, nf_mh_step, KernelStats, LangevinMode, SweepStats, WalkerEnsemble};
use crate::targets::TargetPosterior;

const RECENT_LOSSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub k_max: usize,
    pub k_lang: usize,
    pub learning_rate: f64,
    pub n_walkers: usize,
    pub buffer_len: usize,
    /// Sampling steps between consecutive Adam updates.
    pub steps_per_update: usize,
    pub langevin_mode: LangevinMode,
    pub master_seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.005,
            k_max: 1000,
            k_lang: 1,
            learning_rate: 0.005,
            n_walkers: 100,
            buffer_len: 1,
            steps_per_update: 1,
            langevin_mode: LangevinMode::Ula,
            master_seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.n_walkers == 0 {
            return Err(Error::Config("n_walkers must be at least 1".into()));
        }
        if self.buffer_len == 0 {
            return Err(Error::Config("buffer_len must be at least 1".into()));
        }
        if self.steps_per_update == 0 {
            return Err(Error::Config("steps_per_update must be at least 1".into()));
        }
        self.adam.validate()
    }

    /// Whether global sampling step `j` is a resampling sweep.
    pub fn is_nf_iteration(&self, j: usize) -> bool {
        j % (self.k_lang + 1) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub loss: f64,
    /// Pooled over the resampling sweeps of this iteration, if any.
    pub nf_acceptance_rate: Option<f64>,
    /// Pooled over the Langevin sweeps of this iteration, if any.
    pub langevin_acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<IterationRecord>,
    pub stats: KernelStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRate {
    pub rate: f64,
    /// Number of resampling iterations averaged.
    pub used: usize,
    /// True when fewer than the requested number were available.
    pub partial: bool,
}

/// Mean resampling acceptance over the last `window` resampling iterations.
/// With none available the rate is defined as 0 and flagged partial.
pub fn acceptance_rate_window(metrics: &RunMetrics, window: usize) -> Result<WindowRate> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let rates: Vec<f64> = metrics
        .records
        .iter()
        .rev()
        .filter_map(|r| r.nf_acceptance_rate)
        .take(window)
        .collect();
    let used = rates.len();
    let rate = if used == 0 {
        0.0
    } else {
        rates.iter().sum::<f64>() / used as f64
    };
    Ok(WindowRate {
        rate,
        used,
        partial: used < window,
    })
}

pub struct TrainOutput {
    /// Walker positions after each iteration, `history[k][walker]`.
    pub history: Vec<Vec<Vec<f64>>>,
    pub final_positions: Vec<Vec<f64>>,
    pub flow: RealNvpFlow,
    pub metrics: RunMetrics,
}

/// Runs training without a per-iteration callback.
pub fn sample_train(
    config: &TrainConfig,
    target: &dyn TargetPosterior,
    flow: RealNvpFlow,
    initial_positions: Vec<Vec<f64>>,
) -> Result<TrainOutput> {
    sample_train_with_observer(config, target, flow, initial_positions, |_, _, _| Ok(()))
}

/// Runs training, calling `observer(k, flow, ensemble)` after the update of
/// every iteration `k`.
pub fn sample_train_with_observer<F>(
    config: &TrainConfig,
    target: &dyn TargetPosterior,
    mut flow: RealNvpFlow,
    initial_positions: Vec<Vec<f64>>,
    mut observer: F,
) -> Result<TrainOutput>
where
    F: FnMut(usize, &RealNvpFlow, &WalkerEnsemble) -> Result<()>,
{
    config.validate()?;
    if initial_positions.len() != config.n_walkers {
        return Err(Error::Config(format!(
            "expected {} initial positions, got {}",
            config.n_walkers,
            initial_positions.len()
        )));
    }
    if flow.dim() != target.dim() {
        return Err(Error::Shape {
            context: "flow and target dimension",
            expected: target.dim(),
            got: flow.dim(),
        });
    }
    let mut ensemble = WalkerEnsemble::new(target, initial_positions, config.master_seed)?;
    let mut adam = Adam::new(config.adam)?;
    let mut buffer: VecDeque<Matrix> = VecDeque::with_capacity(config.buffer_len);
    let mut metrics = RunMetrics::default();
    let mut history = Vec::with_capacity(config.k_max);

    for k in 0..config.k_max {
        let mut nf = SweepStats::default();
        let mut lang = SweepStats::default();
        for j in k * config.steps_per_update..(k + 1) * config.steps_per_update {
            if config.is_nf_iteration(j) {
                let s = nf_mh_step(&mut ensemble, target, &flow)?;
                nf.proposed += s.proposed;
                nf.accepted += s.accepted;
            } else {
                let s = langevin_step(&mut ensemble, target, config.tau, config.langevin_mode)?;
                lang.proposed += s.proposed;
                lang.accepted += s.accepted;
            }
            if buffer.len() == config.buffer_len {
                buffer.pop_front();
            }
            buffer.push_back(ensemble.to_matrix());
        }
        metrics.stats.nf_proposed += nf.proposed as u64;
        metrics.stats.nf_accepted += nf.accepted as u64;
        metrics.stats.langevin_proposed += lang.proposed as u64;
        metrics.stats.langevin_accepted += lang.accepted as u64;
        let mut record = IterationRecord {
            iter: k,
            loss: f64::NAN,
            nf_acceptance_rate: (nf.proposed > 0).then(|| nf.rate()),
            langevin_acceptance_rate: (lang.proposed > 0).then(|| lang.rate()),
        };

        let batch = concat_rows(&buffer);
        // Walker positions are always finite, so a non-finite intermediate
        // inside the flow means the loss itself has overflowed.
        let computed = match flow.loss_and_gradients(&batch) {
            Ok((loss, grads)) if loss.is_finite() => Ok((loss, grads)),
            Ok((loss, _)) => Err(loss),
            Err(Error::NonFiniteInput(_)) => Err(f64::NAN),
            Err(e) => return Err(e),
        };
        let (loss, grads) = match computed {
            Ok(v) => v,
            Err(loss) => {
                let recent_losses = metrics
                    .records
                    .iter()
                    .rev()
                    .take(RECENT_LOSSES)
                    .rev()
                    .map(|r| r.loss)
                    .collect();
                return Err(Error::NonFiniteLoss(Box::new(LossDiagnostics {
                    iter: k,
                    loss,
                    positions: ensemble.positions().to_vec(),
                    log_posteriors: ensemble.log_posteriors().to_vec(),
                    recent_losses,
                })));
            }
        };
        adam.step(&mut flow, &grads, config.learning_rate)?;
        record.loss = loss;
        metrics.records.push(record);
        history.push(ensemble.positions().to_vec());
        observer(k, &flow, &ensemble)?;
    }

    Ok(TrainOutput {
        history,
        final_positions: ensemble.positions().to_vec(),
        flow,
        metrics,
    })
}

fn concat_rows(blocks: &VecDeque<Matrix>) -> Matrix {
    let cols = blocks.front().map_or(0, |m| m.cols);
    let rows = blocks.iter().map(|m| m.rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for m in blocks {
        data.extend_from_slice(&m.data);
    }
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics_from(rates: &[Option<f64>]) -> RunMetrics {
        RunMetrics {
            records: rates
                .iter()
                .enumerate()
                .map(|(iter, &r)| IterationRecord {
                    iter,
                    loss: 0.0,
                    nf_acceptance_rate: r,
                    langevin_acceptance_rate: None,
                })
                .collect(),
            stats: KernelStats::default(),
        }
    }

    #[test]
    fn window_all_accepted() {
        let w = acceptance_rate_window(&metrics_from(&[Some(1.0); 5]), 3).unwrap();
        assert_eq!((w.rate, w.used, w.partial), (1.0, 3, false));
    }

    #[test]
    fn window_empty_is_partial_zero() {
        let w = acceptance_rate_window(&metrics_from(&[None, None]), 4).unwrap();
        assert_eq!((w.rate, w.used, w.partial), (0.0, 0, true));
    }

    #[test]
    fn window_alternating() {
        let m = metrics_from(&[Some(1.0), None, Some(0.0), None, Some(1.0), None, Some(0.0)]);
        assert_eq!(acceptance_rate_window(&m, 4).unwrap().rate, 0.5);
        let w = acceptance_rate_window(&m, 10).unwrap();
        assert!(w.partial && w.used == 4);
        assert!(acceptance_rate_window(&m, 0).is_err());
    }

    #[test]
    fn schedule_has_one_resampling_sweep_per_period() {
        for k_lang in 0..4 {
            let c = TrainConfig {
                k_lang,
                ..TrainConfig::default()
            };
            for start in 0..20 {
                let n = (start..start + k_lang + 1).filter(|&k| c.is_nf_iteration(k)).count();
                assert_eq!(n, 1);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for c in [
            TrainConfig { tau: 0.0, ..TrainConfig::default() },
            TrainConfig { buffer_len: 0, ..TrainConfig::default() },
            TrainConfig { n_walkers: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { steps_per_update: 0, ..TrainConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
