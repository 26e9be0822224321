//! Target construction and walker initialization for the built-in
//! experiments.
//!
//! Sampling and training happen in "working" coordinates. These equal the
//! original parameters except for whitened radial-velocity runs. Everything
//! reported to the user is mapped back to original coordinates.

use flowmc::estimators::{evidence_report, importance_weights, EvidenceReport, ModeIndicator, WeightedSample};
use flowmc::flow::RealNvpFlow;
use flowmc::rng::{standard_normal_vec, stream, StreamDomain};
use flowmc::targets::{
    joker_initialize, rv_generate_observations, GaussianMixtureTarget, GaussianTarget, RadialVelocityTarget,
    RvDataset, TargetPosterior,
};
use flowmc::whitening::{build_whitening, WhitenedTarget, WhiteningTransform};
use rand::Rng;

use crate::config::{ExperimentConfig, ExperimentKind, RadialVelocitySection};
use crate::CliError;

pub struct Prepared {
    /// Posterior in working coordinates.
    pub target: Box<dyn TargetPosterior>,
    pub transform: Option<WhiteningTransform>,
    /// Starting walker positions in working coordinates.
    pub initial_positions: Vec<Vec<f64>>,
    /// Mode balls in original coordinates.
    pub modes: Vec<ModeIndicator>,
    pub dataset: Option<RvDataset>,
    /// Accepted Joker samples in original coordinates.
    pub joker_samples: Option<Vec<Vec<f64>>>,
    pub mixture: Option<GaussianMixtureTarget>,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn to_original(&self, working: &[f64]) -> Vec<f64> {
        match &self.transform {
            Some(t) => t.unwhiten(working),
            None => working.to_vec(),
        }
    }

    /// Draws `count` flow samples, weights them against the working target and
    /// reports evidence and mode masses. Returned samples are in original
    /// coordinates; the whitening Jacobian is already inside the target.
    pub fn evaluate_evidence<R: Rng + ?Sized>(
        &self,
        flow: &RealNvpFlow,
        count: usize,
        rng: &mut R,
    ) -> Result<(EvidenceReport, Vec<WeightedSample>), CliError> {
        let mut samples = importance_weights(flow, self.target.as_ref(), count, rng)?;
        if self.transform.is_some() {
            for s in &mut samples {
                s.theta = self.to_original(&s.theta);
            }
        }
        let report = evidence_report(&samples, &self.modes)?;
        Ok((report, samples))
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, CliError> {
    let seed = config.master_seed;
    let n = config.train.n_walkers;
    let modes = config
        .evidence
        .modes
        .iter()
        .map(|m| ModeIndicator::new(m.label.clone(), m.center.clone(), m.radius))
        .collect::<Result<Vec<_>, _>>()?;

    match config.experiment {
        ExperimentKind::Mixture => {
            let m = config.mixture.as_ref().expect("validated config");
            let target = GaussianMixtureTarget::new(m.weights.clone(), m.centers.clone())?;
            // Equal shares of walkers start on each component center.
            let initial_positions = (0..n).map(|i| m.centers[i % m.centers.len()].clone()).collect();
            Ok(Prepared {
                target: Box::new(target.clone()),
                transform: None,
                initial_positions,
                modes,
                dataset: None,
                joker_samples: None,
                mixture: Some(target),
            })
        }
        ExperimentKind::RadialVelocity => {
            let rv = config.radial_velocity.as_ref().expect("validated config");
            let dataset = rv_dataset(rv, seed)?;
            let raw = RadialVelocityTarget::new(dataset.clone(), rv.prior)?;
            let mut rng = stream(seed, StreamDomain::Initializer, 0);
            let joker = joker_initialize(&dataset, &rv.prior, rv.joker_draws, &mut rng)?;
            // Walker i copies accepted sample i mod count.
            let starts: Vec<Vec<f64>> = (0..n).map(|i| joker[i % joker.len()].clone()).collect();
            let (target, transform, initial_positions): (Box<dyn TargetPosterior>, _, _) = if rv.whiten {
                let t = build_whitening(&joker, rv.whitening_floor)?;
                let init = starts.iter().map(|s| t.whiten(s)).collect();
                (Box::new(WhitenedTarget::new(raw, t.clone())?), Some(t), init)
            } else {
                (Box::new(raw), None, starts)
            };
            Ok(Prepared {
                target,
                transform,
                initial_positions,
                modes,
                dataset: Some(dataset),
                joker_samples: Some(joker),
                mixture: None,
            })
        }
        ExperimentKind::CustomGaussianSmoke => {
            let g = config.gaussian.as_ref().expect("validated config");
            let target = GaussianTarget {
                mean: vec![0.0; g.dim],
                sigma: g.sigma,
                log_scale: g.log_scale,
            };
            target.validate()?;
            let mut rng = stream(seed, StreamDomain::Initializer, 0);
            let initial_positions = (0..n)
                .map(|_| standard_normal_vec(&mut rng, g.dim).into_iter().map(|z| g.sigma * z).collect())
                .collect();
            Ok(Prepared {
                target: Box::new(target),
                transform: None,
                initial_positions,
                modes,
                dataset: None,
                joker_samples: None,
                mixture: None,
            })
        }
    }
}

fn rv_dataset(rv: &RadialVelocitySection, seed: u64) -> Result<RvDataset, CliError> {
    if let Some(path) = &rv.data_path {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("radial_velocity.data_path: cannot read {}: {e}", path.display()))
        })?;
        return RvDataset::from_csv(&text)
            .map_err(|e| CliError::Config(format!("radial_velocity.data_path: {e}")));
    }
    let times = match &rv.times {
        Some(t) => t.clone(),
        None => {
            let mut rng = stream(seed, StreamDomain::Data, 0);
            let horizon = 2.0 * rv.prior.ln_period_max.exp();
            (0..rv.n_obs).map(|_| rng.random_range(0.0..horizon)).collect()
        }
    };
    let mut rng = stream(seed, StreamDomain::Data, 1);
    Ok(rv_generate_observations(&rv.truth, &times, rv.prior.sigma_obs, &mut rng)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::resolve;
    use serde_json::json;

    #[test]
    fn mixture_walkers_split_between_centers() {
        let c = resolve(json!({"experiment": "mixture"}), &[]).unwrap();
        let p = prepare(&c).unwrap();
        let at_a = p.initial_positions.iter().filter(|x| x[0] == 8.0).count();
        let at_b = p.initial_positions.iter().filter(|x| x[0] == -2.0).count();
        assert_eq!((at_a, at_b), (50, 50));
    }

    #[test]
    fn radial_velocity_setup_is_deterministic_and_whitened() {
        let c = resolve(json!({"experiment": "radial_velocity"}), &[]).unwrap();
        let a = prepare(&c).unwrap();
        let b = prepare(&c).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.initial_positions, b.initial_positions);
        let joker = a.joker_samples.as_ref().unwrap();
        assert!(!joker.is_empty());
        let d = a.dataset.as_ref().unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.observations.iter().all(|o| (0.0..2.0 * 5f64.exp()).contains(&o.t)));
        // Walker 0 maps back onto the first Joker sample.
        let back = a.to_original(&a.initial_positions[0]);
        assert!(back.iter().zip(&joker[0]).all(|(x, y)| (x - y).abs() < 1e-9));
        assert!(a.initial_positions.iter().all(|x| a.target.log_density(x).is_finite()));
    }

    #[test]
    fn explicit_times_are_used() {
        let c = resolve(
            json!({"experiment": "radial_velocity", "radial_velocity": {"n_obs": 3, "times": [1.0, 2.0, 3.0]}}),
            &[],
        )
        .unwrap();
        let p = prepare(&c).unwrap();
        let ts: Vec<f64> = p.dataset.unwrap().observations.iter().map(|o| o.t).collect();
        assert_eq!(ts, vec![1.0, 2.0, 3.0]);
    }
}
