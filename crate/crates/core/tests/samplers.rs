//! Statistical and algebraic checks of the two MCMC kernels.

use flowmc::flow::{FlowConfig, RealNvpFlow};
use flowmc::samplers::{
    langevin_step, nf_acceptance, nf_log_acceptance, nf_mh_step, LangevinMode, WalkerEnsemble,
};
use flowmc::targets::{GaussianTarget, TargetPosterior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_flow(dim: usize) -> RealNvpFlow {
    let config = FlowConfig {
        n_pairs: 2,
        hidden_widths: vec![4],
        zero_final_layer: true,
        ..FlowConfig::default()
    };
    RealNvpFlow::new(dim, &config, 0).unwrap()
}

#[test]
fn ula_matches_discrete_stationary_variance() {
    let tau: f64 = 0.01;
    let target = GaussianTarget::standard(1);
    let mut ens = WalkerEnsemble::new(&target, vec![vec![0.0]], 21).unwrap();
    let steps = 1_000_000;
    let burn = 2_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for k in 0..steps + burn {
        langevin_step(&mut ens, &target, tau, LangevinMode::Ula).unwrap();
        if k >= burn {
            let x = ens.positions()[0][0];
            sum += x;
            sum_sq += x * x;
        }
    }
    let mean = sum / steps as f64;
    let var = sum_sq / steps as f64 - mean * mean;
    // x' = (1 − τ) x + √(2τ) η is AR(1) with variance 2τ / (1 − (1 − τ)²).
    let oracle = 2.0 * tau / (1.0 - (1.0 - tau).powi(2));
    assert!((var / oracle - 1.0).abs() < 0.02, "variance {var} vs {oracle}");
}

#[test]
fn alternating_kernels_leave_gaussian_invariant() {
    let target = GaussianTarget::standard(2);
    let flow = identity_flow(2);
    let mut ens = WalkerEnsemble::new(&target, vec![vec![0.0, 0.0]], 5).unwrap();
    let steps = 100_000;
    let mut xs = vec![Vec::with_capacity(steps); 2];
    for k in 0..steps {
        if k % 2 == 0 {
            nf_mh_step(&mut ens, &target, &flow).unwrap();
        } else {
            langevin_step(&mut ens, &target, 0.1, LangevinMode::Mala).unwrap();
        }
        for c in 0..2 {
            xs[c].push(ens.positions()[0][c]);
        }
    }
    for x in &xs {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // Every other step is an exact independent draw, so samples are close
        // to independent; allow for the residual correlation with a factor 2.
        let se_mean = (2.0 / n).sqrt();
        let se_var = (2.0 * 2.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * se_var, "variance {var}");
    }
}

#[test]
fn exact_flow_always_accepts() {
    let target = GaussianTarget::standard(3);
    let flow = identity_flow(3);
    let init: Vec<Vec<f64>> = (0..20).map(|i| vec![0.1 * i as f64, -0.2, 0.3]).collect();
    let mut ens = WalkerEnsemble::new(&target, init, 1).unwrap();
    for _ in 0..10 {
        let s = nf_mh_step(&mut ens, &target, &flow).unwrap();
        assert_eq!(s.accepted, s.proposed);
    }
}

#[test]
fn nf_detailed_balance_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let [a, b, c, d]: [f64; 4] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
        // π(θ) = e^b, ρ̂(θ) = e^a, π(θ') = e^d, ρ̂(θ') = e^c.
        let lhs = b + c + nf_log_acceptance(a, b, c, d);
        let rhs = d + a + nf_log_acceptance(c, d, a, b);
        assert!((lhs - rhs).abs() <= 1e-12, "{lhs} vs {rhs}");
        let p = nf_acceptance(a, b, c, d);
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn repeated_state_is_always_accepted() {
    assert_eq!(nf_acceptance(-4.2, -7.1, -4.2, -7.1), 1.0);
}

struct Box2;

impl TargetPosterior for Box2 {
    fn dim(&self) -> usize {
        2
    }
    fn log_density(&self, t: &[f64]) -> f64 {
        if self.in_support(t) {
            -0.5 * (t[0] * t[0] + t[1] * t[1])
        } else {
            f64::NEG_INFINITY
        }
    }
    fn grad_log_density(&self, t: &[f64]) -> Vec<f64> {
        vec![-t[0], -t[1]]
    }
    fn in_support(&self, t: &[f64]) -> bool {
        t.iter().all(|x| x.abs() < 0.5)
    }
}

#[test]
fn caches_stay_coherent_and_walkers_stay_in_support() {
    let target = Box2;
    let flow = identity_flow(2);
    let init: Vec<Vec<f64>> = (0..30).map(|i| vec![0.01 * i as f64, -0.2]).collect();
    for mode in [LangevinMode::Ula, LangevinMode::Mala] {
        let mut ens = WalkerEnsemble::new(&target, init.clone(), 9).unwrap();
        let mut rejected = 0;
        for k in 0..400 {
            let s = if k % 3 == 0 {
                nf_mh_step(&mut ens, &target, &flow).unwrap()
            } else {
                langevin_step(&mut ens, &target, 0.05, mode).unwrap()
            };
            rejected += s.proposed - s.accepted;
            for (p, lp) in ens.positions().iter().zip(ens.log_posteriors()) {
                assert!(target.in_support(p));
                assert!((target.log_density(p) - lp).abs() <= 1e-12);
            }
        }
        assert!(rejected > 0, "the box must force some rejections");
    }
}

#[test]
fn per_walker_streams_make_results_independent_of_ensemble_size() {
    // Walker i's trajectory depends only on its own stream, so walker 0 moves
    // identically whether or not other walkers are present.
    let target = GaussianTarget::standard(2);
    let mut small = WalkerEnsemble::new(&target, vec![vec![0.3, 0.1]], 4).unwrap();
    let mut large = WalkerEnsemble::new(&target, vec![vec![0.3, 0.1], vec![-1.0, 2.0]], 4).unwrap();
    for _ in 0..50 {
        langevin_step(&mut small, &target, 0.2, LangevinMode::Mala).unwrap();
        langevin_step(&mut large, &target, 0.2, LangevinMode::Mala).unwrap();
    }
    assert_eq!(small.positions()[0], large.positions()[0]);
}

#[test]
fn mala_small_step_limit_accepts() {
    let target = GaussianTarget::standard(3);
    let mut ens = WalkerEnsemble::new(&target, vec![vec![0.5, -1.0, 1.5]; 50], 2).unwrap();
    let s = langevin_step(&mut ens, &target, 1e-10, LangevinMode::Mala).unwrap();
    assert_eq!(s.accepted, s.proposed);
}
