//! The `run` and `evidence` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use flowmc::estimators::{EvidenceReport, ModeMass, WeightedSample};
use flowmc::flow::RealNvpFlow;
use flowmc::rng::{stream, StreamDomain};
use flowmc::trainer::{sample_train_with_observer, RunMetrics, TrainOutput};
use flowmc::whitening::WhiteningTransform;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::experiment::{prepare, Prepared};
use crate::output::{ensure_dir, inventory, num, write_atomic, write_json, Csv, MANIFEST};
use crate::CliError;

/// Evidence estimate taken part-way through training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: usize,
    pub n: usize,
    pub log_z_hat: Option<f64>,
    pub std_error: Option<f64>,
    pub n_eff: Option<f64>,
    pub mode_log_masses: Vec<ModeMass>,
    pub log_evidence_difference: Option<f64>,
    /// Why the estimate is missing, e.g. no flow sample landed in the support.
    pub error: Option<String>,
}

impl Checkpoint {
    fn from_result(iter: usize, n: usize, r: Result<EvidenceReport, CliError>) -> Self {
        match r {
            Ok(rep) => Self {
                iter,
                n,
                log_z_hat: Some(rep.log_z_hat),
                std_error: Some(rep.std_error),
                n_eff: Some(rep.n_eff),
                mode_log_masses: rep.mode_log_masses,
                log_evidence_difference: rep.log_evidence_difference,
                error: None,
            },
            Err(e) => Self {
                iter,
                n,
                log_z_hat: None,
                std_error: None,
                n_eff: None,
                mode_log_masses: Vec::new(),
                log_evidence_difference: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvidenceFile<'a> {
    pub master_seed: u64,
    pub n_eval: usize,
    #[serde(flatten)]
    pub report: &'a EvidenceReport,
    pub checkpoints: &'a [Checkpoint],
}

pub struct RunSummary {
    pub output_dir: PathBuf,
    pub config: ExperimentConfig,
    pub metrics: RunMetrics,
    pub evidence: EvidenceReport,
    pub checkpoints: Vec<Checkpoint>,
    pub flow: RealNvpFlow,
    /// Final walker positions in working coordinates.
    pub final_positions: Vec<Vec<f64>>,
    pub transform: Option<WhiteningTransform>,
}

fn opt(x: Option<f64>) -> String {
    num(x.unwrap_or(f64::NAN))
}

/// Runs a resolved experiment and writes all artifacts to its output
/// directory. The manifest is written last.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, CliError> {
    config.validate()?;
    let started = Instant::now();
    let prepared = prepare(config)?;
    let dir = config.output_dir.clone();
    ensure_dir(&dir)?;
    let seed = config.master_seed;
    let dim = prepared.dim();

    if let Some(d) = &prepared.dataset {
        write_atomic(&dir, "data.csv", d.to_csv().as_bytes())?;
    }
    if let Some(j) = &prepared.joker_samples {
        let mut csv = Csv::with_theta(&[], dim, &[]);
        for s in j {
            csv.row(s.iter().map(|v| num(*v)));
        }
        write_atomic(&dir, "init.csv", &csv.into_bytes())?;
    }

    let flow = RealNvpFlow::new(dim, &config.flow, seed)?;
    let train = config.train.to_train_config(seed);
    let ev = &config.evidence;
    let mut checkpoints = Vec::new();
    let result = sample_train_with_observer(
        &train,
        prepared.target.as_ref(),
        flow,
        prepared.initial_positions.clone(),
        |k, flow, _| {
            if ev.checkpoint_stride > 0 && (k + 1) % ev.checkpoint_stride == 0 {
                let index = ((k + 1) / ev.checkpoint_stride) as u64;
                let mut rng = stream(seed, StreamDomain::Evidence, index);
                let r = prepared
                    .evaluate_evidence(flow, ev.checkpoint_samples, &mut rng)
                    .map(|(rep, _)| rep);
                let c = Checkpoint::from_result(k, ev.checkpoint_samples, r);
                eprintln!(
                    "checkpoint iter={} log_z={} std_error={} n_eff={} log_evidence_difference={}",
                    c.iter,
                    opt(c.log_z_hat),
                    opt(c.std_error),
                    opt(c.n_eff),
                    opt(c.log_evidence_difference),
                );
                checkpoints.push(c);
            }
            Ok(())
        },
    );
    let out = match result {
        Ok(out) => out,
        Err(flowmc::Error::NonFiniteLoss(diag)) => {
            let original: Vec<Vec<f64>> = diag.positions.iter().map(|p| prepared.to_original(p)).collect();
            write_json(
                &dir,
                "diagnostics.json",
                &json!({
                    "iter": diag.iter,
                    "loss": diag.loss.to_string(),
                    "recent_losses": diag.recent_losses,
                    "log_posteriors": diag.log_posteriors,
                    "positions": diag.positions,
                    "positions_original": original,
                }),
            )?;
            return Err(CliError::Aborted(format!(
                "non-finite loss {} at iteration {}; diagnostics written to {}",
                diag.loss,
                diag.iter,
                dir.join("diagnostics.json").display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    let mut rng = stream(seed, StreamDomain::Evidence, 0);
    let (report, samples) = prepared.evaluate_evidence(&out.flow, ev.n_eval, &mut rng)?;
    write_outputs(config, &prepared, &out, &report, &samples, &checkpoints)?;
    write_json(
        &dir,
        MANIFEST,
        &json!({
            "version": env!("CARGO_PKG_VERSION"),
            "experiment": config.experiment.name(),
            "config": config,
            "wall_clock_seconds": started.elapsed().as_secs_f64(),
            "kernel_stats": out.metrics.stats,
            "whitening": prepared.transform,
            "files": inventory(&dir)?,
        }),
    )?;

    Ok(RunSummary {
        output_dir: dir,
        config: config.clone(),
        metrics: out.metrics,
        evidence: report,
        checkpoints,
        flow: out.flow,
        final_positions: out.final_positions,
        transform: prepared.transform,
    })
}

fn write_outputs(
    config: &ExperimentConfig,
    prepared: &Prepared,
    out: &TrainOutput,
    report: &EvidenceReport,
    samples: &[WeightedSample],
    checkpoints: &[Checkpoint],
) -> Result<(), CliError> {
    let dir = &config.output_dir;
    let dim = prepared.dim();
    let thin = config.output.chain_thin;
    let last = out.history.len().saturating_sub(1);

    let mut chains = Csv::with_theta(&["iter", "walker"], dim, &[]);
    let mut whitened = prepared.transform.as_ref().map(|_| Csv::with_theta(&["iter", "walker"], dim, &[]));
    for (k, snapshot) in out.history.iter().enumerate() {
        if k % thin != 0 && k != last {
            continue;
        }
        for (w, theta) in snapshot.iter().enumerate() {
            let head = [k.to_string(), w.to_string()];
            let original = prepared.to_original(theta);
            chains.row(head.iter().cloned().chain(original.iter().map(|v| num(*v))));
            if let Some(csv) = whitened.as_mut() {
                csv.row(head.iter().cloned().chain(theta.iter().map(|v| num(*v))));
            }
        }
    }
    write_atomic(dir, "chains.csv", &chains.into_bytes())?;
    if let Some(csv) = whitened {
        write_atomic(dir, "chains_whitened.csv", &csv.into_bytes())?;
    }

    let mut metrics = Csv::new(&["iter", "loss", "nf_acc_rate", "langevin_acc_rate"]);
    for r in &out.metrics.records {
        metrics.row([
            r.iter.to_string(),
            num(r.loss),
            opt(r.nf_acceptance_rate),
            opt(r.langevin_acceptance_rate),
        ]);
    }
    write_atomic(dir, "metrics.csv", &metrics.into_bytes())?;

    let flow_json = serde_json::to_string(&out.flow).map_err(flowmc::Error::from)?;
    write_atomic(dir, "flow.json", flow_json.as_bytes())?;

    write_json(
        dir,
        "evidence.json",
        &EvidenceFile {
            master_seed: config.master_seed,
            n_eval: config.evidence.n_eval,
            report,
            checkpoints,
        },
    )?;

    if !checkpoints.is_empty() {
        let mut csv = Csv::new(&["iter", "n", "log_z_hat", "std_error", "n_eff", "log_evidence_difference"]);
        for c in checkpoints {
            csv.row([
                c.iter.to_string(),
                c.n.to_string(),
                opt(c.log_z_hat),
                opt(c.std_error),
                opt(c.n_eff),
                opt(c.log_evidence_difference),
            ]);
        }
        write_atomic(dir, "evidence_checkpoints.csv", &csv.into_bytes())?;
    }

    if config.output.flow_samples > 0 {
        let mut csv = Csv::with_theta(&[], dim, &["log_weight"]);
        for s in samples.iter().take(config.output.flow_samples) {
            csv.row(s.theta.iter().chain([&s.log_weight]).map(|v| num(*v)));
        }
        write_atomic(dir, "flow_samples.csv", &csv.into_bytes())?;
    }

    if let (Some(mix), true) = (&prepared.mixture, config.output.slice_points >= 2 && dim >= 2) {
        write_atomic(dir, "density_slice.csv", &density_slice(mix, &out.flow, config.output.slice_points)?)?;
    }
    Ok(())
}

/// Target and flow log-densities on a grid in the plane of the first two
/// coordinates, all others held at zero. The box covers every component
/// center with a margin of 5.
fn density_slice(
    target: &flowmc::targets::GaussianMixtureTarget,
    flow: &RealNvpFlow,
    points: usize,
) -> Result<Vec<u8>, CliError> {
    use flowmc::targets::TargetPosterior;
    let dim = target.dim();
    let bounds = |axis: usize| {
        let vals = target.centers().iter().map(|c| c[axis]);
        let lo = vals.clone().fold(f64::INFINITY, f64::min) - 5.0;
        let hi = vals.fold(f64::NEG_INFINITY, f64::max) + 5.0;
        (lo, hi)
    };
    let (x0, x1) = bounds(0);
    let (y0, y1) = bounds(1);
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (points - 1) as f64;
    let mut csv = Csv::new(&["theta_0", "theta_1", "log_target", "log_flow"]);
    let mut theta = vec![0.0; dim];
    for i in 0..points {
        for j in 0..points {
            theta[0] = step(x0, x1, i);
            theta[1] = step(y0, y1, j);
            let lf = flow.log_density(&theta)?;
            csv.row([num(theta[0]), num(theta[1]), num(target.log_density(&theta)), num(lf)]);
        }
    }
    Ok(csv.into_bytes())
}

pub struct EvidenceOutcome {
    pub path: PathBuf,
    pub report: EvidenceReport,
}

/// Re-evaluates the evidence of a saved flow against the target described
/// by `config`, writing `evidence.json` into `output_dir`.
pub fn estimate_evidence(
    flow_path: &Path,
    config: &ExperimentConfig,
    n_samples: usize,
    output_dir: &Path,
) -> Result<EvidenceOutcome, CliError> {
    config.validate()?;
    if n_samples == 0 {
        return Err(CliError::Config("samples: must be at least 1".into()));
    }
    let text = std::fs::read_to_string(flow_path)
        .map_err(|e| CliError::Config(format!("flow: cannot read {}: {e}", flow_path.display())))?;
    let flow: RealNvpFlow = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("flow: {} is not a serialized flow: {e}", flow_path.display())))?;
    let prepared = prepare(config)?;
    if flow.dim() != prepared.dim() {
        return Err(CliError::Config(format!(
            "flow: dimension {} does not match target dimension {}",
            flow.dim(),
            prepared.dim()
        )));
    }
    let mut rng = stream(config.master_seed, StreamDomain::Evidence, 0);
    let (report, _) = prepared.evaluate_evidence(&flow, n_samples, &mut rng)?;
    ensure_dir(output_dir)?;
    let path = write_json(
        output_dir,
        "evidence.json",
        &EvidenceFile {
            master_seed: config.master_seed,
            n_eval: n_samples,
            report: &report,
            checkpoints: &[],
        },
    )?;
    Ok(EvidenceOutcome { path, report })
}
