//! Experiment configuration: per-experiment defaults, JSON merging, dotted
//! overrides and validation.
//!
//! A config file only has to name the experiment. Everything it leaves out is
//! filled from the defaults of that experiment, which are the published
//! settings for the mixture and radial-velocity runs.

use std::path::{Path, PathBuf};

use flowmc::flow::FlowConfig;
use flowmc::nn::AdamConfig;
use flowmc::samplers::LangevinMode;
use flowmc::targets::RvPriorConfig;
use flowmc::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Mixture,
    RadialVelocity,
    CustomGaussianSmoke,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Mixture => "mixture",
            ExperimentKind::RadialVelocity => "radial_velocity",
            ExperimentKind::CustomGaussianSmoke => "custom_gaussian_smoke",
        }
    }

    fn parse(name: &str) -> Result<Self, CliError> {
        serde_json::from_value(Value::String(name.to_string())).map_err(|_| {
            CliError::Config(format!(
                "experiment: unknown experiment {name:?} (expected mixture, radial_velocity or custom_gaussian_smoke)"
            ))
        })
    }
}

/// Training block. The seed lives at the top level of the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub tau: f64,
    pub k_max: usize,
    pub k_lang: usize,
    pub learning_rate: f64,
    pub n_walkers: usize,
    pub buffer_len: usize,
    pub steps_per_update: usize,
    pub langevin_mode: LangevinMode,
    pub adam: AdamConfig,
}

impl TrainSection {
    pub fn to_train_config(&self, master_seed: u64) -> TrainConfig {
        TrainConfig {
            tau: self.tau,
            k_max: self.k_max,
            k_lang: self.k_lang,
            learning_rate: self.learning_rate,
            n_walkers: self.n_walkers,
            buffer_len: self.buffer_len,
            steps_per_update: self.steps_per_update,
            langevin_mode: self.langevin_mode,
            master_seed,
            adam: self.adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub label: String,
    /// Original (unwhitened) coordinates.
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceSection {
    /// Flow samples for the final estimate.
    pub n_eval: usize,
    /// Iterations between evidence checkpoints; 0 disables them.
    pub checkpoint_stride: usize,
    /// Fresh flow samples per checkpoint.
    pub checkpoint_samples: usize,
    pub modes: Vec<ModeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Keep every n-th iteration in the chain tables; the last is always kept.
    pub chain_thin: usize,
    /// Rows of final-flow samples written with their log weights.
    pub flow_samples: usize,
    /// Grid points per axis for the density slice table; 0 disables it.
    pub slice_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub weights: Vec<f64>,
    pub centers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialVelocitySection {
    pub prior: RvPriorConfig,
    /// Parameters `(v0, K, φ0, ln P)` used to simulate the data.
    pub truth: Vec<f64>,
    pub n_obs: usize,
    /// Observation times; drawn uniformly on `[0, 2 exp(ln_period_max)]` when absent.
    pub times: Option<Vec<f64>>,
    /// Load observations from a `t,v` CSV instead of simulating them.
    pub data_path: Option<PathBuf>,
    pub joker_draws: usize,
    pub whiten: bool,
    pub whitening_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub dim: usize,
    pub sigma: f64,
    /// The target is `exp(log_scale) · N(0, sigma² I)`.
    pub log_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub train: TrainSection,
    pub flow: FlowConfig,
    pub evidence: EvidenceSection,
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radial_velocity: Option<RadialVelocitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<GaussianSection>,
}

fn mixture_centers(dim: usize) -> Vec<Vec<f64>> {
    [[8.0, 3.0], [-2.0, 3.0]]
        .iter()
        .map(|c| {
            let mut v = vec![0.0; dim];
            v[..2].copy_from_slice(c);
            v
        })
        .collect()
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        // Near-identity start: small hidden weights and an exactly zero
        // output layer in every coupling network.
        let flow = FlowConfig {
            init_scale: 0.1,
            zero_final_layer: true,
            ..FlowConfig::default()
        };
        let adam = AdamConfig::default();
        match kind {
            ExperimentKind::Mixture => {
                let centers = mixture_centers(10);
                Self {
                    experiment: kind,
                    master_seed: 0,
                    output_dir: PathBuf::from("runs/mixture"),
                    train: TrainSection {
                        tau: 0.005,
                        k_max: 4000,
                        k_lang: 1,
                        learning_rate: 0.005,
                        n_walkers: 100,
                        buffer_len: 10,
                        steps_per_update: 10,
                        langevin_mode: LangevinMode::Ula,
                        adam,
                    },
                    flow,
                    evidence: EvidenceSection {
                        n_eval: 100_000,
                        checkpoint_stride: 200,
                        checkpoint_samples: 10_000,
                        modes: vec![
                            ModeSpec {
                                label: "A".into(),
                                center: centers[0].clone(),
                                radius: 5.0,
                            },
                            ModeSpec {
                                label: "B".into(),
                                center: centers[1].clone(),
                                radius: 5.0,
                            },
                        ],
                    },
                    output: OutputSection {
                        chain_thin: 10,
                        flow_samples: 5000,
                        slice_points: 101,
                    },
                    mixture: Some(MixtureSection {
                        weights: vec![2.0 / 3.0, 1.0 / 3.0],
                        centers,
                    }),
                    radial_velocity: None,
                    gaussian: None,
                }
            }
            ExperimentKind::RadialVelocity => Self {
                experiment: kind,
                master_seed: 0,
                output_dir: PathBuf::from("runs/radial_velocity"),
                train: TrainSection {
                    tau: 5e-6,
                    k_max: 10_000,
                    k_lang: 1,
                    learning_rate: 0.001,
                    n_walkers: 110,
                    buffer_len: 5,
                    steps_per_update: 5,
                    langevin_mode: LangevinMode::Ula,
                    adam,
                },
                flow,
                evidence: EvidenceSection {
                    n_eval: 100_000,
                    checkpoint_stride: 200,
                    checkpoint_samples: 10_000,
                    modes: Vec::new(),
                },
                output: OutputSection {
                    chain_thin: 10,
                    flow_samples: 5000,
                    slice_points: 0,
                },
                mixture: None,
                radial_velocity: Some(RadialVelocitySection {
                    prior: RvPriorConfig::default(),
                    truth: vec![0.0, 5.0, 1.0, 4.0],
                    n_obs: 6,
                    times: None,
                    data_path: None,
                    joker_draws: 1000,
                    whiten: true,
                    whitening_floor: flowmc::whitening::DEFAULT_RELATIVE_FLOOR,
                }),
                gaussian: None,
            },
            ExperimentKind::CustomGaussianSmoke => Self {
                experiment: kind,
                master_seed: 0,
                output_dir: PathBuf::from("runs/custom_gaussian_smoke"),
                train: TrainSection {
                    tau: 0.05,
                    k_max: 50,
                    k_lang: 1,
                    learning_rate: 0.005,
                    n_walkers: 20,
                    buffer_len: 5,
                    steps_per_update: 1,
                    langevin_mode: LangevinMode::Ula,
                    adam,
                },
                flow: FlowConfig {
                    n_pairs: 2,
                    hidden_widths: vec![32, 32],
                    ..flow
                },
                evidence: EvidenceSection {
                    n_eval: 10_000,
                    checkpoint_stride: 0,
                    checkpoint_samples: 1000,
                    modes: Vec::new(),
                },
                output: OutputSection {
                    chain_thin: 1,
                    flow_samples: 1000,
                    slice_points: 0,
                },
                mixture: None,
                radial_velocity: None,
                gaussian: Some(GaussianSection {
                    dim: 2,
                    sigma: 1.0,
                    log_scale: 0.0,
                }),
            },
        }
    }

    /// Dimension of the parameter space.
    pub fn dim(&self) -> usize {
        match self.experiment {
            ExperimentKind::Mixture => self.mixture.as_ref().map_or(0, |m| m.centers.first().map_or(0, Vec::len)),
            ExperimentKind::RadialVelocity => 4,
            ExperimentKind::CustomGaussianSmoke => self.gaussian.as_ref().map_or(0, |g| g.dim),
        }
    }

    /// Checks every block before any computation starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: &str| Err(CliError::Config(format!("{field}: {msg}")));
        let blocks = [
            ("mixture", self.mixture.is_some(), ExperimentKind::Mixture),
            ("radial_velocity", self.radial_velocity.is_some(), ExperimentKind::RadialVelocity),
            ("gaussian", self.gaussian.is_some(), ExperimentKind::CustomGaussianSmoke),
        ];
        for (name, present, owner) in blocks {
            if present && owner != self.experiment {
                return bad(name, &format!("block is not used by experiment {}", self.experiment.name()));
            }
            if !present && owner == self.experiment {
                return bad(name, "block is required");
            }
        }

        self.train
            .to_train_config(self.master_seed)
            .validate()
            .map_err(|e| CliError::Config(format!("train: {}", core_message(e))))?;
        if self.flow.n_pairs == 0 {
            return bad("flow.n_pairs", "must be at least 1");
        }
        if self.flow.hidden_widths.is_empty() || self.flow.hidden_widths.contains(&0) {
            return bad("flow.hidden_widths", "must be a nonempty list of positive widths");
        }
        if !(self.flow.init_scale >= 0.0 && self.flow.init_scale.is_finite()) {
            return bad("flow.init_scale", "must be nonnegative");
        }
        if let Some(a) = self.flow.scale_clamp {
            if !(a > 0.0 && a.is_finite()) {
                return bad("flow.scale_clamp", "must be positive");
            }
        }

        let dim = self.dim();
        match self.experiment {
            ExperimentKind::Mixture => {
                let m = self.mixture.as_ref().expect("checked above");
                if m.centers.is_empty() || m.weights.len() != m.centers.len() {
                    return bad("mixture.weights", "needs one weight per center");
                }
                if dim == 0 || m.centers.iter().any(|c| c.len() != dim) {
                    return bad("mixture.centers", "centers must share a positive dimension");
                }
                if m.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
                    return bad("mixture.weights", "weights must be positive");
                }
            }
            ExperimentKind::RadialVelocity => {
                let rv = self.radial_velocity.as_ref().expect("checked above");
                rv.prior
                    .validate()
                    .map_err(|e| CliError::Config(format!("radial_velocity.prior: {}", core_message(e))))?;
                if rv.truth.len() != 4 || rv.truth.iter().any(|v| !v.is_finite()) {
                    return bad("radial_velocity.truth", "must hold four finite values (v0, K, phi0, lnP)");
                }
                if rv.data_path.is_none() {
                    if rv.n_obs == 0 {
                        return bad("radial_velocity.n_obs", "must be at least 1");
                    }
                    if let Some(t) = &rv.times {
                        if t.len() != rv.n_obs || t.iter().any(|v| !v.is_finite()) {
                            return bad("radial_velocity.times", "must hold n_obs finite values");
                        }
                    }
                }
                if rv.joker_draws == 0 {
                    return bad("radial_velocity.joker_draws", "must be at least 1");
                }
                if !(rv.whitening_floor >= 0.0 && rv.whitening_floor < 1.0) {
                    return bad("radial_velocity.whitening_floor", "must lie in [0, 1)");
                }
            }
            ExperimentKind::CustomGaussianSmoke => {
                let g = self.gaussian.as_ref().expect("checked above");
                if g.dim == 0 {
                    return bad("gaussian.dim", "must be at least 1");
                }
                if !(g.sigma > 0.0 && g.sigma.is_finite()) {
                    return bad("gaussian.sigma", "must be positive");
                }
                if !g.log_scale.is_finite() {
                    return bad("gaussian.log_scale", "must be finite");
                }
            }
        }

        if self.evidence.n_eval == 0 {
            return bad("evidence.n_eval", "must be at least 1");
        }
        if self.evidence.checkpoint_stride > 0 && self.evidence.checkpoint_samples == 0 {
            return bad("evidence.checkpoint_samples", "must be at least 1 when checkpoints are enabled");
        }
        for (i, m) in self.evidence.modes.iter().enumerate() {
            if m.center.len() != dim {
                return bad(&format!("evidence.modes[{i}].center"), &format!("must have dimension {dim}"));
            }
            if !(m.radius > 0.0 && m.radius.is_finite()) {
                return bad(&format!("evidence.modes[{i}].radius"), "must be positive");
            }
        }
        if self.output.chain_thin == 0 {
            return bad("output.chain_thin", "must be at least 1");
        }
        if self.output.slice_points == 1 {
            return bad("output.slice_points", "must be 0 or at least 2");
        }
        Ok(())
    }
}

fn core_message(e: flowmc::Error) -> String {
    match e {
        flowmc::Error::Config(m) => m,
        other => other.to_string(),
    }
}

/// Recursively overlays `patch` onto `base`. Objects merge key by key; any
/// other value replaces what was there.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {assignment:?}: expected key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("--set {assignment:?}: empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(o) => o,
            _ => {
                return Err(CliError::Config(format!(
                    "{}: not an object, cannot set {key}",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("loop returns on the last segment")
}

fn experiment_of(value: &Value, overrides: &[String]) -> Result<ExperimentKind, CliError> {
    let from_set = overrides
        .iter()
        .rev()
        .find_map(|o| o.strip_prefix("experiment=").map(|v| v.trim_matches('"').to_string()));
    let name = match from_set {
        Some(n) => n,
        None => value
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Config("experiment: missing or not a string".into()))?
            .to_string(),
    };
    ExperimentKind::parse(&name)
}

/// Builds a validated config from user JSON plus overrides.
pub fn resolve(user: Value, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    if !user.is_object() {
        return Err(CliError::Config("config: top level must be a JSON object".into()));
    }
    let kind = experiment_of(&user, overrides)?;
    let mut merged = serde_json::to_value(ExperimentConfig::defaults(kind)).expect("defaults serialize");
    merge(&mut merged, user);
    for o in overrides {
        apply_override(&mut merged, o)?;
    }
    let config: ExperimentConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("{path}: {}", e.into_inner()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
    let user: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config: {} is not valid JSON: {e}", path.display())))?;
    resolve(user, overrides)
}
