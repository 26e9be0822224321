//! RealNVP normalizing flow over a standard-normal base.
//!
//! Each affine coupling layer keeps one block of coordinates fixed and uses it
//! to scale and shift the other block:
//!
//! ```text
//! y_u = exp(s̃(x_c)) ⊙ x_u + t(x_c),   y_c = x_c,   log|det ∂y/∂x| = Σ s̃(x_c)
//! ```
//!
//! where `s̃ = α·tanh(s/α)` when a scale clamp `α` is configured and `s̃ = s`
//! otherwise. Layers alternate which block is updated. For odd dimension the
//! conditioning block holds `⌈d/2⌉` coordinates.
//!
//! The pushforward density is evaluated through the inverse pass,
//! `log ρ̂(θ) = log N(T⁻¹(θ); 0, I) + log|det ∂T⁻¹/∂θ|`, and the training loss
//! `−mean log ρ̂` is differentiated through that same pass.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{Mlp, MlpCache, MlpConfig, MlpParams, Parameterized};
use crate::rng::standard_normal_vec;

/// Which coordinate block a coupling layer rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    UpdateFirstHalf,
    UpdateSecondHalf,
}

impl Parity {
    pub fn flipped(self) -> Self {
        match self {
            Parity::UpdateFirstHalf => Parity::UpdateSecondHalf,
            Parity::UpdateSecondHalf => Parity::UpdateFirstHalf,
        }
    }
}

/// Coordinate ranges `(conditioning, updated)` for a layer.
fn split(dim: usize, parity: Parity) -> (Range<usize>, Range<usize>) {
    let n_upd = dim / 2;
    let n_cond = dim - n_upd;
    match parity {
        Parity::UpdateFirstHalf => (n_upd..dim, 0..n_upd),
        Parity::UpdateSecondHalf => (0..n_cond, n_cond..dim),
    }
}

/// log N(z; 0, I).
pub fn log_standard_normal(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|x| x * x).sum();
    -0.5 * sq - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

fn check_finite(m: &Matrix, context: &'static str) -> Result<()> {
    if m.data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(context))
    }
}

/// An affine coupling layer with separate scale and shift networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "CouplingRepr", into = "CouplingRepr")]
pub struct CouplingLayer {
    dim: usize,
    parity: Parity,
    s_net: Mlp,
    t_net: Mlp,
    scale_clamp: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct CouplingRepr {
    dim: usize,
    parity: Parity,
    scale_clamp: Option<f64>,
    s_net: Mlp,
    t_net: Mlp,
}

impl From<CouplingLayer> for CouplingRepr {
    fn from(c: CouplingLayer) -> Self {
        Self {
            dim: c.dim,
            parity: c.parity,
            scale_clamp: c.scale_clamp,
            s_net: c.s_net,
            t_net: c.t_net,
        }
    }
}

impl TryFrom<CouplingRepr> for CouplingLayer {
    type Error = Error;
    fn try_from(r: CouplingRepr) -> Result<Self> {
        CouplingLayer::from_nets(r.dim, r.parity, r.s_net, r.t_net, r.scale_clamp)
    }
}

/// Per-layer record of an inverse pass, kept for differentiation.
struct InverseRecord {
    s_cache: MlpCache,
    t_cache: MlpCache,
    scaled: Matrix,
    x_upd: Matrix,
}

impl CouplingLayer {
    pub fn from_nets(
        dim: usize,
        parity: Parity,
        s_net: Mlp,
        t_net: Mlp,
        scale_clamp: Option<f64>,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("coupling layers need dimension at least 2".into()));
        }
        if let Some(alpha) = scale_clamp {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Config("scale clamp must be positive and finite".into()));
            }
        }
        let (cond, upd) = split(dim, parity);
        for (name, net) in [("s_net", &s_net), ("t_net", &t_net)] {
            if net.input_dim() != cond.len() || net.output_dim() != upd.len() {
                return Err(Error::Config(format!(
                    "{name} must map {} conditioning coordinates to {} updated coordinates",
                    cond.len(),
                    upd.len()
                )));
            }
        }
        Ok(Self {
            dim,
            parity,
            s_net,
            t_net,
            scale_clamp,
        })
    }

    pub fn init(dim: usize, parity: Parity, net: &NetSpec, scale_clamp: Option<f64>, seed: u64) -> Result<Self> {
        let (cond, upd) = split(dim.max(2), parity);
        let cfg = MlpConfig::new(cond.len(), net.hidden_widths.clone(), upd.len())
            .with_init_scale(net.init_scale)
            .with_zero_final_layer(net.zero_final_layer);
        let s_net = Mlp::init(cfg.clone(), seed)?;
        let t_net = Mlp::init(cfg, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
        Self::from_nets(dim, parity, s_net, t_net, scale_clamp)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn scale_clamp(&self) -> Option<f64> {
        self.scale_clamp
    }

    pub fn s_net(&self) -> &Mlp {
        &self.s_net
    }

    pub fn t_net(&self) -> &Mlp {
        &self.t_net
    }

    pub fn s_net_mut(&mut self) -> &mut Mlp {
        &mut self.s_net
    }

    pub fn t_net_mut(&mut self) -> &mut Mlp {
        &mut self.t_net
    }

    fn clamp(&self, raw: &mut Matrix) {
        if let Some(alpha) = self.scale_clamp {
            raw.data
                .iter_mut()
                .for_each(|s| *s = alpha * (*s / alpha).tanh());
        }
    }

    fn check_dim(&self, m: &Matrix) -> Result<()> {
        if m.cols != self.dim {
            return Err(Error::Shape {
                context: "coupling layer input",
                expected: self.dim,
                got: m.cols,
            });
        }
        Ok(())
    }

    /// Forward map on a batch; returns outputs and per-row log-determinants.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_dim(x)?;
        check_finite(x, "coupling forward")?;
        let (cond, upd) = split(self.dim, self.parity);
        let xc = x.columns(cond.start, cond.end);
        let mut scaled = self.s_net.predict(&xc)?;
        self.clamp(&mut scaled);
        let shift = self.t_net.predict(&xc)?;
        let mut y = x.clone();
        let mut log_det = vec![0.0; x.rows];
        for r in 0..x.rows {
            let s = scaled.row(r);
            let t = shift.row(r);
            let yr = &mut y.row_mut(r)[upd.clone()];
            for j in 0..yr.len() {
                yr[j] = s[j].exp() * yr[j] + t[j];
            }
            log_det[r] = s.iter().sum();
        }
        Ok((y, log_det))
    }

    /// Inverse map on a batch; returns inputs and per-row log-determinants of
    /// the inverse Jacobian.
    pub fn inverse_batch(&self, y: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (x, log_det, _) = self.inverse_impl(y, false)?;
        Ok((x, log_det))
    }

    fn inverse_impl(&self, y: &Matrix, record: bool) -> Result<(Matrix, Vec<f64>, Option<InverseRecord>)> {
        self.check_dim(y)?;
        check_finite(y, "coupling inverse")?;
        let (cond, upd) = split(self.dim, self.parity);
        let yc = y.columns(cond.start, cond.end);
        let (mut scaled, shift, caches) = if record {
            let (s, sc) = self.s_net.forward(&yc)?;
            let (t, tc) = self.t_net.forward(&yc)?;
            (s, t, Some((sc, tc)))
        } else {
            (self.s_net.predict(&yc)?, self.t_net.predict(&yc)?, None)
        };
        self.clamp(&mut scaled);
        let mut x = y.clone();
        let mut log_det = vec![0.0; y.rows];
        for r in 0..y.rows {
            let s = scaled.row(r);
            let t = shift.row(r);
            let xr = &mut x.row_mut(r)[upd.clone()];
            for j in 0..xr.len() {
                xr[j] = (xr[j] - t[j]) * (-s[j]).exp();
            }
            log_det[r] = -s.iter().sum::<f64>();
        }
        let record = caches.map(|(s_cache, t_cache)| InverseRecord {
            s_cache,
            t_cache,
            x_upd: x.columns(upd.start, upd.end),
            scaled,
        });
        Ok((x, log_det, record))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (y, ld) = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec()))?;
        Ok((y.data, ld[0]))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, ld) = self.inverse_batch(&Matrix::from_vec(1, y.len(), y.to_vec()))?;
        Ok((x.data, ld[0]))
    }

    /// Backpropagates through one recorded inverse step.
    ///
    /// `grad_out` is ∂loss/∂x for this layer's output; `log_det_weight` is
    /// ∂loss/∂(log-det) per row. Returns ∂loss/∂y.
    fn inverse_backward(
        &self,
        rec: &InverseRecord,
        grad_out: &Matrix,
        log_det_weight: f64,
        grads: &mut CouplingGrads,
    ) -> Result<Matrix> {
        let (cond, upd) = split(self.dim, self.parity);
        let batch = grad_out.rows;
        let n_upd = upd.len();
        let mut grad_scale = Matrix::zeros(batch, n_upd);
        let mut grad_shift = Matrix::zeros(batch, n_upd);
        let mut grad_in = grad_out.clone();
        for r in 0..batch {
            let g_out = &grad_out.row(r)[upd.clone()];
            let s = rec.scaled.row(r);
            let xu = rec.x_upd.row(r);
            let gs = grad_scale.row_mut(r);
            for j in 0..n_upd {
                // x_u = (y_u − t)·e^{−s̃},  log-det = −Σ s̃
                let g_scaled = -g_out[j] * xu[j] - log_det_weight;
                gs[j] = match self.scale_clamp {
                    Some(alpha) => {
                        let th = s[j] / alpha;
                        g_scaled * (1.0 - th * th)
                    }
                    None => g_scaled,
                };
            }
            let gt = grad_shift.row_mut(r);
            let gi = &mut grad_in.row_mut(r)[upd.clone()];
            for j in 0..n_upd {
                let g_y = g_out[j] * (-s[j]).exp();
                gi[j] = g_y;
                gt[j] = -g_y;
            }
        }
        let g_cond_s = self.s_net.backward_accumulate(&rec.s_cache, &grad_scale, &mut grads.s_net)?;
        let g_cond_t = self.t_net.backward_accumulate(&rec.t_cache, &grad_shift, &mut grads.t_net)?;
        for r in 0..batch {
            let gi = &mut grad_in.row_mut(r)[cond.clone()];
            for ((g, a), b) in gi.iter_mut().zip(g_cond_s.row(r)).zip(g_cond_t.row(r)) {
                *g += a + b;
            }
        }
        Ok(grad_in)
    }
}

/// Gradient container for one coupling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGrads {
    pub s_net: MlpParams,
    pub t_net: MlpParams,
}

/// Gradients of the training loss with respect to every flow parameter,
/// enumerated in the same order as [`RealNvpFlow`]'s tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrads {
    pub layers: Vec<CouplingGrads>,
}

/// Hidden-layer architecture shared by all coupling networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden_widths: Vec<usize>,
    pub init_scale: f64,
    pub zero_final_layer: bool,
}

/// Architecture of a [`RealNvpFlow`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Number of (first-half, second-half) coupling pairs.
    pub n_pairs: usize,
    pub hidden_widths: Vec<usize>,
    pub init_scale: f64,
    pub zero_final_layer: bool,
    /// `None` uses the raw exponential scale.
    pub scale_clamp: Option<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_pairs: 6,
            hidden_widths: vec![100, 100, 100],
            init_scale: 0.01,
            zero_final_layer: false,
            scale_clamp: Some(5.0),
        }
    }
}

impl FlowConfig {
    fn net_spec(&self) -> NetSpec {
        NetSpec {
            hidden_widths: self.hidden_widths.clone(),
            init_scale: self.init_scale,
            zero_final_layer: self.zero_final_layer,
        }
    }
}

/// Base distribution of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDensity {
    StandardNormal,
}

/// A point drawn from the flow with its log pushforward density.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub theta: Vec<f64>,
    pub log_density: f64,
}

/// Stack of alternating-parity coupling layers over a standard-normal base.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FlowRepr", into = "FlowRepr")]
pub struct RealNvpFlow {
    dim: usize,
    base: BaseDensity,
    layers: Vec<CouplingLayer>,
}

#[derive(Serialize, Deserialize)]
struct FlowRepr {
    dim: usize,
    base: BaseDensity,
    layers: Vec<CouplingLayer>,
}

impl From<RealNvpFlow> for FlowRepr {
    fn from(f: RealNvpFlow) -> Self {
        Self {
            dim: f.dim,
            base: f.base,
            layers: f.layers,
        }
    }
}

impl TryFrom<FlowRepr> for RealNvpFlow {
    type Error = Error;
    fn try_from(r: FlowRepr) -> Result<Self> {
        if r.layers.iter().any(|l| l.dim != r.dim) {
            return Err(Error::Config("coupling layer dimension differs from flow dimension".into()));
        }
        RealNvpFlow::from_layers(r.layers)
    }
}

impl RealNvpFlow {
    /// Builds `2·n_pairs` layers, starting with a first-half update.
    ///
    /// Network seeds are derived deterministically from `seed`.
    pub fn new(dim: usize, config: &FlowConfig, seed: u64) -> Result<Self> {
        if config.n_pairs == 0 {
            return Err(Error::Config("flow needs at least one coupling pair".into()));
        }
        let spec = config.net_spec();
        let mut parity = Parity::UpdateFirstHalf;
        let mut layers = Vec::with_capacity(2 * config.n_pairs);
        for k in 0..2 * config.n_pairs {
            let layer_seed = crate::rng::derived_seed(seed, crate::rng::StreamDomain::FlowInit, k as u64);
            layers.push(CouplingLayer::init(dim, parity, &spec, config.scale_clamp, layer_seed)?);
            parity = parity.flipped();
        }
        Self::from_layers(layers)
    }

    /// Assembles a flow from explicit layers, which must share a dimension and
    /// alternate parity.
    pub fn from_layers(layers: Vec<CouplingLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("flow needs at least one layer".into()));
        };
        let dim = first.dim;
        if layers.iter().any(|l| l.dim != dim) {
            return Err(Error::Config("coupling layers disagree on dimension".into()));
        }
        if layers.windows(2).any(|w| w[0].parity == w[1].parity) {
            return Err(Error::Config("consecutive coupling layers must alternate parity".into()));
        }
        Ok(Self {
            dim,
            base: BaseDensity::StandardNormal,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> BaseDensity {
        self.base
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    fn check_dim(&self, m: &Matrix) -> Result<()> {
        if m.cols != self.dim {
            return Err(Error::Shape {
                context: "flow input",
                expected: self.dim,
                got: m.cols,
            });
        }
        Ok(())
    }

    /// T on a batch, with the summed forward log-determinant per row.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_dim(x)?;
        let mut current = x.clone();
        let mut total = vec![0.0; x.rows];
        for layer in &self.layers {
            let (next, ld) = layer.forward_batch(&current)?;
            total.iter_mut().zip(&ld).for_each(|(t, l)| *t += l);
            current = next;
        }
        Ok((current, total))
    }

    /// T⁻¹ on a batch, with the summed inverse log-determinant per row.
    pub fn inverse_batch(&self, y: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        self.check_dim(y)?;
        let mut current = y.clone();
        let mut total = vec![0.0; y.rows];
        for layer in self.layers.iter().rev() {
            let (next, ld) = layer.inverse_batch(&current)?;
            total.iter_mut().zip(&ld).for_each(|(t, l)| *t += l);
            current = next;
        }
        Ok((current, total))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (y, ld) = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec()))?;
        Ok((y.data, ld[0]))
    }

    pub fn inverse(&self, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, ld) = self.inverse_batch(&Matrix::from_vec(1, y.len(), y.to_vec()))?;
        Ok((x.data, ld[0]))
    }

    /// log ρ̂ for every row of `theta`.
    pub fn log_density_batch(&self, theta: &Matrix) -> Result<Vec<f64>> {
        let (z, ld) = self.inverse_batch(theta)?;
        Ok((0..z.rows)
            .map(|r| log_standard_normal(z.row(r)) + ld[r])
            .collect())
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(Error::Shape {
                context: "flow density",
                expected: self.dim,
                got: theta.len(),
            });
        }
        Ok(self.log_density_batch(&Matrix::from_vec(1, theta.len(), theta.to_vec()))?[0])
    }

    /// Pushes base draws through T: returns `T(z)` and `log ρ̂(T(z))` computed
    /// from the forward log-determinant.
    pub fn push_forward(&self, base: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (theta, ld) = self.forward_batch(base)?;
        let log_density = (0..base.rows)
            .map(|r| log_standard_normal(base.row(r)) - ld[r])
            .collect();
        Ok((theta, log_density))
    }

    /// Draws `count` independent samples.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<Vec<FlowSample>> {
        if count == 0 {
            return Err(Error::NoSamples);
        }
        let mut base = Matrix::zeros(count, self.dim);
        for r in 0..count {
            base.row_mut(r).copy_from_slice(&standard_normal_vec(rng, self.dim));
        }
        let (theta, log_density) = self.push_forward(&base)?;
        Ok((0..count)
            .map(|r| FlowSample {
                theta: theta.row(r).to_vec(),
                log_density: log_density[r],
            })
            .collect())
    }

    /// Forward-KL training loss `−(1/n) Σ log ρ̂(θ_i)` and its exact gradient
    /// with respect to every network parameter. Batch points are constants.
    pub fn loss_and_gradients(&self, batch: &Matrix) -> Result<(f64, FlowGrads)> {
        if batch.rows == 0 {
            return Err(Error::EmptyBatch);
        }
        self.check_dim(batch)?;
        let n = batch.rows as f64;

        let mut records = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        let mut total_ld = vec![0.0; batch.rows];
        for layer in self.layers.iter().rev() {
            let (next, ld, rec) = layer.inverse_impl(&current, true)?;
            total_ld.iter_mut().zip(&ld).for_each(|(t, l)| *t += l);
            records.push(rec.expect("recorded pass"));
            current = next;
        }
        let z = current;
        let loss = -(0..z.rows)
            .map(|r| log_standard_normal(z.row(r)) + total_ld[r])
            .sum::<f64>()
            / n;

        let mut grads = FlowGrads {
            layers: self
                .layers
                .iter()
                .map(|l| CouplingGrads {
                    s_net: l.s_net.params().zeros_like(),
                    t_net: l.t_net.params().zeros_like(),
                })
                .collect(),
        };
        // ∂loss/∂z = z / n;  ∂loss/∂(log-det) = −1/n for every layer.
        let mut grad = z;
        grad.data.iter_mut().for_each(|g| *g /= n);
        let ld_weight = -1.0 / n;
        // records[j] belongs to layer L−1−j; backprop visits layers 0..L.
        for (k, layer) in self.layers.iter().enumerate() {
            let rec = &records[self.layers.len() - 1 - k];
            grad = layer.inverse_backward(rec, &grad, ld_weight, &mut grads.layers[k])?;
        }
        Ok((loss, grads))
    }

    /// Training loss alone, without recording activations.
    pub fn loss(&self, batch: &Matrix) -> Result<f64> {
        if batch.rows == 0 {
            return Err(Error::EmptyBatch);
        }
        let lp = self.log_density_batch(batch)?;
        Ok(-lp.iter().sum::<f64>() / batch.rows as f64)
    }
}

fn flow_tensor_name(layer: usize, net: usize, inner: String) -> String {
    let which = if net == 0 { "s_net" } else { "t_net" };
    format!("coupling {layer} {which} {inner}")
}

impl Parameterized for RealNvpFlow {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut v = l.s_net.tensors();
                v.extend(l.t_net.tensors());
                v
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let mut v = l.s_net.tensors_mut();
                v.extend(l.t_net.tensors_mut());
                v
            })
            .collect()
    }

    fn tensor_name(&self, index: usize) -> String {
        locate(index, self.layers.iter().map(|l| (l.s_net.params(), l.t_net.params())))
    }
}

impl Parameterized for FlowGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                let mut v = l.s_net.tensors();
                v.extend(l.t_net.tensors());
                v
            })
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                let mut v = l.s_net.tensors_mut();
                v.extend(l.t_net.tensors_mut());
                v
            })
            .collect()
    }

    fn tensor_name(&self, index: usize) -> String {
        locate(index, self.layers.iter().map(|l| (&l.s_net, &l.t_net)))
    }
}

fn locate<'a>(mut index: usize, layers: impl Iterator<Item = (&'a MlpParams, &'a MlpParams)>) -> String {
    for (k, (s, t)) in layers.enumerate() {
        for (net, p) in [s, t].into_iter().enumerate() {
            let count = p.tensors().len();
            if index < count {
                return flow_tensor_name(k, net, p.tensor_name(index));
            }
            index -= count;
        }
    }
    format!("tensor {index} (out of range)")
}
