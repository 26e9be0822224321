//! Fully connected ReLU networks with hand-written reverse-mode gradients and
//! a bias-corrected Adam optimizer.
//!
//! Every network operates on row-major batches (`batch × features`); the
//! single-vector entry points are thin wrappers over a batch of one.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Architecture hyperparameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_scale: f64,
    /// Zero the output layer so the network starts as the constant 0 map.
    pub zero_final_layer: bool,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths,
            output_dim,
            activation: Activation::Relu,
            init_scale: 0.01,
            zero_final_layer: false,
        }
    }

    pub fn with_init_scale(mut self, init_scale: f64) -> Self {
        self.init_scale = init_scale;
        self
    }

    pub fn with_zero_final_layer(mut self, zero: bool) -> Self {
        self.zero_final_layer = zero;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::Config("hidden_widths must be nonempty".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Config("all layer widths must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer: `out = W · in + b` with `W` stored row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn weight_view(&self) -> MatRef<'_> {
        MatRef::new(self.out_dim, self.in_dim, &self.weight)
    }
}

/// Ordered list of dense layers. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    fn check_chain(&self) -> Result<()> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {k} output width {} does not match layer {} input width {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::Config(format!("layer {k} buffers have the wrong length")));
            }
            if !l.weight.iter().chain(&l.bias).all(|x| x.is_finite()) {
                return Err(Error::Config(format!("layer {k} holds non-finite values")));
            }
        }
        Ok(())
    }
}

/// A collection of named parameter tensors visited in a fixed order.
///
/// Parameters and their gradients must enumerate tensors identically so an
/// optimizer can zip them.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn tensor_name(&self, index: usize) -> String;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Parameterized for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn tensor_name(&self, index: usize) -> String {
        let kind = if index % 2 == 0 { "weight" } else { "bias" };
        format!("layer {} {kind}", index / 2)
    }
}

static NEXT_MLP_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_MLP_ID.fetch_add(1, Ordering::Relaxed)
}

/// A multilayer perceptron: affine layers with ReLU between them and a linear
/// output layer.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "MlpRepr", into = "MlpRepr")]
pub struct Mlp {
    config: MlpConfig,
    params: MlpParams,
    // Identity of this parameter set, used to reject caches from other nets
    // or from before a parameter update.
    id: u64,
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MlpRepr {
    config: MlpConfig,
    layers: Vec<Dense>,
}

impl From<Mlp> for MlpRepr {
    fn from(m: Mlp) -> Self {
        Self {
            config: m.config,
            layers: m.params.layers,
        }
    }
}

impl TryFrom<MlpRepr> for Mlp {
    type Error = Error;
    fn try_from(r: MlpRepr) -> Result<Self> {
        Mlp::from_params(r.config, MlpParams { layers: r.layers })
    }
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    mlp_id: u64,
    generation: u64,
    // inputs[l] is the input to layer l; for l ≥ 1 it is the post-ReLU output
    // of layer l − 1, whose sign doubles as the ReLU mask.
    inputs: Vec<Matrix>,
}

impl MlpCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows
    }
}

impl Mlp {
    /// Draws weights i.i.d. from N(0, init_scale²) with zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.layer_dims();
        let n_layers = dims.len();
        let normal = Normal::new(0.0, config.init_scale).expect("validated init scale");
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(k, (i, o))| {
                let mut layer = Dense::zeros(i, o);
                let zero = config.zero_final_layer && k + 1 == n_layers;
                if !zero && config.init_scale > 0.0 {
                    layer
                        .weight
                        .iter_mut()
                        .for_each(|w| *w = normal.sample(&mut rng));
                }
                layer
            })
            .collect();
        Ok(Self {
            config,
            params: MlpParams { layers },
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn from_params(config: MlpConfig, params: MlpParams) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != params.layers.len()
            || dims
                .iter()
                .zip(&params.layers)
                .any(|(&(i, o), l)| l.in_dim != i || l.out_dim != o)
        {
            return Err(Error::Config(
                "layer shapes do not match the network configuration".into(),
            ));
        }
        params.check_chain()?;
        Ok(Self {
            config,
            params,
            id: fresh_id(),
            generation: 0,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Forward pass without recording activations.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut current = input.clone();
        for (k, layer) in self.params.layers.iter().enumerate() {
            current = affine(layer, &current);
            if k + 1 < self.params.layers.len() {
                relu_in_place(&mut current);
            }
        }
        Ok(current)
    }

    /// Forward pass over a batch, returning outputs and the activation cache.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, MlpCache)> {
        self.check_input(input)?;
        let n_layers = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        inputs.push(input.clone());
        for k in 0..n_layers - 1 {
            let mut h = affine(&self.params.layers[k], &inputs[k]);
            relu_in_place(&mut h);
            inputs.push(h);
        }
        let out = affine(&self.params.layers[n_layers - 1], &inputs[n_layers - 1]);
        Ok((
            out,
            MlpCache {
                mlp_id: self.id,
                generation: self.generation,
                inputs,
            },
        ))
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        let (out, cache) = self.forward(&Matrix::from_vec(1, input.len(), input.to_vec()))?;
        Ok((out.data, cache))
    }

    /// Reverse-mode pass: returns parameter gradients and the input gradient
    /// of `⟨grad_output, forward(x)⟩`, summed over the batch.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Matrix) -> Result<(MlpParams, Matrix)> {
        let mut grads = self.params.zeros_like();
        let grad_input = self.backward_accumulate(cache, grad_output, &mut grads)?;
        Ok((grads, grad_input))
    }

    pub fn backward_one(&self, cache: &MlpCache, grad_output: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let g = Matrix::from_vec(1, grad_output.len(), grad_output.to_vec());
        let (grads, gi) = self.backward(cache, &g)?;
        Ok((grads, gi.data))
    }

    /// Like [`Mlp::backward`] but adds parameter gradients into `grads`.
    pub fn backward_accumulate(
        &self,
        cache: &MlpCache,
        grad_output: &Matrix,
        grads: &mut MlpParams,
    ) -> Result<Matrix> {
        if cache.mlp_id != self.id || cache.generation != self.generation {
            return Err(Error::StaleCache);
        }
        let batch = cache.batch_size();
        if grad_output.rows != batch {
            return Err(Error::Shape {
                context: "mlp backward batch",
                expected: batch,
                got: grad_output.rows,
            });
        }
        if grad_output.cols != self.config.output_dim {
            return Err(Error::Shape {
                context: "mlp backward output gradient",
                expected: self.config.output_dim,
                got: grad_output.cols,
            });
        }
        if grads.layers.len() != self.params.layers.len() {
            return Err(Error::Shape {
                context: "mlp gradient layers",
                expected: self.params.layers.len(),
                got: grads.layers.len(),
            });
        }

        let mut delta = grad_output.clone();
        for k in (0..self.params.layers.len()).rev() {
            let layer = &self.params.layers[k];
            let input = &cache.inputs[k];
            let g = &mut grads.layers[k];

            // dW += deltaᵀ · input
            let mut dw = Matrix::from_vec(layer.out_dim, layer.in_dim, std::mem::take(&mut g.weight));
            gemm(layer.out_dim, batch, layer.in_dim, 1.0, delta.view(), true, input.view(), false, 1.0, &mut dw);
            g.weight = dw.data;
            for r in 0..batch {
                for (b, d) in g.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }

            // d(input) = delta · W
            let mut next = Matrix::zeros(batch, layer.in_dim);
            gemm(batch, layer.out_dim, layer.in_dim, 1.0, delta.view(), false, layer.weight_view(), false, 0.0, &mut next);
            if k > 0 {
                // input = ReLU(z); subgradient at z = 0 is 0.
                for (d, &a) in next.data.iter_mut().zip(&input.data) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols != self.config.input_dim {
            return Err(Error::Shape {
                context: "mlp input",
                expected: self.config.input_dim,
                got: input.cols,
            });
        }
        Ok(())
    }
}

impl Parameterized for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.params.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation += 1;
        self.params.tensors_mut()
    }

    fn tensor_name(&self, index: usize) -> String {
        self.params.tensor_name(index)
    }
}

fn affine(layer: &Dense, input: &Matrix) -> Matrix {
    let batch = input.rows;
    let mut out = Matrix::zeros(batch, layer.out_dim);
    for r in 0..batch {
        out.row_mut(r).copy_from_slice(&layer.bias);
    }
    gemm(batch, layer.in_dim, layer.out_dim, 1.0, input.view(), false, layer.weight_view(), true, 1.0, &mut out);
    out
}

fn relu_in_place(m: &mut Matrix) {
    m.data.iter_mut().for_each(|x| {
        if *x < 0.0 {
            *x = 0.0
        }
    });
}

/// Adam hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with moment buffers shaped like the parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update in place. Gradients are validated before any
    /// parameter or moment is touched.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, learning_rate: f64) -> Result<()>
    where
        P: Parameterized + ?Sized,
        G: Parameterized + ?Sized,
    {
        let grad_tensors = grads.tensors();
        for (i, g) in grad_tensors.iter().enumerate() {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: grads.tensor_name(i),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = grad_tensors.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        let mut param_tensors = params.tensors_mut();
        let shapes_match = param_tensors.len() == grad_tensors.len()
            && grad_tensors.len() == self.first_moment.len()
            && param_tensors
                .iter()
                .zip(&grad_tensors)
                .zip(&self.first_moment)
                .all(|((p, g), m)| p.len() == g.len() && g.len() == m.len());
        if !shapes_match {
            return Err(Error::Shape {
                context: "adam parameter tensors",
                expected: self.first_moment.iter().map(Vec::len).sum(),
                got: grad_tensors.iter().map(|g| g.len()).sum(),
            });
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in param_tensors
            .iter_mut()
            .zip(&grad_tensors)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
