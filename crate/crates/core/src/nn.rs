//! Dense layers, batch normalization and the MLP encoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::DetRng;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
}

/// Anything holding trainable tensors in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    /// Every persisted tensor (parameters and buffers) with a stable name.
    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)>;
    fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)>;

    /// Register every parameter as a graph leaf, in `params()` order.
    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }
}

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform `±1/√fan_in` initialization.
    pub fn init(input: usize, output: usize, bias: bool, rng: &mut DetRng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor::from_fn(&[input, output], |_| rng.gen_range(-bound..bound));
        let bias = bias.then(|| Tensor::from_fn(&[output], |_| rng.gen_range(-bound..bound)));
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn n_params(&self) -> usize {
        1 + usize::from(self.bias.is_some())
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, vars[0])?;
        match self.bias {
            Some(_) => g.add_row(y, vars[1]),
            None => Ok(y),
        }
    }

    fn push_params<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.push(&self.weight);
        if let Some(b) = &self.bias {
            out.push(b);
        }
    }

    fn push_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }

    fn push_named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

/// Batch moments observed in a train-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batch: usize,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Tensor::full(&[features], 1.0),
            beta: Tensor::zeros(&[features]),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn forward(&self, g: &mut Graph, gamma: Var, beta: Var, x: Var, mode: Mode) -> Result<(Var, Option<BnStats>)> {
        match mode {
            Mode::Train => {
                let batch = g.value(x).rows();
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, self.eps)?;
                Ok((y, Some(BnStats { mean, var, batch })))
            }
            Mode::Eval => {
                let y = g.batch_norm_eval(
                    x,
                    gamma,
                    beta,
                    self.running_mean.data(),
                    self.running_var.data(),
                    self.eps,
                )?;
                Ok((y, None))
            }
        }
    }

    /// Exponential update of the running moments; the variance uses the
    /// unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BnStats) {
        let m = self.momentum;
        let n = stats.batch as f64;
        let correction = if stats.batch > 1 { n / (n - 1.0) } else { 1.0 };
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub final_bn: bool,
}

impl EncoderConfig {
    /// Default desk-scale layout `input → 256 → 128 → C·G`.
    pub fn with_layout(input_dim: usize, content: usize, groups: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![256, 128],
            output_dim: content * groups,
            activation: Activation::Relu,
            final_bn: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(invalid("encoder needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("encoder dimensions must be positive"));
        }
        Ok(())
    }
}

/// MLP backbone: linear layers with ReLU in between, optionally followed by
/// batch normalization. The last linear layer has no bias when a final BN
/// follows it (the BN shift makes it redundant).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<Linear>,
    pub bn: Option<BatchNorm>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend_from_slice(&config.hidden_dims);
        dims.push(config.output_dim);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let bias = !(i == n - 1 && config.final_bn);
                Linear::init(dims[i], dims[i + 1], bias, rng)
            })
            .collect();
        let bn = config.final_bn.then(|| BatchNorm::new(config.output_dim));
        Ok(Self { layers, bn })
    }

    /// Assemble from explicit parts (no layout invariants enforced).
    pub fn from_parts(layers: Vec<Linear>, bn: Option<BatchNorm>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("encoder needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape {
                    op: "Encoder::from_parts",
                    expected: vec![w[0].output_dim()],
                    got: vec![w[1].input_dim()],
                });
            }
        }
        if let Some(bn) = &bn {
            let d = layers.last().map(Linear::output_dim).unwrap_or(0);
            if bn.features() != d {
                return Err(Error::Shape {
                    op: "Encoder::from_parts",
                    expected: vec![d],
                    got: vec![bn.features()],
                });
            }
        }
        Ok(Self { layers, bn })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    /// Forward pass inside a graph. `vars` must come from [`Module::bind`].
    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, mode: Mode) -> Result<(Var, Option<BnStats>)> {
        let xv = g.value(x);
        if xv.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "encoder_forward",
                expected: vec![xv.rows(), self.input_dim()],
                got: xv.shape().to_vec(),
            });
        }
        if !xv.is_finite() {
            return Err(Error::NonFinite("encoder input"));
        }
        let mut h = x;
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let k = layer.n_params();
            h = layer.forward(g, &vars[offset..offset + k], h)?;
            offset += k;
            if i < last {
                h = g.relu(h);
            }
        }
        let mut stats = None;
        if let Some(bn) = &self.bn {
            let (y, s) = bn.forward(g, vars[offset], vars[offset + 1], h, mode)?;
            h = y;
            stats = s;
        }
        if !g.value(h).is_finite() {
            return Err(Error::NonFinite("encoder activations"));
        }
        Ok((h, stats))
    }

    /// Eval-mode forward of a batch `[N × input_dim]` without gradients.
    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let (z, _) = self.forward(&mut g, &vars, x, Mode::Eval)?;
        Ok(g.value(z).clone())
    }

    pub fn apply_bn_stats(&mut self, stats: &BnStats) {
        if let Some(bn) = &mut self.bn {
            bn.update_running(stats);
        }
    }

    /// Final BN shift `β_d` per output feature (zeros without BN).
    pub fn output_bias(&self) -> Vec<f64> {
        match &self.bn {
            Some(bn) => bn.beta.data().to_vec(),
            None => vec![0.0; self.output_dim()],
        }
    }
}

impl Module for Encoder {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.push_params(&mut out);
        }
        if let Some(bn) = &self.bn {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.push_params_mut(&mut out);
        }
        if let Some(bn) = &mut self.bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("{prefix}.layer{i}"), &mut out);
        }
        if let Some(bn) = &self.bn {
            out.push((format!("{prefix}.bn.gamma"), &bn.gamma));
            out.push((format!("{prefix}.bn.beta"), &bn.beta));
            out.push((format!("{prefix}.bn.running_mean"), &bn.running_mean));
            out.push((format!("{prefix}.bn.running_var"), &bn.running_var));
        }
        out
    }

    fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_named_mut(&format!("{prefix}.layer{i}"), &mut out);
        }
        if let Some(bn) = &mut self.bn {
            out.push((format!("{prefix}.bn.gamma"), &mut bn.gamma));
            out.push((format!("{prefix}.bn.beta"), &mut bn.beta));
            out.push((format!("{prefix}.bn.running_mean"), &mut bn.running_mean));
            out.push((format!("{prefix}.bn.running_var"), &mut bn.running_var));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Plain MLP with ReLU between layers; used for the projection head, the
/// decoder and the linear probe (a single layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub output: OutputActivation,
}

impl Mlp {
    pub fn new(dims: &[usize], output: OutputActivation, rng: &mut DetRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(invalid("mlp needs at least input and output dimensions"));
        }
        let layers = dims
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], true, rng))
            .collect();
        Ok(Self { layers, output })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::output_dim).unwrap_or(0)
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let xv = g.value(x);
        if xv.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                expected: vec![xv.rows(), self.input_dim()],
                got: xv.shape().to_vec(),
            });
        }
        let mut h = x;
        let mut offset = 0;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let k = layer.n_params();
            h = layer.forward(g, &vars[offset..offset + k], h)?;
            offset += k;
            if i < last {
                h = g.relu(h);
            }
        }
        Ok(match self.output {
            OutputActivation::Identity => h,
            OutputActivation::Sigmoid => g.sigmoid(h),
        })
    }

    pub fn apply(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.push_params(&mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.push_params_mut(&mut out);
        }
        out
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("{prefix}.layer{i}"), &mut out);
        }
        out
    }

    fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.push_named_mut(&format!("{prefix}.layer{i}"), &mut out);
        }
        out
    }
}
