//! Model state and the training loop.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::dataset::{images_to_batch, Dataset};
use crate::duet::{duet_loss, marginals, DuetConfig, DuetMode, Representation2D};
use crate::error::{invalid, Error, Result};
use crate::gradcheck::Objective;
use crate::graph::{Graph, Var};
use crate::nn::{Encoder, EncoderConfig, Mlp, Mode, Module, OutputActivation};
use crate::optim::{lr_schedule, Adam, AdamConfig};
use crate::rng::rng_from;
use crate::targets::{Partition, TargetShape};
use crate::tensor::Tensor;
use crate::transforms::{sample_seed, sample_training_pair, GroupSpec, StackItem};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            base_lr: 1e-4,
            warmup_epochs: 10.0,
            seed: 0,
        }
    }
}

/// Encoder, projection head and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub duet: DuetConfig,
    pub encoder: Encoder,
    pub head: Mlp,
    pub optimizer: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl ModelState {
    pub fn new(duet: DuetConfig, encoder_config: &EncoderConfig, adam: AdamConfig, seed: u64) -> Result<Self> {
        duet.validate()?;
        if encoder_config.output_dim != duet.dim() {
            return Err(invalid("encoder output must equal C·G"));
        }
        let encoder = Encoder::new(encoder_config, &mut rng_from(seed, &[0xE7C0]))?;
        let head = Mlp::new(
            &[duet.head_input(), duet.proj_hidden, duet.proj_out],
            OutputActivation::Identity,
            &mut rng_from(seed, &[0x4EAD]),
        )?;
        let optimizer = Adam::new(adam, encoder.params().into_iter().chain(head.params()));
        Ok(Self {
            duet,
            encoder,
            head,
            optimizer,
            epoch: 0,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out
    }

    pub fn representation(&self, zrow: &[f64]) -> Result<Representation2D> {
        marginals(zrow, self.duet.content, self.duet.groups)
    }
}

/// Read-only view of a trained encoder as used by the diagnostics.
pub trait Representer {
    /// `(C, G)`.
    fn layout(&self) -> (usize, usize);
    /// Eval-mode features, one row per input row.
    fn encode(&self, batch: &Tensor) -> Result<Tensor>;
    /// Per-feature final bias `β_d`.
    fn output_bias(&self) -> Vec<f64>;
    fn target_shape(&self) -> Result<TargetShape>;

    fn partition(&self) -> Result<Partition> {
        Partition::new(self.layout().1)
    }

    /// Per-column sums of the final biases.
    fn beta_col(&self) -> Vec<f64> {
        let (c, g) = self.layout();
        let b = self.output_bias();
        (0..g).map(|j| (0..c).map(|i| b[i * g + j]).sum()).collect()
    }

    fn beta_bar(&self) -> f64 {
        let col = self.beta_col();
        col.iter().sum::<f64>() / col.len() as f64
    }
}

impl Representer for ModelState {
    fn layout(&self) -> (usize, usize) {
        (self.duet.content, self.duet.groups)
    }

    fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.encoder.encode(batch)
    }

    fn output_bias(&self) -> Vec<f64> {
        self.encoder.output_bias()
    }

    fn target_shape(&self) -> Result<TargetShape> {
        self.duet.target_shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_content: f64,
    pub loss_group: f64,
    /// Learning rate of the last step.
    pub lr: f64,
    /// `(sample index, g)` of every structured parameter seen this epoch.
    pub seen: Vec<(usize, f64)>,
}

struct StepLosses {
    total: f64,
    content: f64,
    group: f64,
}

fn loss_graph(state: &ModelState, x: Tensor, targets: &Tensor, mode: Mode) -> Result<(Graph, Vec<Var>, Var, StepLosses, Option<crate::nn::BnStats>)> {
    let mut g = Graph::new();
    let mut vars = state.encoder.bind(&mut g, true);
    let head_vars = state.head.bind(&mut g, true);
    let xv = g.constant(x);
    let (z, stats) = state.encoder.forward(&mut g, &vars, xv, mode)?;
    let lv = duet_loss(&mut g, z, &state.head, &head_vars, targets, &state.duet)?;
    vars.extend(head_vars);
    let losses = StepLosses {
        total: g.scalar_value(lv.total),
        content: g.scalar_value(lv.content),
        group: lv.group.map_or(0.0, |v| g.scalar_value(v)),
    };
    Ok((g, vars, lv.total, losses, stats))
}

/// One pass over `dataset` in seeded shuffled batches.
pub fn train_epoch(
    state: &mut ModelState,
    dataset: &Dataset,
    stack: &[StackItem],
    structured: &GroupSpec,
    train: &TrainConfig,
    epoch: usize,
) -> Result<EpochMetrics> {
    if dataset.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if train.batch_size == 0 || train.batch_size > dataset.len() {
        return Err(invalid("batch size must be in 1..=dataset size"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from(train.seed, &[0x5407, epoch as u64]));
    let batches: Vec<&[usize]> = order.chunks(train.batch_size).collect();
    let nb = batches.len();
    let diverged = |step| Error::Divergence {
        epoch,
        step,
        last_good_epoch: epoch.checked_sub(1),
    };
    let mut sums = [0.0; 3];
    let mut lr = 0.0;
    let mut seen = Vec::with_capacity(2 * dataset.len());
    for (b, idx) in batches.iter().enumerate() {
        let mut first = Vec::with_capacity(idx.len());
        let mut second = Vec::with_capacity(idx.len());
        let mut gs = vec![0.0; 2 * idx.len()];
        for (k, &i) in idx.iter().enumerate() {
            let seed = sample_seed(train.seed ^ dataset.base_seed, i, epoch);
            let pair = sample_training_pair(&dataset.images[i], stack, structured, seed)?;
            gs[k] = pair.g1;
            gs[k + idx.len()] = pair.g2;
            seen.push((i, pair.g1));
            seen.push((i, pair.g2));
            first.push(pair.view1);
            second.push(pair.view2);
        }
        let x = images_to_batch(first.iter().chain(&second))?;
        let targets = match state.duet.mode {
            DuetMode::SimclrBaseline => Tensor::zeros(&[0, 0]),
            _ => state.duet.targets(&gs)?,
        };
        let (g, vars, total, losses, stats) = match loss_graph(state, x, &targets, Mode::Train) {
            Err(Error::NonFinite(_)) => return Err(diverged(state.optimizer.step)),
            other => other?,
        };
        if !losses.total.is_finite() {
            return Err(diverged(state.optimizer.step));
        }
        let grads = g.backward(total).map_err(|_| diverged(state.optimizer.step))?;
        let grads: Vec<Tensor> = {
            let params = state.encoder.params().into_iter().chain(state.head.params());
            vars.iter().zip(params).map(|(v, p)| grads.wrt_or_zero(*v, p)).collect()
        };
        lr = lr_schedule(
            epoch as f64 + b as f64 / nb as f64,
            train.epochs as f64,
            train.warmup_epochs,
            train.base_lr,
        )?;
        let step = state.optimizer.step;
        let mut params = state.encoder.params_mut();
        params.extend(state.head.params_mut());
        state
            .optimizer
            .step(&mut params, &grads, lr)
            .map_err(|_| diverged(step))?;
        if let Some(s) = stats {
            state.encoder.apply_bn_stats(&s);
        }
        sums[0] += losses.total;
        sums[1] += losses.content;
        sums[2] += losses.group;
    }
    state.epoch = epoch + 1;
    let n = nb as f64;
    Ok(EpochMetrics {
        epoch,
        loss_total: sums[0] / n,
        loss_content: sums[1] / n,
        loss_group: sums[2] / n,
        lr,
        seen,
    })
}

/// The full DUET loss on a fixed stacked batch, as a function of the encoder
/// and head parameters. Batch normalization runs in train mode.
#[derive(Debug, Clone)]
pub struct DuetObjective {
    pub state: ModelState,
    pub x: Tensor,
    pub targets: Tensor,
}

impl DuetObjective {
    /// `x` stacks the first views of all images, then the second views.
    pub fn new(state: ModelState, x: Tensor, gs: &[f64]) -> Result<Self> {
        let targets = state.duet.targets(gs)?;
        Ok(Self { state, x, targets })
    }

    /// `(L_total, L_C, L_G)`.
    pub fn losses(&self) -> Result<(f64, f64, f64)> {
        let (_, _, _, l, _) = loss_graph(&self.state, self.x.clone(), &self.targets, Mode::Train)?;
        Ok((l.total, l.content, l.group))
    }
}

impl Objective for DuetObjective {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.state.params_mut()
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.losses()?.0)
    }

    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Tensor>)> {
        let (g, vars, total, l, _) = loss_graph(&self.state, self.x.clone(), &self.targets, Mode::Train)?;
        let grads = g.backward(total)?;
        let params = self.state.encoder.params().into_iter().chain(self.state.head.params());
        let out = vars.iter().zip(params).map(|(v, p)| grads.wrt_or_zero(*v, p)).collect();
        Ok((l.total, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::transforms::{Image, TransformKind};

    fn tiny_state(mode: DuetMode, lambda: f64) -> ModelState {
        let duet = DuetConfig {
            content: 3,
            groups: 4,
            lambda,
            proj_hidden: 3,
            proj_out: 5,
            mode,
            ..DuetConfig::default()
        };
        let enc = EncoderConfig {
            input_dim: 16,
            hidden_dims: vec![10, 8],
            output_dim: 12,
            activation: crate::nn::Activation::Relu,
            final_bn: true,
        };
        ModelState::new(duet, &enc, AdamConfig::default(), 11).unwrap()
    }

    fn tiny_dataset(n: usize) -> Dataset {
        let images = (0..n)
            .map(|k| {
                let px = (0..16).map(|i| ((i * 5 + k * 3) % 11) as f64 / 10.0).collect();
                Image::new(4, 4, 1, px).unwrap()
            })
            .collect();
        Dataset::new("tiny", images, None, 5).unwrap()
    }

    #[test]
    fn lambda_zero_total_equals_content() {
        let state = tiny_state(DuetMode::Duet, 0.0);
        let x = Tensor::from_fn(&[4, 16], |i| ((i as f64) * 0.13).sin().abs());
        let obj = DuetObjective::new(state, x, &[0.1, 0.4, 0.6, 0.9]).unwrap();
        let (t, c, g) = obj.losses().unwrap();
        assert_eq!(t, c);
        assert!(g >= 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let state = tiny_state(DuetMode::Duet, 10.0);
        let x = Tensor::from_fn(&[4, 16], |i| ((i as f64) * 0.37).cos().abs());
        let mut obj = DuetObjective::new(state, x, &[0.1, 0.4, 0.6, 0.9]).unwrap();
        let r = grad_check(&mut obj, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut state = tiny_state(DuetMode::Duet, 10.0);
        let before: Vec<Tensor> = state.params_mut().into_iter().map(|t| t.clone()).collect();
        let data = tiny_dataset(4);
        let train = TrainConfig {
            epochs: 2,
            batch_size: 2,
            base_lr: 0.0,
            warmup_epochs: 0.0,
            seed: 1,
        };
        let spec = GroupSpec::new(TransformKind::Rot360);
        train_epoch(&mut state, &data, &[StackItem::Identity], &spec, &train, 0).unwrap();
        let after: Vec<Tensor> = state.params_mut().into_iter().map(|t| t.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_dataset(1);
        let train = TrainConfig {
            epochs: 1,
            batch_size: 1,
            base_lr: 1e-3,
            warmup_epochs: 0.0,
            seed: 3,
        };
        let spec = GroupSpec::new(TransformKind::Rot360);
        let run = || {
            let mut s = tiny_state(DuetMode::Duet, 10.0);
            train_epoch(&mut s, &data, &[StackItem::Identity], &spec, &train, 0).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn all_modes_train() {
        let data = tiny_dataset(4);
        let train = TrainConfig {
            epochs: 1,
            batch_size: 4,
            base_lr: 1e-3,
            warmup_epochs: 0.0,
            seed: 3,
        };
        let spec = GroupSpec::new(TransformKind::Rot360);
        for mode in [DuetMode::Duet, DuetMode::DuetLambda0, DuetMode::SimclrBaseline] {
            let mut s = tiny_state(mode, 10.0);
            let m = train_epoch(&mut s, &data, &[StackItem::Identity], &spec, &train, 0).unwrap();
            assert!(m.loss_total.is_finite());
            assert_eq!(s.encoder.output_dim(), 12);
        }
    }
}
