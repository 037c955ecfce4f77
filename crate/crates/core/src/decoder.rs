//! Detached decoder for controlled generation.
//!
//! The decoder maps frozen encoder features back to pixels. Its input is
//! detached, so training it never changes the encoder.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{images_to_batch, Dataset};
use crate::duet::marginals;
use crate::equivariance::{transform_with_base, FeatureTransformContext};
use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::model::{ModelState, TrainConfig};
use crate::nn::{Encoder, Mlp, Mode, Module, OutputActivation};
use crate::optim::{lr_schedule, Adam, AdamConfig};
use crate::rng::{rng_from, DetRng};
use crate::tensor::Tensor;
use crate::transforms::{apply_transform, sample_seed, sample_view, GroupSpec, Image, StackItem};

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub net: Mlp,
    pub optimizer: Adam,
    /// `(height, width, channels)` of decoded images.
    pub image_dims: (usize, usize, usize),
}

impl Decoder {
    pub fn new(input_dim: usize, hidden: usize, image_dims: (usize, usize, usize), seed: u64) -> Result<Self> {
        let (h, w, c) = image_dims;
        let net = Mlp::new(
            &[input_dim, hidden, h * w * c],
            OutputActivation::Sigmoid,
            &mut rng_from(seed, &[0xDEC0]),
        )?;
        let optimizer = Adam::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            net.params(),
        );
        Ok(Self {
            net,
            optimizer,
            image_dims,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Decode one feature row per image.
    pub fn decode(&self, z: &Tensor) -> Result<Vec<Image>> {
        if z.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "decode",
                expected: vec![z.rows(), self.input_dim()],
                got: z.shape().to_vec(),
            });
        }
        let y = self.net.apply(z)?;
        let (h, w, c) = self.image_dims;
        (0..y.rows())
            .map(|r| Image::new(h, w, c, y.row(r).to_vec()))
            .collect()
    }
}

/// Sum of squared pixel errors.
pub fn recon_loss(decoded: &Image, target: &Image) -> Result<f64> {
    if decoded.dims() != target.dims() {
        return Err(invalid("decoded and target images differ in size"));
    }
    Ok(decoded
        .pixels()
        .iter()
        .zip(target.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Result of one decoder gradient evaluation.
#[derive(Debug, Clone)]
pub struct DecoderGrads {
    pub loss: f64,
    pub decoder: Vec<Tensor>,
    /// Gradients reaching the encoder parameters (zero by construction).
    pub encoder: Vec<Tensor>,
}

/// Reconstruction loss (batch mean of per-image squared error) of
/// `targets` from the detached eval-mode features of `x`.
pub fn decoder_grads(decoder: &Decoder, encoder: &Encoder, x: &Tensor, targets: &Tensor) -> Result<DecoderGrads> {
    let mut g = Graph::new();
    let enc_vars = encoder.bind(&mut g, true);
    let dec_vars = decoder.net.bind(&mut g, true);
    let xv = g.constant(x.clone());
    let (z, _) = encoder.forward(&mut g, &enc_vars, xv, Mode::Eval)?;
    let z = g.detach(z);
    let y = decoder.net.forward(&mut g, &dec_vars, z)?;
    let l = g.squared_error_row_mean(y, targets.clone())?;
    let grads = g.backward(l)?;
    Ok(DecoderGrads {
        loss: g.scalar_value(l),
        decoder: dec_vars
            .iter()
            .zip(decoder.net.params())
            .map(|(v, p)| grads.wrt_or_zero(*v, p))
            .collect(),
        encoder: enc_vars
            .iter()
            .zip(encoder.params())
            .map(|(v, p)| grads.wrt_or_zero(*v, p))
            .collect(),
    })
}

/// Gradients of the reconstruction loss for given (already detached)
/// features.
pub fn decoder_feature_grads(decoder: &Decoder, z: &Tensor, targets: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = decoder.net.bind(&mut g, true);
    let zv = g.constant(z.clone());
    let y = decoder.net.forward(&mut g, &vars, zv)?;
    let l = g.squared_error_row_mean(y, targets.clone())?;
    let grads = g.backward(l)?;
    let out = vars
        .iter()
        .zip(decoder.net.params())
        .map(|(v, p)| grads.wrt_or_zero(*v, p))
        .collect();
    Ok((g.scalar_value(l), out))
}

/// One decoder epoch on structured views only. With probability
/// `shift_prob` a sample is shifted in feature space: the input is
/// `T_{g2−g1}(f(τ_{g1} x))` (base `g1`) and the target `τ_{g2} x`; otherwise
/// the input is `f(τ_{g1} x)` and the target `τ_{g1} x`.
#[allow(clippy::too_many_arguments)]
pub fn train_decoder_epoch_shifted(
    decoder: &mut Decoder,
    model: &ModelState,
    dataset: &Dataset,
    structured: &GroupSpec,
    ctx: &FeatureTransformContext,
    shift_prob: f64,
    train: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if dataset.is_empty() || train.batch_size == 0 {
        return Err(invalid("decoder training needs data and a positive batch size"));
    }
    let (c, groups) = (model.duet.content, model.duet.groups);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng_from(train.seed, &[0xDEC3, epoch as u64]));
    let batches: Vec<&[usize]> = order.chunks(train.batch_size).collect();
    let nb = batches.len();
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let mut inputs = Vec::with_capacity(idx.len());
        let mut targets = Vec::with_capacity(idx.len());
        let mut params = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            let mut r = rng_from(sample_seed(train.seed ^ dataset.base_seed, i, epoch), &[0xDEC4]);
            let g1 = structured.sample_param(&mut r);
            let g2 = if r.gen::<f64>() < shift_prob { structured.sample_param(&mut r) } else { g1 };
            let seed: u64 = r.gen();
            inputs.push(apply_transform(&dataset.images[i], structured, g1, seed)?);
            targets.push(if g2 == g1 {
                inputs[inputs.len() - 1].clone()
            } else {
                apply_transform(&dataset.images[i], structured, g2, seed)?
            });
            params.push((g1, g2));
        }
        let mut z = model.encoder.encode(&images_to_batch(&inputs)?)?;
        for (row, (g1, g2)) in params.iter().enumerate() {
            if g1 == g2 {
                continue;
            }
            let rep = marginals(z.row(row), c, groups)?;
            let moved = transform_with_base(&rep, *g1, g2 - g1, ctx)?;
            let d = z.cols();
            z.data_mut()[row * d..(row + 1) * d].copy_from_slice(&moved.z);
        }
        let (loss, grads) = decoder_feature_grads(decoder, &z, &images_to_batch(&targets)?)?;
        let lr = lr_schedule(
            epoch as f64 + b as f64 / nb as f64,
            train.epochs as f64,
            train.warmup_epochs,
            train.base_lr,
        )?;
        let mut ps = decoder.net.params_mut();
        decoder.optimizer.step(&mut ps, &grads, lr)?;
        total += loss;
    }
    Ok(total / nb as f64)
}

/// One epoch of decoder training on transformed views `τ_g(x)`; returns the
/// mean reconstruction loss.
pub fn train_decoder_epoch(
    decoder: &mut Decoder,
    model: &ModelState,
    dataset: &Dataset,
    stack: &[StackItem],
    structured: &GroupSpec,
    train: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if dataset.is_empty() || train.batch_size == 0 {
        return Err(invalid("decoder training needs data and a positive batch size"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng: DetRng = rng_from(train.seed, &[0xDEC1, epoch as u64]);
    order.shuffle(&mut rng);
    let batches: Vec<&[usize]> = order.chunks(train.batch_size).collect();
    let nb = batches.len();
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let mut views = Vec::with_capacity(idx.len());
        for &i in idx.iter() {
            let mut r = rng_from(sample_seed(train.seed ^ dataset.base_seed, i, epoch), &[0xDEC2]);
            views.push(sample_view(&dataset.images[i], stack, structured, &mut r)?.0);
        }
        let x = images_to_batch(&views)?;
        let grads = decoder_grads(decoder, &model.encoder, &x, &x)?;
        let lr = lr_schedule(
            epoch as f64 + b as f64 / nb as f64,
            train.epochs as f64,
            train.warmup_epochs,
            train.base_lr,
        )?;
        let mut params = decoder.net.params_mut();
        decoder.optimizer.step(&mut params, &grads.decoder, lr)?;
        total += grads.loss;
    }
    Ok(total / nb as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, EncoderConfig};

    #[test]
    fn recon_loss_sum_convention() {
        let t = Image::new(28, 28, 1, vec![0.5; 784]).unwrap();
        let d = Image::new(28, 28, 1, vec![0.6; 784]).unwrap();
        assert_eq!(recon_loss(&t, &t).unwrap(), 0.0);
        assert!((recon_loss(&d, &t).unwrap() - 7.84).abs() < 1e-9);
    }

    #[test]
    fn encoder_receives_no_gradient() {
        let cfg = EncoderConfig {
            input_dim: 4,
            hidden_dims: vec![5],
            output_dim: 6,
            activation: Activation::Relu,
            final_bn: true,
        };
        let enc = Encoder::new(&cfg, &mut rng_from(1, &[])).unwrap();
        let dec = Decoder::new(6, 7, (2, 2, 1), 2).unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.3).sin().abs());
        let g = decoder_grads(&dec, &enc, &x, &x).unwrap();
        assert!(g.encoder.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
        assert!(g.decoder.iter().any(|t| t.max_abs() > 0.0));
    }
}
