//! Multinomial logistic regression on frozen features.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.1 }
    }
}

/// Standardization followed by a linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearProbe {
    fn standardize(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if features.cols() != d {
            return Err(Error::Shape {
                op: "probe",
                expected: vec![features.rows(), d],
                got: features.shape().to_vec(),
            });
        }
        let mut out = features.clone();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let x = self.standardize(features)?;
        let mut y = x.matmul(&self.weight)?;
        let k = self.bias.len();
        for row in y.data_mut().chunks_mut(k) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let y = self.logits(features)?;
        let k = self.bias.len();
        Ok(y.data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.len() != features.rows() || labels.is_empty() {
            return Err(invalid("labels must align with a non-empty feature batch"));
        }
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

/// Full-batch gradient descent on the softmax cross-entropy.
pub fn fit_probe(features: &Tensor, labels: &[usize], classes: usize, config: &ProbeConfig) -> Result<LinearProbe> {
    let (n, d) = (features.rows(), features.cols());
    if n == 0 || labels.len() != n {
        return Err(invalid("labels must align with a non-empty feature batch"));
    }
    if classes < 2 || labels.iter().any(|&l| l >= classes) {
        return Err(invalid("labels must lie in 0..classes with classes >= 2"));
    }
    let mut mean = vec![0.0; d];
    for row in features.data().chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut var = vec![0.0; d];
    for row in features.data().chunks(d) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let scale = var
        .iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    let mut probe = LinearProbe {
        mean,
        scale,
        weight: Tensor::zeros(&[d, classes]),
        bias: Tensor::zeros(&[classes]),
    };
    let x = probe.standardize(features)?;
    for _ in 0..config.epochs {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let w = g.param(probe.weight.clone());
        let b = g.param(probe.bias.clone());
        let y = g.matmul(xv, w)?;
        let y = g.add_row(y, b)?;
        let l = g.softmax_xent(y, labels)?;
        let grads = g.backward(l)?;
        let gw = grads.wrt_or_zero(w, &probe.weight);
        let gb = grads.wrt_or_zero(b, &probe.bias);
        for (p, gr) in probe.weight.data_mut().iter_mut().zip(gw.data()) {
            *p -= config.lr * gr;
        }
        for (p, gr) in probe.bias.data_mut().iter_mut().zip(gb.data()) {
            *p -= config.lr * gr;
        }
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_data_is_classified_perfectly() {
        let feats = Tensor::from_fn(&[40, 2], |i| {
            let (r, c) = (i / 2, i % 2);
            let cls = r % 2;
            let base = if cls == 0 { -2.0 } else { 2.0 };
            base + ((r * 7 + c * 3) % 5) as f64 * 0.1
        });
        let labels: Vec<usize> = (0..40).map(|r| r % 2).collect();
        let p = fit_probe(&feats, &labels, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy(&feats, &labels).unwrap(), 1.0);
    }

    #[test]
    fn label_range_checked() {
        let f = Tensor::zeros(&[2, 2]);
        assert!(fit_probe(&f, &[0, 3], 2, &ProbeConfig::default()).is_err());
    }
}
