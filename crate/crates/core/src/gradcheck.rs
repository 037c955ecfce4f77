//! Central finite-difference gradient checking.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar objective over an ordered list of parameter tensors.
pub trait Objective {
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn loss(&mut self) -> Result<f64>;
    /// Loss and one gradient per parameter, in `params_mut` order.
    fn loss_and_grads(&mut self) -> Result<(f64, Vec<Tensor>)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    /// `(parameter, entry)` attaining the maximum.
    pub worst: Option<(usize, usize)>,
}

/// Gradients smaller than this in magnitude are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compare analytic gradients with central differences of step `eps`.
pub fn grad_check(obj: &mut impl Objective, eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::OutOfRange {
            what: "finite-difference step",
            value: eps,
            lo: 1e-7,
            hi: 1e-3,
        });
    }
    let (_, grads) = obj.loss_and_grads()?;
    let sizes: Vec<usize> = obj.params_mut().iter().map(|p| p.len()).collect();
    if sizes.len() != grads.len() {
        return Err(Error::Shape {
            op: "grad_check",
            expected: alloc::vec![sizes.len()],
            got: alloc::vec![grads.len()],
        });
    }
    let mut per_param = Vec::with_capacity(sizes.len());
    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (i, &n) in sizes.iter().enumerate() {
        let mut worst_here: f64 = 0.0;
        for k in 0..n {
            let orig = obj.params_mut()[i].data()[k];
            obj.params_mut()[i].data_mut()[k] = orig + eps;
            let up = obj.loss()?;
            obj.params_mut()[i].data_mut()[k] = orig - eps;
            let down = obj.loss()?;
            obj.params_mut()[i].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * eps);
            let err = relative_error(grads[i].data()[k], fd);
            if err > worst_here {
                worst_here = err;
            }
            if err > max_rel_error {
                max_rel_error = err;
                worst = Some((i, k));
            }
        }
        per_param.push(worst_here);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        worst,
    })
}
