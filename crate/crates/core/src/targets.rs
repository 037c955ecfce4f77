//! Discretized target distributions over a `G`-bin partition of `[0, 1]`
//! and the Jensen-Shannon divergence.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};

/// Number of midpoint nodes per bin for the coarse von Mises rule; the fine
/// rule uses twice as many and the two are Richardson-combined.
pub const VM_NODES_PER_BIN: usize = 256;

/// Equal-width partition `Ω_j = [j/G, (j+1)/G)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    bins: usize,
}

impl Partition {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(invalid("partition needs at least 2 bins"));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn edge(&self, j: usize) -> f64 {
        j as f64 / self.bins as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.bins as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.bins).map(|j| self.center(j)).collect()
    }

    /// Index of the bin containing `g` (clamped into `[0, 1)`).
    pub fn bin_of(&self, g: f64) -> usize {
        let j = (g * self.bins as f64).floor();
        if j < 0.0 {
            0
        } else {
            (j as usize).min(self.bins - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFamily {
    Gaussian,
    VonMises,
}

/// Target family together with its concentration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetShape {
    Gaussian { sigma: f64 },
    VonMises { kappa: f64 },
}

impl TargetShape {
    /// Shape of the given family with uncertainty `sigma`; von Mises uses
    /// `kappa = 1 / (2π σ²)`.
    pub fn from_sigma(family: TargetFamily, sigma: f64) -> Result<Self> {
        match family {
            TargetFamily::Gaussian => {
                if !(sigma > 0.0) {
                    return Err(invalid("sigma must be positive"));
                }
                Ok(Self::Gaussian { sigma })
            }
            TargetFamily::VonMises => Ok(Self::VonMises {
                kappa: kappa_from_sigma(sigma)?,
            }),
        }
    }

    pub fn family(&self) -> TargetFamily {
        match self {
            Self::Gaussian { .. } => TargetFamily::Gaussian,
            Self::VonMises { .. } => TargetFamily::VonMises,
        }
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self, Self::VonMises { .. })
    }

    /// The uncertainty on the common `σ` scale.
    pub fn sigma(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma } => sigma,
            Self::VonMises { kappa } => sigma_from_kappa(kappa),
        }
    }
}

/// A discretized target `Q(g|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub shape: TargetShape,
    pub mean: f64,
    pub probs: Vec<f64>,
}

pub fn kappa_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma must be positive"));
    }
    Ok(1.0 / (2.0 * PI * sigma * sigma))
}

pub fn sigma_from_kappa(kappa: f64) -> f64 {
    1.0 / (2.0 * PI * kappa).sqrt()
}

/// Standard normal mass on `[a, b]`, evaluated on the side of the origin
/// where the complementary error function keeps full precision.
fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * (libm::erfc(-a * FRAC_1_SQRT_2) + libm::erfc(b * FRAC_1_SQRT_2))
    }
}

/// Integrate the target over each bin and normalize over `[0, 1]`.
pub fn discretize_target(shape: TargetShape, mean: f64, partition: Partition) -> Result<TargetDistribution> {
    if !mean.is_finite() {
        return Err(Error::NonFinite("target mean"));
    }
    let g = partition.bins();
    let probs = match shape {
        TargetShape::Gaussian { sigma } => {
            if !(sigma > 0.0) {
                return Err(invalid("sigma must be positive"));
            }
            let z = |t: f64| (t - mean) / sigma;
            let norm = normal_mass(z(0.0), z(1.0));
            if !(norm.abs() >= 1e-300) {
                return Err(Error::DegenerateTarget { mean });
            }
            (0..g)
                .map(|j| (normal_mass(z(partition.edge(j)), z(partition.edge(j + 1))) / norm).max(0.0))
                .collect::<Vec<_>>()
        }
        TargetShape::VonMises { kappa } => {
            if !(kappa > 0.0) {
                return Err(invalid("kappa must be positive"));
            }
            let coarse = vm_bin_masses(kappa, mean, g, VM_NODES_PER_BIN);
            let fine = vm_bin_masses(kappa, mean, g, 2 * VM_NODES_PER_BIN);
            let mut q: Vec<f64> = coarse
                .iter()
                .zip(&fine)
                .map(|(c, f)| ((4.0 * f - c) / 3.0).max(0.0))
                .collect();
            let total: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= total);
            q
        }
    };
    Ok(TargetDistribution { shape, mean, probs })
}

/// Composite midpoint integral of `exp(κ(cos 2π(t−g) − 1))` over every bin.
fn vm_bin_masses(kappa: f64, mean: f64, bins: usize, nodes: usize) -> Vec<f64> {
    let h = 1.0 / (bins * nodes) as f64;
    let (s0, c0) = (2.0 * PI * mean).sin_cos();
    (0..bins)
        .map(|j| {
            let mut acc = 0.0;
            for k in 0..nodes {
                let t = (j * nodes + k) as f64 * h + 0.5 * h;
                let (s, c) = (2.0 * PI * t).sin_cos();
                // cos(2π(t − g)) by angle subtraction
                acc += (kappa * (c * c0 + s * s0 - 1.0)).exp();
            }
            acc * h
        })
        .collect()
}

fn check_prob(p: &[f64], what: &'static str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid(alloc::format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(alloc::format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `½ KL(P‖M) + ½ KL(Q‖M)` with `M = (P+Q)/2`, natural log, `0·ln 0 = 0`.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            op: "js_divergence",
            expected: alloc::vec![p.len()],
            got: alloc::vec![q.len()],
        });
    }
    check_prob(p, "P")?;
    check_prob(q, "Q")?;
    let mut s = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            s += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            s += 0.5 * b * (b / m).ln();
        }
    }
    Ok(s.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss() -> TargetShape {
        TargetShape::Gaussian { sigma: 0.2 }
    }

    #[test]
    fn kappa_examples() {
        let s = 1.0 / (2.0 * PI).sqrt();
        assert!((kappa_from_sigma(s).unwrap() - 1.0).abs() < 1e-15);
        assert!((kappa_from_sigma(0.2).unwrap() - 3.978_873_577_297_383_5).abs() < 1e-12);
        for s in [0.01, 0.2, 3.0] {
            assert!((sigma_from_kappa(kappa_from_sigma(s).unwrap()) - s).abs() < 1e-12);
        }
        assert!(kappa_from_sigma(0.0).is_err());
        assert!(kappa_from_sigma(-1.0).is_err());
    }

    #[test]
    fn partition_geometry() {
        let p = Partition::new(8).unwrap();
        assert_eq!(p.edge(0), 0.0);
        assert_eq!(p.edge(8), 1.0);
        assert_eq!(p.center(0), 1.0 / 16.0);
        assert_eq!(p.bin_of(0.25), 2);
        assert_eq!(p.bin_of(1.0), 7);
        assert!(Partition::new(1).is_err());
    }

    #[test]
    fn wide_gaussian_is_nearly_uniform() {
        let p = Partition::new(8).unwrap();
        for g in [0.0, 0.3, 0.9] {
            let q = discretize_target(TargetShape::Gaussian { sigma: 10.0 }, g, p).unwrap();
            for v in q.probs {
                assert!((v - 0.125).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn von_mises_shift_by_whole_bins_rotates_vector() {
        let p = Partition::new(8).unwrap();
        let shape = TargetShape::VonMises { kappa: 3.98 };
        let base = discretize_target(shape, 0.21, p).unwrap().probs;
        for k in 1..8 {
            let shifted = discretize_target(shape, 0.21 + k as f64 / 8.0, p).unwrap().probs;
            for j in 0..8 {
                assert!((shifted[(j + k) % 8] - base[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_gaussian_normalizer_is_an_error() {
        let p = Partition::new(8).unwrap();
        let r = discretize_target(TargetShape::Gaussian { sigma: 0.01 }, 5.0, p);
        assert!(matches!(r, Err(Error::DegenerateTarget { .. })));
    }

    #[test]
    fn narrow_gaussian_concentrates_in_center_bin() {
        let p = Partition::new(8).unwrap();
        let q = discretize_target(TargetShape::Gaussian { sigma: 0.005 }, p.center(3), p).unwrap();
        assert!(q.probs[3] > 0.999);
    }

    #[test]
    fn gaussian_reflection_symmetry() {
        let p = Partition::new(8).unwrap();
        let a = discretize_target(gauss(), 0.31, p).unwrap().probs;
        let b = discretize_target(gauss(), 0.69, p).unwrap().probs;
        for j in 0..8 {
            assert!((a[j] - b[7 - j]).abs() < 1e-10);
        }
    }

    #[test]
    fn js_examples() {
        assert_eq!(js_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let d = js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - core::f64::consts::LN_2).abs() < 1e-15);
        // ½·[0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25)] + ½·[1·ln(1/0.75)]
        let oracle = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
            + 0.5 * (1.0f64 / 0.75).ln();
        let d = js_divergence(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((d - oracle).abs() < 1e-15);
        assert!((d - 0.2158).abs() < 1e-4);
    }

    #[test]
    fn js_rejects_bad_inputs() {
        assert!(js_divergence(&[0.5, 0.5], &[1.0]).is_err());
        assert!(js_divergence(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(js_divergence(&[0.5, 0.6], &[0.5, 0.5]).is_err());
    }
}
