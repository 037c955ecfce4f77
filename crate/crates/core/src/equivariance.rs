//! The representation-space transform `T_g`, parameter recovery and the
//! equivariance diagnostics built on them.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::dataset::images_to_batch;
use crate::duet::{marginals, Representation2D};
use crate::error::{Error, Result};
use crate::graph::{softmax_in_place, LOG_FLOOR};
use crate::model::Representer;
use crate::rng::mix_seed;
use crate::targets::{discretize_target, Partition, TargetShape};
use crate::tensor::{rem_euclid, Tensor};
use crate::transforms::{apply_transform, GroupSpec, Image};

const GN_MAX_ITERS: usize = 50;
const CALIBRATION_ITERS: usize = 40;

/// Distance on the circle of circumference 1.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = rem_euclid(a - b, 1.0);
    d.min(1.0 - d)
}

/// Signed wrapped difference `a − b` in `[-½, ½)`.
fn wrapped_diff(a: f64, b: f64) -> f64 {
    rem_euclid(a - b + 0.5, 1.0) - 0.5
}

fn expectation(p: &[f64], partition: Partition) -> f64 {
    p.iter()
        .enumerate()
        .map(|(j, pj)| pj * partition.center(j))
        .sum()
}

/// Angle of the circular baricenter, in `[0, 1)`.
pub fn vm_baricenter(p: &[f64], partition: Partition) -> Result<f64> {
    let (mut x, mut y) = (0.0, 0.0);
    for (j, pj) in p.iter().enumerate() {
        let (s, c) = (2.0 * PI * partition.center(j)).sin_cos();
        x += pj * c;
        y += pj * s;
    }
    if x.hypot(y) < 1e-9 {
        return Err(Error::Unrecoverable);
    }
    Ok(rem_euclid(y.atan2(x) / (2.0 * PI), 1.0))
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &k| m[i][col].abs().total_cmp(&m[k][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}

/// Least-squares fit of `a·exp(−(g_j − m)² / 2s²)` to `(g_j, P_j)` by
/// Gauss-Newton over `(m, ln s, a)`. Returns the fitted mean, or `None`
/// when the iteration does not converge.
pub fn gaussian_profile_fit(p: &[f64], partition: Partition, sigma_init: f64) -> Option<f64> {
    let xs = partition.centers();
    let amp0 = p.iter().copied().fold(0.0, f64::max);
    let mut theta = [expectation(p, partition), sigma_init.ln(), amp0];
    let cost = |t: &[f64; 3]| -> f64 {
        let s2 = (2.0 * t[1]).exp();
        xs.iter()
            .zip(p)
            .map(|(x, pj)| {
                let r = t[2] * (-(x - t[0]) * (x - t[0]) / (2.0 * s2)).exp() - pj;
                r * r
            })
            .sum()
    };
    let mut c0 = cost(&theta);
    for _ in 0..GN_MAX_ITERS {
        let s2 = (2.0 * theta[1]).exp();
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (x, pj) in xs.iter().zip(p) {
            let d = x - theta[0];
            let e = (-d * d / (2.0 * s2)).exp();
            let y = theta[2] * e;
            let jac = [y * d / s2, y * d * d / s2, e];
            let r = y - pj;
            for a in 0..3 {
                jtr[a] += jac[a] * r;
                for b in 0..3 {
                    jtj[a][b] += jac[a] * jac[b];
                }
            }
        }
        let step = solve3(jtj, jtr)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = [
                theta[0] - t * step[0],
                theta[1] - t * step[1],
                theta[2] - t * step[2],
            ];
            let c = cost(&cand);
            if c.is_finite() && c <= c0 {
                accepted = Some((cand, c));
                break;
            }
            t *= 0.5;
        }
        let (cand, c) = accepted?;
        let moved = (0..3).map(|i| (cand[i] - theta[i]).abs()).fold(0.0, f64::max);
        theta = cand;
        c0 = c;
        if moved < 1e-13 {
            return theta[0].is_finite().then_some(theta[0]);
        }
    }
    None
}

/// The raw location estimate before calibration.
pub fn base_estimate(p: &[f64], shape: TargetShape, partition: Partition) -> Result<f64> {
    match shape {
        TargetShape::VonMises { .. } => vm_baricenter(p, partition),
        TargetShape::Gaussian { sigma } => {
            let support = p.iter().filter(|v| **v > LOG_FLOOR).count();
            if support < 3 {
                return Ok(expectation(p, partition));
            }
            Ok(gaussian_profile_fit(p, partition, sigma).unwrap_or_else(|| expectation(p, partition)))
        }
    }
}

fn check_marginal(p: &[f64], partition: Partition) -> Result<()> {
    if p.len() != partition.bins() {
        return Err(Error::Shape {
            op: "recover_parameter",
            expected: vec![partition.bins()],
            got: vec![p.len()],
        });
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite("group marginal"));
    }
    Ok(())
}

/// Recover the transformation parameter from a group marginal.
///
/// The location estimate (circular baricenter for von Mises, Gaussian profile
/// fit otherwise) is calibrated against the discretized targets: the result
/// is the `g` whose target `Q(g)` has the same estimate as `P`. Exact targets
/// are therefore recovered exactly, which the group axioms of `T_g` rely on.
pub fn recover_parameter(p: &[f64], shape: TargetShape, partition: Partition) -> Result<f64> {
    check_marginal(p, partition)?;
    let want = base_estimate(p, shape, partition)?;
    if !shape.is_cyclic() && p.iter().filter(|v| **v > LOG_FLOOR).count() < 3 {
        return Ok(want);
    }
    let cyclic = shape.is_cyclic();
    let diff = |a: f64, b: f64| if cyclic { wrapped_diff(a, b) } else { a - b };
    let est = |g: f64| -> Result<f64> {
        let q = discretize_target(shape, g, partition)?;
        base_estimate(&q.probs, shape, partition)
    };
    let h = 1e-6;
    let mut g = want;
    for _ in 0..CALIBRATION_ITERS {
        let Ok(now) = est(g) else { return Ok(want) };
        let r = diff(want, now);
        if r.abs() < 1e-15 {
            break;
        }
        let (Ok(up), Ok(down)) = (est(g + h), est(g - h)) else {
            return Ok(want);
        };
        let slope = diff(up, down) / (2.0 * h);
        if !(slope.abs() > 1e-3) {
            return Ok(want);
        }
        g += r / slope;
    }
    match est(g) {
        Ok(now) if diff(want, now).abs() < 1e-9 => Ok(if cyclic { rem_euclid(g, 1.0) } else { g }),
        _ => Ok(want),
    }
}

/// Column sums whose softmax is `qhat` and whose mean is `beta_bar`.
pub fn mu_hat(qhat: &[f64], beta_bar: f64) -> Vec<f64> {
    let logs: Vec<f64> = qhat.iter().map(|q| q.max(LOG_FLOOR).ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.iter().map(|l| l - mean + beta_bar).collect()
}

/// Everything `T_g` needs besides the representation itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransformContext {
    pub beta_col: Vec<f64>,
    pub shape: TargetShape,
    pub partition: Partition,
}

impl FeatureTransformContext {
    pub fn new(beta_col: Vec<f64>, shape: TargetShape, partition: Partition) -> Result<Self> {
        if beta_col.len() != partition.bins() || beta_col.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("column biases"));
        }
        Ok(Self {
            beta_col,
            shape,
            partition,
        })
    }

    pub fn from_model(model: &impl Representer) -> Result<Self> {
        Self::new(model.beta_col(), model.target_shape()?, model.partition()?)
    }

    pub fn beta_bar(&self) -> f64 {
        self.beta_col.iter().sum::<f64>() / self.beta_col.len() as f64
    }

    pub fn cyclic(&self) -> bool {
        self.shape.is_cyclic()
    }

    /// Target column sums for mean `g0 + g`.
    pub fn shifted_column_sums(&self, g0: f64, g: f64) -> Result<Vec<f64>> {
        let mean = if self.cyclic() { rem_euclid(g0 + g, 1.0) } else { g0 + g };
        let q = discretize_target(self.shape, mean, self.partition)?;
        Ok(mu_hat(&q.probs, self.beta_bar()))
    }

    pub fn recover(&self, z: &Representation2D) -> Result<f64> {
        recover_parameter(&z.group_marginal, self.shape, self.partition)
    }
}

/// `T_g` with a known base parameter `g0` of `z`.
pub fn transform_with_base(z: &Representation2D, g0: f64, g: f64, ctx: &FeatureTransformContext) -> Result<Representation2D> {
    if z.groups != ctx.partition.bins() {
        return Err(Error::Shape {
            op: "transform_representation",
            expected: vec![ctx.partition.bins()],
            got: vec![z.groups],
        });
    }
    let target = ctx.shifted_column_sums(g0, g)?;
    let c = z.content_dim as f64;
    let mut out = z.z.clone();
    for row in out.chunks_mut(z.groups) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v - z.column_sums[j] / c + target[j] / c;
        }
    }
    marginals(&out, z.content_dim, z.groups)
}

/// `T_g(z)`: swap the column sums of `z` for those of the target shifted by
/// `g` from the parameter recovered from `z`.
pub fn transform_representation(z: &Representation2D, g: f64, ctx: &FeatureTransformContext) -> Result<Representation2D> {
    let g0 = ctx.recover(z)?;
    transform_with_base(z, g0, g, ctx)
}

/// Apply `T_g` to a flat feature row.
pub fn transform_features(zrow: &[f64], content: usize, g: f64, ctx: &FeatureTransformContext) -> Result<Vec<f64>> {
    let z = marginals(zrow, content, ctx.partition.bins())?;
    Ok(transform_representation(&z, g, ctx)?.z)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomReport {
    pub neutral: f64,
    pub inverse: f64,
    pub associativity: f64,
    /// Largest non-finite count among all composed outputs (0 when closed).
    pub closure_failures: usize,
}

impl AxiomReport {
    pub fn max_residual(&self) -> f64 {
        self.neutral.max(self.inverse).max(self.associativity)
    }
}

/// Residuals of `T_0 = id`, `T_{−g}∘T_g = id` and `T_{g'}∘T_g = T_{g+g'}`
/// over all entries of `z` (∞-norm).
pub fn check_group_axioms(z: &Representation2D, gs: &[f64], ctx: &FeatureTransformContext) -> Result<AxiomReport> {
    let mut report = AxiomReport {
        neutral: 0.0,
        inverse: 0.0,
        associativity: 0.0,
        closure_failures: 0,
    };
    let mut note = |r: &Representation2D| {
        if r.z.iter().any(|v| !v.is_finite()) {
            report.closure_failures += 1;
        }
    };
    let t0 = transform_representation(z, 0.0, ctx)?;
    note(&t0);
    let neutral = max_abs_diff(&t0.z, &z.z);
    let mut inverse: f64 = 0.0;
    let mut assoc: f64 = 0.0;
    for &g in gs {
        let tg = transform_representation(z, g, ctx)?;
        note(&tg);
        let back = transform_representation(&tg, -g, ctx)?;
        note(&back);
        inverse = inverse.max(max_abs_diff(&back.z, &z.z));
        for &h in gs {
            let composed = transform_representation(&tg, h, ctx)?;
            let direct = transform_representation(z, g + h, ctx)?;
            note(&composed);
            note(&direct);
            assoc = assoc.max(max_abs_diff(&composed.z, &direct.z));
        }
    }
    report.neutral = neutral;
    report.inverse = inverse;
    report.associativity = assoc;
    Ok(report)
}

/// `μ̂'_{G−1}(0)` by central differences (`h = 1e-6`): the Lipschitz constant
/// of `T_g` in ∞-norm on column sums for Gaussian targets.
pub fn lipschitz_tg(sigma: f64, partition: Partition) -> Result<f64> {
    let shape = TargetShape::Gaussian { sigma };
    let h = 1e-6;
    let last = partition.bins() - 1;
    let at = |g: f64| -> Result<f64> {
        let q = discretize_target(shape, g, partition)?;
        Ok(mu_hat(&q.probs, 0.0)[last])
    };
    Ok(((at(h)? - at(-h)?) / (2.0 * h)).abs())
}

/// Largest `|Δμ̂_j / Δg|` over a uniform sweep of `n` target means in
/// `[0, 1]`; the generic (any family) estimate of the same constant.
pub fn lipschitz_tg_sweep(shape: TargetShape, partition: Partition, n: usize) -> Result<f64> {
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut best: f64 = 0.0;
    for k in 0..n.max(2) {
        let g = k as f64 / (n.max(2) - 1) as f64;
        let mu = mu_hat(&discretize_target(shape, g, partition)?.probs, 0.0);
        if let Some((pg, pm)) = &prev {
            let slope = max_abs_diff(&mu, pm) / (g - pg);
            best = best.max(slope);
        }
        prev = Some((g, mu));
    }
    Ok(best)
}

/// Softmax-normalized joint over all `C·G` entries versus the product of its
/// marginals, squared Frobenius distance.
pub fn delta_p(z: &Representation2D) -> f64 {
    let mut joint = z.z.clone();
    softmax_in_place(&mut joint);
    let (c, g) = (z.content_dim, z.groups);
    let mut pc = vec![0.0; c];
    let mut pg = vec![0.0; g];
    for i in 0..c {
        for j in 0..g {
            pc[i] += joint[i * g + j];
            pg[j] += joint[i * g + j];
        }
    }
    let mut s = 0.0;
    for i in 0..c {
        for j in 0..g {
            let d = joint[i * g + j] - pc[i] * pg[j];
            s += d * d;
        }
    }
    s
}

fn encode_images(model: &impl Representer, images: &[Image]) -> Result<Vec<Representation2D>> {
    let (c, g) = model.layout();
    let z = model.encode(&images_to_batch(images)?)?;
    (0..z.rows()).map(|r| marginals(z.row(r), c, g)).collect()
}

/// Mean group marginal over `images`.
pub fn aggregate_group_marginals(model: &impl Representer, images: &[Image]) -> Result<Vec<f64>> {
    let (_, g) = model.layout();
    let reps = encode_images(model, images)?;
    let mut mean = vec![0.0; g];
    for r in &reps {
        for (m, p) in mean.iter_mut().zip(&r.group_marginal) {
            *m += p / reps.len() as f64;
        }
    }
    Ok(mean)
}

/// Distance between parameters, circular for cyclic families.
pub fn param_distance(a: f64, b: f64, cyclic: bool) -> f64 {
    if cyclic {
        circular_distance(a, b)
    } else {
        (a - b).abs()
    }
}

/// Seed used for the transformation of image `i` in the diagnostics.
fn image_seed(seed: u64, i: usize) -> u64 {
    mix_seed(seed, &[i as u64, 0xE9])
}

/// Recovered parameter of every `τ_{g_i}(x_i)`.
pub fn recover_transformed(model: &impl Representer, images: &[Image], gs: &[f64], spec: &GroupSpec, seed: u64) -> Result<Vec<f64>> {
    let shape = model.target_shape()?;
    let partition = model.partition()?;
    let views = images
        .iter()
        .zip(gs)
        .enumerate()
        .map(|(i, (im, g))| apply_transform(im, spec, *g, image_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    encode_images(model, &views)?
        .iter()
        .map(|r| recover_parameter(&r.group_marginal, shape, partition))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceReport {
    pub grid: Vec<f64>,
    /// `ℓ[g1][g2]`, mean squared L2 distance in feature space.
    pub heatmap: Tensor,
    /// The same on column sums.
    pub colsum_heatmap: Tensor,
    pub hit_rate: f64,
    pub colsum_hit_rate: f64,
    /// Mean recovery error of `τ_g(x)` per grid value.
    pub recovery_error: Vec<f64>,
    pub n_images: usize,
}

fn diagonal_hit_rate(m: &Tensor, grid: &[f64], cyclic: bool, tolerance: f64) -> f64 {
    let res = grid.len();
    let hits = (0..res)
        .filter(|&r| {
            let row = m.row(r);
            let best = (0..res).fold(0, |b, k| if row[k] < row[b] { k } else { b });
            param_distance(grid[best], grid[r], cyclic) <= tolerance + 1e-12
        })
        .count();
    hits as f64 / res as f64
}

/// `ℓ_{g1,g2} = ‖f(τ_{g1} x) − T_{g2 − g_id}(f(x))‖²` averaged over images,
/// where `g_id` is the parameter of the untransformed input. The grid is
/// `k / (resolution − 1)`; a row hits when its argmin lies within two grid
/// steps of the diagonal.
pub fn equivariance_heatmap(
    model: &impl Representer,
    images: &[Image],
    spec: &GroupSpec,
    resolution: usize,
    seed: u64,
) -> Result<EquivarianceReport> {
    if resolution < 2 || images.is_empty() {
        return Err(crate::error::invalid("heatmap needs images and resolution >= 2"));
    }
    let ctx = FeatureTransformContext::from_model(model)?;
    let cyclic = ctx.cyclic();
    let grid: Vec<f64> = (0..resolution)
        .map(|k| k as f64 / (resolution - 1) as f64)
        .collect();
    let g_id = spec.identity_param();
    let base = encode_images(model, images)?;
    let mut heat = vec![0.0; resolution * resolution];
    let mut colsum = vec![0.0; resolution * resolution];
    let mut rec_err = vec![0.0; resolution];
    let n = images.len() as f64;
    for (i, (img, fx)) in images.iter().zip(&base).enumerate() {
        let g0 = ctx.recover(fx)?;
        let shifted = grid
            .iter()
            .map(|g2| transform_with_base(fx, g0, g2 - g_id, &ctx))
            .collect::<Result<Vec<_>>>()?;
        let views = grid
            .iter()
            .map(|g1| apply_transform(img, spec, *g1, image_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        let encoded = encode_images(model, &views)?;
        for (r, (fy, g1)) in encoded.iter().zip(&grid).enumerate() {
            let rec = ctx.recover(fy)?;
            rec_err[r] += param_distance(rec, *g1, cyclic) / n;
            for (k, t) in shifted.iter().enumerate() {
                let d: f64 = fy.z.iter().zip(&t.z).map(|(a, b)| (a - b) * (a - b)).sum();
                let dc: f64 = fy
                    .column_sums
                    .iter()
                    .zip(&t.column_sums)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                heat[r * resolution + k] += d / n;
                colsum[r * resolution + k] += dc / n;
            }
        }
    }
    let heatmap = Tensor::new(vec![resolution, resolution], heat)?;
    let colsum_heatmap = Tensor::new(vec![resolution, resolution], colsum)?;
    let step = 1.0 / (resolution - 1) as f64;
    Ok(EquivarianceReport {
        hit_rate: diagonal_hit_rate(&heatmap, &grid, cyclic, 2.0 * step),
        colsum_hit_rate: diagonal_hit_rate(&colsum_heatmap, &grid, cyclic, 2.0 * step),
        grid,
        heatmap,
        colsum_heatmap,
        recovery_error: rec_err,
        n_images: images.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub g: f64,
    /// `‖f(τ_g x) − T_{g−g_id}(f(x))‖₂` in feature space.
    pub observed: f64,
    /// The same distance on column sums.
    pub observed_colsum: f64,
    /// `min_i |g − g_i|` over the seen parameters.
    pub min_distance: f64,
    /// Lipschitz constant of `T_g` on column sums.
    pub l_tg: f64,
    /// Empirical lower bound on `L_f·L_τ` around `g`.
    pub lf_ltau_lower: f64,
    /// `(L_f·L_τ + L_Tg)·min_i|g − g_i|` using the empirical estimate.
    pub bound: f64,
}

/// Per-probe terms of the equivariance bound for one image.
pub fn equivariance_bound_report(
    model: &impl Representer,
    image: &Image,
    spec: &GroupSpec,
    seen_gs: &[f64],
    probe_gs: &[f64],
    seed: u64,
) -> Result<Vec<BoundRow>> {
    let ctx = FeatureTransformContext::from_model(model)?;
    let cyclic = ctx.cyclic();
    let l_tg = match ctx.shape {
        TargetShape::Gaussian { sigma } => lipschitz_tg(sigma, ctx.partition)?,
        shape => lipschitz_tg_sweep(shape, ctx.partition, 2001)?,
    };
    let fx = encode_images(model, core::slice::from_ref(image))?.remove(0);
    let g0 = ctx.recover(&fx)?;
    let g_id = spec.identity_param();
    let img_seed = image_seed(seed, 0);
    let delta = 0.01;
    let mut rows = Vec::with_capacity(probe_gs.len());
    for &g in probe_gs {
        let lo = (g - delta).max(0.0);
        let hi = (g + delta).min(1.0);
        let views = [
            apply_transform(image, spec, g, img_seed)?,
            apply_transform(image, spec, lo, img_seed)?,
            apply_transform(image, spec, hi, img_seed)?,
        ];
        let enc = encode_images(model, &views)?;
        let t = transform_with_base(&fx, g0, g - g_id, &ctx)?;
        let l2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let observed = l2(&enc[0].z, &t.z);
        let observed_colsum = l2(&enc[0].column_sums, &t.column_sums);
        let mut lf: f64 = 0.0;
        for (k, gk) in [(1, lo), (2, hi)] {
            if (gk - g).abs() > 0.0 {
                lf = lf.max(l2(&enc[k].column_sums, &enc[0].column_sums) / (gk - g).abs());
            }
        }
        let min_distance = seen_gs
            .iter()
            .map(|s| param_distance(g, *s, cyclic))
            .fold(f64::INFINITY, f64::min);
        let min_distance = if min_distance.is_finite() { min_distance } else { 1.0 };
        rows.push(BoundRow {
            g,
            observed,
            observed_colsum,
            min_distance,
            l_tg,
            lf_ltau_lower: lf,
            bound: (lf + l_tg) * min_distance,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part() -> Partition {
        Partition::new(8).unwrap()
    }

    #[test]
    fn one_hot_recovers_bin_center() {
        for shape in [TargetShape::Gaussian { sigma: 0.2 }, TargetShape::VonMises { kappa: 4.0 }] {
            for j in 0..8 {
                let mut p = vec![0.0; 8];
                p[j] = 1.0;
                let g = recover_parameter(&p, shape, part()).unwrap();
                assert!((g - part().center(j)).abs() < 1e-12, "{shape:?} {j} {g}");
            }
        }
    }

    #[test]
    fn uniform_von_mises_is_unrecoverable() {
        let p = vec![0.125; 8];
        let r = recover_parameter(&p, TargetShape::VonMises { kappa: 4.0 }, part());
        assert_eq!(r, Err(Error::Unrecoverable));
    }

    #[test]
    fn exact_targets_round_trip() {
        for shape in [TargetShape::Gaussian { sigma: 0.2 }, TargetShape::VonMises { kappa: 3.98 }] {
            for g in [0.03, 0.37, 0.5, 0.81, 0.99] {
                let q = discretize_target(shape, g, part()).unwrap();
                let r = recover_parameter(&q.probs, shape, part()).unwrap();
                assert!(param_distance(r, g, shape.is_cyclic()) < 1e-10, "{shape:?} {g} {r}");
            }
        }
    }

    #[test]
    fn mu_hat_examples() {
        assert!(mu_hat(&[0.25; 4], 0.0).iter().all(|v| v.abs() < 1e-15));
        assert!(mu_hat(&[0.25; 4], 0.7).iter().all(|v| (v - 0.7).abs() < 1e-15));
        let q = discretize_target(TargetShape::Gaussian { sigma: 0.2 }, 0.5, part()).unwrap();
        let mut s = mu_hat(&q.probs, 0.3);
        assert!((s.iter().sum::<f64>() - 8.0 * 0.3).abs() < 1e-10);
        softmax_in_place(&mut s);
        for (a, b) in s.iter().zip(&q.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_p_vanishes_for_additive_z() {
        let (c, g) = (3, 4);
        let a = [0.3, -1.0, 2.0];
        let b = [0.1, 0.5, -0.4, 1.2];
        let z: Vec<f64> = (0..c * g).map(|k| a[k / g] + b[k % g]).collect();
        assert!(delta_p(&marginals(&z, c, g).unwrap()) < 1e-12);
        let mut dep = vec![0.0; c * g];
        dep[0] = 5.0;
        assert!(delta_p(&marginals(&dep, c, g).unwrap()) > 0.0);
    }

    #[test]
    fn flat_targets_have_small_lipschitz_constant() {
        assert!(lipschitz_tg(10.0, part()).unwrap() < 0.05);
    }
}
