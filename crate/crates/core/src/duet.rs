//! The 2D representation, its marginals and the DUET losses.
//!
//! A feature vector `z ∈ R^{C·G}` is read row-major as a `C × G` matrix.
//! Column sums `μ_j` feed a softmax giving the group marginal `P(g|x)`;
//! row sums give the content vector `c`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::graph::{softmax_in_place, Graph, Var};
use crate::nn::Mlp;
use crate::targets::{discretize_target, Partition, TargetFamily, TargetShape};
use crate::tensor::Tensor;
use crate::transforms::GroupSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Representation2D {
    pub content_dim: usize,
    pub groups: usize,
    /// `C × G`, row-major.
    pub z: Vec<f64>,
    pub column_sums: Vec<f64>,
    pub group_marginal: Vec<f64>,
    pub content: Vec<f64>,
}

impl Representation2D {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.groups + j]
    }
}

pub fn check_layout(d: usize, content: usize, groups: usize) -> Result<()> {
    if content == 0 || groups == 0 || d != content * groups {
        return Err(invalid(format!(
            "representation of size {d} cannot be read as {content} x {groups}"
        )));
    }
    Ok(())
}

pub fn marginals(zvec: &[f64], content: usize, groups: usize) -> Result<Representation2D> {
    check_layout(zvec.len(), content, groups)?;
    let mut column_sums = vec![0.0; groups];
    let mut row_sums = vec![0.0; content];
    for (i, row) in zvec.chunks(groups).enumerate() {
        for (j, v) in row.iter().enumerate() {
            column_sums[j] += v;
            row_sums[i] += v;
        }
    }
    let mut group_marginal = column_sums.clone();
    softmax_in_place(&mut group_marginal);
    Ok(Representation2D {
        content_dim: content,
        groups,
        z: zvec.to_vec(),
        column_sums,
        group_marginal,
        content: row_sums,
    })
}

/// Column map sending feature `i·G + j` to group column `j`.
pub fn group_map(content: usize, groups: usize) -> Vec<Option<usize>> {
    (0..content * groups).map(|d| Some(d % groups)).collect()
}

/// Column map sending feature `i·G + j` to content row `i`.
pub fn content_map(content: usize, groups: usize) -> Vec<Option<usize>> {
    (0..content * groups).map(|d| Some(d / groups)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DuetMode {
    Duet,
    /// Reshape kept, group loss switched off.
    DuetLambda0,
    /// Plain contrastive learning on the flat vector.
    SimclrBaseline,
}

impl DuetMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Duet => "duet",
            Self::DuetLambda0 => "duet_lambda0",
            Self::SimclrBaseline => "simclr_baseline",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "duet" => Ok(Self::Duet),
            "duet_lambda0" => Ok(Self::DuetLambda0),
            "simclr_baseline" => Ok(Self::SimclrBaseline),
            other => Err(invalid(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DuetConfig {
    pub content: usize,
    pub groups: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub target_family: TargetFamily,
    pub temperature: f64,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub mode: DuetMode,
}

impl Default for DuetConfig {
    fn default() -> Self {
        Self {
            content: 16,
            groups: 8,
            lambda: 10.0,
            sigma: 0.2,
            target_family: TargetFamily::VonMises,
            temperature: 0.5,
            proj_hidden: 16,
            proj_out: 64,
            mode: DuetMode::Duet,
        }
    }
}

impl DuetConfig {
    pub fn dim(&self) -> usize {
        self.content * self.groups
    }

    pub fn validate(&self) -> Result<()> {
        if self.content == 0 || self.groups < 2 {
            return Err(invalid("need C >= 1 and G >= 2"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid("lambda must be non-negative"));
        }
        if !(self.sigma > 0.0) || !(self.temperature > 0.0) {
            return Err(invalid("sigma and temperature must be positive"));
        }
        if self.proj_hidden == 0 || self.proj_out == 0 {
            return Err(invalid("projection head sizes must be positive"));
        }
        Ok(())
    }

    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            DuetMode::Duet => self.lambda,
            DuetMode::DuetLambda0 | DuetMode::SimclrBaseline => 0.0,
        }
    }

    /// Input width of the projection head.
    pub fn head_input(&self) -> usize {
        match self.mode {
            DuetMode::SimclrBaseline => self.dim(),
            _ => self.content,
        }
    }

    pub fn target_shape(&self) -> Result<TargetShape> {
        TargetShape::from_sigma(self.target_family, self.sigma)
    }

    pub fn partition(&self) -> Result<Partition> {
        Partition::new(self.groups)
    }

    /// Targets for the given normalized parameters, one row each.
    pub fn targets(&self, gs: &[f64]) -> Result<Tensor> {
        let shape = self.target_shape()?;
        let partition = self.partition()?;
        let mut data = Vec::with_capacity(gs.len() * self.groups);
        for &g in gs {
            data.extend(discretize_target(shape, g, partition)?.probs);
        }
        Tensor::new(vec![gs.len(), self.groups], data)
    }
}

/// Scalar NT-Xent between paired rows of `h1` and `h2`.
pub fn ntxent_loss(h1: &Tensor, h2: &Tensor, temperature: f64) -> Result<f64> {
    if !h1.same_shape(h2) || h1.shape().len() != 2 {
        return Err(Error::Shape {
            op: "ntxent_loss",
            expected: h1.shape().to_vec(),
            got: h2.shape().to_vec(),
        });
    }
    let mut data = h1.data().to_vec();
    data.extend_from_slice(h2.data());
    let mut g = Graph::new();
    let h = g.constant(Tensor::new(vec![2 * h1.rows(), h1.cols()], data)?);
    let l = g.nt_xent(h, temperature)?;
    Ok(g.scalar_value(l))
}

/// Mean JS divergence over aligned `(image, view)` rows: the per-image view
/// average followed by the batch mean.
pub fn group_loss(p: &Tensor, q: &Tensor) -> Result<f64> {
    if !p.same_shape(q) || p.shape().len() != 2 {
        return Err(Error::Shape {
            op: "group_loss",
            expected: p.shape().to_vec(),
            got: q.shape().to_vec(),
        });
    }
    if p.rows() == 0 || p.rows() % 2 != 0 {
        return Err(invalid("group_loss needs two views per image"));
    }
    let mut g = Graph::new();
    let pv = g.constant(p.clone());
    let js = g.js_to_target(pv, q.clone())?;
    let m = g.mean(js);
    Ok(g.scalar_value(m))
}

/// Graph nodes of the three loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub content: Var,
    pub group: Option<Var>,
}

/// DUET loss on stacked features `z` (`2N × D`, rows `i` and `i + N` are
/// the two views of image `i`). `targets` is `2N × G`, aligned with `z`.
pub fn duet_loss(
    g: &mut Graph,
    z: Var,
    head: &Mlp,
    head_vars: &[Var],
    targets: &Tensor,
    config: &DuetConfig,
) -> Result<LossVars> {
    config.validate()?;
    let zv = g.value(z);
    if zv.cols() != config.dim() {
        return Err(Error::Shape {
            op: "duet_loss",
            expected: vec![zv.rows(), config.dim()],
            got: zv.shape().to_vec(),
        });
    }
    let rows = zv.rows();
    let content = match config.mode {
        DuetMode::SimclrBaseline => z,
        _ => g.scatter_sum(z, content_map(config.content, config.groups), config.content)?,
    };
    let h = head.forward(g, head_vars, content)?;
    let lc = g.nt_xent(h, config.temperature)?;
    if config.mode == DuetMode::SimclrBaseline {
        return Ok(LossVars {
            total: lc,
            content: lc,
            group: None,
        });
    }
    if targets.rows() != rows || targets.cols() != config.groups {
        return Err(Error::Shape {
            op: "duet_loss targets",
            expected: vec![rows, config.groups],
            got: targets.shape().to_vec(),
        });
    }
    let mu = g.scatter_sum(z, group_map(config.content, config.groups), config.groups)?;
    let p = g.softmax_rows(mu);
    let js = g.js_to_target(p, targets.clone())?;
    let lg = g.mean(js);
    let weighted = g.scale(lg, config.effective_lambda());
    let total = g.add(lc, weighted)?;
    Ok(LossVars {
        total,
        content: lc,
        group: Some(lg),
    })
}

/// Blocks of columns, each carrying its own transformation family.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiGroupBlocks {
    pub blocks: Vec<(GroupSpec, usize)>,
}

impl MultiGroupBlocks {
    pub fn total_columns(&self) -> usize {
        self.blocks.iter().map(|(_, w)| *w).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.blocks
            .iter()
            .map(|(_, w)| {
                let o = acc;
                acc += w;
                o
            })
            .collect()
    }

    /// Map features of a `C × ΣG_b` matrix to the column sums of block `b`.
    pub fn block_group_map(&self, content: usize, b: usize) -> Vec<Option<usize>> {
        let total = self.total_columns();
        let off = self.offsets()[b];
        let width = self.blocks[b].1;
        (0..content * total)
            .map(|d| {
                let j = d % total;
                (off..off + width).contains(&j).then(|| j - off)
            })
            .collect()
    }

    /// Map features to the concatenated per-block row sums (`C` per block).
    pub fn concat_content_map(&self, content: usize) -> Vec<Option<usize>> {
        let total = self.total_columns();
        let offsets = self.offsets();
        (0..content * total)
            .map(|d| {
                let (i, j) = (d / total, d % total);
                let b = offsets.iter().rposition(|&o| o <= j).unwrap_or(0);
                Some(b * content + i)
            })
            .collect()
    }
}

/// Graph form of the relaxed multi-group objective: returns the concatenated
/// content and the mean over blocks of the per-block group loss.
pub fn multigroup_terms(
    g: &mut Graph,
    z: Var,
    content: usize,
    blocks: &MultiGroupBlocks,
    targets: &[Tensor],
) -> Result<(Var, Var)> {
    let total = blocks.total_columns();
    let zv = g.value(z);
    if blocks.blocks.is_empty() || zv.cols() != content * total {
        return Err(Error::Shape {
            op: "multigroup_loss",
            expected: vec![zv.rows(), content * total],
            got: zv.shape().to_vec(),
        });
    }
    if targets.len() != blocks.blocks.len() {
        return Err(invalid("one target matrix per block required"));
    }
    let c = g.scatter_sum(z, blocks.concat_content_map(content), content * blocks.blocks.len())?;
    let mut sum: Option<Var> = None;
    for (b, t) in targets.iter().enumerate() {
        let mu = g.scatter_sum(z, blocks.block_group_map(content, b), blocks.blocks[b].1)?;
        let p = g.softmax_rows(mu);
        let js = g.js_to_target(p, t.clone())?;
        let lb = g.mean(js);
        sum = Some(match sum {
            None => lb,
            Some(s) => g.add(s, lb)?,
        });
    }
    let loss = g.scale(sum.expect("non-empty"), 1.0 / blocks.blocks.len() as f64);
    Ok((c, loss))
}

/// Value form of [`multigroup_terms`] for a batch `z` (`2N × C·ΣG_b`).
pub fn multigroup_loss(z: &Tensor, content: usize, blocks: &MultiGroupBlocks, targets: &[Tensor]) -> Result<(Tensor, f64)> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let (c, l) = multigroup_terms(&mut g, zv, content, blocks, targets)?;
    Ok((g.value(c).clone(), g.scalar_value(l)))
}
