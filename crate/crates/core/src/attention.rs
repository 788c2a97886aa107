//! Transformer blocks over token batches.
//!
//! Two block types share one pre-norm layout (`x + f(LayerNorm(x))` per
//! sub-layer):
//!
//! - divided: temporal attention (each spatial position attends over its
//!   frames), then spatial attention (each frame attends over its
//!   positions), then the MLP;
//! - joint: one attention pass over every token, then the MLP.
//!
//! In divided blocks the classification token joins every temporal group
//! and every spatial group; its per-group updates are averaged within a
//! pass.

use std::cell::Cell;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::embedding::{TokenBatch, TokenGrid};
use crate::error::{ModelError, Result};
use crate::nn::{LayerNorm, Linear, NamedParams};
use crate::tensor::{matmul_macs, Scalar, Tensor};

thread_local! {
    static ATTENTION_MACS: Cell<u64> = const { Cell::new(0) };
}

/// Multiply-adds spent in attention scores and value mixing (QKᵀ and AV)
/// on this thread since the last reset. Projections are not included.
pub fn attention_macs() -> u64 {
    ATTENTION_MACS.with(|c| c.get())
}

pub fn reset_attention_macs() {
    ATTENTION_MACS.with(|c| c.set(0));
}

#[derive(Debug, Clone)]
pub struct AttentionWeights<T: Scalar> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(ModelError::HeadDivisibility { dim, heads });
        }
        Ok(Self {
            q: Linear::new(rng, dim, dim),
            k: Linear::new(rng, dim, dim),
            v: Linear::new(rng, dim, dim),
            o: Linear::new(rng, dim, dim),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.d_out()
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams<T>) {
        self.q.collect(&format!("{prefix}.q"), out);
        self.k.collect(&format!("{prefix}.k"), out);
        self.v.collect(&format!("{prefix}.v"), out);
        self.o.collect(&format!("{prefix}.o"), out);
    }
}

/// Scaled dot-product attention with `heads` heads over `[B, N, D]` inputs.
/// Returns the output-projected result and, when `trace` is set, the
/// attention weights `[B, heads, N, N]` (detached).
pub fn multi_head_attention<T: Scalar>(
    q_in: &Tensor<T>,
    k_in: &Tensor<T>,
    v_in: &Tensor<T>,
    w: &AttentionWeights<T>,
    trace: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let shape = q_in.shape();
    if shape.len() != 3 {
        return Err(ModelError::Grid(format!("attention input must be [B, N, D], got {shape:?}")));
    }
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    let h = w.heads;
    if h == 0 || d % h != 0 {
        return Err(ModelError::HeadDivisibility { dim: d, heads: h });
    }
    if k_in.shape() != shape || v_in.shape() != shape {
        return Err(ModelError::Grid(format!(
            "q/k/v shapes differ: {shape:?}, {:?}, {:?}",
            k_in.shape(),
            v_in.shape()
        )));
    }
    let dh = d / h;
    let q = w.q.forward(q_in)?.reshape(&[b, n, h, dh])?.permute(&[0, 2, 1, 3])?;
    let kt = w.k.forward(k_in)?.reshape(&[b, n, h, dh])?.permute(&[0, 2, 3, 1])?;
    let v = w.v.forward(v_in)?.reshape(&[b, n, h, dh])?.permute(&[0, 2, 1, 3])?;
    let before = matmul_macs();
    let scores = q.matmul(&kt)?.scale(T::one() / T::from_f64(dh as f64).sqrt());
    let attn = scores.softmax(3)?;
    let ctx = attn.matmul(&v)?;
    let spent = matmul_macs() - before;
    ATTENTION_MACS.with(|c| c.set(c.get() + spent));
    let merged = ctx.permute(&[0, 2, 1, 3])?.reshape(&[b, n, d])?;
    let out = w.o.forward(&merged)?;
    Ok((out, trace.then(|| attn.detach())))
}

fn self_attention<T: Scalar>(x: &Tensor<T>, w: &AttentionWeights<T>, trace: bool) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    multi_head_attention(x, x, x, w, trace)
}

#[derive(Debug, Clone)]
pub struct Mlp<T: Scalar> {
    pub fc0: Linear<T>,
    pub fc1: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Self {
        Self {
            fc0: Linear::new(rng, dim, 4 * dim),
            fc1: Linear::new(rng, 4 * dim, dim),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc1.forward(&self.fc0.forward(x)?.gelu())
    }
}

#[derive(Debug, Clone)]
pub enum BlockWeights<T: Scalar> {
    Divided {
        temporal: AttentionWeights<T>,
        spatial: AttentionWeights<T>,
        ln1: LayerNorm<T>,
        ln2: LayerNorm<T>,
        ln3: LayerNorm<T>,
        mlp: Mlp<T>,
    },
    Joint {
        attn: AttentionWeights<T>,
        ln1: LayerNorm<T>,
        ln2: LayerNorm<T>,
        mlp: Mlp<T>,
    },
}

impl<T: Scalar> BlockWeights<T> {
    pub fn divided<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self::Divided {
            temporal: AttentionWeights::new(rng, dim, heads)?,
            spatial: AttentionWeights::new(rng, dim, heads)?,
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            ln3: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim),
        })
    }

    pub fn joint<R: Rng + ?Sized>(rng: &mut R, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self::Joint {
            attn: AttentionWeights::new(rng, dim, heads)?,
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(rng, dim),
        })
    }

    /// Parameters under `prefix` (e.g. `enc.3`), in a fixed order.
    pub fn collect(&self, prefix: &str, out: &mut NamedParams<T>) {
        match self {
            Self::Divided {
                temporal,
                spatial,
                ln1,
                ln2,
                ln3,
                mlp,
            } => {
                temporal.collect(&format!("{prefix}.temporal"), out);
                spatial.collect(&format!("{prefix}.spatial"), out);
                mlp.fc0.collect(&format!("{prefix}.mlp.0"), out);
                mlp.fc1.collect(&format!("{prefix}.mlp.1"), out);
                ln1.collect(&format!("{prefix}.ln1"), out);
                ln2.collect(&format!("{prefix}.ln2"), out);
                ln3.collect(&format!("{prefix}.ln3"), out);
            }
            Self::Joint { attn, ln1, ln2, mlp } => {
                attn.collect(&format!("{prefix}.joint"), out);
                mlp.fc0.collect(&format!("{prefix}.mlp.0"), out);
                mlp.fc1.collect(&format!("{prefix}.mlp.1"), out);
                ln1.collect(&format!("{prefix}.ln1"), out);
                ln2.collect(&format!("{prefix}.ln2"), out);
            }
        }
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out.into_iter().map(|(_, t)| t).collect()
    }

    /// Same structure with every parameter replaced, in [`Self::params`] order.
    pub fn with_params(&self, tensors: &[Tensor<T>]) -> Self {
        let mut it = tensors.iter().cloned();
        let mut next = || it.next().expect("enough tensors for block");
        let mut lin = |_: &Linear<T>| Linear {
            weight: next(),
            bias: next(),
        };
        let attn_of = |a: &AttentionWeights<T>, lin: &mut dyn FnMut(&Linear<T>) -> Linear<T>| AttentionWeights {
            q: lin(&a.q),
            k: lin(&a.k),
            v: lin(&a.v),
            o: lin(&a.o),
            heads: a.heads,
        };
        match self {
            Self::Divided {
                temporal,
                spatial,
                mlp,
                ..
            } => {
                let temporal = attn_of(temporal, &mut lin);
                let spatial = attn_of(spatial, &mut lin);
                let mlp = Mlp {
                    fc0: lin(&mlp.fc0),
                    fc1: lin(&mlp.fc1),
                };
                let [ln1, ln2, ln3] = [(); 3].map(|_| {
                    let l = lin(&mlp.fc0);
                    LayerNorm {
                        gain: l.weight,
                        bias: l.bias,
                    }
                });
                Self::Divided {
                    temporal,
                    spatial,
                    ln1,
                    ln2,
                    ln3,
                    mlp,
                }
            }
            Self::Joint { attn, mlp, .. } => {
                let attn = attn_of(attn, &mut lin);
                let mlp = Mlp {
                    fc0: lin(&mlp.fc0),
                    fc1: lin(&mlp.fc1),
                };
                let [ln1, ln2] = [(); 2].map(|_| {
                    let l = lin(&mlp.fc0);
                    LayerNorm {
                        gain: l.weight,
                        bias: l.bias,
                    }
                });
                Self::Joint { attn, ln1, ln2, mlp }
            }
        }
    }

    pub fn forward(&self, tb: &TokenBatch<T>, trace: bool) -> Result<(TokenBatch<T>, Option<BlockTrace<T>>)> {
        match self {
            Self::Divided { .. } => divided_block(tb, self, trace),
            Self::Joint { .. } => joint_block(tb, self, trace),
        }
    }
}

/// Attention weights retained from one block, detached from the graph.
#[derive(Debug, Clone)]
pub enum BlockTrace<T: Scalar> {
    /// `[B, heads, n, n]`
    Joint(Tensor<T>),
    /// Temporal groups `[B·S, heads, F(+1), F(+1)]` (group `b·S + s`),
    /// spatial groups `[B·F, heads, S(+1), S(+1)]` (group `b·F + f`).
    Divided { temporal: Tensor<T>, spatial: Tensor<T> },
}

#[derive(Debug, Clone)]
pub struct AttentionTrace<T: Scalar> {
    pub grid: TokenGrid,
    pub has_cls: bool,
    pub batch: usize,
    pub blocks: Vec<BlockTrace<T>>,
}

/// One attention pass over groups of tokens. `patches` is `[G, m, D]`;
/// `cls` (if any) is `[B, 1, D]` and is joined to each of the
/// `G / B` groups of its sample. Returns the patch outputs, the averaged
/// classification-token output and the weights.
fn grouped_attention<T: Scalar>(
    patches: &Tensor<T>,
    cls: Option<&Tensor<T>>,
    w: &AttentionWeights<T>,
    trace: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (g, m, d) = (patches.shape()[0], patches.shape()[1], patches.shape()[2]);
    let Some(cls) = cls else {
        let (out, weights) = self_attention(patches, w, trace)?;
        return Ok((out, None, weights));
    };
    let b = cls.shape()[0];
    let per = g / b;
    let owner: Vec<usize> = (0..g).map(|i| i / per).collect();
    let group = Tensor::concat(&[cls.index_select(0, &owner)?, patches.clone()], 1)?;
    let (out, weights) = self_attention(&group, w, trace)?;
    let patch_out = out.slice(1, 1, m + 1)?;
    let cls_out = out.slice(1, 0, 1)?.reshape(&[b, per, d])?.mean_axis(1)?.reshape(&[b, 1, d])?;
    Ok((patch_out, Some(cls_out), weights))
}

fn split_cls<T: Scalar>(x: &Tensor<T>, has_cls: bool, n: usize) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
    if has_cls {
        Ok((Some(x.slice(1, 0, 1)?), x.slice(1, 1, n + 1)?))
    } else {
        Ok((None, x.clone()))
    }
}

fn join_cls<T: Scalar>(cls: Option<Tensor<T>>, patches: Tensor<T>) -> Result<Tensor<T>> {
    match cls {
        Some(c) => Ok(Tensor::concat(&[c, patches], 1)?),
        None => Ok(patches),
    }
}

/// Temporal attention, spatial attention and MLP, each as a pre-norm
/// residual sub-layer.
pub fn divided_block<T: Scalar>(
    tb: &TokenBatch<T>,
    w: &BlockWeights<T>,
    trace: bool,
) -> Result<(TokenBatch<T>, Option<BlockTrace<T>>)> {
    let BlockWeights::Divided {
        temporal,
        spatial,
        ln1,
        ln2,
        ln3,
        mlp,
    } = w
    else {
        return Err(ModelError::Config("divided_block needs divided weights".into()));
    };
    let grid = tb.grid;
    let (f, s, n) = (grid.t, grid.spatial(), grid.len());
    let (b, d) = (tb.batch(), tb.dim());
    if tb.tokens.shape()[1] != n + usize::from(tb.has_cls) || grid.is_empty() {
        return Err(ModelError::Grid(format!(
            "token count {} does not match grid {grid:?}",
            tb.tokens.shape()[1]
        )));
    }
    let x = &tb.tokens;

    // temporal: groups are spatial positions, members are frames
    let (cls, patches) = split_cls(&ln1.forward(x)?, tb.has_cls, n)?;
    let groups = patches.reshape(&[b, f, s, d])?.permute(&[0, 2, 1, 3])?.reshape(&[b * s, f, d])?;
    let (out, cls_out, t_weights) = grouped_attention(&groups, cls.as_ref(), temporal, trace)?;
    let out = out.reshape(&[b, s, f, d])?.permute(&[0, 2, 1, 3])?.reshape(&[b, n, d])?;
    let x = x.add(&join_cls(cls_out, out)?)?;

    // spatial: groups are frames, members are positions
    let (cls, patches) = split_cls(&ln2.forward(&x)?, tb.has_cls, n)?;
    let groups = patches.reshape(&[b * f, s, d])?;
    let (out, cls_out, s_weights) = grouped_attention(&groups, cls.as_ref(), spatial, trace)?;
    let out = out.reshape(&[b, n, d])?;
    let x = x.add(&join_cls(cls_out, out)?)?;

    let x = x.add(&mlp.forward(&ln3.forward(&x)?)?)?;
    let block_trace = match (t_weights, s_weights) {
        (Some(temporal), Some(spatial)) => Some(BlockTrace::Divided { temporal, spatial }),
        _ => None,
    };
    Ok((tb.with_tokens(x), block_trace))
}

/// Attention over all tokens at once, then the MLP.
pub fn joint_block<T: Scalar>(
    tb: &TokenBatch<T>,
    w: &BlockWeights<T>,
    trace: bool,
) -> Result<(TokenBatch<T>, Option<BlockTrace<T>>)> {
    let BlockWeights::Joint { attn, ln1, ln2, mlp } = w else {
        return Err(ModelError::Config("joint_block needs joint weights".into()));
    };
    let x = &tb.tokens;
    let (a, weights) = self_attention(&ln1.forward(x)?, attn, trace)?;
    let x = x.add(&a)?;
    let x = x.add(&mlp.forward(&ln2.forward(&x)?)?)?;
    Ok((tb.with_tokens(x), weights.map(BlockTrace::Joint)))
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Encoder<T: Scalar> {
    pub blocks: Vec<BlockWeights<T>>,
    pub norm: LayerNorm<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        variant: crate::embedding::Variant,
        depth: usize,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(ModelError::Config("encoder depth must be at least 1".into()));
        }
        let blocks = (0..depth)
            .map(|_| match variant {
                crate::embedding::Variant::Divided => BlockWeights::divided(rng, dim, heads),
                crate::embedding::Variant::Joint => BlockWeights::joint(rng, dim, heads),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(dim),
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Block `i` is named `{prefix}.{i}`; the final norm `{prefix}.norm`.
    pub fn collect(&self, prefix: &str, out: &mut NamedParams<T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("{prefix}.{i}"), out);
        }
        self.norm.collect(&format!("{prefix}.norm"), out);
    }

    pub fn forward(&self, tb: &TokenBatch<T>, trace: bool) -> Result<(TokenBatch<T>, Option<AttentionTrace<T>>)> {
        encoder_forward(tb, &self.blocks, &self.norm, trace)
    }
}

/// Applies `blocks` in order, then `norm`.
pub fn encoder_forward<T: Scalar>(
    tb: &TokenBatch<T>,
    blocks: &[BlockWeights<T>],
    norm: &LayerNorm<T>,
    trace: bool,
) -> Result<(TokenBatch<T>, Option<AttentionTrace<T>>)> {
    let (out, trace) = run_blocks(tb, blocks, trace)?;
    Ok((out.with_tokens(norm.forward(&out.tokens)?), trace))
}

/// Applies `blocks` in order, without the final norm.
pub fn run_blocks<T: Scalar>(
    tb: &TokenBatch<T>,
    blocks: &[BlockWeights<T>],
    trace: bool,
) -> Result<(TokenBatch<T>, Option<AttentionTrace<T>>)> {
    if blocks.is_empty() {
        return Err(ModelError::Config("encoder needs at least one block".into()));
    }
    let mut cur = tb.clone();
    let mut traces = Vec::new();
    for block in blocks {
        let (next, t) = block.forward(&cur, trace)?;
        if let Some(t) = t {
            traces.push(t);
        }
        cur = next;
    }
    let trace = trace.then(|| AttentionTrace {
        grid: tb.grid,
        has_cls: tb.has_cls,
        batch: tb.batch(),
        blocks: traces,
    });
    Ok((cur, trace))
}

/// Square row-major matrix in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    fn mul(&self, rhs: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Head-averaged `[heads, m, m]` slice of group `g`.
fn head_mean<T: Scalar>(weights: &Tensor<T>, g: usize) -> Vec<f64> {
    let s = weights.shape();
    let (h, m) = (s[1], s[2]);
    let data = weights.data();
    let mut out = vec![0.0; m * m];
    for head in 0..h {
        let base = (g * h + head) * m * m;
        for (o, v) in out.iter_mut().zip(&data[base..base + m * m]) {
            *o += v.to_f64() / h as f64;
        }
    }
    out
}

/// Scatters grouped attention into a full token×token matrix. `members(g)`
/// lists the global token index of each non-classification member of group
/// `g`. The classification row is the average of its per-group rows.
fn scatter_groups<T: Scalar>(
    weights: &Tensor<T>,
    groups: std::ops::Range<usize>,
    has_cls: bool,
    total: usize,
    members: impl Fn(usize) -> Vec<usize>,
) -> Matrix {
    let mut m = Matrix::zeros(total);
    let count = groups.len() as f64;
    for g in groups.clone() {
        let a = head_mean(weights, g);
        let mut idx = Vec::new();
        if has_cls {
            idx.push(0);
        }
        idx.extend(members(g));
        let size = idx.len();
        for (li, &gi) in idx.iter().enumerate() {
            let cls_row = has_cls && li == 0;
            for (lj, &gj) in idx.iter().enumerate() {
                let v = a[li * size + lj];
                if cls_row {
                    m.data[gi * total + gj] += v / count;
                } else {
                    m.data[gi * total + gj] = v;
                }
            }
        }
    }
    m
}

/// Full-sequence attention matrix of one block for sample `b`.
pub fn block_attention_matrix<T: Scalar>(trace: &AttentionTrace<T>, block: usize, b: usize) -> Result<Matrix> {
    let grid = trace.grid;
    let c = usize::from(trace.has_cls);
    let total = grid.len() + c;
    let bt = trace
        .blocks
        .get(block)
        .ok_or_else(|| ModelError::MissingTrace(format!("block {block}")))?;
    match bt {
        BlockTrace::Joint(w) => {
            if w.shape()[2] != total {
                return Err(ModelError::Grid(format!("trace of {} tokens for grid {grid:?}", w.shape()[2])));
            }
            Ok(Matrix {
                n: total,
                data: head_mean(w, b),
            })
        }
        BlockTrace::Divided { temporal, spatial } => {
            let (f, s) = (grid.t, grid.spatial());
            let mt = scatter_groups(temporal, b * s..(b + 1) * s, trace.has_cls, total, |g| {
                let pos = g - b * s;
                (0..f).map(|t| c + t * s + pos).collect()
            });
            let ms = scatter_groups(spatial, b * f..(b + 1) * f, trace.has_cls, total, |g| {
                let frame = g - b * f;
                (0..s).map(|p| c + frame * s + p).collect()
            });
            // the spatial pass consumes the temporal pass's output
            Ok(ms.mul(&mt))
        }
    }
}

/// Attention rollout for sample `b`: per block, `0.5·A + 0.5·I` with rows
/// renormalized, multiplied through depth. The divided variant reads the
/// classification token's row; without a classification token the mean
/// over token rows is used. Returns `[T_tok, H_tok, W_tok]` with every time
/// slice scaled so its maximum is 1.
pub fn attention_rollout<T: Scalar>(trace: &AttentionTrace<T>, b: usize) -> Result<Tensor<f64>> {
    if trace.blocks.is_empty() {
        return Err(ModelError::MissingTrace("no blocks recorded".into()));
    }
    if b >= trace.batch {
        return Err(ModelError::MissingTrace(format!("sample {b} of {}", trace.batch)));
    }
    let grid = trace.grid;
    let c = usize::from(trace.has_cls);
    let total = grid.len() + c;
    let mut rollout = Matrix::identity(total);
    for block in 0..trace.blocks.len() {
        let a = block_attention_matrix(trace, block, b)?;
        let mut mixed = Matrix::zeros(total);
        for i in 0..total {
            let row = a.row(i);
            let sum: f64 = row.iter().map(|v| 0.5 * v).sum::<f64>() + 0.5;
            for j in 0..total {
                let eye = if i == j { 0.5 } else { 0.0 };
                mixed.data[i * total + j] = (0.5 * row[j] + eye) / sum;
            }
        }
        rollout = mixed.mul(&rollout);
    }
    let heat: Vec<f64> = if trace.has_cls {
        rollout.row(0)[c..].to_vec()
    } else {
        (0..grid.len())
            .map(|j| (0..grid.len()).map(|i| rollout.data[(c + i) * total + c + j]).sum::<f64>() / grid.len() as f64)
            .collect()
    };
    let s = grid.spatial();
    let mut out = Vec::with_capacity(heat.len());
    for frame in heat.chunks(s) {
        let max = frame.iter().copied().fold(0.0f64, f64::max);
        if max > 0.0 {
            out.extend(frame.iter().map(|v| (v / max).max(0.0)));
        } else {
            out.extend(std::iter::repeat_n(1.0, s));
        }
    }
    Ok(Tensor::from_vec(&[grid.t, grid.h, grid.w], out)?)
}

/// One 8-bit grayscale image per input frame: token slice `t` covers frames
/// `t·depth .. (t+1)·depth`, and each cell is upscaled to `patch×patch`
/// pixels by repetition. Values in [0, 1] map to 0..=255.
pub fn heatmap_frames(heat: &Tensor<f64>, depth: usize, patch: (usize, usize)) -> Result<Vec<(usize, usize, Vec<u8>)>> {
    let &[t, h, w] = heat.shape() else {
        return Err(ModelError::Grid(format!("expected a [T, H, W] heatmap, got {:?}", heat.shape())));
    };
    if depth == 0 || patch.0 == 0 || patch.1 == 0 {
        return Err(ModelError::Config(format!("depth {depth} and patch {patch:?} must be positive")));
    }
    let (ph, pw) = patch;
    let (height, width) = (h * ph, w * pw);
    let data = heat.to_vec();
    let mut frames = Vec::with_capacity(t * depth);
    for slice in data.chunks(h * w) {
        let mut px = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let v = slice[(y / ph) * w + x / pw];
                px.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        for _ in 0..depth {
            frames.push((height, width, px.clone()));
        }
    }
    Ok(frames)
}

/// Binary (P5) PGM.
pub fn write_pgm(path: impl AsRef<Path>, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != height * width {
        return Err(ModelError::Grid(format!("{} pixels for a {height}x{width} image", pixels.len())));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Writes `frame_{i:03}.pgm` for every input frame plus `index.txt`
/// (`frame token_slice file` per line) under `dir`. Returns the image paths.
pub fn export_heatmaps(
    dir: impl AsRef<Path>,
    video_id: &str,
    heat: &Tensor<f64>,
    depth: usize,
    patch: (usize, usize),
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let frames = heatmap_frames(heat, depth, patch)?;
    let mut index = format!("# video {video_id}\n# frame token_slice file\n");
    let mut paths = Vec::with_capacity(frames.len());
    for (i, (h, w, px)) in frames.iter().enumerate() {
        let name = format!("frame_{i:03}.pgm");
        write_pgm(dir.join(&name), *h, *w, px)?;
        let _ = writeln!(index, "{i} {} {name}", i / depth);
        paths.push(dir.join(name));
    }
    std::fs::write(dir.join("index.txt"), index)?;
    Ok(paths)
}
