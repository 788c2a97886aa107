//! Tokenization of `[B, F, 3, H, W]` video tensors.
//!
//! The divided (frame-wise) path cuts each frame into `p×p` patches; the
//! joint path cuts `depth×p×p` cubes spanning consecutive frames. Both
//! flatten a block as (frame-in-block, channel, row, column) and order
//! tokens (time, row, column), so a cube of depth one is exactly a patch.

use rand::Rng;

use crate::error::{ModelError, Result};
use crate::nn::{param, trunc_normal, Linear, NamedParams, INIT_STD};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Divided space-time attention, classification token.
    Divided,
    /// Joint space-time attention over cubes, mean pooling.
    Joint,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "divided" | "timesformer" => Ok(Variant::Divided),
            "joint" | "videomae" => Ok(Variant::Joint),
            other => Err(format!("unknown variant {other:?} (divided | joint)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Divided => "divided",
            Variant::Joint => "joint",
        })
    }
}

/// Token grid extents: time × rows × columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenGrid {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Debug, Clone)]
pub struct TokenBatch<T: Scalar> {
    /// `[B, N, D]`, or `[B, N + 1, D]` with the classification token at 0.
    pub tokens: Tensor<T>,
    pub grid: TokenGrid,
    pub has_cls: bool,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn with_tokens(&self, tokens: Tensor<T>) -> Self {
        Self {
            tokens,
            grid: self.grid,
            has_cls: self.has_cls,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub variant: Variant,
    pub patch: (usize, usize),
    /// Frames per token: 1 for the divided variant, 2 for cubes.
    pub tube_depth: usize,
    pub dim: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl EmbeddingConfig {
    pub fn grid(&self) -> Result<TokenGrid> {
        let (ph, pw) = self.patch;
        for (dim, extent, by) in [
            ("frames", self.frames, self.tube_depth),
            ("height", self.height, ph),
            ("width", self.width, pw),
        ] {
            if by == 0 || extent == 0 || extent % by != 0 {
                return Err(ModelError::Divisibility { dim, extent, by });
            }
        }
        Ok(TokenGrid {
            t: self.frames / self.tube_depth,
            h: self.height / ph,
            w: self.width / pw,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.tube_depth * 3 * self.patch.0 * self.patch.1
    }

    pub fn uses_cls(&self) -> bool {
        self.variant == Variant::Divided
    }

    /// Sequence length after the classification token (if any).
    pub fn seq_len(&self) -> Result<usize> {
        Ok(self.grid()?.len() + usize::from(self.uses_cls()))
    }
}

/// Projection, positional table and (divided variant) classification token.
#[derive(Debug, Clone)]
pub struct Embedding<T: Scalar> {
    pub cfg: EmbeddingConfig,
    pub proj: Linear<T>,
    pub pos: Tensor<T>,
    pub cls: Option<Tensor<T>>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(cfg: EmbeddingConfig, rng: &mut R) -> Result<Self> {
        if cfg.variant == Variant::Divided && cfg.tube_depth != 1 {
            return Err(ModelError::Config("divided variant embeds single frames (tube_depth 1)".into()));
        }
        let n = cfg.seq_len()?;
        let d = cfg.dim;
        let proj = Linear::new(rng, cfg.token_dim(), d);
        let pos = param(&[n, d], trunc_normal(rng, n * d, INIT_STD));
        let cls = cfg.uses_cls().then(|| param(&[d], vec![T::zero(); d]));
        Ok(Self { cfg, proj, pos, cls })
    }

    pub fn collect(&self, out: &mut NamedParams<T>) {
        self.proj.collect("embed.proj", out);
        out.push(("embed.pos".into(), self.pos.clone()));
        if let Some(cls) = &self.cls {
            out.push(("embed.cls".into(), cls.clone()));
        }
    }

    /// Tokens, classification token and positions: the full embedding stage.
    pub fn forward(&self, x: &Tensor<T>) -> Result<TokenBatch<T>> {
        let tb = match self.cfg.variant {
            Variant::Divided => prepend_cls(&patch_embed_2d(x, self)?, self)?,
            Variant::Joint => cube_embed_3d(x, self)?,
        };
        add_positional(&tb, &self.pos)
    }
}

fn as_batch<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.rank() {
        5 => Ok(x.clone()),
        4 => {
            let mut s = vec![1];
            s.extend_from_slice(x.shape());
            Ok(x.reshape(&s)?)
        }
        _ => Err(ModelError::Grid(format!("expected [B,F,3,H,W] or [F,3,H,W], got {:?}", x.shape()))),
    }
}

/// `[B, F, C, H, W] -> [B, N, depth·C·ph·pw]`, tokens ordered (t, row, col).
pub fn patchify<T: Scalar>(x: &Tensor<T>, depth: usize, patch: (usize, usize)) -> Result<(Tensor<T>, TokenGrid)> {
    let x = as_batch(x)?;
    let &[b, f, c, h, w] = x.shape() else { unreachable!() };
    let (ph, pw) = patch;
    for (dim, extent, by) in [("frames", f, depth), ("height", h, ph), ("width", w, pw)] {
        if by == 0 || extent % by != 0 {
            return Err(ModelError::Divisibility { dim, extent, by });
        }
    }
    let grid = TokenGrid {
        t: f / depth,
        h: h / ph,
        w: w / pw,
    };
    let blocks = x
        .reshape(&[b, grid.t, depth, c, grid.h, ph, grid.w, pw])?
        .permute(&[0, 1, 4, 6, 2, 3, 5, 7])?
        .reshape(&[b, grid.len(), depth * c * ph * pw])?;
    Ok((blocks, grid))
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Scalar>(
    tokens: &Tensor<T>,
    grid: TokenGrid,
    depth: usize,
    patch: (usize, usize),
) -> Result<Tensor<T>> {
    let (ph, pw) = patch;
    let b = tokens.shape()[0];
    let c = tokens.shape()[2] / (depth * ph * pw);
    Ok(tokens
        .reshape(&[b, grid.t, grid.h, grid.w, depth, c, ph, pw])?
        .permute(&[0, 1, 4, 5, 2, 6, 3, 7])?
        .reshape(&[b, grid.t * depth, c, grid.h * ph, grid.w * pw])?)
}

fn check_input<T: Scalar>(x: &Tensor<T>, emb: &Embedding<T>) -> Result<()> {
    let s = x.shape();
    let (f, c, h, w) = (s[s.len() - 4], s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    if c != 3 || f != emb.cfg.frames || h != emb.cfg.height || w != emb.cfg.width {
        return Err(ModelError::Grid(format!(
            "input {s:?} does not match embedding config {}x3x{}x{}",
            emb.cfg.frames, emb.cfg.height, emb.cfg.width
        )));
    }
    Ok(())
}

/// Per-frame patches projected to the model dimension; grid `(F, H/p, W/p)`.
pub fn patch_embed_2d<T: Scalar>(x: &Tensor<T>, emb: &Embedding<T>) -> Result<TokenBatch<T>> {
    let (blocks, grid) = patchify(x, 1, emb.cfg.patch)?;
    check_input(x, emb)?;
    if emb.cfg.tube_depth != 1 {
        return Err(ModelError::Config("2D patch embedding needs tube_depth 1".into()));
    }
    Ok(TokenBatch {
        tokens: emb.proj.forward(&blocks)?,
        grid,
        has_cls: false,
    })
}

/// `depth×p×p` cubes projected to the model dimension; grid `(F/depth, H/p, W/p)`.
pub fn cube_embed_3d<T: Scalar>(x: &Tensor<T>, emb: &Embedding<T>) -> Result<TokenBatch<T>> {
    let (blocks, grid) = patchify(x, emb.cfg.tube_depth, emb.cfg.patch)?;
    check_input(x, emb)?;
    Ok(TokenBatch {
        tokens: emb.proj.forward(&blocks)?,
        grid,
        has_cls: false,
    })
}

/// Adds a `[N(+1), D]` positional table to every sample.
pub fn add_positional<T: Scalar>(tb: &TokenBatch<T>, table: &Tensor<T>) -> Result<TokenBatch<T>> {
    let want = tb.grid.len() + usize::from(tb.has_cls);
    if table.shape() != [want, tb.dim()] {
        return Err(ModelError::Grid(format!(
            "positional table {:?} for {want} tokens of dim {}",
            table.shape(),
            tb.dim()
        )));
    }
    Ok(tb.with_tokens(tb.tokens.add(table)?))
}

pub fn prepend_cls<T: Scalar>(tb: &TokenBatch<T>, emb: &Embedding<T>) -> Result<TokenBatch<T>> {
    if tb.has_cls {
        return Err(ModelError::AlreadyHasCls);
    }
    let cls = emb
        .cls
        .as_ref()
        .ok_or_else(|| ModelError::Config("variant has no classification token".into()))?;
    let b = tb.batch();
    let cls_tokens = cls.broadcast_leading(&[b, 1])?;
    Ok(TokenBatch {
        tokens: Tensor::concat(&[cls_tokens, tb.tokens.clone()], 1)?,
        grid: tb.grid,
        has_cls: true,
    })
}
