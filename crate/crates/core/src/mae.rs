//! Masked-autoencoder pretraining with tube masks.
//!
//! The encoder sees only visible cubes. A narrower decoder receives the
//! projected visible tokens plus a shared mask token at every hidden
//! position, restored to grid order with their own positional table, and
//! predicts the pixels of the hidden cubes. The target of each cube is its
//! own pixels standardized to zero mean and unit variance.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::attention::Encoder;
use crate::config::KeyValues;
use crate::embedding::{patchify, Embedding, TokenBatch, TokenGrid, Variant};
use crate::error::{ModelError, Result};
use crate::nn::{load_params, param, to_checkpoint, trunc_normal, Linear, NamedParams, INIT_STD};
use crate::tensor::{save_checkpoint, Checkpoint, Scalar, Tensor};
use crate::train::{Adam, AdamConfig, ModelConfig};
use crate::video::{derive_rng, stack_clips, Preprocessor, VideoSource};

/// Added to the per-cube variance before the square root.
pub const TARGET_EPS: f64 = 1e-6;

/// Spatial mask shared by every temporal slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeMask {
    pub grid: TokenGrid,
    /// `h × w`, row-major; true = hidden.
    pub cells: Vec<bool>,
    pub ratio: f64,
    pub masked_count: usize,
    pub visible_count: usize,
}

impl TubeMask {
    pub fn is_masked(&self, _t: usize, row: usize, col: usize) -> bool {
        self.cells[row * self.grid.w + col]
    }

    /// Per token in (t, row, col) order.
    pub fn token_flags(&self) -> Vec<bool> {
        (0..self.grid.t).flat_map(|_| self.cells.iter().copied()).collect()
    }

    pub fn visible_tokens(&self) -> Vec<usize> {
        self.tokens_where(false)
    }

    pub fn masked_tokens(&self) -> Vec<usize> {
        self.tokens_where(true)
    }

    fn tokens_where(&self, masked: bool) -> Vec<usize> {
        let s = self.grid.spatial();
        (0..self.grid.t)
            .flat_map(|t| (0..s).filter(move |&c| self.cells[c] == masked).map(move |c| t * s + c))
            .collect()
    }
}

/// Hides a uniformly random set of exactly `round(ratio·h·w)` spatial cells
/// in every temporal slice.
pub fn make_tube_mask<R: Rng + ?Sized>(grid: TokenGrid, ratio: f64, rng: &mut R) -> Result<TubeMask> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::Config(format!("mask ratio must be in (0, 1), got {ratio}")));
    }
    let s = grid.spatial();
    if grid.is_empty() {
        return Err(ModelError::Grid(format!("empty token grid {grid:?}")));
    }
    let masked = (ratio * s as f64).round() as usize;
    if masked >= s {
        return Err(ModelError::Config(format!(
            "ratio {ratio} hides all {s} cells and leaves nothing visible"
        )));
    }
    if masked == 0 {
        return Err(ModelError::Config(format!("ratio {ratio} hides no cell of {s}")));
    }
    let mut cells = vec![false; s];
    for i in rand::seq::index::sample(rng, s, masked) {
        cells[i] = true;
    }
    Ok(TubeMask {
        grid,
        cells,
        ratio,
        masked_count: masked,
        visible_count: s - masked,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeConfig {
    /// Encoder side; the variant must be joint.
    pub model: ModelConfig,
    pub decoder_depth: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
}

impl MaeConfig {
    /// Decoder of depth 2, half the encoder width, 2 heads.
    pub fn desk() -> Self {
        let model = ModelConfig::desk(Variant::Joint);
        Self {
            decoder_depth: 2,
            decoder_dim: model.dim / 2,
            decoder_heads: 2,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.variant != Variant::Joint {
            return Err(ModelError::Config("the autoencoder uses the joint variant".into()));
        }
        if self.decoder_depth == 0 || self.decoder_depth >= self.model.depth {
            return Err(ModelError::Config(format!(
                "decoder depth {} must be in 1..{}",
                self.decoder_depth, self.model.depth
            )));
        }
        if self.decoder_heads == 0 || self.decoder_dim % self.decoder_heads != 0 {
            return Err(ModelError::HeadDivisibility {
                dim: self.decoder_dim,
                heads: self.decoder_heads,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MaeModel<T: Scalar> {
    pub cfg: MaeConfig,
    pub embed: Embedding<T>,
    pub encoder: Encoder<T>,
    pub dec_embed: Linear<T>,
    /// `[decoder_dim]`
    pub mask_token: Tensor<T>,
    /// `[N, decoder_dim]`
    pub dec_pos: Tensor<T>,
    pub decoder: Encoder<T>,
    /// decoder_dim → pixels per cube.
    pub head: Linear<T>,
}

impl<T: Scalar> MaeModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: MaeConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let m = &cfg.model;
        let ecfg = m.embedding();
        let n = ecfg.seq_len()?;
        let dd = cfg.decoder_dim;
        let embed = Embedding::new(ecfg.clone(), rng)?;
        let encoder = Encoder::new(rng, Variant::Joint, m.depth, m.dim, m.heads)?;
        let dec_embed = Linear::new(rng, m.dim, dd);
        let mask_token = param(&[dd], trunc_normal(rng, dd, INIT_STD));
        let dec_pos = param(&[n, dd], trunc_normal(rng, n * dd, INIT_STD));
        let decoder = Encoder::new(rng, Variant::Joint, cfg.decoder_depth, dd, cfg.decoder_heads)?;
        let head = Linear::new(rng, dd, ecfg.token_dim());
        Ok(Self {
            cfg,
            embed,
            encoder,
            dec_embed,
            mask_token,
            dec_pos,
            decoder,
            head,
        })
    }

    pub fn grid(&self) -> Result<TokenGrid> {
        self.cfg.model.embedding().grid()
    }

    /// Encoder parameters use the classifier's names, so a checkpoint of
    /// this model initializes a joint classifier directly.
    pub fn named_params(&self) -> NamedParams<T> {
        let mut out = Vec::new();
        self.embed.collect(&mut out);
        self.encoder.collect("enc", &mut out);
        self.dec_embed.collect("dec.embed", &mut out);
        out.push(("dec.mask".into(), self.mask_token.clone()));
        out.push(("dec.pos".into(), self.dec_pos.clone()));
        self.decoder.collect("dec", &mut out);
        self.head.collect("dec.head", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        to_checkpoint(&self.named_params())
    }

    pub fn load(&self, ckpt: &Checkpoint<T>) -> Result<()> {
        load_params(&self.named_params(), ckpt, false).map(|_| ())
    }

    /// Embeds `x`, keeps the visible tokens of each sample and runs the
    /// encoder on them alone: `[B, T_tok·visible, D]`.
    pub fn encode_visible(&self, x: &Tensor<T>, masks: &[TubeMask]) -> Result<Tensor<T>> {
        let tokens = self.embed.forward(x)?;
        let (b, n, d) = (tokens.batch(), tokens.grid.len(), tokens.dim());
        check_masks(masks, b, tokens.grid)?;
        let nv = masks[0].visible_tokens().len();
        let idx: Vec<usize> = masks
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.visible_tokens().into_iter().map(move |t| i * n + t))
            .collect();
        let visible = tokens.tokens.reshape(&[b * n, d])?.index_select(0, &idx)?.reshape(&[b, nv, d])?;
        let tb = TokenBatch {
            tokens: visible,
            grid: TokenGrid {
                t: tokens.grid.t,
                h: 1,
                w: masks[0].visible_count,
            },
            has_cls: false,
        };
        Ok(self.encoder.forward(&tb, false)?.0.tokens)
    }
}

fn check_masks(masks: &[TubeMask], batch: usize, grid: TokenGrid) -> Result<()> {
    if masks.len() != batch {
        return Err(ModelError::Grid(format!("{} masks for a batch of {batch}", masks.len())));
    }
    if let Some(m) = masks.iter().find(|m| m.grid != grid) {
        return Err(ModelError::Grid(format!("mask grid {:?} does not match cube grid {grid:?}", m.grid)));
    }
    if masks.iter().any(|m| m.masked_count != masks[0].masked_count) {
        return Err(ModelError::Grid("masks in one batch must hide the same number of cells".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MaeOutput<T: Scalar> {
    /// `[B·N_masked, pixels per cube]`, samples in order, tokens in grid order.
    pub reconstruction: Tensor<T>,
    pub loss: Tensor<T>,
    /// Tokens per sample seen by the encoder.
    pub encoder_len: usize,
    /// Tokens per sample seen by the decoder.
    pub decoder_len: usize,
}

/// Encodes the visible cubes of `x` (`[F,3,H,W]` or `[B,F,3,H,W]`, one mask
/// per sample), decodes every position and scores the hidden ones.
pub fn mae_forward<T: Scalar>(x: &Tensor<T>, masks: &[TubeMask], m: &MaeModel<T>) -> Result<MaeOutput<T>> {
    let grid = m.grid()?;
    let patch = m.cfg.model.patch;
    let depth = m.cfg.model.tube_depth();
    let encoded = m.encode_visible(x, masks)?;
    let (b, nv) = (encoded.shape()[0], encoded.shape()[1]);
    let n = grid.len();
    let nm = n - nv;
    let dd = m.cfg.decoder_dim;

    let visible = m.dec_embed.forward(&encoded)?;
    let hidden = m.mask_token.broadcast_leading(&[b, nm])?;
    let stacked = Tensor::concat(&[visible, hidden], 1)?.reshape(&[b * n, dd])?;
    // position p of sample i reads its slot in [visible…, hidden…]
    let mut restore = vec![0; b * n];
    for (i, mask) in masks.iter().enumerate() {
        for (slot, t) in mask.visible_tokens().into_iter().chain(mask.masked_tokens()).enumerate() {
            restore[i * n + t] = i * n + slot;
        }
    }
    let ordered = stacked.index_select(0, &restore)?.reshape(&[b, n, dd])?.add(&m.dec_pos)?;
    let decoded = m
        .decoder
        .forward(
            &TokenBatch {
                tokens: ordered,
                grid,
                has_cls: false,
            },
            false,
        )?
        .0
        .tokens;
    let hidden_rows: Vec<usize> = masks
        .iter()
        .enumerate()
        .flat_map(|(i, mask)| mask.masked_tokens().into_iter().map(move |t| i * n + t))
        .collect();
    let reconstruction = m
        .head
        .forward(&decoded.reshape(&[b * n, dd])?.index_select(0, &hidden_rows)?)?;

    let (cubes, _) = patchify(&x.detach(), depth, (patch, patch))?;
    let k = cubes.shape()[2];
    let flags: Vec<bool> = masks.iter().flat_map(|mask| mask.token_flags()).collect();
    let loss = reconstruction_loss(&reconstruction, &cubes.reshape(&[b * n, k])?, &flags)?;
    Ok(MaeOutput {
        reconstruction,
        loss,
        encoder_len: nv,
        decoder_len: n,
    })
}

/// `(x − mean) / sqrt(var + eps)` over one cube.
pub fn normalize_cube(cube: &[f64]) -> Vec<f64> {
    let n = cube.len() as f64;
    let mean = cube.iter().sum::<f64>() / n;
    let var = cube.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = (var + TARGET_EPS).sqrt();
    cube.iter().map(|v| (v - mean) / std).collect()
}

/// Mean squared error between `pred` (one row per hidden cube) and the
/// standardized pixels of the hidden rows of `target_cubes`. Visible rows
/// are never read into the loss.
pub fn reconstruction_loss<T: Scalar>(pred: &Tensor<T>, target_cubes: &Tensor<T>, masked: &[bool]) -> Result<Tensor<T>> {
    let (&[m, k], &[rows, tk]) = (pred.shape(), target_cubes.shape()) else {
        return Err(ModelError::Grid(format!(
            "expected 2-D prediction and targets, got {:?} and {:?}",
            pred.shape(),
            target_cubes.shape()
        )));
    };
    let hidden = masked.iter().filter(|&&f| f).count();
    if masked.len() != rows || hidden != m || k != tk {
        return Err(ModelError::Grid(format!(
            "{m} predictions of width {k} for {hidden} hidden cubes of width {tk} ({rows} cubes)"
        )));
    }
    let data = target_cubes.to_f64_vec();
    let target: Vec<f64> = data
        .chunks(k)
        .zip(masked)
        .filter(|(_, &f)| f)
        .flat_map(|(cube, _)| normalize_cube(cube))
        .collect();
    let target = Tensor::<T>::from_f64(&[m, k], &target)?;
    let diff = pred.sub(&target)?;
    Ok(diff.mul(&diff)?.mean_all())
}

pub const PRETRAIN_KEYS: &[&str] = &[
    "ratio",
    "decoder_depth",
    "decoder_dim",
    "steps",
    "batch",
    "lr",
    "seed",
    "checkpoint_every",
    "flip",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub ratio: f64,
    pub decoder_depth: usize,
    pub decoder_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Also write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Horizontal-flip augmentation. Off by default: a mirrored clip reverses
    /// motion direction, and recovering that from a few visible tubes stalls
    /// reconstruction on direction-coded data.
    pub flip: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            decoder_depth: 2,
            decoder_dim: 16,
            steps: 200,
            batch: 4,
            lr: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            flip: false,
        }
    }
}

impl PretrainConfig {
    /// Desk-scale runs hide 12 of 16 cells.
    pub fn desk() -> Self {
        Self {
            ratio: 0.75,
            ..Self::default()
        }
    }

    pub fn mae_config(&self, model: ModelConfig) -> MaeConfig {
        MaeConfig {
            model,
            decoder_depth: self.decoder_depth,
            decoder_dim: self.decoder_dim,
            decoder_heads: 2,
        }
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let bad = |e: crate::config::ConfigError| ModelError::Config(e.to_string());
        if let Some(v) = kv.get("ratio").map_err(bad)? {
            self.ratio = v;
        }
        if let Some(v) = kv.get("lr").map_err(bad)? {
            self.lr = v;
        }
        if let Some(v) = kv.get("seed").map_err(bad)? {
            self.seed = v;
        }
        if let Some(v) = kv.get("flip").map_err(bad)? {
            self.flip = v;
        }
        for (key, slot) in [
            ("decoder_depth", &mut self.decoder_depth),
            ("decoder_dim", &mut self.decoder_dim),
            ("steps", &mut self.steps),
            ("batch", &mut self.batch),
            ("checkpoint_every", &mut self.checkpoint_every),
        ] {
            if let Some(v) = kv.get(key).map_err(bad)? {
                *slot = v;
            }
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("ratio", self.ratio);
        kv.set("decoder_depth", self.decoder_depth);
        kv.set("decoder_dim", self.decoder_dim);
        kv.set("steps", self.steps);
        kv.set("batch", self.batch);
        kv.set("lr", self.lr);
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("flip", self.flip);
        kv
    }
}

/// Mask streams use tags above this so they never coincide with the
/// augmentation stream of the same video and step.
const MASK_TAG: u64 = 1 << 62;

pub fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", i + 1));
    }
    out
}

/// Trains `model` in place for `cfg.steps` steps and returns the per-step
/// loss. Each step draws `cfg.batch` videos (epoch-wise shuffles of the
/// whole set), augments them (random crop; flip only if `cfg.flip`), and
/// hides a fresh tube mask per clip. With `out` set, writes `loss.csv`,
/// `mae.ckpt` and any interval checkpoints (`mae_step{N}.ckpt`) there.
pub fn pretrain<T: Scalar>(
    videos: &[VideoSource],
    pre: &Preprocessor,
    model: &MaeModel<T>,
    cfg: &PretrainConfig,
    out: Option<&Path>,
) -> Result<Vec<f64>> {
    if videos.is_empty() {
        return Err(ModelError::Config("pretraining needs at least one video".into()));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(ModelError::Config(format!("batch and lr must be positive: {cfg:?}")));
    }
    if pre.cfg.target_frames != model.cfg.model.frames || pre.cfg.crop != model.cfg.model.crop {
        return Err(ModelError::Config(format!(
            "pipeline yields {} frames at {}px, model expects {} at {}px",
            pre.cfg.target_frames, pre.cfg.crop, model.cfg.model.frames, model.cfg.model.crop
        )));
    }
    let grid = model.grid()?;
    make_tube_mask(grid, cfg.ratio, &mut derive_rng(cfg.seed, "", 0))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let mut opt = Adam::new(model.params(), AdamConfig::with_lr(cfg.lr));
    opt.zero_grad();
    let mut order: Vec<usize> = Vec::new();
    let mut epoch = 0u64;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(cfg.batch);
        while picked.len() < cfg.batch {
            if order.is_empty() {
                order = (0..videos.len()).collect();
                order.shuffle(&mut derive_rng(cfg.seed, "pretrain/order", epoch));
                order.reverse();
                epoch += 1;
            }
            picked.push(order.pop().expect("refilled above"));
        }
        let clips = picked
            .iter()
            .map(|&i| pre.train_clip_with(&videos[i], step as u64, cfg.flip))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let masks = picked
            .iter()
            .map(|&i| make_tube_mask(grid, cfg.ratio, &mut derive_rng(cfg.seed, &videos[i].id, MASK_TAG + step as u64)))
            .collect::<Result<Vec<_>>>()?;
        let x = stack_clips::<T>(&clips)?;
        let res = mae_forward(&x, &masks, model)?;
        let value = res.loss.item().to_f64();
        if !value.is_finite() {
            return Err(ModelError::NonFinite { step: step + 1 });
        }
        res.loss.backward()?;
        opt.step()?;
        losses.push(value);
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(dir.join(format!("mae_step{}.ckpt", step + 1)), &model.checkpoint())?;
            }
        }
    }
    if let Some(dir) = out {
        save_checkpoint(dir.join("mae.ckpt"), &model.checkpoint())?;
        fs::write(dir.join("loss.csv"), loss_csv(&losses))?;
    }
    Ok(losses)
}
