use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::attention::{run_blocks, AttentionTrace, Encoder};
use crate::config::KeyValues;
use crate::embedding::{Embedding, EmbeddingConfig, Variant};
use crate::error::{ModelError, Result};
use crate::nn::{load_params, Linear, NamedParams};
use crate::tensor::{Checkpoint, Scalar, Tensor};

pub const MODEL_KEYS: &[&str] = &["variant", "dim", "depth", "heads", "patch", "frames", "crop"];

/// Architecture record shared by the classifier and the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub frames: usize,
    pub crop: usize,
}

impl ModelConfig {
    /// Base-size transformer on 16×224×224 clips.
    pub fn base(variant: Variant) -> Self {
        Self {
            variant,
            dim: 768,
            depth: 12,
            heads: 12,
            patch: 16,
            frames: 16,
            crop: 224,
        }
    }

    /// Small enough to train on a CPU in minutes: 8×32×32 clips, 8×8 patches.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            dim: 32,
            depth: 3,
            heads: 4,
            patch: 8,
            frames: 8,
            crop: 32,
        }
    }

    pub fn tube_depth(&self) -> usize {
        match self.variant {
            Variant::Divided => 1,
            Variant::Joint => 2,
        }
    }

    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            variant: self.variant,
            patch: (self.patch, self.patch),
            tube_depth: self.tube_depth(),
            dim: self.dim,
            frames: self.frames,
            height: self.crop,
            width: self.crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.dim, self.depth, self.heads, self.patch, self.frames, self.crop].contains(&0) {
            return Err(ModelError::Config(format!("model sizes must be positive: {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(ModelError::HeadDivisibility {
                dim: self.dim,
                heads: self.heads,
            });
        }
        self.embedding().seq_len().map(|_| ())
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let bad = |e: crate::config::ConfigError| ModelError::Config(e.to_string());
        if let Some(v) = kv.get::<String>("variant").map_err(bad)? {
            self.variant = v.parse().map_err(ModelError::Config)?;
        }
        for (key, slot) in [
            ("dim", &mut self.dim),
            ("depth", &mut self.depth),
            ("heads", &mut self.heads),
            ("patch", &mut self.patch),
            ("frames", &mut self.frames),
            ("crop", &mut self.crop),
        ] {
            if let Some(v) = kv.get::<usize>(key).map_err(bad)? {
                *slot = v;
            }
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("variant", self.variant);
        kv.set("dim", self.dim);
        kv.set("depth", self.depth);
        kv.set("heads", self.heads);
        kv.set("patch", self.patch);
        kv.set("frames", self.frames);
        kv.set("crop", self.crop);
        kv
    }
}

/// How many encoder blocks fine-tuning updates, counted from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FineTuned {
    Top(usize),
    All,
}

impl FromStr for FineTuned {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(FineTuned::All);
        }
        s.parse::<usize>()
            .map(FineTuned::Top)
            .map_err(|_| format!("fine-tuned layers must be a count or \"all\", got {s:?}"))
    }
}

impl fmt::Display for FineTuned {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FineTuned::Top(k) => write!(f, "{k}"),
            FineTuned::All => f.write_str("all"),
        }
    }
}

/// Embedding, encoder and a linear head. The divided variant classifies
/// from the classification token, the joint variant from the token mean.
#[derive(Debug, Clone)]
pub struct ClassifierModel<T: Scalar> {
    pub cfg: ModelConfig,
    pub embed: Embedding<T>,
    pub encoder: Encoder<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> ClassifierModel<T> {
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, num_classes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if num_classes == 0 {
            return Err(ModelError::Config("at least one class is required".into()));
        }
        let embed = Embedding::new(cfg.embedding(), rng)?;
        let encoder = Encoder::new(rng, cfg.variant, cfg.depth, cfg.dim, cfg.heads)?;
        let head = Linear::new(rng, cfg.dim, num_classes);
        Ok(Self {
            cfg,
            embed,
            encoder,
            head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.d_out()
    }

    pub fn named_params(&self) -> NamedParams<T> {
        let mut out = Vec::new();
        self.embed.collect(&mut out);
        self.encoder.collect("enc", &mut out);
        self.head.collect("head", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    /// `[B, F, 3, H, W] -> [B, classes]`. The classification token is read
    /// after the final norm; with mean pooling the norm is applied to the
    /// pooled vector instead.
    pub fn forward(&self, x: &Tensor<T>, trace: bool) -> Result<(Tensor<T>, Option<AttentionTrace<T>>)> {
        let tokens = self.embed.forward(x)?;
        let (out, trace) = run_blocks(&tokens, &self.encoder.blocks, trace)?;
        let (b, d) = (out.batch(), out.dim());
        let pooled = if out.has_cls {
            out.tokens.slice(1, 0, 1)?.reshape(&[b, d])?
        } else {
            out.tokens.mean_axis(1)?
        };
        let pooled = self.encoder.norm.forward(&pooled)?;
        Ok((self.head.forward(&pooled)?, trace))
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        crate::nn::to_checkpoint(&self.named_params())
    }

    /// Loads every parameter from a classifier checkpoint.
    pub fn load(&self, ckpt: &Checkpoint<T>) -> Result<()> {
        if let Some((shape, _)) = ckpt.get("head.bias") {
            if shape != [self.num_classes()] {
                return Err(ModelError::ClassMismatch {
                    head: shape.first().copied().unwrap_or(0),
                    manifest: self.num_classes(),
                });
            }
        }
        load_params(&self.named_params(), ckpt, false).map(|_| ())
    }

    /// Copies embedding and encoder weights from an autoencoder checkpoint;
    /// the head keeps its fresh initialization.
    pub fn load_encoder(&self, ckpt: &Checkpoint<T>) -> Result<Vec<String>> {
        let body: NamedParams<T> = self
            .named_params()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("head."))
            .collect();
        load_params(&body, ckpt, false)
    }
}

/// Marks the trainable set: the top `count` encoder blocks, the final norm
/// and the head. [`FineTuned::All`], or a count equal to the depth, also
/// unfreezes the embedding. Returns the trainable parameter names.
pub fn freeze_layers<T: Scalar>(model: &ClassifierModel<T>, layers: FineTuned) -> Result<Vec<String>> {
    let depth = model.encoder.depth();
    let first_trainable = match layers {
        FineTuned::All => 0,
        FineTuned::Top(0) => return Err(ModelError::Config("fine-tuned layers must be at least 1".into())),
        FineTuned::Top(k) if k > depth => {
            return Err(ModelError::Config(format!(
                "cannot fine-tune {k} layers of a depth-{depth} encoder"
            )))
        }
        FineTuned::Top(k) => depth - k,
    };
    let mut trainable = Vec::new();
    for (name, t) in model.named_params() {
        let on = match block_of(&name) {
            Some(i) => i >= first_trainable,
            None if name.starts_with("embed.") => first_trainable == 0,
            None => true,
        };
        t.set_requires_grad(on);
        if on {
            trainable.push(name);
        }
    }
    Ok(trainable)
}

fn block_of(name: &str) -> Option<usize> {
    name.strip_prefix("enc.")?.split('.').next()?.parse().ok()
}
