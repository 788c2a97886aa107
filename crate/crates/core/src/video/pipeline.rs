use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::transform::{RESIZE_LONG_MAX, RESIZE_SHORT_MIN};
use super::{
    augment_train_with, bgr_to_rgb, crop_center, resize_rule_with, sample_consecutive, sample_consecutive_from, sample_even, to_model_tensor,
    ChannelOrder, Result, VideoClip, VideoError, VideoSource,
};
use crate::config::KeyValues;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Consecutive,
    Even,
}

impl FromStr for Sampling {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "consecutive" | "consec" | "consec." => Ok(Sampling::Consecutive),
            "even" => Ok(Sampling::Even),
            other => Err(format!("unknown sampling {other:?} (consecutive | even)")),
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Consecutive => "consecutive",
            Sampling::Even => "even",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub target_frames: usize,
    pub sampling: Sampling,
    pub crop: usize,
    pub resize_short: usize,
    pub resize_long: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_frames: 16,
            sampling: Sampling::Consecutive,
            crop: 224,
            resize_short: RESIZE_SHORT_MIN,
            resize_long: RESIZE_LONG_MAX,
            seed: 0,
        }
    }
}

pub const PIPELINE_KEYS: &[&str] = &["target_frames", "sampling", "crop", "resize_short", "resize_long", "seed"];

impl PipelineConfig {
    /// Small-frame preset for synthetic experiments: 8 frames, 32×32 crops
    /// taken from frames bounded to [34, 40] pixels.
    pub fn desk() -> Self {
        Self {
            target_frames: 8,
            sampling: Sampling::Consecutive,
            crop: 32,
            resize_short: 34,
            resize_long: 40,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_frames == 0 {
            return Err(VideoError::InvalidTarget(0));
        }
        if self.crop == 0 || self.resize_short < self.crop || self.resize_long < self.resize_short {
            return Err(VideoError::Config(format!(
                "need 0 < crop ({}) <= resize_short ({}) <= resize_long ({})",
                self.crop, self.resize_short, self.resize_long
            )));
        }
        Ok(())
    }

    /// Overrides fields present in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        let err = |e: crate::config::ConfigError| VideoError::Config(e.to_string());
        if let Some(v) = kv.get("target_frames").map_err(err)? {
            self.target_frames = v;
        }
        if let Some(v) = kv.get::<String>("sampling").map_err(err)? {
            self.sampling = v.parse().map_err(VideoError::Config)?;
        }
        if let Some(v) = kv.get("crop").map_err(err)? {
            self.crop = v;
        }
        if let Some(v) = kv.get("resize_short").map_err(err)? {
            self.resize_short = v;
        }
        if let Some(v) = kv.get("resize_long").map_err(err)? {
            self.resize_long = v;
        }
        if let Some(v) = kv.get("seed").map_err(err)? {
            self.seed = v;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text).map_err(|e| VideoError::Config(e.to_string()))?;
        kv.only(PIPELINE_KEYS).map_err(|e| VideoError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        cfg.apply(&kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("target_frames", self.target_frames);
        kv.set("sampling", self.sampling);
        kv.set("crop", self.crop);
        kv.set("resize_short", self.resize_short);
        kv.set("resize_long", self.resize_long);
        kv.set("seed", self.seed);
        kv
    }
}

/// Independent random stream for one video: a hash of the run seed, the
/// video id and a purpose tag (epoch, split, …). Results therefore do not
/// depend on the order videos are processed in.
pub fn derive_rng(seed: u64, video_id: &str, tag: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((video_id.len() as u64).to_le_bytes());
    h.update(video_id.as_bytes());
    h.update(tag.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Sampling → padding → resize → BGR→RGB → crop (random for training,
/// centered for evaluation).
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub cfg: PipelineConfig,
}

impl Preprocessor {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    fn sample_and_resize(&self, video: &VideoSource, start: Option<usize>, rng: &mut ChaCha8Rng) -> Result<VideoClip> {
        let n = self.cfg.target_frames;
        let clip = match (self.cfg.sampling, start) {
            (Sampling::Consecutive, None) => sample_consecutive(video, n, rng)?,
            (Sampling::Consecutive, Some(s)) => sample_consecutive_from(video, n, s, rng)?,
            (Sampling::Even, None) => sample_even(video, n, rng)?,
            (Sampling::Even, Some(_)) => {
                return Err(VideoError::Config("a start frame only applies to consecutive sampling".into()))
            }
        };
        let (short, long) = (self.cfg.resize_short, self.cfg.resize_long);
        clip.map_frames(|f| {
            let f = resize_rule_with(f, short, long)?;
            match f.order {
                ChannelOrder::Bgr => bgr_to_rgb(&f),
                ChannelOrder::Rgb => Ok(f),
            }
        })
    }

    pub fn train_clip(&self, video: &VideoSource, tag: u64) -> Result<VideoClip> {
        self.train_clip_with(video, tag, true)
    }

    /// [`Self::train_clip`], optionally without the horizontal flip.
    pub fn train_clip_with(&self, video: &VideoSource, tag: u64, flip: bool) -> Result<VideoClip> {
        let mut rng = derive_rng(self.cfg.seed, &video.id, tag);
        let clip = self.sample_and_resize(video, None, &mut rng)?;
        augment_train_with(clip, self.cfg.crop, flip, &mut rng)
    }

    pub fn eval_clip(&self, video: &VideoSource) -> Result<VideoClip> {
        self.eval_clip_from(video, None)
    }

    /// [`Self::eval_clip`], optionally pinning the consecutive window's first frame.
    pub fn eval_clip_from(&self, video: &VideoSource, start: Option<usize>) -> Result<VideoClip> {
        let mut rng = derive_rng(self.cfg.seed, &video.id, u64::MAX);
        let clip = self.sample_and_resize(video, start, &mut rng)?;
        crop_center(clip, self.cfg.crop)
    }
}

/// Stacks equally shaped clips into `[B, F, 3, H, W]`.
pub fn stack_clips<T: Scalar>(clips: &[VideoClip]) -> Result<Tensor<T>> {
    let first = clips.first().ok_or_else(|| VideoError::Config("empty batch".into()))?;
    let (h, w) = first.dims()?;
    let f = first.len();
    let mut data = Vec::with_capacity(clips.len() * f * 3 * h * w);
    for c in clips {
        if c.len() != f || c.dims()? != (h, w) {
            return Err(VideoError::RaggedClip);
        }
        data.extend(to_model_tensor::<T>(c)?.to_vec());
    }
    Ok(Tensor::from_vec(&[clips.len(), f, 3, h, w], data)?)
}
