//! Video preprocessing: manifest ingestion, frame sampling and padding,
//! the short/long-side resize rule, BGR→RGB conversion, per-clip
//! augmentation, the raw frame container and synthetic datasets.

mod container;
mod frame;
mod manifest;
mod pipeline;
mod sampling;
mod synthetic;
mod transform;

pub use container::{read_video, read_video_file, write_video, write_video_file, VIDEO_MAGIC, VIDEO_VERSION};
pub use frame::{ChannelOrder, Frame, FrameTransform, VideoClip, VideoSource};
pub use manifest::{load_manifest, merge_train_val, parse_manifest, DatasetManifest, Instance, Split};
pub use pipeline::{derive_rng, stack_clips, PipelineConfig, Preprocessor, Sampling};
pub use sampling::{pad_clip, sample_consecutive, sample_consecutive_from, sample_even};
pub use synthetic::{load_dataset, make_synthetic_dataset, write_dataset, SyntheticConfig, SyntheticDataset};
pub use transform::{augment_train, augment_train_with, bgr_to_rgb, crop_center, resize_rule, resize_rule_with, resized_dims, rgb_to_bgr, to_model_tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("empty video {0}")]
    EmptyVideo(String),
    #[error("invalid target frame count {0}")]
    InvalidTarget(usize),
    #[error("padding needs fewer frames than the target: have {have}, target {target}")]
    NothingToPad { have: usize, target: usize },
    #[error("zero-dimension frame {height}x{width}")]
    ZeroDimension { height: usize, width: usize },
    #[error("frame {height}x{width} smaller than crop {crop}")]
    Undersized { height: usize, width: usize, crop: usize },
    #[error("expected {expected:?} channel order, got {got:?}")]
    ChannelOrder { expected: ChannelOrder, got: ChannelOrder },
    #[error("frames in one clip must share dimensions")]
    RaggedClip,
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("video container: {0}")]
    Container(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, VideoError>;
