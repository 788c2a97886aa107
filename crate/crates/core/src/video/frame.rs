use serde::{Deserialize, Serialize};

use super::{Result, VideoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelOrder {
    Bgr,
    Rgb,
}

/// One 8-bit, 3-channel image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
    pub order: ChannelOrder,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>, order: ChannelOrder) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(VideoError::ZeroDimension { height, width });
        }
        if pixels.len() != height * width * 3 {
            return Err(VideoError::Container(format!(
                "pixel buffer of {} bytes for {height}x{width}x3",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels, order })
    }

    pub fn filled(height: usize, width: usize, value: [u8; 3], order: ChannelOrder) -> Self {
        let pixels = value.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, pixels, order }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Crop offset and flip applied to one frame during augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTransform {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flipped: bool,
}

/// A decoded video before sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSource {
    pub id: String,
    pub frames: Vec<Frame>,
    pub label: Option<usize>,
}

/// A fixed-length clip. `sampled_indices` holds the source frame index of
/// each frame, or −1 for padding duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub source_id: String,
    pub sampled_indices: Vec<i64>,
    pub label: Option<usize>,
    /// One entry per frame once augmentation or cropping has run.
    pub transforms: Vec<FrameTransform>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Shared (height, width) of all frames.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let first = self.frames.first().ok_or_else(|| VideoError::EmptyVideo(self.source_id.clone()))?;
        if self.frames.iter().any(|f| f.height != first.height || f.width != first.width) {
            return Err(VideoError::RaggedClip);
        }
        Ok((first.height, first.width))
    }

    pub(crate) fn map_frames(self, f: impl FnMut(&Frame) -> Result<Frame>) -> Result<Self> {
        let frames = self.frames.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self { frames, ..self })
    }
}
