//! Raw video container: a fixed header followed by uncompressed frames.
//!
//! ```text
//! magic    4 bytes "VSVC"
//! version  u32 LE  (1)
//! frames   u32 LE
//! height   u32 LE
//! width    u32 LE
//! order    u8      0 = BGR, 1 = RGB
//! pixels   frames × height × width × 3 bytes, row-major, interleaved
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ChannelOrder, Frame, Result, VideoError, VideoSource};

pub const VIDEO_MAGIC: &[u8; 4] = b"VSVC";
pub const VIDEO_VERSION: u32 = 1;

pub fn write_video(mut w: impl Write, frames: &[Frame]) -> Result<()> {
    let first = frames.first().ok_or_else(|| VideoError::Container("no frames".into()))?;
    if frames.iter().any(|f| f.height != first.height || f.width != first.width || f.order != first.order) {
        return Err(VideoError::RaggedClip);
    }
    let mut header = Vec::with_capacity(21);
    header.extend_from_slice(VIDEO_MAGIC);
    header.extend_from_slice(&VIDEO_VERSION.to_le_bytes());
    for v in [frames.len(), first.height, first.width] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.push(match first.order {
        ChannelOrder::Bgr => 0,
        ChannelOrder::Rgb => 1,
    });
    w.write_all(&header)?;
    for f in frames {
        w.write_all(&f.pixels)?;
    }
    Ok(())
}

pub fn read_video(mut r: impl Read) -> Result<Vec<Frame>> {
    let mut header = [0u8; 21];
    r.read_exact(&mut header)
        .map_err(|_| VideoError::Container("truncated header".into()))?;
    if &header[..4] != VIDEO_MAGIC {
        return Err(VideoError::Container("bad magic".into()));
    }
    let field = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as usize;
    if field(4) as u32 != VIDEO_VERSION {
        return Err(VideoError::Container(format!("unsupported version {}", field(4))));
    }
    let (count, height, width) = (field(8), field(12), field(16));
    let order = match header[20] {
        0 => ChannelOrder::Bgr,
        1 => ChannelOrder::Rgb,
        b => return Err(VideoError::Container(format!("unknown channel order {b}"))),
    };
    if count == 0 {
        return Err(VideoError::Container("no frames".into()));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pixels = vec![0u8; height * width * 3];
        r.read_exact(&mut pixels)
            .map_err(|_| VideoError::Container("truncated pixel data".into()))?;
        frames.push(Frame::new(height, width, pixels, order)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(VideoError::Container("trailing bytes".into()));
    }
    Ok(frames)
}

pub fn write_video_file(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let mut buf = Vec::new();
    write_video(&mut buf, frames)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_video_file(path: impl AsRef<Path>, id: &str, label: Option<usize>) -> Result<VideoSource> {
    let bytes = std::fs::read(path)?;
    Ok(VideoSource {
        id: id.to_string(),
        frames: read_video(bytes.as_slice())?,
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let frames = vec![
            Frame::new(1, 2, vec![1, 2, 3, 4, 5, 6], ChannelOrder::Bgr).unwrap(),
            Frame::new(1, 2, vec![7, 8, 9, 10, 11, 12], ChannelOrder::Bgr).unwrap(),
        ];
        let mut buf = Vec::new();
        write_video(&mut buf, &frames).unwrap();
        assert_eq!(buf.len(), 21 + 12);
        assert_eq!(&buf[..4], b"VSVC");
        assert_eq!(buf[20], 0);
        assert_eq!(&buf[21..], &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]);
        assert_eq!(read_video(buf.as_slice()).unwrap(), frames);
        assert!(read_video(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_video(extra.as_slice()).is_err());
    }
}
