use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use super::{
    derive_rng, load_manifest, read_video_file, write_video_file, ChannelOrder, DatasetManifest, Frame, Instance,
    Result, Split, VideoError, VideoSource,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    /// Same order as `manifest.instances`.
    pub videos: Vec<VideoSource>,
}

fn split_for(i: usize) -> Split {
    match i % 6 {
        0..=3 => Split::Train,
        4 => Split::Val,
        _ => Split::Test,
    }
}

/// Labelled toy videos: class `c` is a square of a class-specific color
/// sliding across a static ramp background in direction `2πc/C`, with a
/// seeded jitter of its start position. Frames are stored BGR, as a frame
/// extractor would produce them. Splits are assigned 4:1:1 round-robin
/// within each class.
///
/// `crop` is the crop size the data will be fed to; frames smaller than it
/// are rejected.
pub fn make_synthetic_dataset(cfg: &SyntheticConfig, crop: usize) -> Result<SyntheticDataset> {
    if cfg.classes == 0 || cfg.per_class == 0 || cfg.frames == 0 || cfg.size == 0 {
        return Err(VideoError::Config(format!("all synthetic counts must be >= 1: {cfg:?}")));
    }
    if cfg.size < crop {
        return Err(VideoError::Config(format!(
            "synthetic frame size {} is below the crop size {crop}; lower the crop to use small frames",
            cfg.size
        )));
    }
    let glosses: Vec<String> = (0..cfg.classes).map(|c| format!("sign{c:03}")).collect();
    let mut instances = Vec::new();
    let mut videos = Vec::new();
    for class in 0..cfg.classes {
        for i in 0..cfg.per_class {
            let id = format!("{}_{i:03}", glosses[class]);
            let mut rng = derive_rng(cfg.seed, &id, 0);
            let frames = render(cfg, class, &mut rng);
            instances.push(Instance {
                video_id: id.clone(),
                class,
                split: split_for(i),
                frame_count: Some(cfg.frames),
            });
            videos.push(VideoSource {
                id,
                frames,
                label: Some(class),
            });
        }
    }
    Ok(SyntheticDataset {
        manifest: DatasetManifest { glosses, instances },
        videos,
    })
}

fn render(cfg: &SyntheticConfig, class: usize, rng: &mut impl Rng) -> Vec<Frame> {
    let size = cfg.size as f64;
    let theta = 2.0 * PI * class as f64 / cfg.classes as f64;
    let (dy, dx) = (theta.sin(), theta.cos());
    let color = [
        (128.0 + 127.0 * theta.cos()).round() as u8,
        (128.0 + 127.0 * (theta - 2.0 * PI / 3.0).cos()).round() as u8,
        (128.0 + 127.0 * (theta + 2.0 * PI / 3.0).cos()).round() as u8,
    ];
    let side = (cfg.size / 4).max(1);
    let half = side as f64 / 2.0;
    let span = size / 2.0;
    let jitter = size / 16.0;
    let cy0 = size / 2.0 - dy * span / 2.0 + rng.random_range(-jitter..=jitter);
    let cx0 = size / 2.0 - dx * span / 2.0 + rng.random_range(-jitter..=jitter);
    let steps = cfg.frames.saturating_sub(1).max(1) as f64;
    (0..cfg.frames)
        .map(|t| {
            let frac = t as f64 / steps;
            let cy = (cy0 + dy * span * frac).clamp(half, size - half);
            let cx = (cx0 + dx * span * frac).clamp(half, size - half);
            let top = (cy - half).round() as usize;
            let left = (cx - half).round() as usize;
            let mut pixels = Vec::with_capacity(cfg.size * cfg.size * 3);
            for y in 0..cfg.size {
                for x in 0..cfg.size {
                    let inside = (top..top + side).contains(&y) && (left..left + side).contains(&x);
                    let rgb = if inside {
                        color
                    } else {
                        [
                            (30 + 100 * x / cfg.size) as u8,
                            (30 + 100 * y / cfg.size) as u8,
                            60,
                        ]
                    };
                    pixels.extend([rgb[2], rgb[1], rgb[0]]);
                }
            }
            Frame {
                height: cfg.size,
                width: cfg.size,
                pixels,
                order: ChannelOrder::Bgr,
            }
        })
        .collect()
}

/// Writes `manifest.json` and `videos/<id>.vsv` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &SyntheticDataset) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("videos"))?;
    std::fs::write(dir.join("manifest.json"), ds.manifest.to_json())?;
    for v in &ds.videos {
        write_video_file(dir.join("videos").join(format!("{}.vsv", v.id)), &v.frames)?;
    }
    Ok(())
}

/// Reads a manifest and every video it lists from `videos_dir`.
pub fn load_dataset(manifest_path: impl AsRef<Path>, videos_dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    let manifest = load_manifest(manifest_path)?;
    let videos = manifest
        .instances
        .iter()
        .map(|i| read_video_file(videos_dir.as_ref().join(format!("{}.vsv", i.video_id)), &i.video_id, Some(i.class)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { manifest, videos })
}
