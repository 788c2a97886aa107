use rand::Rng;

use super::{ChannelOrder, Frame, FrameTransform, Result, VideoClip, VideoError};
use crate::tensor::{Scalar, Tensor};

pub const RESIZE_SHORT_MIN: usize = 226;
pub const RESIZE_LONG_MAX: usize = 256;

/// Output size of the resize rule: scale up so the short side reaches
/// `short_min`, then scale down so the long side is at most `long_max`.
/// The second step wins when both apply. Aspect ratio is preserved.
pub fn resized_dims(height: usize, width: usize, short_min: usize, long_max: usize) -> (usize, usize) {
    let (h, w) = (height as f64, width as f64);
    let mut scale = 1.0f64;
    if h.min(w) < short_min as f64 {
        scale = short_min as f64 / h.min(w);
    }
    if h.max(w) * scale > long_max as f64 {
        scale = long_max as f64 / h.max(w);
    }
    if scale == 1.0 {
        return (height, width);
    }
    let round = |v: f64| ((v * scale).round() as usize).max(1);
    (round(h), round(w))
}

/// Resize with the 226/256 bounds.
pub fn resize_rule(frame: &Frame) -> Result<Frame> {
    resize_rule_with(frame, RESIZE_SHORT_MIN, RESIZE_LONG_MAX)
}

pub fn resize_rule_with(frame: &Frame, short_min: usize, long_max: usize) -> Result<Frame> {
    if frame.height == 0 || frame.width == 0 {
        return Err(VideoError::ZeroDimension {
            height: frame.height,
            width: frame.width,
        });
    }
    let (oh, ow) = resized_dims(frame.height, frame.width, short_min, long_max);
    if (oh, ow) == (frame.height, frame.width) {
        return Ok(frame.clone());
    }
    Ok(bilinear(frame, oh, ow))
}

/// Source sample positions and weights along one axis, half-pixel centers.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn bilinear(frame: &Frame, oh: usize, ow: usize) -> Frame {
    let ys = axis_taps(frame.height, oh);
    let xs = axis_taps(frame.width, ow);
    let mut pixels = Vec::with_capacity(oh * ow * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |y: usize, x: usize| frame.pixels[(y * frame.width + x) * 3 + c] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Frame {
        height: oh,
        width: ow,
        pixels,
        order: frame.order,
    }
}

fn swap_channels(frame: &Frame, to: ChannelOrder) -> Frame {
    let mut pixels = frame.pixels.clone();
    for px in pixels.chunks_exact_mut(3) {
        px.swap(0, 2);
    }
    Frame {
        pixels,
        order: to,
        ..*frame
    }
}

pub fn bgr_to_rgb(frame: &Frame) -> Result<Frame> {
    if frame.order != ChannelOrder::Bgr {
        return Err(VideoError::ChannelOrder {
            expected: ChannelOrder::Bgr,
            got: frame.order,
        });
    }
    Ok(swap_channels(frame, ChannelOrder::Rgb))
}

pub fn rgb_to_bgr(frame: &Frame) -> Result<Frame> {
    if frame.order != ChannelOrder::Rgb {
        return Err(VideoError::ChannelOrder {
            expected: ChannelOrder::Rgb,
            got: frame.order,
        });
    }
    Ok(swap_channels(frame, ChannelOrder::Bgr))
}

pub(crate) fn crop_flip(frame: &Frame, crop: usize, t: FrameTransform) -> Frame {
    let mut pixels = Vec::with_capacity(crop * crop * 3);
    for y in 0..crop {
        let row = (t.offset_y + y) * frame.width;
        for x in 0..crop {
            let sx = if t.flipped { crop - 1 - x } else { x };
            let i = (row + t.offset_x + sx) * 3;
            pixels.extend_from_slice(&frame.pixels[i..i + 3]);
        }
    }
    Frame {
        height: crop,
        width: crop,
        pixels,
        order: frame.order,
    }
}

fn check_crop(clip: &VideoClip, crop: usize) -> Result<(usize, usize)> {
    let (h, w) = clip.dims()?;
    if h < crop || w < crop || crop == 0 {
        return Err(VideoError::Undersized { height: h, width: w, crop });
    }
    Ok((h, w))
}

fn apply(clip: VideoClip, crop: usize, t: FrameTransform) -> VideoClip {
    let frames: Vec<Frame> = clip.frames.iter().map(|f| crop_flip(f, crop, t)).collect();
    let transforms = vec![t; frames.len()];
    VideoClip {
        frames,
        transforms,
        ..clip
    }
}

/// Training augmentation: one random `crop×crop` window and one horizontal
/// flip decision (p = 0.5), drawn once and applied to every frame.
pub fn augment_train<R: Rng + ?Sized>(clip: VideoClip, crop: usize, rng: &mut R) -> Result<VideoClip> {
    augment_train_with(clip, crop, true, rng)
}

/// [`augment_train`] with the flip optionally disabled. The coin is drawn
/// either way, so the crop stream does not depend on `flip`.
pub fn augment_train_with<R: Rng + ?Sized>(clip: VideoClip, crop: usize, flip: bool, rng: &mut R) -> Result<VideoClip> {
    let (h, w) = check_crop(&clip, crop)?;
    let t = FrameTransform {
        offset_y: rng.random_range(0..=h - crop),
        offset_x: rng.random_range(0..=w - crop),
        flipped: rng.random_bool(0.5) && flip,
    };
    Ok(apply(clip, crop, t))
}

/// Evaluation crop: centered window, floor offsets, no flip.
pub fn crop_center(clip: VideoClip, crop: usize) -> Result<VideoClip> {
    let (h, w) = check_crop(&clip, crop)?;
    let t = FrameTransform {
        offset_y: (h - crop) / 2,
        offset_x: (w - crop) / 2,
        flipped: false,
    };
    Ok(apply(clip, crop, t))
}

/// `[F, 3, H, W]` tensor with pixel values divided by 255.
pub fn to_model_tensor<T: Scalar>(clip: &VideoClip) -> Result<Tensor<T>> {
    let (h, w) = clip.dims()?;
    if let Some(f) = clip.frames.iter().find(|f| f.order != ChannelOrder::Rgb) {
        return Err(VideoError::ChannelOrder {
            expected: ChannelOrder::Rgb,
            got: f.order,
        });
    }
    let inv = T::one() / T::from_f64(255.0);
    let mut data = Vec::with_capacity(clip.len() * 3 * h * w);
    for f in &clip.frames {
        for c in 0..3 {
            data.extend(f.pixels.iter().skip(c).step_by(3).map(|&p| T::from_f64(p as f64) * inv));
        }
    }
    Ok(Tensor::from_vec(&[clip.len(), 3, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize, order: ChannelOrder) -> Frame {
        Frame::new(h, w, (0..h * w * 3).map(|_| rng.random()).collect(), order).unwrap()
    }

    fn clip_of(frames: Vec<Frame>) -> VideoClip {
        let n = frames.len();
        VideoClip {
            frames,
            source_id: "c".into(),
            sampled_indices: (0..n as i64).collect(),
            label: None,
            transforms: vec![],
        }
    }

    #[test]
    fn resize_dims_examples() {
        assert_eq!(resized_dims(240, 250, 226, 256), (240, 250));
        assert_eq!(resized_dims(113, 128, 226, 256), (226, 256));
        assert_eq!(resized_dims(200, 400, 226, 256), (128, 256));
        // long side only
        assert_eq!(resized_dims(240, 320, 226, 256), (192, 256));
    }

    #[test]
    fn resize_unchanged_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 240, 250, ChannelOrder::Bgr);
        assert_eq!(resize_rule(&f).unwrap(), f);
    }

    #[test]
    fn resize_zero_dimension_rejected() {
        let f = Frame {
            height: 0,
            width: 4,
            pixels: vec![],
            order: ChannelOrder::Bgr,
        };
        assert!(matches!(resize_rule(&f), Err(VideoError::ZeroDimension { .. })));
    }

    #[test]
    fn resize_constant_frame_stays_constant() {
        let f = Frame::filled(113, 128, [10, 20, 30], ChannelOrder::Bgr);
        let r = resize_rule(&f).unwrap();
        assert_eq!((r.height, r.width), (226, 256));
        assert!(r.pixels.chunks(3).all(|p| p == [10, 20, 30]));
        let f = Frame::filled(200, 400, [7, 8, 9], ChannelOrder::Rgb);
        let r = resize_rule(&f).unwrap();
        assert_eq!((r.height, r.width, r.order), (128, 256, ChannelOrder::Rgb));
    }

    #[test]
    fn bilinear_2x_upscale_golden() {
        // 1x2 row [0, 100] -> 2x4. Half-pixel centers map output x to
        // source positions -0.25, 0.25, 0.75, 1.25 -> clamp -> 0, .25, .75, 1.
        let f = Frame::new(1, 2, vec![0, 0, 0, 100, 100, 100], ChannelOrder::Bgr).unwrap();
        let r = bilinear(&f, 2, 4);
        let row: Vec<u8> = r.pixels.chunks(3).map(|p| p[0]).collect();
        assert_eq!(row, vec![0, 25, 75, 100, 0, 25, 75, 100]);
    }

    #[test]
    fn color_conversion() {
        let f = Frame::new(1, 1, vec![10, 20, 30], ChannelOrder::Bgr).unwrap();
        let r = bgr_to_rgb(&f).unwrap();
        assert_eq!(r.pixels, vec![30, 20, 10]);
        assert_eq!(r.order, ChannelOrder::Rgb);
        assert!(bgr_to_rgb(&r).is_err());
        let gray = Frame::filled(3, 3, [50, 50, 50], ChannelOrder::Bgr);
        assert_eq!(bgr_to_rgb(&gray).unwrap().pixels, gray.pixels);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_frame(&mut rng, 7, 5, ChannelOrder::Bgr);
        assert_eq!(rgb_to_bgr(&bgr_to_rgb(&f).unwrap()).unwrap(), f);
    }

    #[test]
    fn center_crop_offsets() {
        let clip = clip_of(vec![Frame::filled(226, 256, [0; 3], ChannelOrder::Rgb)]);
        let c = crop_center(clip, 224).unwrap();
        assert_eq!(c.transforms[0], FrameTransform { offset_y: 1, offset_x: 16, flipped: false });
        let clip = clip_of(vec![Frame::filled(256, 256, [0; 3], ChannelOrder::Rgb)]);
        let c = crop_center(clip, 224).unwrap();
        assert_eq!((c.transforms[0].offset_y, c.transforms[0].offset_x), (16, 16));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 224, 224, ChannelOrder::Rgb);
        let c = crop_center(clip_of(vec![f.clone()]), 224).unwrap();
        assert_eq!(c.frames[0], f);
        let small = clip_of(vec![Frame::filled(200, 300, [0; 3], ChannelOrder::Rgb)]);
        assert!(matches!(crop_center(small, 224), Err(VideoError::Undersized { .. })));
    }

    #[test]
    fn crop_pixels_match_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_frame(&mut rng, 10, 12, ChannelOrder::Rgb);
        let t = FrameTransform { offset_y: 2, offset_x: 3, flipped: false };
        let c = crop_flip(&f, 5, t);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(c.pixel(y, x), f.pixel(y + 2, x + 3));
            }
        }
        let fl = crop_flip(&f, 5, FrameTransform { flipped: true, ..t });
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(fl.pixel(y, x), f.pixel(y + 2, 3 + 4 - x));
            }
        }
    }

    #[test]
    fn augment_224_forces_zero_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let clip = clip_of(vec![Frame::filled(224, 224, [1, 2, 3], ChannelOrder::Rgb); 2]);
            let a = augment_train(clip, 224, &mut rng).unwrap();
            assert_eq!((a.transforms[0].offset_y, a.transforms[0].offset_x), (0, 0));
        }
    }

    #[test]
    fn augment_is_consistent_across_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let frames: Vec<Frame> = (0..10).map(|_| random_frame(&mut rng, 226, 256, ChannelOrder::Rgb)).collect();
        let a = augment_train(clip_of(frames.clone()), 224, &mut rng).unwrap();
        assert_eq!(a.transforms.len(), 10);
        assert!(a.transforms.iter().all(|t| *t == a.transforms[0]));
        for (orig, out) in frames.iter().zip(&a.frames) {
            assert_eq!(*out, crop_flip(orig, 224, a.transforms[0]));
        }
    }

    #[test]
    fn flip_twice_restores_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = random_frame(&mut rng, 30, 30, ChannelOrder::Rgb);
        let t = FrameTransform { offset_y: 3, offset_x: 4, flipped: true };
        let once = crop_flip(&f, 20, t);
        let twice = crop_flip(&once, 20, FrameTransform { offset_y: 0, offset_x: 0, flipped: true });
        assert_eq!(twice, crop_flip(&f, 20, FrameTransform { flipped: false, ..t }));
    }

    #[test]
    fn model_tensor_scaling() {
        let black = clip_of(vec![Frame::filled(4, 4, [0; 3], ChannelOrder::Rgb); 2]);
        assert!(to_model_tensor::<f32>(&black).unwrap().to_vec().iter().all(|&v| v == 0.0));
        let white = clip_of(vec![Frame::filled(4, 4, [255; 3], ChannelOrder::Rgb); 2]);
        let t = to_model_tensor::<f32>(&white).unwrap();
        assert_eq!(t.shape(), &[2, 3, 4, 4]);
        assert!(t.to_vec().iter().all(|&v| v == 1.0));
        let one = clip_of(vec![Frame::filled(1, 1, [128; 3], ChannelOrder::Rgb)]);
        assert!((to_model_tensor::<f64>(&one).unwrap().to_vec()[0] - 0.50196).abs() < 1e-5);
        let bgr = clip_of(vec![Frame::filled(1, 1, [0; 3], ChannelOrder::Bgr)]);
        assert!(matches!(to_model_tensor::<f32>(&bgr), Err(VideoError::ChannelOrder { .. })));
    }

    #[test]
    fn model_tensor_is_channel_planar() {
        let f = Frame::new(1, 2, vec![1, 2, 3, 4, 5, 6], ChannelOrder::Rgb).unwrap();
        let t = to_model_tensor::<f64>(&clip_of(vec![f])).unwrap();
        let v: Vec<u8> = t.to_vec().iter().map(|x| (x * 255.0).round() as u8).collect();
        assert_eq!(v, vec![1, 4, 2, 5, 3, 6]);
    }

    proptest! {
        #[test]
        fn resize_bounds(h in 1usize..600, w in 1usize..600) {
            let (oh, ow) = resized_dims(h, w, 226, 256);
            let (mn, mx) = (oh.min(ow), oh.max(ow));
            prop_assert!(mn >= 226 || mx == 256, "{h}x{w} -> {oh}x{ow}");
            prop_assert!(!(mn < 226 && mx > 256));
            prop_assert!(mx <= 256);
        }
    }
}
