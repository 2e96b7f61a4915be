//! Joint image/label augmentation: random resize, crop, horizontal flip,
//! colour noise and brightness.
//!
//! Geometric ops move image and label together; photometric ops touch the
//! image only. Each sample draws from its own RNG stream, so results do not
//! depend on which worker handles it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{bilinear_resize, nearest_index};
use crate::tensor::{LabelMap, Shape, Tensor, IGNORE_ID};

/// One image `(1,3,H,W)`, normalized, with its `(1,H,W)` label map.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub label: LabelMap,
}

impl Sample {
    pub fn new(image: Tensor, label: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || label.dims() != (1, s.h, s.w) {
            return Err(Error::shape(format!("sample image {s} vs label {:?}", label.dims())));
        }
        Ok(Sample { image, label })
    }

    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub scale: (f64, f64),
    pub crop_h: usize,
    pub crop_w: usize,
    pub flip_p: f64,
    pub noise_std: f64,
    pub gain: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { scale: (0.5, 2.0), crop_h: 512, crop_w: 1024, flip_p: 0.5, noise_std: 0.02, gain: (0.75, 1.25) }
    }
}

impl AugmentConfig {
    pub fn desk() -> Self {
        AugmentConfig { crop_h: 128, crop_w: 256, ..Self::default() }
    }
}

/// RNG stream for the sample at `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw(range: (f64, f64), rng: &mut impl Rng) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Resize by `scale`: bilinear for the image, nearest-neighbour for labels.
pub fn resize(sample: &Sample, scale: f64) -> Result<Sample> {
    let (h, w) = sample.size();
    let oh = ((h as f64 * scale).round() as usize).max(1);
    let ow = ((w as f64 * scale).round() as usize).max(1);
    let image = bilinear_resize(&sample.image, oh, ow)?;
    let rows: Vec<usize> = (0..oh).map(|y| nearest_index(y, h, oh)).collect();
    let cols: Vec<usize> = (0..ow).map(|x| nearest_index(x, w, ow)).collect();
    let src = sample.label.data();
    let data = rows.iter().flat_map(|&y| cols.iter().map(move |&x| src[y * w + x])).collect();
    Ok(Sample { image, label: LabelMap::new(1, oh, ow, data)? })
}

pub fn random_resize(sample: &Sample, range: (f64, f64), rng: &mut impl Rng) -> Result<Sample> {
    resize(sample, draw(range, rng))
}

/// Window of `crop_h×crop_w` at `(top, left)` of the sample padded to at least
/// that size (image with 0, label with the ignore id).
pub fn crop_at(sample: &Sample, crop_h: usize, crop_w: usize, top: usize, left: usize) -> Sample {
    let (h, w) = sample.size();
    let c = sample.image.shape().c;
    let image = Tensor::from_fn(Shape::new(1, c, crop_h, crop_w), |_, ch, y, x| {
        let (sy, sx) = (top + y, left + x);
        if sy < h && sx < w {
            sample.image.at(0, ch, sy, sx)
        } else {
            0.0
        }
    });
    let mut label = LabelMap::filled(1, crop_h, crop_w, IGNORE_ID);
    for y in 0..crop_h {
        for x in 0..crop_w {
            let (sy, sx) = (top + y, left + x);
            if sy < h && sx < w {
                label.data_mut()[y * crop_w + x] = sample.label.at(0, sy, sx);
            }
        }
    }
    Sample { image, label }
}

pub fn random_crop(sample: &Sample, crop_h: usize, crop_w: usize, rng: &mut impl Rng) -> Sample {
    let (h, w) = sample.size();
    let top = rng.random_range(0..=h.saturating_sub(crop_h));
    let left = rng.random_range(0..=w.saturating_sub(crop_w));
    crop_at(sample, crop_h, crop_w, top, left)
}

/// Mirror image and label left to right.
pub fn hflip(sample: &Sample) -> Sample {
    let (h, w) = sample.size();
    let s = sample.image.shape();
    let image = Tensor::from_fn(s, |_, c, y, x| sample.image.at(0, c, y, w - 1 - x));
    let data = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| sample.label.at(0, y, w - 1 - x)).collect();
    Sample { image, label: LabelMap::new(1, h, w, data).expect("same dims") }
}

pub fn random_hflip(sample: Sample, p: f64, rng: &mut impl Rng) -> Sample {
    if rng.random::<f64>() < p {
        hflip(&sample)
    } else {
        sample
    }
}

/// Add zero-mean Gaussian noise with standard deviation `std` to every image value.
pub fn color_noise(mut sample: Sample, std: f64, rng: &mut impl Rng) -> Sample {
    if std <= 0.0 {
        return sample;
    }
    let normal = Normal::new(0.0, std).expect("finite positive std");
    for v in sample.image.data_mut() {
        *v += normal.sample(rng) as f32;
    }
    sample
}

/// Multiply the image by one gain drawn from `range`.
pub fn brightness(mut sample: Sample, range: (f64, f64), rng: &mut impl Rng) -> Sample {
    let gain = draw(range, rng) as f32;
    if gain != 1.0 {
        for v in sample.image.data_mut() {
            *v *= gain;
        }
    }
    sample
}

/// resize → crop → hflip → noise → brightness.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    let s = random_resize(sample, cfg.scale, rng)?;
    let s = random_crop(&s, cfg.crop_h, cfg.crop_w, rng);
    let s = random_hflip(s, cfg.flip_p, rng);
    let s = color_noise(s, cfg.noise_std, rng);
    Ok(brightness(s, cfg.gain, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Sample {
        let image = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| (c * 100 + y * w + x) as f32 / 100.0);
        let label = LabelMap::new(1, h, w, (0..h * w).map(|i| (i % 3) as u8).collect()).unwrap();
        Sample::new(image, label).unwrap()
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = ramp(6, 10);
        assert_eq!(resize(&s, 1.0).unwrap(), s);
    }

    #[test]
    fn crop_pads_with_ignore() {
        let s = ramp(4, 4);
        let c = crop_at(&s, 6, 5, 0, 0);
        assert_eq!(c.size(), (6, 5));
        assert_eq!(c.label.at(0, 5, 0), IGNORE_ID);
        assert_eq!(c.label.at(0, 0, 4), IGNORE_ID);
        assert_eq!(c.image.at(0, 1, 5, 4), 0.0);
        assert_eq!(c.label.at(0, 3, 3), s.label.at(0, 3, 3));
    }

    #[test]
    fn pipeline_output_has_crop_size() {
        let s = ramp(20, 30);
        let cfg = AugmentConfig { crop_h: 16, crop_w: 24, ..AugmentConfig::default() };
        for i in 0..10 {
            let out = augment(&s, &cfg, &mut sample_rng(1, i)).unwrap();
            assert_eq!(out.size(), (16, 24));
        }
    }
}
