//! Training-time photometric and geometric augmentation.
//!
//! Order: random crop, horizontal flip, gamma, per-channel RGB shift, then
//! colour jitter (brightness, contrast, saturation, hue). Values stay in
//! `[0, 1]` after every step.

use image::{imageops, Rgb32FImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Side of the pre-cropped face images.
    pub input_size: u32,
    pub crop_size: u32,
    /// Uniform crop offsets when set; otherwise a center crop.
    pub random_crop: bool,
    pub flip_probability: f64,
    /// Exponent range for `v ↦ v^γ`.
    pub gamma_range: [f64; 2],
    /// Additive per-channel shift bound, in 8-bit units.
    pub rgb_shift_limit: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            input_size: 256,
            crop_size: 224,
            random_crop: true,
            flip_probability: 0.5,
            gamma_range: [0.8, 1.8],
            rgb_shift_limit: 20.0,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            hue: 0.1,
        }
    }
}

impl AugmentationConfig {
    /// Center crop only.
    pub fn disabled() -> Self {
        Self {
            random_crop: false,
            flip_probability: 0.0,
            gamma_range: [1.0, 1.0],
            rgb_shift_limit: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crop_size > self.input_size {
            return Err(Error::config(format!(
                "crop_size {} must lie in 1..={}",
                self.crop_size, self.input_size
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config("flip_probability must lie in [0, 1]"));
        }
        let [lo, hi] = self.gamma_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config(format!("gamma_range [{lo}, {hi}] is not an ordered positive range")));
        }
        if !(0.0..=255.0).contains(&self.rgb_shift_limit) {
            return Err(Error::config("rgb_shift_limit must lie in [0, 255]"));
        }
        for (name, v) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} jitter must lie in [0, 1)")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::config("hue jitter must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.random_range(-limit..=limit)
    } else {
        0.0
    }
}

fn for_each_pixel(image: &mut Rgb32FImage, mut f: impl FnMut(&mut [f32; 3])) {
    for px in image.pixels_mut() {
        f(&mut px.0);
        for v in px.0.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

fn luminance(p: &[f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

pub fn center_crop(image: &Rgb32FImage, size: u32) -> Result<Rgb32FImage> {
    let (w, h) = image.dimensions();
    if size > w || size > h {
        return Err(Error::shape("center crop", &[size as usize, size as usize], &[w as usize, h as usize]));
    }
    Ok(imageops::crop_imm(image, (w - size) / 2, (h - size) / 2, size, size).to_image())
}

pub fn apply_gamma(image: &mut Rgb32FImage, gamma: f32) {
    if gamma != 1.0 {
        for_each_pixel(image, |p| p.iter_mut().for_each(|v| *v = v.powf(gamma)));
    }
}

pub fn rgb_to_hsv(p: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = p;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb(p: [f32; 3]) -> [f32; 3] {
    let [h, s, v] = p;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Augments a square `input_size` image in `[0, 1]` into a `crop_size` image.
pub fn augment<R: Rng + ?Sized>(image: &Rgb32FImage, config: &AugmentationConfig, rng: &mut R) -> Result<Rgb32FImage> {
    let (w, h) = image.dimensions();
    if (w, h) != (config.input_size, config.input_size) {
        return Err(Error::shape(
            "augmentation input",
            &[config.input_size as usize, config.input_size as usize],
            &[w as usize, h as usize],
        ));
    }
    let crop = config.crop_size;
    let mut out = if config.random_crop {
        let x = rng.random_range(0..=w - crop);
        let y = rng.random_range(0..=h - crop);
        imageops::crop_imm(image, x, y, crop, crop).to_image()
    } else {
        center_crop(image, crop)?
    };

    if config.flip_probability > 0.0 && rng.random::<f64>() < config.flip_probability {
        imageops::flip_horizontal_in_place(&mut out);
    }

    let [lo, hi] = config.gamma_range;
    let gamma = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    apply_gamma(&mut out, gamma as f32);

    if config.rgb_shift_limit > 0.0 {
        let limit = config.rgb_shift_limit / 255.0;
        let shift = [symmetric(rng, limit) as f32, symmetric(rng, limit) as f32, symmetric(rng, limit) as f32];
        for_each_pixel(&mut out, |p| {
            for (v, s) in p.iter_mut().zip(shift) {
                *v += s;
            }
        });
    }

    let brightness = 1.0 + symmetric(rng, config.brightness) as f32;
    if brightness != 1.0 {
        for_each_pixel(&mut out, |p| p.iter_mut().for_each(|v| *v *= brightness));
    }
    let contrast = 1.0 + symmetric(rng, config.contrast) as f32;
    if contrast != 1.0 {
        let n = (out.width() * out.height()) as f32;
        let mean = out.pixels().map(|px| luminance(&px.0)).sum::<f32>() / n;
        for_each_pixel(&mut out, |p| p.iter_mut().for_each(|v| *v = (*v - mean) * contrast + mean));
    }
    let saturation = 1.0 + symmetric(rng, config.saturation) as f32;
    if saturation != 1.0 {
        for_each_pixel(&mut out, |p| {
            let gray = luminance(p);
            p.iter_mut().for_each(|v| *v = (*v - gray) * saturation + gray);
        });
    }
    let hue = symmetric(rng, config.hue) as f32;
    if hue != 0.0 {
        for_each_pixel(&mut out, |p| {
            let mut hsv = rgb_to_hsv(*p);
            hsv[0] += hue;
            *p = hsv_to_rgb(hsv);
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image(size: u32) -> Rgb32FImage {
        Rgb32FImage::from_fn(size, size, |x, y| {
            Rgb([x as f32 / size as f32, y as f32 / size as f32, ((x + y) % 17) as f32 / 16.0])
        })
    }

    #[test]
    fn disabled_augmentation_is_center_crop() {
        let img = gradient_image(256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(&img, &AugmentationConfig::disabled(), &mut rng).unwrap();
        assert_eq!(out.dimensions(), (224, 224));
        assert_eq!(out, center_crop(&img, 224).unwrap());
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(16, 16));
    }

    #[test]
    fn unit_gamma_leaves_values() {
        let mut img = gradient_image(32);
        let before = img.clone();
        apply_gamma(&mut img, 1.0);
        assert_eq!(img, before);
        apply_gamma(&mut img, 2.0);
        assert!((img.get_pixel(16, 0)[0] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn same_seed_same_output() {
        let img = gradient_image(256);
        let cfg = AugmentationConfig::default();
        let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a.as_raw(), b.as_raw());
        let c = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(43)).unwrap();
        assert_ne!(a.as_raw(), c.as_raw());
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let img = gradient_image(200);
        let err = augment(&img, &AugmentationConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn hsv_round_trip() {
        for p in [[0.2f32, 0.4, 0.9], [1.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.9, 0.8, 0.1], [0.3, 0.9, 0.6]] {
            let back = hsv_to_rgb(rgb_to_hsv(p));
            for (a, b) in p.iter().zip(back) {
                assert!((a - b).abs() < 1e-5, "{p:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn config_validation() {
        AugmentationConfig::default().validate().unwrap();
        let bad = AugmentationConfig {
            gamma_range: [1.8, 0.8],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            flip_probability: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_shape_and_range(seed in any::<u64>()) {
            let img = gradient_image(256);
            let out = augment(&img, &AugmentationConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(out.dimensions(), (224, 224));
            prop_assert!(out.as_raw().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
