use image::{imageops, DynamicImage, Rgb32FImage, RgbImage};
use ndarray::Array3;
use rand::Rng;
use rayon::prelude::*;

use super::augment::{augment, center_crop, AugmentationConfig};
use super::manifest::DatasetManifest;
use super::protocol::Domain;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::vit::{EncoderConfig, Normalization};

/// A decoded manifest image held in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: RgbImage,
    pub label: Label,
    pub domain: Domain,
}

pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let image = image::open(&e.path)?.to_rgb8();
            Ok(Sample {
                image,
                label: e.label,
                domain: e.domain.clone(),
            })
        })
        .collect()
}

/// Turns raw images into normalized encoder inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub augmentation: AugmentationConfig,
    pub image_size: u32,
    pub normalization: Normalization,
}

impl Preprocess {
    pub fn new(encoder: &EncoderConfig, augmentation: AugmentationConfig) -> Self {
        Self {
            augmentation,
            image_size: encoder.image_size as u32,
            normalization: encoder.normalization,
        }
    }

    fn check_input(&self, raw: &RgbImage) -> Result<()> {
        let s = self.augmentation.input_size;
        if raw.dimensions() != (s, s) {
            return Err(Error::shape(
                "input image",
                &[s as usize, s as usize],
                &[raw.width() as usize, raw.height() as usize],
            ));
        }
        Ok(())
    }

    /// Augmented training input.
    pub fn train_tensor<R: Rng + ?Sized>(&self, raw: &RgbImage, rng: &mut R) -> Result<Array3<f32>> {
        self.check_input(raw)?;
        let float = DynamicImage::ImageRgb8(raw.clone()).into_rgb32f();
        Ok(self.finalize(augment(&float, &self.augmentation, rng)?))
    }

    /// Deterministic evaluation input: center crop, resize, normalize.
    pub fn eval_tensor(&self, raw: &RgbImage) -> Result<Array3<f32>> {
        self.check_input(raw)?;
        let float = DynamicImage::ImageRgb8(raw.clone()).into_rgb32f();
        Ok(self.finalize(center_crop(&float, self.augmentation.crop_size)?))
    }

    /// Resizes to the encoder input (area-weighted) and returns a normalized
    /// `3 × S × S` array.
    pub fn finalize(&self, image: Rgb32FImage) -> Array3<f32> {
        let s = self.image_size;
        let image = if image.dimensions() == (s, s) {
            image
        } else {
            imageops::resize(&image, s, s, imageops::FilterType::Triangle)
        };
        let n = &self.normalization;
        let mut out = Array3::zeros((3, s as usize, s as usize));
        for (x, y, px) in image.enumerate_pixels() {
            for c in 0..3 {
                out[[c, y as usize, x as usize]] = (px[c] - n.mean[c]) / n.std[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn eval_tensor_is_normalized_center_crop() {
        let mut pre = Preprocess::new(&EncoderConfig::toy(), AugmentationConfig::default());
        pre.normalization = Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        };
        let raw = RgbImage::from_pixel(256, 256, Rgb([255, 0, 51]));
        let t = pre.eval_tensor(&raw).unwrap();
        assert_eq!(t.dim(), (3, 16, 16));
        assert!((t[[0, 3, 3]] - 1.0).abs() < 1e-5);
        assert!(t[[1, 3, 3]].abs() < 1e-6);
        assert!((t[[2, 3, 3]] - 0.2).abs() < 1e-5);
    }

    #[test]
    fn rejects_unexpected_input_size() {
        let pre = Preprocess::new(&EncoderConfig::toy(), AugmentationConfig::default());
        assert!(pre.eval_tensor(&RgbImage::new(100, 100)).is_err());
    }
}
