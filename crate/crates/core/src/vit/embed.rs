use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{Linear, Real};

/// A batch of normalized images, laid out `batch × 3 × size × size`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<T> {
    data: Array4<T>,
}

impl<T: Real> ImageBatch<T> {
    pub fn new(data: Array4<T>) -> Result<Self> {
        let (b, c, h, w) = data.dim();
        if b == 0 {
            return Err(Error::config("image batch is empty"));
        }
        if c != 3 || h != w {
            return Err(Error::shape("image batch", &[b, 3, h, h], data.shape()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("image batch contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn from_images(images: &[Array3<T>]) -> Result<Self> {
        let views: Vec<_> = images.iter().map(|im| im.view().insert_axis(Axis(0))).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|_| Error::config("images in a batch differ in shape"))?;
        Self::new(data)
    }

    pub fn len(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_size(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn image(&self, index: usize) -> ArrayView3<'_, T> {
        self.data.index_axis(Axis(0), index)
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }
}

/// Cuts a `3 × S × S` image into non-overlapping square patches, row-major
/// from the top-left. Each patch is flattened channel-first, then row, then
/// column.
pub fn patchify<T: Real>(image: ArrayView3<T>, patch_size: usize) -> Array2<T> {
    let grid = image.len_of(Axis(1)) / patch_size;
    let patch_dim = 3 * patch_size * patch_size;
    let mut out = Array2::zeros((grid * grid, patch_dim));
    for gy in 0..grid {
        for gx in 0..grid {
            let window = image.slice(s![
                ..,
                gy * patch_size..(gy + 1) * patch_size,
                gx * patch_size..(gx + 1) * patch_size
            ]);
            let mut row = out.row_mut(gy * grid + gx);
            for (dst, &src) in row.iter_mut().zip(window.iter()) {
                *dst = src;
            }
        }
    }
    out
}

/// Linear patch projection plus the class token and learned positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder<T> {
    /// `d × (patch² · 3)`
    pub projection: Linear<T>,
    pub cls_token: Array1<T>,
    /// `(num_patches + 1) × d`
    pub position: Array2<T>,
    pub patch_size: usize,
}

impl<T: Real> PatchEmbedder<T> {
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.embed_dim;
        Self {
            projection: Linear::zeros(d, config.patch_dim()),
            cls_token: Array1::zeros(d),
            position: Array2::zeros((config.num_tokens(), d)),
            patch_size: config.patch_size,
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.position.nrows()
    }

    /// Returns the token sequence and the flattened patches.
    pub fn forward(&self, image: ArrayView3<T>) -> Result<(Array2<T>, Array2<T>)> {
        let grid = ((self.num_tokens() - 1) as f64).sqrt().round() as usize;
        let size = grid * self.patch_size;
        if image.dim() != (3, size, size) {
            return Err(Error::shape("patch embedding input", &[3, size, size], image.shape()));
        }
        let patches = patchify(image, self.patch_size);
        let projected = self.projection.forward(patches.view());
        let d = self.cls_token.len();
        let mut tokens = Array2::zeros((self.num_tokens(), d));
        tokens.row_mut(0).assign(&self.cls_token);
        tokens.slice_mut(s![1.., ..]).assign(&projected);
        tokens += &self.position;
        Ok((tokens, patches))
    }

    /// Accumulates parameter gradients for upstream token gradients.
    pub fn backward(&self, patches: &Array2<T>, dtokens: ArrayView2<T>, grads: &mut PatchEmbedder<T>) {
        grads.position += &dtokens;
        grads.cls_token += &dtokens.row(0);
        let dproj = dtokens.slice(s![1.., ..]);
        let g = self.projection.backward(patches.view(), dproj, true);
        grads.projection.weight += &g.weight.expect("requested");
        grads.projection.bias += &g.bias.expect("requested");
    }
}

/// Embeds every image of the batch: `batch × tokens × d`.
pub fn patchify_and_embed<T: Real>(images: &ImageBatch<T>, embedder: &PatchEmbedder<T>) -> Result<Array3<T>> {
    let mut out = Array3::zeros((images.len(), embedder.num_tokens(), embedder.cls_token.len()));
    for (i, mut dst) in out.outer_iter_mut().enumerate() {
        let (tokens, _) = embedder.forward(images.image(i))?;
        dst.assign(&tokens);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts_follow_grid() {
        let cfg = EncoderConfig::toy();
        let emb = PatchEmbedder::<f64>::zeros(&cfg);
        let batch = ImageBatch::new(Array4::zeros((2, 3, 16, 16))).unwrap();
        let tokens = patchify_and_embed(&batch, &emb).unwrap();
        assert_eq!(tokens.dim(), (2, 17, 8));
    }

    #[test]
    fn zero_image_yields_cls_only() {
        let cfg = EncoderConfig::toy();
        let mut emb = PatchEmbedder::<f64>::zeros(&cfg);
        emb.cls_token = Array1::linspace(1.0, 8.0, 8);
        let (tokens, _) = emb.forward(Array3::zeros((3, 16, 16)).view()).unwrap();
        assert_eq!(tokens.row(0), emb.cls_token);
        assert!(tokens.slice(s![1.., ..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn patches_are_row_major() {
        let mut image = Array3::<f64>::zeros((3, 8, 8));
        // mark the top-right patch (grid 2x2, patch 4) in channel 0
        image[[0, 0, 4]] = 1.0;
        // and the bottom-left patch in channel 2
        image[[2, 7, 3]] = 2.0;
        let p = patchify(image.view(), 4);
        assert_eq!(p.dim(), (4, 48));
        assert_eq!(p[[1, 0]], 1.0);
        assert_eq!(p[[2, 2 * 16 + 3 * 4 + 3]], 2.0);
        assert_eq!(p.sum(), 3.0);
    }

    #[test]
    fn wrong_size_is_rejected() {
        let emb = PatchEmbedder::<f64>::zeros(&EncoderConfig::toy());
        let err = emb.forward(Array3::zeros((3, 12, 12)).view()).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn non_finite_batch_is_rejected() {
        let mut data = Array4::<f32>::zeros((1, 3, 4, 4));
        data[[0, 1, 2, 2]] = f32::NAN;
        assert!(matches!(ImageBatch::new(data), Err(Error::Numeric(_))));
    }
}
