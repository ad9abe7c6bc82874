use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3};
use rand::Rng;
use rayon::prelude::*;

use super::attention::{AdapterMasks, GradScope};
use super::block::{BlockCache, TransformerBlock};
use super::embed::{ImageBatch, PatchEmbedder};
use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::lora::{dropout_mask, AdapterConfig, LoraPair, Target};
use crate::nn::{cast, trunc_normal, LayerNorm, LayerNormCache, Real};

/// Standard deviation used for freshly initialized encoder matrices.
pub const INIT_STD: f64 = 0.02;

/// ViT image encoder producing the final normalized class-token feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub embed: PatchEmbedder<T>,
    pub blocks: Vec<TransformerBlock<T>>,
    pub norm: LayerNorm<T>,
    pub adapter: Option<AdapterConfig>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    patches: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
    tokens: usize,
}

impl<T: Real> Encoder<T> {
    /// All matrices zero, norms at identity.
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let eps = cast(config.layernorm_eps);
        let blocks = (0..config.num_layers)
            .map(|_| TransformerBlock::zeros(config.embed_dim, config.num_heads, config.mlp_dim(), eps))
            .collect();
        Ok(Self {
            config: config.clone(),
            embed: PatchEmbedder::zeros(config),
            blocks,
            norm: LayerNorm::new(config.embed_dim, eps),
            adapter: None,
        })
    }

    /// Truncated-normal matrices with standard deviation `std`, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, std: f64, rng: &mut R) -> Result<Self> {
        let mut enc = Self::zeros(config)?;
        let d = config.embed_dim;
        enc.embed.projection.weight = trunc_normal(rng, (d, config.patch_dim()), std);
        enc.embed.cls_token = trunc_normal(rng, (1, d), std).into_shape_with_order(d).expect("row");
        enc.embed.position = trunc_normal(rng, (config.num_tokens(), d), std);
        for block in &mut enc.blocks {
            for lin in [&mut block.attn.q, &mut block.attn.k, &mut block.attn.v, &mut block.attn.o] {
                lin.weight = trunc_normal(rng, (d, d), std);
            }
            block.fc1.weight = trunc_normal(rng, (config.mlp_dim(), d), std);
            block.fc2.weight = trunc_normal(rng, (d, config.mlp_dim()), std);
        }
        Ok(enc)
    }

    /// Attaches fresh adapters (Gaussian `A`, zero `B`) to every block.
    pub fn attach_adapters<R: Rng + ?Sized>(&mut self, config: &AdapterConfig, rng: &mut R) -> Result<()> {
        config.validate(&self.config)?;
        let d = self.config.embed_dim;
        for block in &mut self.blocks {
            block.attn.q_lora = None;
            block.attn.v_lora = None;
            if config.targets(Target::Q) {
                block.attn.q_lora = Some(LoraPair::init(config, d, d, rng)?);
            }
            if config.targets(Target::V) {
                block.attn.v_lora = Some(LoraPair::init(config, d, d, rng)?);
            }
        }
        self.adapter = Some(config.clone());
        Ok(())
    }

    pub fn has_adapters(&self) -> bool {
        self.adapter.as_ref().is_some_and(|a| !a.targets.is_empty())
    }

    /// Copy with every adapter folded into its frozen projection.
    pub fn merged(&self) -> Result<Self> {
        let mut out = self.clone();
        for block in &mut out.blocks {
            block.attn.merge_adapters()?;
        }
        out.adapter = None;
        Ok(out)
    }

    /// Same architecture with every tensor zeroed; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_tensor_mut(|_, mut t| t.fill(T::zero()));
        out
    }

    pub(crate) fn for_each_tensor_mut(&mut self, mut f: impl FnMut(String, ndarray::ArrayViewMutD<'_, T>)) {
        for (name, t) in crate::model::encoder_tensors_mut(self) {
            f(name, t);
        }
    }

    fn adapter_masks<R: Rng + ?Sized>(&self, tokens: usize, rng: Option<&mut R>) -> Vec<AdapterMasks<T>> {
        let rate = self.adapter.as_ref().map_or(0.0, |a| a.dropout);
        let d = self.config.embed_dim;
        match rng {
            Some(rng) if rate > 0.0 => self
                .blocks
                .iter()
                .map(|b| AdapterMasks {
                    q: b.attn.q_lora.as_ref().and_then(|_| dropout_mask(( tokens, d), rate, rng)),
                    v: b.attn.v_lora.as_ref().and_then(|_| dropout_mask((tokens, d), rate, rng)),
                })
                .collect(),
            _ => vec![AdapterMasks::default(); self.blocks.len()],
        }
    }

    /// Forward pass for one `3 × S × S` image. Adapter dropout is active only
    /// when `dropout_rng` is supplied.
    pub fn forward_sample<R: Rng + ?Sized>(&self, image: ArrayView3<T>, dropout_rng: Option<&mut R>) -> Result<(Array1<T>, EncoderCache<T>)> {
        let (mut x, patches) = self.embed.forward(image)?;
        let tokens = x.nrows();
        let masks = self.adapter_masks(tokens, dropout_rng);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (block, m) in self.blocks.iter().zip(masks) {
            let (y, cache) = block.forward(x.view(), m)?;
            x = y;
            caches.push(cache);
        }
        let (normed, norm) = self.norm.forward(x.view());
        let feature = normed.row(0).to_owned();
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite encoder feature".into()));
        }
        Ok((
            feature,
            EncoderCache {
                patches,
                blocks: caches,
                norm,
                tokens,
            },
        ))
    }

    /// Accumulates gradients of a loss whose gradient with respect to the
    /// class-token feature is `dfeature`.
    pub fn backward_sample(&self, cache: &EncoderCache<T>, dfeature: ArrayView1<T>, scope: GradScope, grads: &mut Encoder<T>) {
        if !scope.any() {
            return;
        }
        let mut dnormed = Array2::zeros((cache.tokens, self.config.embed_dim));
        dnormed.row_mut(0).assign(&dfeature);
        let (mut dx, dw, db) = self.norm.backward(&cache.norm, dnormed.view());
        if scope.base {
            grads.norm.weight += &dw;
            grads.norm.bias += &db;
        }
        for ((block, bc), gb) in self.blocks.iter().zip(&cache.blocks).zip(grads.blocks.iter_mut()).rev() {
            dx = block.backward(bc, dx.view(), scope, gb);
        }
        if scope.base {
            self.embed.backward(&cache.patches, dx.view(), &mut grads.embed);
        }
    }

    /// Class-token features for a batch (inference mode), `batch × d`.
    pub fn encode(&self, images: &ImageBatch<T>) -> Result<Array2<T>> {
        let rows: Vec<Array1<T>> = (0..images.len())
            .into_par_iter()
            .map(|i| self.forward_sample::<rand_chacha::ChaCha8Rng>(images.image(i), None).map(|(f, _)| f))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.config.embed_dim));
        for (mut dst, row) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&row);
        }
        Ok(out)
    }
}

/// Multi-head self-attention of one block over a token matrix, inference mode.
pub fn multi_head_attention<T: Real>(x: ArrayView2<T>, block: &TransformerBlock<T>) -> Result<Array2<T>> {
    block.attn.check_adapters()?;
    Ok(block.attn.forward(x, AdapterMasks::default())?.0)
}

/// Final-layer class-token features for every image in the batch.
pub fn encoder_forward<T: Real>(images: &ImageBatch<T>, encoder: &Encoder<T>) -> Result<Array2<T>> {
    if images.image_size() != encoder.config.image_size {
        return Err(Error::config(format!(
            "image size {} does not match encoder input {}",
            images.image_size(),
            encoder.config.image_size
        )));
    }
    encoder.encode(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(n: usize, seed: u64) -> ImageBatch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBatch::new(Array4::from_shape_simple_fn((n, 3, 16, 16), || rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn final_norm_shift_passes_through_zero_model() {
        let cfg = EncoderConfig::toy();
        let mut enc = Encoder::<f64>::zeros(&cfg).unwrap();
        enc.norm.weight.fill(0.0);
        enc.norm.bias = Array1::linspace(-1.0, 1.0, 8);
        let feats = encoder_forward(&random_batch(2, 0), &enc).unwrap();
        for row in feats.rows() {
            assert_eq!(row, enc.norm.bias);
        }
    }

    #[test]
    fn identical_images_identical_features() {
        let cfg = EncoderConfig::toy();
        let enc = Encoder::<f64>::init(&cfg, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let one = random_batch(1, 9);
        let two = ImageBatch::from_images(&[one.image(0).to_owned(), one.image(0).to_owned()]).unwrap();
        let f = encoder_forward(&two, &enc).unwrap();
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn batch_permutation_equivariance() {
        let cfg = EncoderConfig::toy();
        let enc = Encoder::<f64>::init(&cfg, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let batch = random_batch(4, 3);
        let perm = [2usize, 0, 3, 1];
        let permuted = ImageBatch::from_images(&perm.iter().map(|&i| batch.image(i).to_owned()).collect::<Vec<_>>()).unwrap();
        let a = encoder_forward(&batch, &enc).unwrap();
        let b = encoder_forward(&permuted, &enc).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(a.row(i), b.row(j));
        }
    }

    #[test]
    fn wrong_image_size_is_config_error() {
        let enc = Encoder::<f64>::zeros(&EncoderConfig::toy()).unwrap();
        let batch = ImageBatch::new(Array4::zeros((1, 3, 8, 8))).unwrap();
        assert!(matches!(encoder_forward(&batch, &enc), Err(Error::Config(_))));
    }

    #[test]
    fn merged_encoder_drops_adapters() {
        let cfg = EncoderConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut enc = Encoder::<f64>::init(&cfg, 0.3, &mut rng).unwrap();
        enc.attach_adapters(&AdapterConfig { rank: 2, ..Default::default() }, &mut rng).unwrap();
        for block in &mut enc.blocks {
            block.attn.q_lora.as_mut().unwrap().b.fill(0.1);
            block.attn.v_lora.as_mut().unwrap().b.fill(-0.2);
        }
        let merged = enc.merged().unwrap();
        assert!(!merged.has_adapters());
        assert!(merged.blocks.iter().all(|b| b.attn.q_lora.is_none() && b.attn.v_lora.is_none()));
        let batch = random_batch(3, 5);
        let a = encoder_forward(&batch, &enc).unwrap();
        let b = encoder_forward(&batch, &merged).unwrap();
        let diff = (&a - &b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-10, "{diff}");
    }
}
