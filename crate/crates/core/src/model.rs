//! The full detector (encoder + head), its named tensor layout and the
//! per-sample loss/gradient evaluation shared by training and verification.

use ndarray::{Array1, ArrayView3, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::head::{bce_logit_grad, bce_loss, head_forward, HeadOutput, HeadWeights};
use crate::label::Label;
use crate::lora::{AdapterConfig, Target};
use crate::nn::{cast, Real};
use crate::vit::{Encoder, EncoderConfig, GradScope, ImageBatch};

/// Name and shape of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn lora_tensor_name(layer: usize, target: Target, matrix: char) -> String {
    format!("blocks.{layer}.attn.{}.lora_{matrix}", target.as_str())
}

pub fn is_lora_tensor(name: &str) -> bool {
    name.contains(".lora_")
}

pub fn is_head_tensor(name: &str) -> bool {
    name.starts_with("head.")
}

/// Every tensor of a detector built from these configs, in storage order.
/// Computed without allocating the model.
pub fn param_layout(encoder: &EncoderConfig, adapter: Option<&AdapterConfig>) -> Vec<TensorSpec> {
    let d = encoder.embed_dim;
    let m = encoder.mlp_dim();
    let mut out = vec![
        TensorSpec::new("patch_embed.weight", &[d, encoder.patch_dim()]),
        TensorSpec::new("patch_embed.bias", &[d]),
        TensorSpec::new("cls_token", &[d]),
        TensorSpec::new("pos_embed", &[encoder.num_tokens(), d]),
    ];
    for i in 0..encoder.num_layers {
        let p = format!("blocks.{i}");
        out.push(TensorSpec::new(format!("{p}.norm1.weight"), &[d]));
        out.push(TensorSpec::new(format!("{p}.norm1.bias"), &[d]));
        for proj in ["q", "k", "v", "o"] {
            out.push(TensorSpec::new(format!("{p}.attn.{proj}.weight"), &[d, d]));
            out.push(TensorSpec::new(format!("{p}.attn.{proj}.bias"), &[d]));
            let target = match proj {
                "q" => Some(Target::Q),
                "v" => Some(Target::V),
                _ => None,
            };
            if let (Some(t), Some(a)) = (target, adapter) {
                if a.targets(t) {
                    out.push(TensorSpec::new(lora_tensor_name(i, t, 'A'), &[a.rank, d]));
                    out.push(TensorSpec::new(lora_tensor_name(i, t, 'B'), &[d, a.rank]));
                }
            }
        }
        out.push(TensorSpec::new(format!("{p}.norm2.weight"), &[d]));
        out.push(TensorSpec::new(format!("{p}.norm2.bias"), &[d]));
        out.push(TensorSpec::new(format!("{p}.mlp.fc1.weight"), &[m, d]));
        out.push(TensorSpec::new(format!("{p}.mlp.fc1.bias"), &[m]));
        out.push(TensorSpec::new(format!("{p}.mlp.fc2.weight"), &[d, m]));
        out.push(TensorSpec::new(format!("{p}.mlp.fc2.bias"), &[d]));
    }
    out.push(TensorSpec::new("norm.weight", &[d]));
    out.push(TensorSpec::new("norm.bias", &[d]));
    out.push(TensorSpec::new("head.weight", &[2, d]));
    out.push(TensorSpec::new("head.bias", &[2]));
    out
}

macro_rules! encoder_tensor_list {
    ($enc:expr, $view:ident, $($mutability:tt)*) => {{
        let enc = $enc;
        let mut out = Vec::new();
        out.push(("patch_embed.weight".to_string(), (& $($mutability)* enc.embed.projection.weight).$view().into_dyn()));
        out.push(("patch_embed.bias".to_string(), (& $($mutability)* enc.embed.projection.bias).$view().into_dyn()));
        out.push(("cls_token".to_string(), (& $($mutability)* enc.embed.cls_token).$view().into_dyn()));
        out.push(("pos_embed".to_string(), (& $($mutability)* enc.embed.position).$view().into_dyn()));
        for (i, block) in (& $($mutability)* enc.blocks).into_iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.norm1.weight"), (& $($mutability)* block.norm1.weight).$view().into_dyn()));
            out.push((format!("{p}.norm1.bias"), (& $($mutability)* block.norm1.bias).$view().into_dyn()));
            let attn = & $($mutability)* block.attn;
            out.push((format!("{p}.attn.q.weight"), (& $($mutability)* attn.q.weight).$view().into_dyn()));
            out.push((format!("{p}.attn.q.bias"), (& $($mutability)* attn.q.bias).$view().into_dyn()));
            if let Some(pair) = & $($mutability)* attn.q_lora {
                out.push((lora_tensor_name(i, Target::Q, 'A'), (& $($mutability)* pair.a).$view().into_dyn()));
                out.push((lora_tensor_name(i, Target::Q, 'B'), (& $($mutability)* pair.b).$view().into_dyn()));
            }
            out.push((format!("{p}.attn.k.weight"), (& $($mutability)* attn.k.weight).$view().into_dyn()));
            out.push((format!("{p}.attn.k.bias"), (& $($mutability)* attn.k.bias).$view().into_dyn()));
            out.push((format!("{p}.attn.v.weight"), (& $($mutability)* attn.v.weight).$view().into_dyn()));
            out.push((format!("{p}.attn.v.bias"), (& $($mutability)* attn.v.bias).$view().into_dyn()));
            if let Some(pair) = & $($mutability)* attn.v_lora {
                out.push((lora_tensor_name(i, Target::V, 'A'), (& $($mutability)* pair.a).$view().into_dyn()));
                out.push((lora_tensor_name(i, Target::V, 'B'), (& $($mutability)* pair.b).$view().into_dyn()));
            }
            out.push((format!("{p}.attn.o.weight"), (& $($mutability)* attn.o.weight).$view().into_dyn()));
            out.push((format!("{p}.attn.o.bias"), (& $($mutability)* attn.o.bias).$view().into_dyn()));
            out.push((format!("{p}.norm2.weight"), (& $($mutability)* block.norm2.weight).$view().into_dyn()));
            out.push((format!("{p}.norm2.bias"), (& $($mutability)* block.norm2.bias).$view().into_dyn()));
            out.push((format!("{p}.mlp.fc1.weight"), (& $($mutability)* block.fc1.weight).$view().into_dyn()));
            out.push((format!("{p}.mlp.fc1.bias"), (& $($mutability)* block.fc1.bias).$view().into_dyn()));
            out.push((format!("{p}.mlp.fc2.weight"), (& $($mutability)* block.fc2.weight).$view().into_dyn()));
            out.push((format!("{p}.mlp.fc2.bias"), (& $($mutability)* block.fc2.bias).$view().into_dyn()));
        }
        out.push(("norm.weight".to_string(), (& $($mutability)* enc.norm.weight).$view().into_dyn()));
        out.push(("norm.bias".to_string(), (& $($mutability)* enc.norm.bias).$view().into_dyn()));
        out
    }};
}

pub(crate) fn encoder_tensors<T: Real>(enc: &Encoder<T>) -> Vec<(String, ArrayViewD<'_, T>)> {
    encoder_tensor_list!(enc, view,)
}

pub(crate) fn encoder_tensors_mut<T: Real>(enc: &mut Encoder<T>) -> Vec<(String, ArrayViewMutD<'_, T>)> {
    encoder_tensor_list!(enc, view_mut, mut)
}

/// ViT encoder plus classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct PadModel<T> {
    pub encoder: Encoder<T>,
    pub head: HeadWeights<T>,
}

/// Loss of one sample and its head output.
#[derive(Debug, Clone)]
pub struct SampleEval<T> {
    pub loss: T,
    pub output: HeadOutput<T>,
}

impl<T: Real> PadModel<T> {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::zeros(config)?,
            head: HeadWeights::zeros(config.embed_dim),
        })
    }

    /// Random encoder (truncated normal, `std`) and head.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, std: f64, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::init(config, std, rng)?;
        let head = HeadWeights::init(config.embed_dim, crate::vit::INIT_STD, rng);
        Ok(Self { encoder, head })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        self.tensors()
            .into_iter()
            .map(|(name, t)| TensorSpec::new(name, t.shape()))
            .collect()
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = encoder_tensors(&self.encoder);
        out.push(("head.weight".into(), self.head.linear.weight.view().into_dyn()));
        out.push(("head.bias".into(), self.head.linear.bias.view().into_dyn()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = encoder_tensors_mut(&mut self.encoder);
        out.push(("head.weight".into(), self.head.linear.weight.view_mut().into_dyn()));
        out.push(("head.bias".into(), self.head.linear.bias.view_mut().into_dyn()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, mut t) in out.tensors_mut() {
            t.fill(T::zero());
        }
        out
    }

    /// Element-wise `self += other`; both must share a layout.
    pub fn add_assign(&mut self, other: &PadModel<T>) {
        for ((_, mut dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst += &src;
        }
    }

    /// Copy with adapters folded into the frozen projections.
    pub fn merged(&self) -> Result<Self> {
        Ok(Self {
            encoder: self.encoder.merged()?,
            head: self.head.clone(),
        })
    }

    pub fn forward_sample(&self, image: ArrayView3<T>) -> Result<HeadOutput<T>> {
        let (feature, _) = self.encoder.forward_sample::<rand_chacha::ChaCha8Rng>(image, None)?;
        head_forward(feature.view(), &self.head)
    }

    /// Head outputs for a batch, inference mode.
    pub fn forward(&self, images: &ImageBatch<T>) -> Result<Vec<HeadOutput<T>>> {
        (0..images.len())
            .into_par_iter()
            .map(|i| self.forward_sample(images.image(i)))
            .collect()
    }

    /// Loss for one sample; accumulates `weight · ∂loss/∂θ` into `grads` for
    /// the families selected by `scope` (the head always receives gradients).
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        image: ArrayView3<T>,
        label: Label,
        dropout_rng: Option<&mut R>,
        scope: GradScope,
        weight: T,
        grads: &mut PadModel<T>,
    ) -> Result<SampleEval<T>> {
        let (feature, cache) = self.encoder.forward_sample(image, dropout_rng)?;
        let output = head_forward(feature.view(), &self.head)?;
        let y = cast::<T>(label.target());
        let loss = bce_loss(output.prob, y)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        let dlogits: Array1<T> = bce_logit_grad(output.prob, y)? * weight;
        let dfeature = self.head.backward(feature.view(), dlogits.view(), &mut grads.head);
        self.encoder.backward_sample(&cache, dfeature.view(), scope, &mut grads.encoder);
        Ok(SampleEval { loss, output })
    }

    /// Mean BCE over labelled images, inference mode.
    pub fn mean_loss(&self, images: &ImageBatch<T>, labels: &[Label]) -> Result<T> {
        let outputs = self.forward(images)?;
        let probs: Vec<T> = outputs.iter().map(|o| o.prob).collect();
        let targets: Vec<T> = labels.iter().map(|l| cast(l.target())).collect();
        crate::head::bce_mean(&probs, &targets)
    }

    /// Converts element type, e.g. for double-precision verification.
    pub fn cast<U: Real>(&self) -> PadModel<U> {
        let mut out = PadModel::<U>::zeros(self.config()).expect("validated config");
        if let Some(adapter) = &self.encoder.adapter {
            for (src, dst) in self.encoder.blocks.iter().zip(out.encoder.blocks.iter_mut()) {
                let conv = |p: &crate::lora::LoraPair<T>| crate::lora::LoraPair {
                    a: p.a.mapv(|v| cast(v.to_f64().unwrap())),
                    b: p.b.mapv(|v| cast(v.to_f64().unwrap())),
                    gamma: cast(p.gamma.to_f64().unwrap()),
                };
                dst.attn.q_lora = src.attn.q_lora.as_ref().map(conv);
                dst.attn.v_lora = src.attn.v_lora.as_ref().map(conv);
            }
            out.encoder.adapter = Some(adapter.clone());
        }
        for ((_, mut dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.zip_mut_with(&src, |d, &s| *d = cast(s.to_f64().unwrap()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn allocated_layout_matches_closed_form() {
        let cfg = EncoderConfig::toy();
        let adapter = AdapterConfig {
            rank: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = PadModel::<f32>::init(&cfg, 0.02, &mut rng).unwrap();
        assert_eq!(model.layout(), param_layout(&cfg, None));
        model.encoder.attach_adapters(&adapter, &mut rng).unwrap();
        assert_eq!(model.layout(), param_layout(&cfg, Some(&adapter)));
        let only_v = AdapterConfig {
            targets: vec![Target::V],
            ..adapter
        };
        model.encoder.attach_adapters(&only_v, &mut rng).unwrap();
        assert_eq!(model.layout(), param_layout(&cfg, Some(&only_v)));
    }

    #[test]
    fn vit_b_parameter_budget() {
        let total: usize = param_layout(&EncoderConfig::vit_b(), None).iter().map(TensorSpec::numel).sum();
        // ~86M parameters for the base model
        assert!((85_000_000..87_500_000).contains(&total), "{total}");
        let large: usize = param_layout(&EncoderConfig::vit_l(), None).iter().map(TensorSpec::numel).sum();
        assert!((300_000_000..310_000_000).contains(&large), "{large}");
    }

    #[test]
    fn names_are_unique() {
        let layout = param_layout(&EncoderConfig::toy(), Some(&AdapterConfig::default()));
        let mut names: Vec<_> = layout.iter().map(|t| t.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), layout.len());
    }

    #[test]
    fn cast_round_trip_is_lossless_for_f32() {
        let cfg = EncoderConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = PadModel::<f32>::init(&cfg, 0.02, &mut rng).unwrap();
        model.encoder.attach_adapters(&AdapterConfig::default().with_rank(2), &mut rng).unwrap();
        let back: PadModel<f32> = model.cast::<f64>().cast();
        assert_eq!(back, model);
    }
}
