use ndarray::{Array2, ArrayView2};

use super::attention::{accumulate_linear, AdapterMasks, Attention, AttentionCache, GradScope};
use crate::error::Result;
use crate::nn::{quick_gelu, quick_gelu_backward, LayerNorm, LayerNormCache, Linear, Real};

/// Pre-norm transformer block: `x + MSA(LN(x))` followed by `x + MLP(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock<T> {
    pub norm1: LayerNorm<T>,
    pub attn: Attention<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    normed2: Array2<T>,
    hidden: Array2<T>,
    activated: Array2<T>,
}

impl<T: Real> TransformerBlock<T> {
    pub fn zeros(dim: usize, num_heads: usize, mlp_dim: usize, eps: T) -> Self {
        Self {
            norm1: LayerNorm::new(dim, eps),
            attn: Attention::zeros(dim, num_heads),
            norm2: LayerNorm::new(dim, eps),
            fc1: Linear::zeros(mlp_dim, dim),
            fc2: Linear::zeros(dim, mlp_dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<T>, masks: AdapterMasks<T>) -> Result<(Array2<T>, BlockCache<T>)> {
        let (normed1, ln1) = self.norm1.forward(x);
        let (attended, attn) = self.attn.forward(normed1.view(), masks)?;
        let x1 = &x + &attended;
        let (normed2, ln2) = self.norm2.forward(x1.view());
        let hidden = self.fc1.forward(normed2.view());
        let activated = quick_gelu(&hidden);
        let y = &x1 + &self.fc2.forward(activated.view());
        Ok((
            y,
            BlockCache {
                ln1,
                attn,
                ln2,
                normed2,
                hidden,
                activated,
            },
        ))
    }

    pub fn backward(&self, cache: &BlockCache<T>, dy: ArrayView2<T>, scope: GradScope, grads: &mut TransformerBlock<T>) -> Array2<T> {
        let fc2 = self.fc2.backward(cache.activated.view(), dy, scope.base);
        accumulate_linear(&mut grads.fc2, fc2.weight, fc2.bias);
        let dhidden = quick_gelu_backward(&cache.hidden, fc2.input.view());
        let fc1 = self.fc1.backward(cache.normed2.view(), dhidden.view(), scope.base);
        accumulate_linear(&mut grads.fc1, fc1.weight, fc1.bias);
        let (dx1_norm, dw2, db2) = self.norm2.backward(&cache.ln2, fc1.input.view());
        if scope.base {
            grads.norm2.weight += &dw2;
            grads.norm2.bias += &db2;
        }
        let dx1 = &dy + &dx1_norm;

        let dnormed1 = self.attn.backward(&cache.attn, dx1.view(), scope, &mut grads.attn);
        let (dx_norm, dw1, db1) = self.norm1.backward(&cache.ln1, dnormed1.view());
        if scope.base {
            grads.norm1.weight += &dw1;
            grads.norm1.bias += &db1;
        }
        dx1 + dx_norm
    }
}
