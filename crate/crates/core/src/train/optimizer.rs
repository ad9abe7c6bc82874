use std::collections::HashMap;

use ndarray::{ArrayD, Zip};

use super::{TrainConfig, TrainableSet};
use crate::model::PadModel;
use crate::nn::{cast, Real};

/// Whether decoupled weight decay applies to a tensor: projection matrices
/// and adapter `A`; never biases, norms, class/position embeddings or
/// adapter `B`.
pub fn decays(name: &str, ndim: usize) -> bool {
    if name.ends_with(".lora_A") {
        return true;
    }
    if name.ends_with(".lora_B") {
        return false;
    }
    ndim == 2 && name.ends_with(".weight")
}

/// Adam with decoupled weight decay. With `use_moments` off the update is
/// `θ ← θ − lr·wd·θ − lr·g`.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub use_moments: bool,
    step: u64,
    moments: HashMap<String, (ArrayD<T>, ArrayD<T>)>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            use_moments: true,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Plain (decoupled-decay) gradient descent.
    pub fn without_moments(weight_decay: f64) -> Self {
        Self {
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            weight_decay,
            use_moments: false,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable tensor of `model` from the matching tensor of
    /// `grads`. Frozen tensors are not written.
    pub fn step(&mut self, model: &mut PadModel<T>, grads: &PadModel<T>, trainable: &TrainableSet) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = cast::<T>(self.beta1);
        let b2 = cast::<T>(self.beta2);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let eps = cast::<T>(self.eps);
        let one = T::one();
        for ((name, mut param), (_, grad)) in model.tensors_mut().into_iter().zip(grads.tensors()) {
            let Some(lr) = trainable.lr(&name) else { continue };
            let lr = cast::<T>(lr);
            if self.weight_decay > 0.0 && decays(&name, param.ndim()) {
                let shrink = one - lr * cast::<T>(self.weight_decay);
                param.mapv_inplace(|v| v * shrink);
            }
            if !self.use_moments {
                param.scaled_add(-lr, &grad);
                continue;
            }
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (ArrayD::zeros(grad.raw_dim()), ArrayD::zeros(grad.raw_dim())));
            Zip::from(&mut param).and(&grad).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_policy() {
        assert!(decays("blocks.0.attn.q.weight", 2));
        assert!(decays("head.weight", 2));
        assert!(decays("blocks.3.attn.v.lora_A", 2));
        assert!(!decays("blocks.3.attn.v.lora_B", 2));
        assert!(!decays("blocks.0.norm1.weight", 1));
        assert!(!decays("head.bias", 1));
        assert!(!decays("pos_embed", 2));
        assert!(!decays("cls_token", 1));
    }
}
